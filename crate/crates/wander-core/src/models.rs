//! Piecewise model maps: the targets each stage polynomial approximates.

use crate::approx::Polynomial;
use crate::geometry::{compactly_contained, region_distance, Constants, Region};
use crate::hexfloat;
use crate::schedule::Schedule;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Membership tolerance at piece boundaries.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("pieces {0} and {1} overlap")]
    OverlapDetected(usize, usize),
    #[error("stage {0} is not available")]
    UnresolvedPriorStage(usize),
    #[error("target has no room for a contraction: {0}")]
    InfeasibleContraction(String),
    #[error("{0} lies outside every piece")]
    OutsideDomain(C64),
    #[error("need m_1 >= 2, got {0}")]
    ShortFirstBand(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum MapSpec {
    /// `z -> a z`
    Linear {
        #[serde(with = "hexfloat::complex")]
        a: C64,
    },
    Constant {
        #[serde(with = "hexfloat::complex")]
        c: C64,
    },
    /// `z -> z + t`
    Translation {
        #[serde(with = "hexfloat::complex")]
        t: C64,
    },
    /// `z -> c + s (z - q)`
    Affine {
        #[serde(with = "hexfloat::complex")]
        c: C64,
        #[serde(with = "hexfloat::complex")]
        s: C64,
        #[serde(with = "hexfloat::complex")]
        q: C64,
    },
    /// The polynomial of an earlier stage.
    Prior { stage: usize },
}

impl MapSpec {
    /// Value and derivative; `prior[i]` is stage `i`'s polynomial.
    pub fn eval_d(&self, z: C64, prior: &[Polynomial]) -> Result<(C64, C64), ModelError> {
        let one = C64::new(1.0, 0.0);
        Ok(match self {
            MapSpec::Linear { a } => (a * z, *a),
            MapSpec::Constant { c } => (*c, C64::new(0.0, 0.0)),
            MapSpec::Translation { t } => (z + t, one),
            MapSpec::Affine { c, s, q } => (c + s * (z - q), *s),
            MapSpec::Prior { stage } => prior.get(*stage).ok_or(ModelError::UnresolvedPriorStage(*stage))?.eval_d(z),
        })
    }

    pub fn eval(&self, z: C64, prior: &[Polynomial]) -> Result<C64, ModelError> {
        Ok(self.eval_d(z, prior)?.0)
    }

    /// Image of a region for the affine variants; `None` for a prior stage.
    pub fn image_of(&self, r: &Region) -> Option<Region> {
        match self {
            MapSpec::Linear { a } => Some(r.affine_image(*a, C64::new(0.0, 0.0))),
            MapSpec::Constant { c } => Some(Region::disk(*c, 0.0)),
            MapSpec::Translation { t } => Some(r.translated(*t)),
            MapSpec::Affine { c, s, q } => Some(r.affine_image(*s, c - s * q)),
            MapSpec::Prior { .. } => None,
        }
    }
}

/// Ordered `(region, map)` pairs with pairwise disjoint regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseModel {
    pub pieces: Vec<(Region, MapSpec)>,
}

impl PiecewiseModel {
    pub fn new(pieces: Vec<(Region, MapSpec)>) -> Result<PiecewiseModel, ModelError> {
        for i in 0..pieces.len() {
            for k in i + 1..pieces.len() {
                if region_distance(&pieces[i].0, &pieces[k].0, 1024) <= 0.0 {
                    return Err(ModelError::OverlapDetected(i, k));
                }
            }
        }
        Ok(PiecewiseModel { pieces })
    }

    /// Index of the first piece within the membership tolerance of `z`.
    pub fn piece_of(&self, z: C64) -> Option<usize> {
        self.pieces.iter().position(|(r, _)| r.signed_distance(z) <= MEMBERSHIP_TOL)
    }

    pub fn eval_d(&self, z: C64, prior: &[Polynomial]) -> Result<(C64, C64), ModelError> {
        let i = self.piece_of(z).ok_or(ModelError::OutsideDomain(z))?;
        self.pieces[i].1.eval_d(z, prior)
    }

    pub fn regions(&self) -> Vec<Region> {
        self.pieces.iter().map(|p| p.0.clone()).collect()
    }
}

/// Value of `model` at `z`.
pub fn evaluate(model: &PiecewiseModel, z: C64, prior: &[Polynomial]) -> Result<C64, ModelError> {
    Ok(model.eval_d(z, prior)?.0)
}

/// `phi_0`: `3z` on the closed disk `D`, `-1/4` on `A`, `z + 1` on
/// `B_0 + k` for `0 <= k <= m_1 - 2`.
pub fn phi0(c: &Constants, s: &Schedule) -> Result<PiecewiseModel, ModelError> {
    let m1 = s.term(1).map(|t| t.1).unwrap_or(0);
    if m1 < 2 {
        return Err(ModelError::ShortFirstBand(m1));
    }
    let one = C64::new(1.0, 0.0);
    let mut pieces = vec![
        (c.d(), MapSpec::Linear { a: C64::new(3.0, 0.0) }),
        (c.a(), MapSpec::Constant { c: C64::new(-0.25, 0.0) }),
    ];
    for k in 0..=m1 - 2 {
        pieces.push((c.b0().translated(C64::new(k as f64, 0.0)), MapSpec::Translation { t: one }));
    }
    PiecewiseModel::new(pieces)
}

/// The four piece families of a stage `j >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePieces {
    pub delta: Region,
    pub v: Region,
    pub q: Region,
    pub h: MapSpec,
    /// `B_j + k` for `0 <= k <= m_{j+1} - m_j - 1`.
    pub bands: Vec<Region>,
}

/// `phi_j`: the previous polynomial on `Delta_j`, `-1/4` on `V_j`, `h_j` on
/// `Q_j` and `z + 1` on the translates of `B_j`.
pub fn phi_j(prev_stage: usize, prior: &[Polynomial], p: StagePieces) -> Result<PiecewiseModel, ModelError> {
    if prior.len() <= prev_stage {
        return Err(ModelError::UnresolvedPriorStage(prev_stage));
    }
    let mut pieces = vec![
        (p.delta, MapSpec::Prior { stage: prev_stage }),
        (p.v, MapSpec::Constant { c: C64::new(-0.25, 0.0) }),
        (p.q, p.h),
    ];
    for b in p.bands {
        pieces.push((b, MapSpec::Translation { t: C64::new(1.0, 0.0) }));
    }
    PiecewiseModel::new(pieces)
}

/// Affine contraction `h` with `h(centroid Q) = centroid C` and real scale
/// `min(1/2, 3/4 * inradius(C) / circumradius(Q))`, so that `h(Q)` keeps a
/// quarter of `C`'s inradius to spare.
pub fn build_contraction(q: &Region, c: &Region) -> Result<MapSpec, ModelError> {
    let cq = q.centroid();
    let cc = c.centroid();
    let rin = c.inradius_about(cc);
    let rout = q.circumradius_about(cq);
    if !(rin > 1e-14 * (1.0 + cc.norm())) {
        return Err(ModelError::InfeasibleContraction(format!("inradius {rin:e} about the centroid")));
    }
    if !(rout > 0.0) {
        return Err(ModelError::InfeasibleContraction("source has no extent".into()));
    }
    let s = (0.75 * rin / rout).min(0.5);
    let h = MapSpec::Affine { c: cc, s: C64::new(s, 0.0), q: cq };
    let image = h.image_of(q).expect("affine image");
    if !compactly_contained(&image, c, 0.25 * rin * (1.0 - 1e-9)) {
        return Err(ModelError::InfeasibleContraction("image does not fit with margin".into()));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::lambda_schedule;
    use num_rational::Ratio;

    fn z(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sched() -> Schedule {
        lambda_schedule(Ratio::new(1, 1), 1).unwrap()
    }

    #[test]
    fn phi0_examples() {
        let c = Constants::with_r1(0.108);
        let m = phi0(&c, &sched()).unwrap();
        assert_eq!(m.pieces.len(), 3);
        assert_eq!(evaluate(&m, z(0.0, 0.0), &[]).unwrap(), z(0.0, 0.0));
        assert_eq!(evaluate(&m, z(-0.25, 0.0), &[]).unwrap(), z(-0.25, 0.0));
        assert!((evaluate(&m, z(0.2, 0.0), &[]).unwrap() - z(1.2, 0.0)).norm() < 1e-15);
        assert_eq!(evaluate(&m, z(10.0, 0.0), &[]), Err(ModelError::OutsideDomain(z(10.0, 0.0))));
    }

    #[test]
    fn phi0_longer_first_band() {
        let c = Constants::with_r1(0.108);
        let s = Schedule::explicit(vec![1, 2], vec![3, 5]).unwrap();
        let m = phi0(&c, &s).unwrap();
        assert_eq!(m.pieces.len(), 4);
        assert!((evaluate(&m, z(1.2, 0.0), &[]).unwrap() - z(2.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn phi0_needs_two_band_steps() {
        let c = Constants::with_r1(0.108);
        let s = Schedule::explicit(vec![1, 2], vec![1, 3]).unwrap();
        assert!(phi0(&c, &s).is_err());
    }

    #[test]
    fn overlapping_pieces_rejected() {
        let one = C64::new(1.0, 0.0);
        let r = PiecewiseModel::new(vec![
            (Region::disk(z(0.0, 0.0), 1.0), MapSpec::Translation { t: one }),
            (Region::disk(z(1.5, 0.0), 1.0), MapSpec::Translation { t: one }),
        ]);
        assert_eq!(r, Err(ModelError::OverlapDetected(0, 1)));
    }

    #[test]
    fn phi0_is_injective_on_u0_grid() {
        let c = Constants::with_r1(0.108);
        let m = phi0(&c, &sched()).unwrap();
        let mut pts = c.d().grid(24, 128);
        pts.extend(c.b0().grid(24, 128));
        let vals: Vec<C64> = pts.iter().map(|p| evaluate(&m, *p, &[]).unwrap()).collect();
        for i in 0..vals.len() {
            for k in i + 1..vals.len() {
                if (pts[i] - pts[k]).norm() > 1e-12 {
                    assert!((vals[i] - vals[k]).norm() > 1e-12);
                }
            }
        }
    }

    #[test]
    fn phi_j_dispatch() {
        let prior = vec![Polynomial::linear(z(3.0, 0.0), z(0.0, 0.0))];
        let h = MapSpec::Affine { c: z(0.01, 0.0), s: z(0.1, 0.0), q: z(1.2, 0.0) };
        let p = StagePieces {
            delta: Region::disk(z(0.0, 0.0), 1.0),
            v: Region::disk(z(1.3, 0.0), 0.02),
            q: Region::disk(z(1.2, 0.0), 0.05),
            h,
            bands: vec![Region::disk(z(1.2, 0.15), 0.03)],
        };
        let m = phi_j(0, &prior, p).unwrap();
        assert!((evaluate(&m, z(0.5, 0.1), &prior).unwrap() - z(1.5, 0.3)).norm() < 1e-15);
        assert_eq!(evaluate(&m, z(1.3, 0.0), &prior).unwrap(), z(-0.25, 0.0));
        assert!((evaluate(&m, z(1.21, 0.0), &prior).unwrap() - z(0.011, 0.0)).norm() < 1e-15);
        assert_eq!(evaluate(&m, z(1.2, 0.15), &prior).unwrap(), z(2.2, 0.15));
        let missing = StagePieces {
            delta: Region::disk(z(0.0, 0.0), 1.0),
            v: Region::disk(z(1.3, 0.0), 0.02),
            q: Region::disk(z(1.2, 0.0), 0.05),
            h: MapSpec::Constant { c: z(0.0, 0.0) },
            bands: vec![],
        };
        assert_eq!(phi_j(3, &prior, missing), Err(ModelError::UnresolvedPriorStage(3)));
    }

    #[test]
    fn contraction_examples() {
        let q = Region::disk(z(5.0, 0.0), 0.1);
        let c = Region::disk(z(0.0, 0.0), 0.04);
        let h = build_contraction(&q, &c).unwrap();
        let MapSpec::Affine { s, .. } = h.clone() else { panic!() };
        assert!((s.norm() - 0.3).abs() < 1e-12);
        let img = h.image_of(&q).unwrap();
        assert!(compactly_contained(&img, &c, 0.0));
        let same = build_contraction(&c, &c).unwrap();
        let MapSpec::Affine { s, .. } = same else { panic!() };
        assert!(s.norm() < 1.0);
        let thin = Region::polygon(vec![z(0.0, 0.0), z(1.0, 0.0), z(2.0, 1e-300)]);
        assert!(matches!(build_contraction(&q, &thin), Err(ModelError::InfeasibleContraction(_))));
    }

    #[test]
    fn attractor_piece_maps_to_its_centre() {
        let m = MapSpec::Constant { c: z(-0.25, 0.0) };
        let a = Region::disk(z(-0.25, 0.0), 1.0 / 9.0);
        assert!(a.contains(m.eval(z(0.9, 0.0), &[]).unwrap()));
    }
}
