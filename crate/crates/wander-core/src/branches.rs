//! Inverse branches of stage polynomials and the pullback constructions
//! that place each stage's contraction target inside `D`.

use crate::approx::{certify_univalence, Polynomial};
use crate::exec;
use crate::geometry::{region_distance, Constants, Region};
use crate::hexfloat;
use crate::schedule::Schedule;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Newton stops once `|f(z) - w|` is this small.
pub const RESIDUAL: f64 = 1e-10;
const MAX_STEPS: usize = 100;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum BranchError {
    #[error("no preimage of {w} in the branch domain: {reason}")]
    NoBranch { w: C64, reason: String },
    #[error("target does not meet the image of the domain")]
    EmptyIntersection,
    #[error("empty branch chain domain: {0}")]
    ChainDomainEmpty(String),
    #[error("no disk of radius above {floor:e} fits (best {best:e})")]
    NoRoomForX { floor: f64, best: f64 },
    #[error("pullback check failed: {0}")]
    CheckFailed(String),
}

/// Preimage of `w` under `f` restricted to `domain`, by damped Newton from `seed`.
pub fn invert_branch(f: &Polynomial, domain: &Region, w: C64, seed: C64) -> Result<C64, BranchError> {
    let fail = |reason: String| BranchError::NoBranch { w, reason };
    let (lo, hi) = domain.bbox();
    let reach = (hi - lo).norm().max(1e-300);
    let mut z = seed;
    let (mut v, mut d) = f.eval_d(z);
    let mut r = (v - w).norm();
    for _ in 0..MAX_STEPS {
        if r <= RESIDUAL {
            let tol = 1e-9 * (1.0 + z.norm());
            return if domain.signed_distance(z) <= tol {
                Ok(z)
            } else {
                Err(fail(format!("converged to {z} outside the domain")))
            };
        }
        if d.norm() == 0.0 || !d.is_finite() {
            return Err(fail(format!("critical point near {z}")));
        }
        let step = (v - w) / d;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let zn = z - step * t;
            let (vn, dn) = f.eval_d(zn);
            let rn = (vn - w).norm();
            if rn < r {
                z = zn;
                v = vn;
                d = dn;
                r = rn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(fail(format!("stalled at residual {r:e}")));
        }
        if domain.signed_distance(z) > reach {
            return Err(fail(format!("left the domain at {z}")));
        }
    }
    Err(fail(format!("no convergence, residual {r:e}")))
}

/// Initial guess rule for one inverse step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Seed {
    /// `w * factor`
    Scale {
        #[serde(with = "hexfloat::real")]
        factor: f64,
    },
    /// `w + offset`
    Shift {
        #[serde(with = "hexfloat::complex")]
        offset: C64,
    },
}

impl Seed {
    pub fn guess(&self, w: C64) -> C64 {
        match self {
            Seed::Scale { factor } => w * factor,
            Seed::Shift { offset } => w + offset,
        }
    }
}

/// One restriction inverse `(f|domain)^{-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchStep {
    pub label: String,
    pub domain: Region,
    pub seed: Seed,
}

/// A composition of restriction inverses, applied first to last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BranchChain {
    pub steps: Vec<BranchStep>,
}

impl BranchChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `self` followed by `next`.
    pub fn then(mut self, next: BranchChain) -> BranchChain {
        self.steps.extend(next.steps);
        self
    }

    pub fn apply(&self, f: &Polynomial, w: C64) -> Result<C64, BranchError> {
        self.steps.iter().try_fold(w, |w, s| invert_branch(f, &s.domain, w, s.seed.guess(w)))
    }

    /// Pull back a closed sampled curve. Points are inverted independently;
    /// any failure is retried by continuation from the previous preimage.
    pub fn transport(&self, f: &Polynomial, curve: &[C64]) -> Result<Vec<C64>, BranchError> {
        let mut pts = curve.to_vec();
        for s in &self.steps {
            let first = exec::map(&pts, |w| invert_branch(f, &s.domain, *w, s.seed.guess(*w)));
            let mut out: Vec<C64> = Vec::with_capacity(pts.len());
            for (i, r) in first.into_iter().enumerate() {
                let z = match r {
                    Ok(z) => z,
                    Err(e) => {
                        let Some(prev) = out.last().copied() else { return Err(e) };
                        let d = f.eval_d(prev).1;
                        let guess = prev + (pts[i] - pts[i - 1]) / d;
                        invert_branch(f, &s.domain, pts[i], guess)?
                    }
                };
                out.push(z);
            }
            pts = out;
        }
        Ok(pts)
    }

    /// `f^len` applied to a point: the forward map this chain inverts.
    pub fn forward(&self, f: &Polynomial, z: C64) -> C64 {
        f.iterate(z, self.len())
    }
}

/// A transported set and how well it round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchResult {
    pub region: Region,
    #[serde(with = "hexfloat::real")]
    pub residual: f64,
    pub branch: String,
}

/// Pull `target ∩ f(domain)` back into `domain` by inverting boundary samples.
/// Where only part of the target is covered, the domain boundary points whose
/// images land in the target close the outline (assumed star-shaped).
pub fn transport_region(
    f: &Polynomial,
    domain: &Region,
    target: &Region,
    seed: Seed,
    count: usize,
) -> Result<BranchResult, BranchError> {
    let curve = target.boundary(count);
    let inv = exec::map(&curve, |w| invert_branch(f, domain, *w, seed.guess(*w)).ok());
    let mut pts: Vec<C64> = inv.iter().flatten().copied().collect();
    let complete = pts.len() == curve.len();
    if !complete {
        let rim = domain.boundary(count);
        pts.extend(rim.into_iter().filter(|z| target.contains(f.eval(*z))));
        if pts.len() < 3 {
            return Err(BranchError::EmptyIntersection);
        }
        let c = pts.iter().sum::<C64>() / pts.len() as f64;
        pts.sort_by(|a, b| (a - c).arg().total_cmp(&(b - c).arg()));
    }
    let residual = if complete {
        pts.iter().zip(&curve).map(|(z, w)| (f.eval(*z) - w).norm()).fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(BranchResult { region: Region::polygon(pts), residual, branch: "single".into() })
}

/// `G`: `n` inverse steps of `f` inside `D`, seeded with `w / 3`.
pub fn branch_g(c: &Constants, n: usize) -> BranchChain {
    let step = BranchStep { label: "D".into(), domain: c.d(), seed: Seed::Scale { factor: 1.0 / 3.0 } };
    BranchChain { steps: vec![step; n] }
}

/// The `(l, k)` index pairs of `F`'s factors, `F_{0,0}` first.
pub fn f_factor_indices(s: &Schedule, j: usize) -> Vec<(usize, u64)> {
    let mut out = Vec::new();
    for l in 0..j {
        let span = s.m(l + 1) - s.m(l).max(1);
        for k in 0..span {
            out.push((l, k));
        }
    }
    out
}

/// `F = F_{0,0} ∘ ... ∘ F_{j-1, last}` with `F_{l,k}` the inverse of `f` on
/// `B_l + k`; `bands[l]` is `B_l`. The last factor acts first.
pub fn branch_f(bands: &[Region], s: &Schedule, j: usize) -> Result<BranchChain, BranchError> {
    if bands.len() < j {
        return Err(BranchError::ChainDomainEmpty(format!("need B_0..B_{}, have {}", j - 1, bands.len())));
    }
    let idx = f_factor_indices(s, j);
    if idx.is_empty() {
        return Err(BranchError::ChainDomainEmpty("no factors".into()));
    }
    let steps = idx
        .into_iter()
        .rev()
        .map(|(l, k)| BranchStep {
            label: format!("B{l}+{k}"),
            domain: bands[l].translated(C64::new(k as f64, 0.0)),
            seed: Seed::Shift { offset: C64::new(-1.0, 0.0) },
        })
        .collect();
    Ok(BranchChain { steps })
}

/// Inputs of the construction of `C_j`.
pub struct PullbackInput<'a> {
    pub f: &'a Polynomial,
    pub c: &'a Constants,
    pub s: &'a Schedule,
    pub j: usize,
    /// `B_0, ..., B_{j-1}`.
    pub bands: &'a [Region],
    /// `B̂_{j-1}`.
    pub b_hat: &'a Region,
    pub q: &'a Region,
    pub v: &'a Region,
    /// Hull of `f^{N_j}(K_{j-1})`.
    pub excluded: &'a Region,
    pub boundary: usize,
    pub floor: f64,
}

/// One named verdict with its worst margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    #[serde(with = "hexfloat::real")]
    pub margin: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, margin: f64) -> Check {
        Check { name: name.into(), pass: margin > 0.0, margin }
    }
}

/// The sets built while pulling `X` back into `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackTrace {
    /// `B_{j-1} + m_j - max(m_{j-1}, 1) - 1`, whose image bounds `E`.
    pub e_source: Region,
    /// Outline of `f(e_source)`.
    pub e_image: Region,
    pub x: Region,
    pub fx: Region,
    pub cj: Region,
    pub chain: BranchChain,
    #[serde(with = "hexfloat::real")]
    pub residual: f64,
    pub checks: Vec<Check>,
}

impl PullbackTrace {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Largest disk inside `inside` (every region there) and outside `avoid`,
/// searched on a grid over `frame` and refined twice locally.
pub fn largest_disk(frame: &Region, inside: &[&Region], avoid: &[&Region], n: usize) -> (C64, f64) {
    let room = |z: C64| {
        let a = inside.iter().map(|r| -r.signed_distance(z)).fold(f64::INFINITY, f64::min);
        let b = avoid.iter().map(|r| r.signed_distance(z)).fold(f64::INFINITY, f64::min);
        a.min(b)
    };
    let (mut lo, mut hi) = frame.bbox();
    let mut best = (frame.centroid(), f64::NEG_INFINITY);
    for _ in 0..3 {
        let pts: Vec<C64> = (0..n * n)
            .map(|i| {
                let (a, b) = (i / n, i % n);
                C64::new(
                    lo.re + (hi.re - lo.re) * (a as f64 + 0.5) / n as f64,
                    lo.im + (hi.im - lo.im) * (b as f64 + 0.5) / n as f64,
                )
            })
            .collect();
        let vals = exec::map(&pts, |z| room(*z));
        for (z, v) in pts.iter().zip(vals) {
            if v > best.1 {
                best = (*z, v);
            }
        }
        let half = (hi - lo) * (2.0 / n as f64);
        lo = best.0 - half;
        hi = best.0 + half;
    }
    best
}

/// Pullback: choose `X ⊂ E`, pull it back through `F` and `G` to `C_j ⊂ D`,
/// and check the forward itinerary of `C_j`.
pub fn construct_cj(inp: &PullbackInput) -> Result<PullbackTrace, BranchError> {
    let (f, s, j) = (inp.f, inp.s, inp.j);
    let nb = inp.boundary;
    let prev = inp.bands.get(j - 1).ok_or_else(|| BranchError::ChainDomainEmpty(format!("B_{}", j - 1)))?;
    let shift = s.m(j) - s.m(j - 1).max(1) - 1;
    let e_source = prev.translated(C64::new(shift as f64, 0.0));
    let e_image = Region::polygon(exec::map(&e_source.boundary(4 * nb), |z| f.eval(*z)));
    let (centre, room) = largest_disk(inp.b_hat, &[&e_image, inp.b_hat], &[inp.q, inp.v, inp.excluded], 96);
    if !(room > inp.floor) {
        return Err(BranchError::NoRoomForX { floor: inp.floor, best: room });
    }
    let x = Region::disk(centre, 0.8 * room);

    let fchain = branch_f(inp.bands, s, j)?;
    let curve = x.boundary(nb);
    let fx_pts = fchain.transport(f, &curve)?;
    let fx = Region::polygon(fx_pts.clone());
    let n_next = s.n(j + 1) as usize;
    let gchain = branch_g(inp.c, n_next);
    let cj_pts = gchain.transport(f, &fx_pts)?;
    let cj = Region::polygon(cj_pts);
    let chain = fchain.clone().then(gchain);
    let mut trace = PullbackTrace { e_source, e_image, x, fx, cj, chain, residual: 0.0, checks: vec![] };
    let (residual, checks) = claim2_checks(inp, &trace);
    trace.residual = residual;
    trace.checks = checks;
    Ok(trace)
}

/// Re-derive every pullback verdict of a trace from its stored sets.
pub fn claim2_checks(inp: &PullbackInput, t: &PullbackTrace) -> (f64, Vec<Check>) {
    let (f, s, j) = (inp.f, inp.s, inp.j);
    let nb = inp.boundary;
    let n_next = s.n(j + 1) as usize;
    let fchain = BranchChain { steps: t.chain.steps[..t.chain.len() - n_next].to_vec() };
    let Region::PolygonalHull { vertices: cj_pts } = &t.cj else { return (f64::INFINITY, vec![Check::new("C_j outline", -1.0)]) };
    let Region::PolygonalHull { vertices: fx_pts } = &t.fx else { return (f64::INFINITY, vec![Check::new("F(X) outline", -1.0)]) };
    let curve = t.x.boundary(cj_pts.len());
    let residual =
        cj_pts.iter().zip(&curve).map(|(z, w)| (t.chain.forward(f, *z) - w).norm()).fold(0.0, f64::max);

    let mut checks = Vec::new();
    checks.push(Check::new("round trip", t.chain.len() as f64 * 1e-8 - residual));
    // F(X) stays in B_0 and away from the image of K_{j-1} one step after D
    let b0 = inp.c.b0();
    checks.push(Check::new("F(X) in B0", fx_pts.iter().map(|z| -b0.signed_distance(*z)).fold(f64::INFINITY, f64::min)));
    let fe = fchain.transport(f, &inp.excluded.boundary(nb));
    checks.push(Check::new(
        "F(X) avoids F(excluded)",
        fe.map(|fe| region_distance(&t.fx, &Region::polygon(fe), 1024)).unwrap_or(-1.0),
    ));

    let steps = n_next - 1 + s.m(j) as usize;
    let grid = t.cj.grid(32, nb);
    let orbits: Vec<Vec<C64>> = exec::map(&grid, |z| {
        let mut o = vec![*z];
        for _ in 0..steps {
            let w = f.eval(*o.last().unwrap());
            o.push(w);
        }
        o
    });
    let worst = |ell: usize, r: &Region, inside: bool| {
        orbits
            .iter()
            .map(|o| if inside { -r.signed_distance(o[ell]) } else { r.signed_distance(o[ell]) })
            .fold(f64::INFINITY, f64::min)
    };
    let d = inp.c.d();
    checks.push(Check::new(
        "C_j in D",
        (0..n_next).map(|ell| worst(ell, &d, true)).fold(f64::INFINITY, f64::min),
    ));
    checks.push(Check::new("lands in B̂_{j-1}", worst(steps, inp.b_hat, true)));
    checks.push(Check::new("avoids Q_j", worst(steps, inp.q, false)));
    checks.push(Check::new("avoids V_j", worst(steps, inp.v, false)));
    let forward = |z: C64| {
        let mut v = z;
        let mut d = C64::new(1.0, 0.0);
        for _ in 0..steps {
            let (a, b) = f.eval_d(v);
            d *= b;
            v = a;
        }
        (v, d)
    };
    let uni = certify_univalence(&forward, &t.cj, 16, 0.0);
    checks.push(Check::new("forward map univalent on C_j", uni.map(|u| u.derivative_lower_bound).unwrap_or(-1.0)));
    for (l, k, closed_only) in band_itinerary(s, j) {
        let ell = n_next - 1 + s.m(l).max(1) as usize + k as usize;
        let r = inp.bands[l].translated(C64::new(k as f64, 0.0));
        let tag = if closed_only { " (closed end)" } else { "" };
        checks.push(Check::new(format!("in B{l}+{k}{tag}"), worst(ell, &r, true)));
    }
    // boundary samples of C_j's outline land within a chord sagitta of ∂X
    let (lo, hi) = t.x.bbox();
    let sagitta = 0.5 * (hi - lo).norm() * 2.0 * (std::f64::consts::PI / cj_pts.len() as f64).powi(2);
    checks.push(Check::new("lands on B_j = X", worst(steps, &t.x, true) + residual + sagitta));
    (residual, checks)
}

/// `(l, k, closed_only)` for `0 <= l < j`, `0 <= k <= m_{l+1} - max(m_l, 1)`;
/// `closed_only` marks the endpoint missing from the half-open reading.
pub fn band_itinerary(s: &Schedule, j: usize) -> Vec<(usize, u64, bool)> {
    let mut out = Vec::new();
    for l in 0..j {
        let span = s.m(l + 1) - s.m(l).max(1);
        for k in 0..=span {
            out.push((l, k, k == span));
        }
    }
    out
}

/// Radii and hulls of the preimage components of `B_0` inside `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreimageLadder {
    #[serde(with = "hexfloat::real_vec")]
    pub radii: Vec<f64>,
    pub hulls: Vec<Region>,
    pub disjoint: bool,
    pub decreasing: bool,
    #[serde(with = "hexfloat::real")]
    pub max_ratio: f64,
    #[serde(with = "hexfloat::real")]
    pub residual: f64,
}

pub fn build_preimage_ladder(f: &Polynomial, c: &Constants, depth: usize) -> Result<PreimageLadder, BranchError> {
    let curve = c.b0().boundary(1024);
    let mut radii = Vec::new();
    let mut hulls = Vec::new();
    let mut residual: f64 = 0.0;
    let mut pts = curve.clone();
    let one = branch_g(c, 1);
    for n in 1..=depth {
        pts = one.transport(f, &pts)?;
        let back = pts.iter().zip(&curve).map(|(z, w)| (f.iterate(*z, n) - w).norm()).fold(0.0, f64::max);
        residual = residual.max(back);
        radii.push(pts.iter().map(|z| z.norm()).fold(0.0, f64::max));
        hulls.push(Region::polygon(pts.clone()));
    }
    let mut disjoint = true;
    for i in 0..hulls.len() {
        for k in i + 1..hulls.len() {
            disjoint &= region_distance(&hulls[i], &hulls[k], 1024) > 0.0;
        }
    }
    let decreasing = radii.windows(2).all(|w| w[1] < w[0]);
    let max_ratio = radii.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    Ok(PreimageLadder { radii, hulls, disjoint, decreasing, max_ratio, residual })
}
