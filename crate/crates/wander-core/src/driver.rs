//! The inductive construction: seed placement, the nested compacts, stage
//! models, epsilon selection, approximation and the per-stage verdicts.

use crate::approx::{
    approximate, certify_univalence, certify_univalence_union, epsilon_search, probe_points, ApproxConfig, ApproxError,
    ApproximationTask, Constraint, ErrorCertificate, NewtonPoly, Piece, Polynomial,
};
use crate::branches::{band_itinerary, claim2_checks, construct_cj, BranchError, Check, PullbackInput, PullbackTrace};
use crate::exec;
use crate::geometry::{compactly_contained, dense_boundary_subset, winding_number, Constants, PointCloud, Region};
use crate::hexfloat;
use crate::models::{build_contraction, phi0, phi_j, MapSpec, ModelError, PiecewiseModel, StagePieces};
use crate::schedule::{lambda_schedule, parse_ratio, shifted_schedule, Schedule, ScheduleError};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config: {0}")]
    Config(String),
    #[error("placement infeasible: {0}")]
    PlacementInfeasible(String),
    #[error("stage {j} failed: {reason}")]
    StageFailed { j: usize, reason: String },
}

impl From<ScheduleError> for DriverError {
    fn from(e: ScheduleError) -> Self {
        DriverError::Config(e.to_string())
    }
}

fn stage_err(j: usize) -> impl Fn(String) -> DriverError {
    move |reason| DriverError::StageFailed { j, reason }
}

/// User shape for the seed domain `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// The unit disk, or a given disk kept in place when it already fits.
    Disk {
        #[serde(default, with = "hexfloat::complex_opt", skip_serializing_if = "Option::is_none")]
        center: Option<C64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Square,
    /// A convex polygon, vertices as `[re, im]` pairs.
    Polygon {
        #[serde(with = "hexfloat::complex_vec")]
        vertices: Vec<C64>,
    },
}

impl Default for Shape {
    fn default() -> Self {
        Shape::Disk { center: None, radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitSchedule {
    pub n: Vec<u64>,
    pub m: Vec<u64>,
}

fn d_stages() -> usize {
    2
}
fn d_m_offset() -> u64 {
    1
}
fn d_r1() -> f64 {
    0.09
}
fn d_fill() -> f64 {
    0.5
}
fn d_delta0() -> f64 {
    10.0
}
fn d_theta() -> f64 {
    0.05
}
fn d_v_fraction() -> f64 {
    0.25
}
fn d_degrees() -> Vec<usize> {
    vec![12288, 16384, 32768]
}
fn d_guard() -> f64 {
    0.05
}
fn d_grid() -> usize {
    64
}
fn d_boundary() -> usize {
    1024
}
fn d_floor() -> f64 {
    1e-12
}
fn d_precision() -> String {
    "binary64".into()
}
fn d_lipschitz() -> f64 {
    1.1
}
fn d_halo() -> f64 {
    0.093
}

/// Build configuration; every field but the schedule has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "d_stages")]
    pub stages: usize,
    /// Rational `lambda` as a decimal or `a/b` string.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    #[serde(default = "d_m_offset")]
    pub m_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ExplicitSchedule>,
    #[serde(default)]
    pub shift: u64,
    #[serde(default)]
    pub shape: Shape,
    #[serde(default = "d_r1")]
    pub r1: f64,
    /// Radius of the disk about 0 on which stage 0 fits `3z`; it must exceed
    /// `r1` so that `f_0'` is controlled on `D`.
    #[serde(default = "d_halo")]
    pub d_halo: f64,
    /// `K_0`'s circumradius as a fraction of the placement window's half width.
    #[serde(default = "d_fill")]
    pub k_fill: f64,
    /// `delta_0` as a multiple of `K`'s circumdiameter.
    #[serde(default = "d_delta0")]
    pub delta0: f64,
    /// Where `L_j` sits between `K_j` (0) and `K_{j-1}` (1).
    #[serde(default = "d_theta")]
    pub theta: f64,
    /// `V_j` radius as a fraction of its distance to `Q_j` and `∂B̂_{j-1}`.
    #[serde(default = "d_v_fraction")]
    pub v_fraction: f64,
    /// Degree budget per stage; the last entry repeats.
    #[serde(default = "d_degrees")]
    pub max_degree: Vec<usize>,
    /// Absolute tolerance on the guard translates of `B_0`.
    #[serde(default = "d_guard")]
    pub guard_tolerance: f64,
    /// Tube growth factor on `|phi'|` for perturbed orbits.
    #[serde(default = "d_lipschitz")]
    pub lipschitz_slack: f64,
    #[serde(default = "d_grid")]
    pub grid: usize,
    #[serde(default = "d_boundary")]
    pub boundary: usize,
    #[serde(default = "d_floor")]
    pub eps_floor: f64,
    #[serde(default = "d_precision")]
    pub precision: String,
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str(r#"{"lambda": "1"}"#).expect("default config")
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, DriverError> {
        let c: Config = serde_json::from_str(text).map_err(|e| DriverError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn schedule(&self) -> Result<Schedule, DriverError> {
        let s = match (&self.lambda, &self.schedule) {
            (Some(l), None) => lambda_schedule(parse_ratio(l)?, self.m_offset)?,
            (None, Some(e)) => Schedule::explicit(e.n.clone(), e.m.clone())?,
            _ => return Err(DriverError::Config("give exactly one of lambda and schedule".into())),
        };
        Ok(shifted_schedule(&s, self.shift))
    }

    pub fn degree_budget(&self, j: usize) -> usize {
        *self.max_degree.get(j).or(self.max_degree.last()).unwrap_or(&4096)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: String| Err(DriverError::Config(m));
        if self.precision != "binary64" {
            return bad(format!("precision {:?} unsupported; only binary64", self.precision));
        }
        let s = self.schedule()?;
        s.validate()?;
        for j in 1..=self.stages + 1 {
            let (n, _) = s.term(j)?;
            if n == 0 {
                return bad(format!("n_{j} = 0 leaves no room to pull back into D"));
            }
        }
        if s.m(1) < 2 {
            return bad(format!("m_1 = {} but the construction needs m_1 >= 2", s.m(1)));
        }
        Constants::with_r1(self.r1).validate().map_err(|e| DriverError::Config(e.to_string()))?;
        if !(self.d_halo > self.r1 && self.d_halo < 1.0 / 9.0) {
            return bad(format!("d_halo must lie in (r1, 1/9), got {}", self.d_halo));
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.k_fill) || !unit(self.theta) || !unit(self.v_fraction) {
            return bad("k_fill, theta and v_fraction must lie in (0, 1)".into());
        }
        if !(self.delta0 > 0.0) || !(self.guard_tolerance > 0.0) || !(self.lipschitz_slack >= 1.0) {
            return bad("delta0 and guard_tolerance must be positive, lipschitz_slack at least 1".into());
        }
        if self.grid < 4 || self.boundary < 16 || self.max_degree.is_empty() || !(self.eps_floor > 0.0) {
            return bad("grid >= 4, boundary >= 16, a degree budget and a positive eps_floor are required".into());
        }
        if let Shape::Polygon { vertices } = &self.shape {
            if !convex(vertices) {
                return bad("polygon shapes must be convex with at least three vertices".into());
            }
        }
        Ok(())
    }
}

fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn convex(v: &[C64]) -> bool {
    let n = v.len();
    if n < 3 {
        return false;
    }
    let signs: Vec<f64> = (0..n).map(|i| cross(v[(i + 1) % n] - v[i], v[(i + 2) % n] - v[(i + 1) % n])).collect();
    signs.iter().all(|s| *s > 0.0) || signs.iter().all(|s| *s < 0.0)
}

/// Closed `d`-neighbourhood of a disk or convex polygon; polygon corners
/// become arcs drawn through circumscribing chords.
pub fn offset(k: &Region, d: f64) -> Region {
    match k {
        Region::Disk { center, radius } => Region::disk(*center, radius + d),
        Region::PolygonalHull { vertices } => {
            let n = vertices.len();
            let area: f64 = (0..n).map(|i| cross(vertices[i], vertices[(i + 1) % n])).sum();
            let v: Vec<C64> = if area < 0.0 { vertices.iter().rev().copied().collect() } else { vertices.clone() };
            let normal = |a: C64, b: C64| {
                let t = (b - a) / (b - a).norm();
                C64::new(t.im, -t.re)
            };
            const ARC: usize = 8;
            let mut out = Vec::with_capacity(n * (ARC + 1));
            for i in 0..n {
                let prev = v[(i + n - 1) % n];
                let cur = v[i];
                let next = v[(i + 1) % n];
                let a0 = normal(prev, cur).arg();
                let mut a1 = normal(cur, next).arg();
                while a1 < a0 {
                    a1 += std::f64::consts::TAU;
                }
                let step = (a1 - a0) / ARC as f64;
                let r = d / (0.5 * step).cos();
                for k in 0..=ARC {
                    let t = a0 + step * k as f64;
                    let rr = if k == 0 || k == ARC { d } else { r };
                    out.push(cur + C64::from_polar(rr, t));
                }
            }
            Region::polygon(out)
        }
        other => other.clone(),
    }
}

/// The placed seed `K` and the parameters of its neighbourhoods `K_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedDomain {
    pub shape: Shape,
    /// `K`, the closure of `U` after placement.
    pub k: Region,
    /// Placement `z -> scale z + shift` applied to the canonical shape.
    #[serde(with = "hexfloat::complex")]
    pub scale: C64,
    #[serde(with = "hexfloat::complex")]
    pub shift: C64,
    #[serde(with = "hexfloat::real")]
    pub delta0: f64,
    #[serde(with = "hexfloat::real")]
    pub theta: f64,
}

impl SeedDomain {
    pub fn delta(&self, j: usize) -> f64 {
        self.delta0 * 0.5f64.powi(j as i32)
    }

    /// `K_j`: the closed `delta_0 2^{-j}` neighbourhood of `K`.
    pub fn k_j(&self, j: usize) -> Region {
        offset(&self.k, self.delta(j))
    }

    /// `L_j` with `K_j ⊂ int L_j ⊂ L_j ⊂ K_{j-1}`.
    pub fn l_j(&self, j: usize) -> Region {
        assert!(j >= 1, "L_j needs j >= 1");
        let (a, b) = (self.delta(j), self.delta(j - 1));
        offset(&self.k, a + self.theta * (b - a))
    }

    /// `P_j`: a `2^{-j}`-dense finite subset of `∂K_j`.
    pub fn p_j(&self, j: usize) -> PointCloud {
        dense_boundary_subset(&self.k_j(j), 0.5f64.powi(j as i32))
    }
}

/// Place the shape inside `{r2 3^{-(n_1+1)} < |z| < r3 3^{-(n_1+1)}, |arg z| < pi/4}`.
pub fn normalize_seed(cfg: &Config, s: &Schedule, c: &Constants) -> Result<SeedDomain, DriverError> {
    let n1 = s.n(1) as i32;
    let w = 3f64.powi(-(n1 + 1));
    let (w_in, w_out) = (c.r2 * w, c.r3 * w);
    let mid = 0.5 * (w_in + w_out);
    let half = 0.5 * (w_out - w_in);
    let grow = 1.0 + 2.0 * cfg.delta0;
    let target = cfg.k_fill * half / grow;
    let (base, placed) = match &cfg.shape {
        Shape::Disk { center: Some(z), radius: Some(r) } => {
            let k = Region::disk(*z, *r);
            (k.clone(), Some(k))
        }
        Shape::Disk { .. } => (Region::disk(C64::new(0.0, 0.0), 1.0), None),
        Shape::Square => (
            Region::polygon(vec![C64::new(-1.0, -1.0), C64::new(1.0, -1.0), C64::new(1.0, 1.0), C64::new(-1.0, 1.0)]),
            None,
        ),
        Shape::Polygon { vertices } => (Region::polygon(vertices.clone()), None),
    };
    let fits = |k: &Region| {
        let c0 = k.centroid();
        let r = k.circumradius_about(c0);
        let k0 = offset(k, cfg.delta0 * 2.0 * r);
        let probe = |z: C64| {
            let m = z.norm();
            m >= w_in + 0.25 * half && m <= w_out - 0.25 * half && z.arg().abs() <= 0.75 * FRAC_PI_4
        };
        k0.boundary(1024).iter().all(|z| probe(*z))
    };
    let (k, scale, shift) = match placed {
        Some(k) if fits(&k) => (k, C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
        _ => {
            let c0 = base.centroid();
            let r0 = base.circumradius_about(c0);
            if !(r0 > 0.0) {
                return Err(DriverError::PlacementInfeasible("shape has no extent".into()));
            }
            let a = C64::new(target / r0, 0.0);
            let b = C64::new(mid, 0.0) - a * c0;
            (base.affine_image(a, b), a, b)
        }
    };
    let rk = k.circumradius_about(k.centroid());
    let sd = SeedDomain { shape: cfg.shape.clone(), k, scale, shift, delta0: cfg.delta0 * 2.0 * rk, theta: cfg.theta };
    check_placement(&sd, s, c).map_err(DriverError::PlacementInfeasible)?;
    Ok(sd)
}

/// `Phi^j(K_0) ⋐ D` for `j <= n_1` and `Phi^{n_1+1}(K_0) ⋐ B_0`.
pub fn check_placement(sd: &SeedDomain, s: &Schedule, c: &Constants) -> Result<(), String> {
    let k0 = sd.k_j(0);
    if k0.contains(C64::new(0.0, 0.0)) {
        return Err("0 lies in K_0".into());
    }
    let n1 = s.n(1) as i32;
    for j in 0..=n1 {
        let img = k0.affine_image(C64::new(3f64.powi(j), 0.0), C64::new(0.0, 0.0));
        if !compactly_contained(&img, &c.d(), 0.0) {
            return Err(format!("Phi^{j}(K_0) leaves D"));
        }
    }
    let img = k0.affine_image(C64::new(3f64.powi(n1 + 1), 0.0), C64::new(0.0, 0.0));
    if !compactly_contained(&img, &c.b0(), 0.0) {
        return Err("Phi^(n_1+1)(K_0) is not compactly inside B_0".into());
    }
    Ok(())
}

/// `(K_j, P_j, L_j)`; `L_0` is `K_0` itself.
pub fn nested_compacts(sd: &SeedDomain, j: usize) -> (Region, PointCloud, Region) {
    let l = if j == 0 { sd.k_j(0) } else { sd.l_j(j) };
    (sd.k_j(j), sd.p_j(j), l)
}

/// Everything one stage produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub j: usize,
    #[serde(with = "hexfloat::real")]
    pub eps: f64,
    /// `f_j`, the running sum of corrections.
    pub f: Polynomial,
    /// `T_j` with `phi_j`.
    pub model: PiecewiseModel,
    /// Translates of `B_0` held near `z + 1` to keep later targets tame.
    pub guards: Vec<Region>,
    /// `B_j` (the sector `B_0` at stage 0).
    pub band: Region,
    pub b_hat: Region,
    /// Components of `U_j`.
    pub u: Vec<Region>,
    pub k: Region,
    pub l: Region,
    pub q: Option<Region>,
    pub v: Option<Region>,
    pub h: Option<MapSpec>,
    pub trace: Option<PullbackTrace>,
    pub degree: usize,
    pub certificate: ErrorCertificate,
    #[serde(with = "hexfloat::real_vec")]
    pub guard_errors: Vec<f64>,
    pub verdicts: Vec<Check>,
}

impl StageRecord {
    pub fn ok(&self) -> bool {
        self.verdicts.iter().all(|c| c.pass)
    }
}

/// The fixed inputs of a build.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: Config,
    pub constants: Constants,
    pub schedule: Schedule,
    pub seed: SeedDomain,
}

impl Setup {
    pub fn new(config: Config) -> Result<Setup, DriverError> {
        config.validate()?;
        let schedule = config.schedule()?;
        let constants = Constants::with_r1(config.r1);
        let seed = normalize_seed(&config, &schedule, &constants)?;
        Ok(Setup { config, constants, schedule, seed })
    }

    fn big_n(&self, j: usize) -> usize {
        self.schedule.cumulative_n(j).expect("validated schedule") as usize
    }

    fn m(&self, j: usize) -> u64 {
        self.schedule.m(j)
    }

    fn b0_plus(&self, k: u64) -> Region {
        self.constants.b0().translated(C64::new(k as f64, 0.0))
    }

    /// Guard translates `B_0 + k`, `m_{j+1} - 1 <= k <= m_{J+1} - 2`.
    fn guards(&self, j: usize) -> Vec<Region> {
        let last = self.m(self.config.stages + 1) as i64 - 2;
        ((self.m(j + 1) as i64 - 1)..=last).map(|k| self.b0_plus(k as u64)).collect()
    }

    fn approx_config(&self, j: usize) -> ApproxConfig {
        ApproxConfig { max_degree: self.config.degree_budget(j), ..Default::default() }
    }
}

/// Persisted build: config, derived inputs, stages and the tail report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Config,
    pub constants: Constants,
    pub seed: SeedDomain,
    pub stages: Vec<StageRecord>,
    pub tail: Vec<TailRow>,
}

/// `sup_{T_j} |f_J - f_j|` against `sum_{k > j} eps_k` and `(4/3) eps_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub j: usize,
    #[serde(with = "hexfloat::real")]
    pub sup: f64,
    #[serde(with = "hexfloat::real")]
    pub sum_bound: f64,
    #[serde(with = "hexfloat::real")]
    pub geometric_bound: f64,
    pub pass: bool,
}

fn polys(stages: &[StageRecord]) -> Vec<Polynomial> {
    stages.iter().map(|s| s.f.clone()).collect()
}

/// `phi`-orbit of one point with `|phi'|` along the way.
fn model_orbit(
    model: &PiecewiseModel,
    prior: &[Polynomial],
    z: C64,
    steps: usize,
) -> Result<Vec<(C64, f64, usize)>, ModelError> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut w = z;
    for _ in 0..steps {
        let i = model.piece_of(w).ok_or(ModelError::OutsideDomain(w))?;
        let (v, d) = model.pieces[i].1.eval_d(w, prior)?;
        out.push((w, d.norm(), i));
        w = v;
    }
    out.push((w, 0.0, usize::MAX));
    Ok(out)
}

/// A membership requirement at orbit step `step`.
struct Req {
    step: usize,
    region: Region,
    inside: bool,
}

/// Largest `eps` for which every perturbed orbit tube meets its requirements:
/// the tube radius obeys `r_{l+1} = slack |phi'(z_l)| r_l + 2 eps`, each
/// step must sit that deep inside its own piece, and each requirement must
/// hold with the tube radius to spare.
fn tube_limit(
    model: &PiecewiseModel,
    prior: &[Polynomial],
    seeds: &[C64],
    steps: usize,
    reqs: &[Req],
    slack: f64,
) -> Result<f64, String> {
    let per = exec::map(seeds, |z| -> Result<f64, String> {
        let o = model_orbit(model, prior, *z, steps).map_err(|e| e.to_string())?;
        let mut a = vec![0.0f64; steps + 1];
        for l in 0..steps {
            a[l + 1] = slack * o[l].1 * a[l] + 2.0;
        }
        let mut lim = f64::INFINITY;
        for l in 1..steps {
            let margin = -model.pieces[o[l].2].0.signed_distance(o[l].0);
            lim = lim.min(margin / a[l]);
        }
        for r in reqs {
            let sd = r.region.signed_distance(o[r.step].0);
            let margin = if r.inside { -sd } else { sd };
            lim = lim.min(margin / a[r.step]);
        }
        Ok(lim)
    });
    let mut lim = f64::INFINITY;
    for p in per {
        lim = lim.min(p?);
    }
    Ok(lim)
}

/// Itinerary requirements for `K_j` from step `from` on: in `D` on the
/// scheduled in-D steps, in `B_l + k` on the band steps of block `l`.
fn itinerary_reqs(st: &Setup, bands: &[Region], j: usize, from: usize) -> Vec<Req> {
    let s = &st.schedule;
    let d = st.constants.d();
    let mut out = Vec::new();
    for p in 0..=j {
        let np = st.big_n(p);
        for ell in np + 1..=np + s.n(p + 1) as usize {
            if ell >= from {
                out.push(Req { step: ell, region: d.clone(), inside: true });
            }
        }
        let base = np + s.n(p + 1) as usize;
        for (l, k, _) in band_itinerary(s, p + 1).into_iter().filter(|t| t.0 == p) {
            let ell = base + s.m(l).max(1) as usize + k as usize;
            if ell >= from && ell <= st.big_n(j + 1) {
                let r = bands[l].translated(C64::new(k as f64, 0.0));
                out.push(Req { step: ell, region: r, inside: true });
            }
        }
    }
    out
}

fn constraint0() -> Vec<Constraint> {
    vec![Constraint { point: C64::new(0.0, 0.0), value: C64::new(0.0, 0.0), derivative: Some(C64::new(0.0, 0.0)) }]
}

/// Stage 0: approximate `phi_0` on `T_0` with `f_0(0) = 0`, `f_0'(0) = 3`.
pub fn init_stage0(st: &Setup) -> Result<StageRecord, DriverError> {
    let err = stage_err(0);
    let c = &st.constants;
    let s = &st.schedule;
    let model = phi0(c, s).map_err(|e| err(e.to_string()))?;
    let (k0, _, l0) = nested_compacts(&st.seed, 0);
    let m1 = s.m(1);
    let n1 = st.big_n(1);
    let band = c.b0();
    let b_hat = st.b0_plus(m1 - 1);
    let u: Vec<Region> = std::iter::once(c.d()).chain((0..=m1 - 2).map(|k| st.b0_plus(k))).collect();
    let guards = st.guards(0);

    // stage-0 itinerary through orbit tubes of the model
    let seeds = k0.grid(16, 128);
    let reqs = itinerary_reqs(st, std::slice::from_ref(&band), 0, 1);
    let lim = tube_limit(&model, &[], &seeds, n1, &reqs, st.config.lipschitz_slack).map_err(&err)?;
    let tube = |e: f64| e <= lim;
    let deriv = |e: f64| 2.0 * e <= 0.1 * 3.0 * c.r1;
    let eps = epsilon_search(&[&tube, &deriv], c.eps / 8.0, st.config.eps_floor).map_err(|e| err(e.to_string()))?;

    let lin = |z: C64| 3.0 * z;
    let cst = |_: C64| C64::new(-0.25, 0.0);
    let tr = |z: C64| z + 1.0;
    let halo = Region::disk(C64::new(0.0, 0.0), st.config.d_halo);
    let mut pieces = vec![Piece::new(halo, &lin), Piece::new(c.a(), &cst)];
    for (r, _) in model.pieces.iter().skip(2) {
        pieces.push(Piece::new(r.clone(), &tr));
    }
    let slack = st.config.guard_tolerance / eps;
    for g in &guards {
        pieces.push(Piece::loose(g.clone(), &tr, slack));
    }
    let mut cons = constraint0();
    cons[0].derivative = Some(C64::new(3.0, 0.0));
    let task = ApproximationTask { pieces, constraints: cons, epsilon: eps, config: st.approx_config(0) };
    let (p, cert) = approximate(&task).map_err(|e| err(e.to_string()))?;
    let np = model.pieces.len();
    let guard_errors = cert.certified[np..].to_vec();
    let certificate = ErrorCertificate {
        certified: cert.certified[..np].to_vec(),
        coarse: cert.coarse[..np].to_vec(),
        grid: cert.grid[..np].to_vec(),
        ..cert
    };
    let mut rec = StageRecord {
        j: 0,
        eps,
        degree: p.degree(),
        f: Polynomial { terms: vec![p] },
        model,
        guards,
        band,
        b_hat,
        u,
        k: k0,
        l: l0,
        q: None,
        v: None,
        h: None,
        trace: None,
        certificate,
        guard_errors,
        verdicts: vec![],
    };
    rec.verdicts = stage_checks(st, &[], &rec);
    Ok(rec)
}

/// Stage `j >= 1` from the verified stages `0..j`.
pub fn advance_stage(st: &Setup, prev_stages: &[StageRecord]) -> Result<StageRecord, DriverError> {
    let j = prev_stages.len();
    let err = stage_err(j);
    let (c, s, cfg) = (&st.constants, &st.schedule, &st.config);
    let prev = prev_stages.last().expect("advance_stage needs a previous stage");
    let f = &prev.f;
    let nj = st.big_n(j);
    let nb = cfg.boundary;
    let (kj, _, lj) = nested_compacts(&st.seed, j);
    let k_prev = st.seed.k_j(j - 1);
    let p_prev = st.seed.p_j(j - 1);
    let fwd = |pts: Vec<C64>| exec::map(&pts, |z| f.iterate(*z, nj));

    let q = Region::polygon(fwd(lj.boundary(nb)));
    let excluded = Region::polygon(fwd(k_prev.boundary(nb)));
    let centres = fwd(p_prev.points.clone());
    let mut vs = Vec::new();
    for z in &centres {
        let room = q.signed_distance(*z).min(-prev.b_hat.signed_distance(*z));
        if !(room > 0.0) {
            return Err(err(format!("f^N_j(P_(j-1)) point {z} has no room (margin {room:e})")));
        }
        vs.push(Region::disk(*z, cfg.v_fraction * room));
    }
    let v = if vs.len() == 1 { vs.pop().unwrap() } else { Region::FiniteUnion { parts: vs } };

    let bands: Vec<Region> = prev_stages.iter().map(|r| r.band.clone()).collect();
    let inp = PullbackInput {
        f,
        c,
        s,
        j,
        bands: &bands,
        b_hat: &prev.b_hat,
        q: &q,
        v: &v,
        excluded: &excluded,
        boundary: nb,
        floor: 1e-9,
    };
    let trace = construct_cj(&inp).map_err(|e: BranchError| err(e.to_string()))?;
    if let Some(bad) = trace.checks.iter().find(|c| !c.pass) {
        return Err(err(format!("pullback check {:?} failed (margin {:e})", bad.name, bad.margin)));
    }
    let band = trace.x.clone();
    let span = s.m(j + 1) - s.m(j);
    let b_hat = band.translated(C64::new(span as f64, 0.0));
    let h = build_contraction(&q, &trace.cj).map_err(|e| err(e.to_string()))?;
    let delta = Region::disk(C64::new(0.0, 0.0), s.m(j) as f64 - 1.0);
    let translates: Vec<Region> = (0..span).map(|k| band.translated(C64::new(k as f64, 0.0))).collect();
    let prior = polys(prev_stages);
    let pieces = StagePieces { delta: delta.clone(), v: v.clone(), q: q.clone(), h: h.clone(), bands: translates.clone() };
    let model = phi_j(j - 1, &prior, pieces).map_err(|e| err(e.to_string()))?;
    let mut u = prev.u.clone();
    u.extend((0..s.m(j + 1) - s.m(j).max(1)).map(|k| band.translated(C64::new(k as f64, 0.0))));
    let guards = st.guards(j);

    // absorption and transport through orbit tubes of phi_j
    let mut all_bands = bands.clone();
    all_bands.push(band.clone());
    let n_next = st.big_n(j + 1);
    let seeds = kj.grid(16, 128);
    let mut reqs = itinerary_reqs(st, &all_bands, j, nj + 1);
    reqs.push(Req { step: nj, region: q.clone(), inside: true });
    reqs.push(Req { step: n_next, region: b_hat.clone(), inside: true });
    let lim_k = tube_limit(&model, &prior, &seeds, n_next, &reqs, cfg.lipschitz_slack).map_err(&err)?;
    let a_reqs = vec![Req { step: nj, region: v.clone(), inside: true }, Req { step: nj + 1, region: c.a(), inside: true }];
    let lim_p = tube_limit(&model, &prior, &p_prev.points, nj + 1, &a_reqs, cfg.lipschitz_slack).map_err(&err)?;
    let mu = u.iter().map(|r| r.inradius_about(r.centroid())).fold(f64::INFINITY, f64::min);
    let tube = |e: f64| e <= lim_k && e <= lim_p;
    let deriv = |e: f64| 2.0 * e <= 0.1 * mu;
    let eps = epsilon_search(&[&tube, &deriv], prev.eps / 8.0, cfg.eps_floor).map_err(|e| err(e.to_string()))?;

    // the correction c_j = f_j - f_{j-1}
    let zero = |_: C64| C64::new(0.0, 0.0);
    let t_v = |z: C64| C64::new(-0.25, 0.0) - f.eval(z);
    let t_q = |z: C64| h.eval(z, &[]).expect("affine") - f.eval(z);
    let t_b = |z: C64| z + 1.0 - f.eval(z);
    let mut pcs = vec![Piece::new(delta.clone(), &zero), Piece::new(v.clone(), &t_v), Piece::new(q.clone(), &t_q)];
    for b in &translates {
        pcs.push(Piece::new(b.clone(), &t_b));
    }
    let slack = cfg.guard_tolerance / eps;
    for g in &guards {
        pcs.push(Piece::loose(g.clone(), &t_b, slack));
    }
    let task = ApproximationTask { pieces: pcs, constraints: constraint0(), epsilon: eps, config: st.approx_config(j) };
    let (corr, cert): (NewtonPoly, ErrorCertificate) = approximate(&task).map_err(|e: ApproxError| err(e.to_string()))?;
    let np = model.pieces.len();
    let guard_errors = cert.certified[np..].to_vec();
    let certificate = ErrorCertificate {
        certified: cert.certified[..np].to_vec(),
        coarse: cert.coarse[..np].to_vec(),
        grid: cert.grid[..np].to_vec(),
        ..cert
    };
    let mut rec = StageRecord {
        j,
        eps,
        degree: corr.degree(),
        f: f.plus(corr),
        model,
        guards,
        band,
        b_hat,
        u,
        k: kj,
        l: lj,
        q: Some(q),
        v: Some(v),
        h: Some(h),
        trace: Some(trace),
        certificate,
        guard_errors,
        verdicts: vec![],
    };
    rec.verdicts = stage_checks(st, prev_stages, &rec);
    Ok(rec)
}

/// Forward orbits of `pts` under `f` for `steps` steps.
pub fn orbits(f: &Polynomial, pts: &[C64], steps: usize) -> Vec<Vec<C64>> {
    exec::map(pts, |z| {
        let mut o = Vec::with_capacity(steps + 1);
        o.push(*z);
        for _ in 0..steps {
            let w = f.eval(*o.last().unwrap());
            o.push(w);
        }
        o
    })
}

fn worst(orbs: &[Vec<C64>], step: usize, r: &Region, inside: bool) -> f64 {
    orbs.iter()
        .map(|o| {
            let sd = r.signed_distance(o[step]);
            if inside {
                -sd
            } else {
                sd
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Forward orbits together with `|(f^steps)'|` at each start point.
pub fn orbits_d(f: &Polynomial, pts: &[C64], steps: usize) -> (Vec<Vec<C64>>, Vec<f64>) {
    let both = exec::map(pts, |z| {
        let mut o = Vec::with_capacity(steps + 1);
        let mut d = C64::new(1.0, 0.0);
        o.push(*z);
        for _ in 0..steps {
            let (w, dw) = f.eval_d(*o.last().unwrap());
            d *= dw;
            o.push(w);
        }
        (o, d.norm())
    });
    both.into_iter().unzip()
}

/// Whether the image curve winds exactly once about every probe image;
/// `None` when a probe image is too close to the curve to decide.
fn winds_once(curve: &[C64], probes: &[C64], map: impl Fn(C64) -> C64) -> Option<bool> {
    for z in probes {
        match winding_number(curve, map(*z)) {
            Ok(1) => {}
            Ok(_) => return Some(false),
            Err(_) => return None,
        }
    }
    Some(true)
}

/// Value and derivative of `f^n`.
pub fn composed(f: &Polynomial, z: C64, n: usize) -> (C64, C64) {
    let mut v = z;
    let mut d = C64::new(1.0, 0.0);
    for _ in 0..n {
        let (a, b) = f.eval_d(v);
        d *= b;
        v = a;
    }
    (v, d)
}

/// Every verdict for stage `rec`, recomputed from the stored sets and
/// polynomials: (i)-(vii), the error certificate, and the itinerary,
/// pullback and absorption checks.
pub fn stage_checks(st: &Setup, prev_stages: &[StageRecord], rec: &StageRecord) -> Vec<Check> {
    let (c, s, cfg) = (&st.constants, &st.schedule, &st.config);
    let j = rec.j;
    let f = &rec.f;
    let mut out = Vec::new();
    let n_next = st.big_n(j + 1);
    let nj = st.big_n(j);

    // (i)
    let next_delta = Region::disk(C64::new(0.0, 0.0), s.m(j + 1) as f64 - 1.0);
    let t_in = rec
        .model
        .pieces
        .iter()
        .map(|(r, _)| r.boundary(1024).iter().map(|z| -next_delta.signed_distance(*z)).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    let delta_in = if j == 0 { -c.d().signed_distance(C64::new(0.0, 0.0)) } else { 1.0 };
    out.push(Check::new("(i) Delta_j in T_j in Delta_{j+1}", t_in.min(delta_in)));

    // orbits of a K_j grid through N_{j+1}
    let grid = rec.k.grid(cfg.grid, cfg.boundary);
    let (orbs, ders) = orbits_d(f, &grid, n_next);
    out.push(Check::new("(ii) f^N_{j+1}(K_j) in B̂_j", worst(&orbs, n_next, &rec.b_hat, true)));
    let outer = st.b0_plus(s.m(j + 1) - 1);
    let bh = rec.b_hat.boundary(2048).iter().map(|z| -outer.signed_distance(*z)).fold(f64::INFINITY, f64::min);
    out.push(Check { name: "(ii) B̂_j in B0+m_{j+1}-1".into(), pass: bh >= -1e-12, margin: bh });

    // (iii) and (iv)
    let rim: Vec<C64> = orbs[grid.len() - cfg.boundary..].iter().map(|o| o[n_next]).collect();
    let comp = |z: C64| composed(f, z, n_next);
    let uni = match winds_once(&rim, &probe_points(&rec.k, 16), |z| comp(z).0) {
        Some(true) => ders.iter().copied().fold(f64::INFINITY, f64::min),
        Some(false) => -1.0,
        None => certify_univalence(&comp, &rec.k, 16, 0.0).map(|u| u.derivative_lower_bound).unwrap_or(-1.0),
    };
    out.push(Check::new("(iii) f^N_{j+1} univalent on K_j", uni));
    let fd = |z: C64| f.eval_d(z);
    let uu = certify_univalence_union(&fd, &rec.u, 16, 0.0);
    out.push(Check::new(
        "(iv) f univalent on U_j",
        uu.map(|v| v.iter().map(|u| u.derivative_lower_bound).fold(f64::INFINITY, f64::min)).unwrap_or(-1.0),
    ));
    if j == 0 {
        let ud = certify_univalence(&fd, &c.d(), 16, 1.5);
        out.push(Check::new("mu' > 3/2 on D", ud.map(|u| u.derivative_lower_bound - 1.5).unwrap_or(-1.0)));
    }

    // (v): in D, then through the band translates
    let mut bands: Vec<Region> = prev_stages.iter().map(|r| r.band.clone()).collect();
    bands.push(rec.band.clone());
    let d = c.d();
    let in_d = (nj + 1..=nj + s.n(j + 1) as usize).map(|l| worst(&orbs, l, &d, true)).fold(f64::INFINITY, f64::min);
    out.push(Check::new("(v) in D for N_j < l <= N_j + n_{j+1}", in_d));
    let (mut closed, mut open) = (f64::INFINITY, f64::INFINITY);
    for (l, k, end) in band_itinerary(s, j + 1) {
        let ell = nj + s.n(j + 1) as usize + s.m(l).max(1) as usize + k as usize;
        let r = bands[l].translated(C64::new(k as f64, 0.0));
        let m = worst(&orbs, ell, &r, true);
        closed = closed.min(m);
        if !end {
            open = open.min(m);
        }
    }
    out.push(Check::new("(v) band itinerary, closed range", closed));
    out.push(Check::new("(v) band itinerary, half-open range", open));

    // (vi) and (vii)
    out.push(Check::new("(vi) eps_j < eps / 4^j", c.eps / 4f64.powi(j as i32) - rec.eps));
    if let Some(p) = prev_stages.last() {
        out.push(Check::new("(vi) eps_j < eps_{j-1} / 4", p.eps / 4.0 - rec.eps));
    } else {
        out.push(Check::new("seed: eps_0 < eps / 4", c.eps / 4.0 - rec.eps));
    }
    let (v0, d0) = f.eval_d(C64::new(0.0, 0.0));
    let res = v0.norm().max((d0 - 3.0).norm());
    out.push(Check::new("(vii) f(0) = 0, f'(0) = 3", 1e-12 - res));

    // certified error on T_j and the guards
    out.push(Check::new("|f_j - phi_j| <= eps_j on T_j", rec.eps - rec.certificate.worst()));
    let prior = polys(prev_stages);
    let direct = rec
        .model
        .pieces
        .iter()
        .map(|(r, m)| {
            let pts = r.boundary(4096);
            match m {
                // f_j - f_stage is the sum of the later corrections; the
                // earlier terms need not be representable off their pieces
                MapSpec::Prior { stage } => exec::max_by(&pts, |z| {
                    f.terms[stage + 1..].iter().map(|t| t.eval(*z)).sum::<C64>().norm()
                }),
                _ => exec::max_by(&pts, |z| {
                    (f.eval(*z) - m.eval(*z, &prior).unwrap_or(C64::new(f64::NAN, 0.0))).norm()
                }),
            }
        })
        .fold(0.0, f64::max);
    out.push(Check::new("independent sup on T_j <= eps_j", rec.eps - direct));
    let g = rec
        .guards
        .iter()
        .map(|r| exec::max_by(&r.boundary(4096), |z| (f.eval(*z) - (z + 1.0)).norm()))
        .fold(0.0, f64::max);
    out.push(Check::new("guards within tolerance", cfg.guard_tolerance - g));

    // stage-0 itinerary and absorption
    if j == 0 {
        let ell_d = (1..=s.n(1) as usize).map(|l| worst(&orbs, l, &d, true)).fold(f64::INFINITY, f64::min);
        out.push(Check::new("seed: g^l(K_0) in D, l <= n_1", ell_d.min(-d.signed_distance(grid[0]))));
        let bands_ok = (0..s.m(1))
            .map(|k| worst(&orbs, s.n(1) as usize + 1 + k as usize, &st.b0_plus(k), true))
            .fold(f64::INFINITY, f64::min);
        out.push(Check::new("seed: g^(n_1+1+k)(K_0) in B0+k", bands_ok));
    } else {
        let p = st.seed.p_j(j - 1);
        let po = orbits(f, &p.points, nj + 1);
        out.push(Check::new("absorption: f^(N_j+1)(P_(j-1)) in A", worst(&po, nj + 1, &c.a(), true)));
        if let (Some(q), Some(t)) = (&rec.q, &rec.trace) {
            out.push(Check::new("f^N_j(K_j) in Q_j", worst(&orbs, nj, q, true)));
            out.push(Check::new("f^(N_j+1)(K_j) in C_j", worst(&orbs, nj + 1, &t.cj, true)));
        }
        // pullback recomputed from the stored trace
        if let (Some(prev), Some(t), Some(q), Some(v)) = (prev_stages.last(), &rec.trace, &rec.q, &rec.v) {
            let k_prev = st.seed.k_j(j - 1);
            let excluded =
                Region::polygon(exec::map(&k_prev.boundary(cfg.boundary), |z| prev.f.iterate(*z, nj)));
            let inp = PullbackInput {
                f: &prev.f,
                c,
                s,
                j,
                bands: &bands[..j],
                b_hat: &prev.b_hat,
                q,
                v,
                excluded: &excluded,
                boundary: cfg.boundary,
                floor: 1e-9,
            };
            let (_, checks) = claim2_checks(&inp, t);
            for ch in checks {
                out.push(Check { name: format!("pullback: {}", ch.name), ..ch });
            }
        }
    }
    out
}

/// Build stages `0..=J`, reporting each finished stage to `progress`.
pub fn build_with(st: &Setup, progress: &mut dyn FnMut(&StageRecord)) -> Result<Vec<StageRecord>, DriverError> {
    let mut stages = Vec::new();
    let first = init_stage0(st)?;
    progress(&first);
    stages.push(first);
    for _ in 1..=st.config.stages {
        let next = advance_stage(st, &stages)?;
        progress(&next);
        stages.push(next);
    }
    Ok(stages)
}

pub fn build(config: Config) -> Result<Manifest, DriverError> {
    let st = Setup::new(config)?;
    let stages = build_with(&st, &mut |_| {})?;
    Ok(manifest(&st, stages))
}

pub fn manifest(st: &Setup, stages: Vec<StageRecord>) -> Manifest {
    let tail = tail_report(&stages);
    Manifest { config: st.config.clone(), constants: st.constants, seed: st.seed.clone(), stages, tail }
}

/// Sup of `|f_J - f_j|` over boundary samples of `T_j`.
pub fn tail_report(stages: &[StageRecord]) -> Vec<TailRow> {
    let Some(last) = stages.last() else { return vec![] };
    let mut out = Vec::new();
    for r in &stages[..stages.len() - 1] {
        let mut pts = Vec::new();
        for (reg, _) in &r.model.pieces {
            pts.extend(reg.boundary(1024));
        }
        let later = &last.f.terms[r.j + 1..];
        let sup = exec::max_by(&pts, |z| later.iter().map(|t| t.eval(*z)).sum::<C64>().norm()).max(0.0);
        let sum_bound: f64 = stages[r.j + 1..].iter().map(|s| s.eps).sum();
        let geometric_bound = 4.0 / 3.0 * r.eps;
        out.push(TailRow { j: r.j, sup, sum_bound, geometric_bound, pass: sup <= sum_bound && sum_bound <= geometric_bound });
    }
    out
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises")
    }

    pub fn from_json(text: &str) -> Result<Manifest, DriverError> {
        serde_json::from_str(text).map_err(|e| DriverError::Config(format!("manifest: {e}")))
    }

    pub fn setup(&self) -> Result<Setup, DriverError> {
        let st = Setup::new(self.config.clone())?;
        if st.constants != self.constants || st.seed != self.seed {
            return Err(DriverError::Config("manifest inputs disagree with its config".into()));
        }
        Ok(st)
    }

    /// Recompute every stage's verdicts; returns `(j, recomputed)` pairs.
    pub fn recheck(&self) -> Result<Vec<(usize, Vec<Check>)>, DriverError> {
        let st = self.setup()?;
        Ok((0..self.stages.len()).map(|j| (j, stage_checks(&st, &self.stages[..j], &self.stages[j]))).collect())
    }
}
