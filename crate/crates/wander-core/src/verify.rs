//! Orbit-level checks of a finished build: labelled orbits compared with the
//! schedule, the attractor, escape, the `D̂` probe, densities and pictures.

use crate::approx::Polynomial;
use crate::branches::{build_preimage_ladder, Check, PreimageLadder};
use crate::driver::{DriverError, Manifest, Setup, StageRecord, TailRow};
use crate::exec;
use crate::geometry::{crossing_winding, Constants, Region};
use crate::schedule::Schedule;
use num_complex::Complex64 as C64;
use serde::Serialize;
use std::fmt;

/// Where an orbit point sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    D,
    DHat,
    Band(u64),
    A,
    Other,
    /// Within the margin of `∂D` or `∂D̂`.
    Indeterminate,
    Escaped,
}

impl Label {
    pub fn in_d(self) -> Option<bool> {
        match self {
            Label::D | Label::DHat => Some(true),
            Label::Indeterminate => None,
            _ => Some(false),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Label::D => write!(f, "D"),
            Label::DHat => write!(f, "Dhat"),
            Label::Band(k) => write!(f, "B0+{k}"),
            Label::A => write!(f, "A"),
            Label::Other => write!(f, "other"),
            Label::Indeterminate => write!(f, "indeterminate"),
            Label::Escaped => write!(f, "escaped"),
        }
    }
}

/// Region membership with the boundary margin rule.
#[derive(Debug, Clone)]
pub struct Labeler {
    pub constants: Constants,
    pub schedule: Schedule,
    pub margin: f64,
    pub bailout: f64,
    pub dhat: Option<Region>,
    /// Band translates `B_0 + k` for `k < bands`.
    pub bands: u64,
}

impl Labeler {
    pub fn new(constants: Constants, schedule: Schedule, margin: f64, bailout: f64) -> Labeler {
        let bands = bailout.ceil().max(1.0) as u64;
        Labeler { constants, schedule, margin, bailout, dhat: None, bands }
    }

    pub fn with_dhat(mut self, dhat: Region) -> Labeler {
        self.dhat = Some(dhat);
        self
    }

    pub fn label(&self, z: C64) -> Label {
        if !z.is_finite() || z.norm() > self.bailout {
            return Label::Escaped;
        }
        let sd = self.constants.d().signed_distance(z);
        if sd.abs() <= self.margin {
            return Label::Indeterminate;
        }
        if let Some(h) = &self.dhat {
            let sh = h.signed_distance(z);
            if sh.abs() <= self.margin {
                return Label::Indeterminate;
            }
            if sh < 0.0 {
                return Label::DHat;
            }
        }
        if sd < 0.0 {
            return Label::D;
        }
        if self.constants.a().contains(z) {
            return Label::A;
        }
        let b0 = self.constants.b0();
        let k = z.re.round().max(0.0);
        for k in [k - 1.0, k, k + 1.0] {
            if k >= 0.0 && (k as u64) < self.bands && b0.contains(z - k) {
                return Label::Band(k as u64);
            }
        }
        Label::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitStep {
    pub n: u64,
    pub z: C64,
    pub label: Label,
    /// The schedule's `in_D(n)`, when the schedule reaches `n`.
    pub expected: Option<bool>,
    /// `None` for indeterminate steps.
    pub matched: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitLog {
    pub seed: C64,
    pub steps: Vec<OrbitStep>,
    pub horizon: u64,
    pub escaped: bool,
}

impl OrbitLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,re,im,label,expected,match\n");
        for s in &self.steps {
            let exp = match s.expected {
                Some(true) => "D",
                Some(false) => "out",
                None => "-",
            };
            let m = match s.matched {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            out.push_str(&format!("{},{},{},{},{},{}\n", s.n, s.z.re, s.z.im, s.label, exp, m));
        }
        out
    }

    pub fn positions(&self) -> Vec<C64> {
        self.steps.iter().map(|s| s.z).collect()
    }
}

/// Iterate `f` from `z` for `steps` steps, labelling each point; stops after
/// the first escaped point.
pub fn iterate(f: &Polynomial, z: C64, steps: u64, lab: &Labeler) -> OrbitLog {
    let mut out = Vec::with_capacity(steps as usize + 1);
    let mut w = z;
    let mut escaped = false;
    for n in 0..=steps {
        let label = lab.label(w);
        let expected = lab.schedule.in_d(n).ok();
        let matched = match (label.in_d(), expected) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        };
        out.push(OrbitStep { n, z: w, label, expected, matched });
        if label == Label::Escaped {
            escaped = true;
            break;
        }
        if n < steps {
            w = f.eval(w);
        }
    }
    OrbitLog { seed: z, steps: out, horizon: steps, escaped }
}

/// A finished build ready for orbit checks.
pub struct Verifier<'a> {
    pub setup: Setup,
    pub stages: &'a [StageRecord],
    pub labeler: Labeler,
}

impl<'a> Verifier<'a> {
    pub fn new(m: &'a Manifest) -> Result<Verifier<'a>, DriverError> {
        let setup = m.setup()?;
        if m.stages.is_empty() {
            return Err(DriverError::Config("manifest has no stages".into()));
        }
        Ok(Verifier::from_parts(setup, &m.stages))
    }

    pub fn from_parts(setup: Setup, stages: &'a [StageRecord]) -> Verifier<'a> {
        let last = stages.last().expect("at least one stage");
        let s = setup.schedule.clone();
        let bailout = s.m(last.j) as f64 + 10.0;
        let labeler = Labeler::new(setup.constants, s, 2.0 * last.eps, bailout);
        Verifier { setup, stages, labeler }
    }

    /// `f_J`.
    pub fn f(&self) -> &Polynomial {
        &self.stages.last().expect("at least one stage").f
    }

    pub fn big_j(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn margin(&self) -> f64 {
        self.labeler.margin
    }

    fn big_n(&self, j: usize) -> u64 {
        self.setup.schedule.cumulative_n(j).expect("validated schedule")
    }

    /// `K_j` sampled on the configured grid; the boundary samples come last.
    pub fn k_grid(&self, j: usize) -> (Vec<C64>, usize) {
        let cfg = &self.setup.config;
        (self.setup.seed.k_j(j).grid(cfg.grid, cfg.boundary), cfg.boundary)
    }

    fn orbits(&self, pts: &[C64], steps: u64) -> Vec<Vec<C64>> {
        let f = self.f();
        exec::map(pts, |z| {
            let mut o = Vec::with_capacity(steps as usize + 1);
            o.push(*z);
            for _ in 0..steps {
                let w = f.eval(*o.last().unwrap());
                o.push(w);
            }
            o
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub j: usize,
    pub seeds: usize,
    pub horizon: u64,
    pub checked: usize,
    pub indeterminate: usize,
    pub mismatches: usize,
    /// `(seed index, n)` of the first mismatch.
    pub first_mismatch: Option<(usize, u64)>,
    /// Steps whose iterate set straddles `∂D`.
    pub dichotomy_failures: Vec<u64>,
    /// Smallest distance by which an iterate set clears `∂D` on its side.
    pub worst_dichotomy_margin: f64,
    pub pass: bool,
}

/// Membership in `D` against `in_D` for every seed and step up to `horizon`,
/// and the inside-or-outside dichotomy for each iterate set. The last `rim`
/// seeds trace the boundary of the seed set; an outside image must not wind
/// around `D`.
pub fn verify_schedule(v: &Verifier, j: usize, seeds: &[C64], rim: usize, horizon: u64) -> ScheduleReport {
    let orbs = v.orbits(seeds, horizon);
    let lab = &v.labeler;
    let d = v.setup.constants.d();
    let (mut checked, mut indeterminate, mut mismatches) = (0, 0, 0);
    let mut first_mismatch = None;
    for (i, o) in orbs.iter().enumerate() {
        for n in 1..=horizon {
            let z = o[n as usize];
            let Ok(expected) = lab.schedule.in_d(n) else { continue };
            match lab.label(z).in_d() {
                None => indeterminate += 1,
                Some(got) => {
                    checked += 1;
                    if got != expected {
                        mismatches += 1;
                        first_mismatch.get_or_insert((i, n));
                    }
                }
            }
        }
    }
    let mut dichotomy_failures = Vec::new();
    let mut worst = f64::INFINITY;
    for n in 1..=horizon as usize {
        let sds: Vec<f64> = orbs.iter().map(|o| d.signed_distance(o[n])).collect();
        let inside = -sds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut outside = sds.iter().copied().fold(f64::INFINITY, f64::min);
        if rim >= 3 && outside > 0.0 {
            let curve: Vec<C64> = orbs[orbs.len() - rim..].iter().map(|o| o[n]).collect();
            if crossing_winding(&curve, C64::new(0.0, 0.0)) != 0 {
                outside = -1.0;
            }
        }
        let m = inside.max(outside);
        worst = worst.min(m);
        if !(m > v.margin()) {
            dichotomy_failures.push(n as u64);
        }
    }
    if horizon == 0 {
        worst = f64::INFINITY;
    }
    let pass = mismatches == 0 && dichotomy_failures.is_empty();
    ScheduleReport {
        j,
        seeds: seeds.len(),
        horizon,
        checked,
        indeterminate,
        mismatches,
        first_mismatch,
        dichotomy_failures,
        worst_dichotomy_margin: worst,
        pass,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractorReport {
    /// `max |f_J(z) + 1/4|` over the `Ā` grid.
    pub spread: f64,
    /// `1/18 + 2 eps_J - spread`.
    pub disk_margin: f64,
    /// `1/9 - spread`: how far `f_J(Ā)` sits inside `A`.
    pub absorption_margin: f64,
    /// `(j, margin)` for `f_J^(N_j + 1)(P_(j-1)) ⊂ A`.
    pub clouds: Vec<(usize, f64)>,
    pub pass: bool,
}

pub fn verify_attractor(v: &Verifier) -> AttractorReport {
    let c = &v.setup.constants;
    let a = c.a();
    let f = v.f();
    let quarter = C64::new(-0.25, 0.0);
    let grid = a.grid(v.setup.config.grid, v.setup.config.boundary);
    let spread = exec::max_by(&grid, |z| (f.eval(*z) - quarter).norm());
    let disk_margin = 1.0 / 18.0 + v.margin() - spread;
    let absorption_margin = 1.0 / 9.0 - spread;
    let mut clouds = Vec::new();
    for j in 1..=v.big_j() {
        let p = v.setup.seed.p_j(j - 1);
        let orbs = v.orbits(&p.points, v.big_n(j) + 1);
        let m = orbs.iter().map(|o| -a.signed_distance(*o.last().unwrap())).fold(f64::INFINITY, f64::min);
        clouds.push((j, m));
    }
    let pass = disk_margin > 0.0 && clouds.iter().all(|c| c.1 > 0.0);
    AttractorReport { spread, disk_margin, absorption_margin, clouds, pass }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeReport {
    pub j: usize,
    /// `min |f_J^(N_(j+1))|` over the `K_j` grid.
    pub min_modulus: f64,
    /// Radius of `Δ_j` (`0` for `Δ_0 = {0}`).
    pub delta_radius: f64,
    pub escape_margin: f64,
    /// `min Re f_J^l` over the grid and `0 <= l <= N_(j+1)`.
    pub min_re: f64,
    pub halfplane_margin: f64,
    pub pass: bool,
}

pub fn verify_escape_and_halfplane(v: &Verifier, j: usize) -> EscapeReport {
    let (grid, _) = v.k_grid(j);
    let n = v.big_n(j + 1);
    let orbs = v.orbits(&grid, n);
    let min_modulus = orbs.iter().map(|o| o[n as usize].norm()).fold(f64::INFINITY, f64::min);
    let delta_radius = if j == 0 { 0.0 } else { v.setup.schedule.m(j) as f64 - 1.0 };
    let escape_margin = min_modulus - delta_radius - v.margin();
    let min_re = orbs.iter().flat_map(|o| o.iter().map(|z| z.re)).fold(f64::INFINITY, f64::min);
    let halfplane_margin = min_re + 1.0 - v.margin();
    EscapeReport {
        j,
        min_modulus,
        delta_radius,
        escape_margin,
        min_re,
        halfplane_margin,
        pass: escape_margin > 0.0 && halfplane_margin > 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockC {
    pub p: usize,
    pub n: u64,
    /// Leading in-D steps of the block on which the whole seed set is in `D̂`.
    pub inside: u64,
    /// `n - inside` when `inside > 0`; otherwise only `C >= n` is known.
    pub c: Option<u64>,
    /// Whether the in-`D̂` steps form a prefix of the block with every
    /// later step wholly outside `D̂`.
    pub prefix: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CReport {
    pub radius: f64,
    pub blocks: Vec<BlockC>,
    /// Smallest `C` fitting every block, when one exists.
    pub c: Option<u64>,
    /// Spread of the per-block values.
    pub wobble: u64,
    pub consistent: bool,
}

impl CReport {
    pub fn range(&self) -> Option<(u64, u64)> {
        let vals: Vec<u64> = self.blocks.iter().filter_map(|b| b.c).collect();
        Some((*vals.iter().min()?, *vals.iter().max()?))
    }
}

/// Per-block `C` for `D̂ = D(0, radius)` measured on `K_J`'s grid through `N_(J+1)`.
pub fn measure_c_for(v: &Verifier, radius: f64) -> CReport {
    let big_j = v.big_j();
    let (grid, _) = v.k_grid(big_j);
    let horizon = v.big_n(big_j + 1);
    let orbs = v.orbits(&grid, horizon);
    let dhat = Region::disk(C64::new(0.0, 0.0), radius);
    let m = v.margin();
    // +1 wholly inside, -1 wholly outside, 0 undecided
    let side = |n: u64| {
        let sds: Vec<f64> = orbs.iter().map(|o| dhat.signed_distance(o[n as usize])).collect();
        if sds.iter().all(|s| *s < -m) {
            1
        } else if sds.iter().all(|s| *s > m) {
            -1
        } else {
            0
        }
    };
    let s = &v.setup.schedule;
    let mut blocks = Vec::new();
    for p in 0..=big_j {
        let np = v.big_n(p);
        let n = s.n(p + 1);
        let sides: Vec<i32> = (np + 1..=np + n).map(side).collect();
        let inside = sides.iter().take_while(|x| **x == 1).count() as u64;
        let prefix = sides[inside as usize..].iter().all(|x| *x == -1);
        let c = (inside > 0).then_some(n - inside);
        blocks.push(BlockC { p, n, inside, c, prefix });
    }
    let exact: Vec<u64> = blocks.iter().filter_map(|b| b.c).collect();
    let floor = blocks.iter().filter(|b| b.c.is_none()).map(|b| b.n).max().unwrap_or(0);
    let (lo, hi) = (exact.iter().min().copied(), exact.iter().max().copied());
    let wobble = match (lo, hi) {
        (Some(a), Some(b)) => b - a,
        _ => 0,
    };
    let prefixes = blocks.iter().all(|b| b.prefix);
    let c = match hi {
        Some(h) if wobble == 0 && h >= floor && prefixes => Some(h),
        None if prefixes => Some(floor),
        _ => None,
    };
    CReport { radius, blocks, c, wobble, consistent: c.is_some() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DensityPoint {
    pub k: u64,
    pub count: u64,
    /// False once any step up to `k` lies within the margin of `∂target`.
    pub determinate: bool,
}

/// `#{1 <= n <= k : f^n(z) ∈ target}` for every `k` up to the log's end.
pub fn empirical_density(log: &OrbitLog, target: &Region, margin: f64) -> Vec<DensityPoint> {
    let mut out = Vec::new();
    let mut count = 0;
    let mut determinate = true;
    for s in log.steps.iter().skip(1) {
        let sd = target.signed_distance(s.z);
        if s.label != Label::Escaped && sd.abs() <= margin {
            determinate = false;
        }
        if s.label != Label::Escaped && sd < 0.0 {
            count += 1;
        }
        out.push(DensityPoint { k: s.n, count, determinate });
    }
    out
}

/// An RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Pixmap {
    /// Binary `P6` encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn colour(last: Label, n: usize, iterations: usize) -> [u8; 3] {
    let base: [f64; 3] = match last {
        Label::D | Label::DHat => [70.0, 110.0, 230.0],
        Label::A => [60.0, 200.0, 90.0],
        Label::Band(_) => [240.0, 150.0, 40.0],
        Label::Indeterminate => [230.0, 230.0, 230.0],
        _ => [150.0, 150.0, 150.0],
    };
    let t = 0.35 + 0.65 * (1.0 - n as f64 / iterations.max(1) as f64);
    base.map(|c| (c * t).round() as u8)
}

/// Escape-time picture of `viewport = (lower left, upper right)`: pixels whose
/// orbit leaves the bailout disk within `iterations` steps are coloured by the
/// label of their last point before escape, shaded by the step; the rest are
/// black.
pub fn render(f: &Polynomial, lab: &Labeler, viewport: (C64, C64), width: usize, height: usize, iterations: usize) -> Pixmap {
    let (lo, hi) = viewport;
    let px = |i: usize, k: usize| (i as f64 + 0.5) / k as f64;
    let rows = exec::map_range(height, |y| {
        let mut row = Vec::with_capacity(3 * width);
        for x in 0..width {
            let mut z = C64::new(lo.re + (hi.re - lo.re) * px(x, width), hi.im - (hi.im - lo.im) * px(y, height));
            let mut rgb = [0u8; 3];
            for n in 0..iterations {
                let w = f.eval(z);
                if lab.label(w) == Label::Escaped {
                    rgb = colour(lab.label(z), n, iterations);
                    break;
                }
                z = w;
            }
            row.extend_from_slice(&rgb);
        }
        row
    });
    Pixmap { width, height, data: rows.concat() }
}

/// Everything `verify` reports for a manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub stages: Vec<StageVerdicts>,
    pub tail: Vec<TailRow>,
    pub schedule: ScheduleReport,
    pub attractor: AttractorReport,
    pub escape: Vec<EscapeReport>,
    pub ladder: Option<LadderReport>,
    pub c_probes: Vec<CReport>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageVerdicts {
    pub j: usize,
    pub checks: Vec<Check>,
    /// Whether the recomputed verdicts equal the stored ones.
    pub reproduced: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub radii: Vec<f64>,
    pub disjoint: bool,
    pub decreasing: bool,
    pub max_ratio: f64,
    pub residual: f64,
    pub pass: bool,
}

/// The preimage ladder of `B_0` in `D` under `f_J` to `depth`; the radius
/// ratio must stay at or below `3/4`.
pub fn ladder_report(v: &Verifier, depth: usize) -> Result<LadderReport, String> {
    let l: PreimageLadder = build_preimage_ladder(v.f(), &v.setup.constants, depth).map_err(|e| e.to_string())?;
    let pass = l.disjoint && l.decreasing && l.max_ratio <= 0.75;
    Ok(LadderReport { radii: l.radii, disjoint: l.disjoint, decreasing: l.decreasing, max_ratio: l.max_ratio, residual: l.residual, pass })
}

/// Recompute the stored verdicts and run every orbit check on `f_J`.
pub fn full_report(m: &Manifest) -> Result<Report, DriverError> {
    let v = Verifier::new(m)?;
    let stages: Vec<StageVerdicts> = m
        .recheck()?
        .into_iter()
        .map(|(j, checks)| {
            let reproduced = checks == m.stages[j].verdicts;
            let pass = reproduced && checks.iter().all(|c| c.pass);
            StageVerdicts { j, checks, reproduced, pass }
        })
        .collect();
    let big_j = v.big_j();
    let (grid, rim) = v.k_grid(big_j);
    let schedule = verify_schedule(&v, big_j, &grid, rim, v.big_n(big_j + 1));
    let attractor = verify_attractor(&v);
    let escape: Vec<EscapeReport> = (0..=big_j).map(|j| verify_escape_and_halfplane(&v, j)).collect();
    let ladder = ladder_report(&v, 3).ok();
    let r1 = v.setup.constants.r1;
    let c_probes = vec![measure_c_for(&v, r1 / 3.0), measure_c_for(&v, r1 / 9.0)];
    let pass = stages.iter().all(|s| s.pass)
        && m.tail.iter().all(|t| t.pass)
        && schedule.pass
        && attractor.pass
        && escape.iter().all(|e| e.pass)
        && ladder.as_ref().is_some_and(|l| l.pass);
    Ok(Report { stages, tail: m.tail.clone(), schedule, attractor, escape, ladder, c_probes, pass })
}
