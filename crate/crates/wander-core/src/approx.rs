//! Polynomial approximation on disjoint compact pieces with value and
//! derivative constraints, plus error and univalence certificates.
//!
//! Approximants are Newton interpolants on discrete Leja sequences drawn from
//! corner-clustered boundary samples. The Newton basis is normalised so that
//! every basis polynomial has sup one over the candidate set, which keeps
//! degrees in the tens of thousands well conditioned. Because Newton forms
//! are nested, one pass over the validation grid scores every prefix degree.

use crate::exec;
use crate::geometry::{winding_number, GeometryError, Region};
use crate::hexfloat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ApproxError {
    #[error("no degree up to {max_degree} certifies eps = {eps:e} (best {best:e} at degree {best_degree})")]
    DegreeBudgetExceeded { max_degree: usize, eps: f64, best: f64, best_degree: usize },
    #[error("constraints at {0} disagree")]
    ConstraintConflict(C64),
    #[error("constraint point {0} lies in no piece")]
    ConstraintOutsidePieces(C64),
    #[error("pieces {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("certification failed at {witness}: {reason}")]
    CertificationFailed { witness: C64, reason: String },
    #[error("no feasible epsilon above {floor:e}")]
    NoFeasibleEpsilon { floor: f64 },
}

/// `sum_k c_k w_k(z)` with `w_0 = 1` and `w_{k+1} = w_k (z - x_k) / rho_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonPoly {
    #[serde(with = "hexfloat::complex_vec")]
    pub nodes: Vec<C64>,
    #[serde(with = "hexfloat::real_vec")]
    pub inv_rho: Vec<f64>,
    #[serde(with = "hexfloat::complex_vec")]
    pub coeffs: Vec<C64>,
}

impl NewtonPoly {
    /// Monomial coefficients `a_0 + a_1 z + ...`.
    pub fn monomial(coeffs: Vec<C64>) -> NewtonPoly {
        let n = coeffs.len();
        NewtonPoly { nodes: vec![C64::new(0.0, 0.0); n], inv_rho: vec![1.0; n], coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: C64) -> C64 {
        let n = self.coeffs.len();
        if n == 0 {
            return C64::new(0.0, 0.0);
        }
        let mut q = self.coeffs[n - 1];
        for k in (0..n - 1).rev() {
            q = self.coeffs[k] + (z - self.nodes[k]) * self.inv_rho[k] * q;
        }
        q
    }

    /// Value and derivative by nested Horner.
    pub fn eval_d(&self, z: C64) -> (C64, C64) {
        let n = self.coeffs.len();
        if n == 0 {
            return (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        }
        let mut q = self.coeffs[n - 1];
        let mut d = C64::new(0.0, 0.0);
        for k in (0..n - 1).rev() {
            let r = self.inv_rho[k];
            let t = (z - self.nodes[k]) * r;
            d = q * r + t * d;
            q = self.coeffs[k] + t * q;
        }
        (q, d)
    }

    pub fn truncated(&self, degree: usize) -> NewtonPoly {
        let n = (degree + 1).min(self.coeffs.len());
        NewtonPoly {
            nodes: self.nodes[..n].to_vec(),
            inv_rho: self.inv_rho[..n].to_vec(),
            coeffs: self.coeffs[..n].to_vec(),
        }
    }
}

/// A stage map: a fixed-order sum of Newton polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Polynomial {
    pub terms: Vec<NewtonPoly>,
}

impl Polynomial {
    pub fn monomial(coeffs: Vec<C64>) -> Polynomial {
        Polynomial { terms: vec![NewtonPoly::monomial(coeffs)] }
    }

    /// `a z + b`.
    pub fn linear(a: C64, b: C64) -> Polynomial {
        Polynomial::monomial(vec![b, a])
    }

    pub fn plus(&self, term: NewtonPoly) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.push(term);
        Polynomial { terms }
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.degree()).max().unwrap_or(0)
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.terms.iter().fold(C64::new(0.0, 0.0), |acc, t| acc + t.eval(z))
    }

    pub fn eval_d(&self, z: C64) -> (C64, C64) {
        self.terms.iter().fold((C64::new(0.0, 0.0), C64::new(0.0, 0.0)), |(v, d), t| {
            let (a, b) = t.eval_d(z);
            (v + a, d + b)
        })
    }

    pub fn iterate(&self, z: C64, n: usize) -> C64 {
        (0..n).fold(z, |w, _| self.eval(w))
    }
}

pub type Target<'a> = &'a (dyn Fn(C64) -> C64 + Sync);

pub struct Piece<'a> {
    pub region: Region,
    pub target: Target<'a>,
    /// Tolerance multiplier: this piece only needs `slack * epsilon`.
    pub slack: f64,
}

impl<'a> Piece<'a> {
    pub fn new(region: Region, target: Target<'a>) -> Piece<'a> {
        Piece { region, target, slack: 1.0 }
    }

    pub fn loose(region: Region, target: Target<'a>, slack: f64) -> Piece<'a> {
        Piece { region, target, slack }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(with = "hexfloat::complex")]
    pub point: C64,
    #[serde(with = "hexfloat::complex")]
    pub value: C64,
    #[serde(with = "hexfloat::complex_opt", default)]
    pub derivative: Option<C64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub max_degree: usize,
    /// Candidates per unit of degree budget.
    pub cand_factor: f64,
    pub min_candidates: usize,
    /// Scan samples per piece: at least `grid_min`, else this many per node
    /// in the piece. Certification uses twice and four times as many.
    pub grid_min: usize,
    pub grid_per_node: f64,
    #[serde(with = "hexfloat::real")]
    pub safety: f64,
    /// First degree tried; later rungs grow by half.
    pub first_rung: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            max_degree: 4096,
            cand_factor: 3.0,
            min_candidates: 512,
            grid_min: 1024,
            grid_per_node: 2.0,
            safety: 1.5,
            first_rung: 64,
        }
    }
}

pub struct ApproximationTask<'a> {
    pub pieces: Vec<Piece<'a>>,
    pub constraints: Vec<Constraint>,
    pub epsilon: f64,
    pub config: ApproxConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCertificate {
    /// `safety * max |p - target|` on the refined grid, per piece.
    #[serde(with = "hexfloat::real_vec")]
    pub certified: Vec<f64>,
    /// Same measurement on the coarse grid.
    #[serde(with = "hexfloat::real_vec")]
    pub coarse: Vec<f64>,
    pub grid: Vec<usize>,
    #[serde(with = "hexfloat::real")]
    pub safety: f64,
    #[serde(with = "hexfloat::real_vec")]
    pub constraint_residuals: Vec<f64>,
}

impl ErrorCertificate {
    pub fn worst(&self) -> f64 {
        self.certified.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivalenceCertificate {
    pub region: Region,
    #[serde(with = "hexfloat::real")]
    pub derivative_lower_bound: f64,
    pub probes: usize,
    pub winding_ok: bool,
}

/// Incremental Leja selection with normalised Newton coefficients.
struct Leja {
    cand: Vec<C64>,
    vals: Vec<C64>,
    piece_of: Vec<usize>,
    logp: Vec<f64>,
    last_max: f64,
    next: usize,
    poly: NewtonPoly,
    per_piece: Vec<usize>,
}

const CHUNK: usize = 4096;

impl Leja {
    fn new(cand: Vec<C64>, vals: Vec<C64>, piece_of: Vec<usize>, pieces: usize) -> Leja {
        let n = cand.len();
        Leja {
            cand,
            vals,
            piece_of,
            logp: vec![0.0; n],
            last_max: 0.0,
            next: 0,
            poly: NewtonPoly { nodes: vec![], inv_rho: vec![], coeffs: vec![] },
            per_piece: vec![0; pieces],
        }
    }

    /// Append node `x`; `value` interpolates, or for a repeated node
    /// `derivative` fixes the slope there.
    fn push(&mut self, x: C64, value: C64, derivative: Option<C64>) {
        let p = &self.poly;
        let k = p.coeffs.len();
        let repeated = k > 0 && p.nodes[k - 1] == x;
        let mut s = C64::new(0.0, 0.0);
        let mut ds = C64::new(0.0, 0.0);
        let mut w = C64::new(1.0, 0.0);
        let mut dw = C64::new(0.0, 0.0);
        for i in 0..k {
            s += p.coeffs[i] * w;
            ds += p.coeffs[i] * dw;
            let t = (x - p.nodes[i]) * p.inv_rho[i];
            dw = dw * t + w * p.inv_rho[i];
            w *= t;
        }
        let c = if repeated {
            (derivative.expect("repeated node needs a derivative") - ds) / dw
        } else {
            (value - s) / w
        };
        self.poly.nodes.push(x);
        self.poly.coeffs.push(c);
        // fold the new factor into the candidate log-products and find the next max
        let cand = &self.cand;
        let best = exec::chunks_mut_map(&mut self.logp, CHUNK, |off, chunk| {
            let mut bi = usize::MAX;
            let mut bv = f64::NEG_INFINITY;
            for (i, l) in chunk.iter_mut().enumerate() {
                let d2 = (cand[off + i] - x).norm_sqr();
                *l += 0.5 * d2.ln();
                if *l > bv {
                    bv = *l;
                    bi = off + i;
                }
            }
            (bi, bv)
        });
        let (bi, bv) = best.into_iter().fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let inv = if bv.is_finite() { (self.last_max - bv).exp() } else { 1.0 };
        self.poly.inv_rho.push(inv);
        if bv.is_finite() {
            self.last_max = bv;
        }
        self.next = bi;
    }

    fn grow(&mut self, n: usize) {
        while self.poly.coeffs.len() < n && self.next != usize::MAX {
            let i = self.next;
            if !self.logp[i].is_finite() {
                break;
            }
            self.per_piece[self.piece_of[i]] += 1;
            self.push(self.cand[i], self.vals[i], None);
        }
    }
}

/// Validation samples for one piece, distinct from the candidates.
fn validation_grid(r: &Region, count: usize) -> Vec<C64> {
    r.boundary(count)
}

/// Max error of every prefix degree over the points.
fn prefix_errors(poly: &NewtonPoly, pts: &[C64], targets: &[C64], weight: &[f64]) -> Vec<f64> {
    let n = poly.coeffs.len();
    let chunks = pts.len().div_ceil(512).max(1);
    let parts = exec::map_range(chunks, |c| {
        let mut err = vec![0.0f64; n];
        for i in c * 512..((c + 1) * 512).min(pts.len()) {
            let z = pts[i];
            let w2 = weight[i] * weight[i];
            let mut s = C64::new(0.0, 0.0);
            let mut w = C64::new(1.0, 0.0);
            for k in 0..n {
                s += poly.coeffs[k] * w;
                let e = (s - targets[i]).norm_sqr() * w2;
                if !(e <= err[k]) {
                    err[k] = if e.is_nan() { f64::INFINITY } else { e };
                }
                w *= (z - poly.nodes[k]) * poly.inv_rho[k];
            }
        }
        err
    });
    let mut out = vec![0.0f64; n];
    for p in parts {
        for (o, e) in out.iter_mut().zip(p) {
            *o = o.max(e);
        }
    }
    out.iter().map(|e| e.sqrt()).collect()
}

/// Approximate every piece's target within `epsilon`, honouring the constraints.
pub fn approximate(task: &ApproximationTask) -> Result<(NewtonPoly, ErrorCertificate), ApproxError> {
    let cfg = &task.config;
    let np = task.pieces.len();
    for i in 0..np {
        for k in i + 1..np {
            if crate::geometry::region_distance(&task.pieces[i].region, &task.pieces[k].region, 512) <= 0.0 {
                return Err(ApproxError::Overlap(i, k));
            }
        }
    }
    let constraints = dedupe_constraints(&task.constraints)?;
    for c in &constraints {
        if !task.pieces.iter().any(|p| p.region.contains(c.point)) {
            return Err(ApproxError::ConstraintOutsidePieces(c.point));
        }
    }

    let perims: Vec<f64> = task.pieces.iter().map(|p| p.region.perimeter()).collect();
    let total: f64 = perims.iter().sum();
    let mut cand = Vec::new();
    let mut piece_of = Vec::new();
    let mut vals = Vec::new();
    for (i, p) in task.pieces.iter().enumerate() {
        let share = 0.5 * perims[i] / total + 0.5 / np as f64;
        let count = ((cfg.cand_factor * cfg.max_degree as f64 * share).ceil() as usize).max(cfg.min_candidates);
        let pts = p.region.boundary_clustered(count);
        let v = exec::map(&pts, |z| (p.target)(*z));
        piece_of.extend(std::iter::repeat_n(i, pts.len()));
        cand.extend(pts);
        vals.extend(v);
    }
    let mut leja = Leja::new(cand, vals, piece_of, np);
    for c in &constraints {
        leja.push(c.point, c.value, None);
        if let Some(d) = c.derivative {
            leja.push(c.point, c.value, Some(d));
        }
    }
    let fixed = leja.poly.coeffs.len();
    if fixed == 0 {
        // start from the candidate farthest from the centroid of all candidates
        let mean = leja.cand.iter().sum::<C64>() / leja.cand.len() as f64;
        let i = (0..leja.cand.len())
            .fold(0, |b, i| if (leja.cand[i] - mean).norm() > (leja.cand[b] - mean).norm() { i } else { b });
        leja.next = i;
    }

    let mut rung = cfg.first_rung.max(fixed + 8);
    let mut best = (f64::INFINITY, 0usize);
    loop {
        let target_len = rung.min(cfg.max_degree + 1);
        leja.grow(target_len);
        let n = leja.poly.coeffs.len();
        let counts: Vec<usize> = (0..np)
            .map(|i| ((cfg.grid_per_node * leja.per_piece[i] as f64).ceil() as usize).max(cfg.grid_min))
            .collect();
        let mut pts = Vec::new();
        let mut tg = Vec::new();
        let mut wt = Vec::new();
        for (i, p) in task.pieces.iter().enumerate() {
            let g = validation_grid(&p.region, counts[i]);
            tg.extend(exec::map(&g, |z| (p.target)(*z)));
            wt.extend(std::iter::repeat_n(1.0 / p.slack, g.len()));
            pts.extend(g);
        }
        let errs = prefix_errors(&leja.poly, &pts, &tg, &wt);
        for (k, e) in errs.iter().enumerate().skip(fixed.saturating_sub(1)) {
            if cfg.safety * e < best.0 {
                best = (cfg.safety * e, k);
            }
        }
        let pick = errs.iter().enumerate().skip(fixed.saturating_sub(1)).find(|(_, e)| cfg.safety * **e <= task.epsilon);
        if let Some((k, _)) = pick {
            let poly = leja.poly.truncated(k);
            let cert = certify_all(&poly, task, &counts, &constraints);
            let fits = cert.certified.iter().zip(&task.pieces).all(|(c, p)| *c <= p.slack * task.epsilon);
            if fits && stable(&cert) {
                return Ok((poly, cert));
            }
        }
        if n > cfg.max_degree || leja.next == usize::MAX || n < target_len {
            return Err(ApproxError::DegreeBudgetExceeded {
                max_degree: cfg.max_degree,
                eps: task.epsilon,
                best: best.0,
                best_degree: best.1,
            });
        }
        rung = (rung * 3).div_ceil(2);
    }
}

fn stable(c: &ErrorCertificate) -> bool {
    c.certified.iter().zip(&c.coarse).all(|(f, g)| *f <= c.safety * g.max(1e-300) || *f <= 1e-300)
}

fn certify_all(poly: &NewtonPoly, task: &ApproximationTask, counts: &[usize], cons: &[Constraint]) -> ErrorCertificate {
    let s = task.config.safety;
    let mut certified = Vec::new();
    let mut coarse = Vec::new();
    let mut grid = Vec::new();
    for (p, &n) in task.pieces.iter().zip(counts) {
        let f = |z: C64| poly.eval(z);
        coarse.push(certify_error(&f, &p.region, p.target, 2 * n, s));
        certified.push(certify_error(&f, &p.region, p.target, 4 * n, s));
        grid.push(4 * n);
    }
    let constraint_residuals = constraint_residuals(poly, cons);
    ErrorCertificate { certified, coarse, grid, safety: s, constraint_residuals }
}

fn constraint_residuals(poly: &NewtonPoly, cons: &[Constraint]) -> Vec<f64> {
    let mut out = Vec::new();
    for c in cons {
        let (v, d) = poly.eval_d(c.point);
        out.push((v - c.value).norm());
        if let Some(dd) = c.derivative {
            out.push((d - dd).norm());
        }
    }
    out
}

fn dedupe_constraints(cs: &[Constraint]) -> Result<Vec<Constraint>, ApproxError> {
    let mut out: Vec<Constraint> = Vec::new();
    for c in cs {
        if let Some(o) = out.iter_mut().find(|o| (o.point - c.point).norm() <= 1e-14) {
            if (o.value - c.value).norm() > 1e-14 {
                return Err(ApproxError::ConstraintConflict(c.point));
            }
            match (o.derivative, c.derivative) {
                (Some(a), Some(b)) if (a - b).norm() > 1e-14 => return Err(ApproxError::ConstraintConflict(c.point)),
                (None, Some(b)) => o.derivative = Some(b),
                _ => {}
            }
        } else {
            out.push(*c);
        }
    }
    Ok(out)
}

/// `safety * max |p - target|` over `grid` boundary samples.
pub fn certify_error(p: &(dyn Fn(C64) -> C64 + Sync), r: &Region, target: Target, grid: usize, safety: f64) -> f64 {
    let pts = r.boundary(grid);
    safety * exec::max_by(&pts, |z| (p(*z) - target(*z)).norm()).max(0.0)
}

/// Univalence on `r`: `|p'|` above `bound` on a grid, and the image of the
/// boundary winds once around the image of each interior probe.
pub fn certify_univalence(
    p: &(dyn Fn(C64) -> (C64, C64) + Sync),
    r: &Region,
    probe_count: usize,
    bound: f64,
) -> Result<UnivalenceCertificate, ApproxError> {
    let grid = r.grid(64, 1024);
    let ders = exec::map(&grid, |z| p(*z).1.norm());
    let (wi, mu) = ders.iter().enumerate().fold((0, f64::INFINITY), |a, (i, d)| if *d < a.1 { (i, *d) } else { a });
    if !(mu > bound) {
        return Err(ApproxError::CertificationFailed {
            witness: grid.get(wi).copied().unwrap_or_default(),
            reason: format!("|p'| = {mu:e} not above {bound:e}"),
        });
    }
    let probes = probe_points(r, probe_count);
    let mut count = 1024;
    'dense: loop {
        let curve = exec::map(&r.boundary(count), |z| p(*z).0);
        for z in &probes {
            match winding_number(&curve, p(*z).0) {
                Ok(1) => {}
                Ok(w) => {
                    return Err(ApproxError::CertificationFailed {
                        witness: *z,
                        reason: format!("image boundary winds {w} times"),
                    })
                }
                Err(GeometryError::TooCloseToCurve(..)) if count < 1 << 17 => {
                    count *= 2;
                    continue 'dense;
                }
                Err(e) => return Err(ApproxError::CertificationFailed { witness: *z, reason: e.to_string() }),
            }
        }
        break;
    }
    Ok(UnivalenceCertificate { region: r.clone(), derivative_lower_bound: mu, probes: probes.len(), winding_ok: true })
}

/// Univalence on a union: each component separately, and no image of one
/// component's probes inside another component's image.
pub fn certify_univalence_union(
    p: &(dyn Fn(C64) -> (C64, C64) + Sync),
    parts: &[Region],
    probe_count: usize,
    bound: f64,
) -> Result<Vec<UnivalenceCertificate>, ApproxError> {
    let mut certs = Vec::new();
    for r in parts {
        certs.push(certify_univalence(p, r, probe_count, bound)?);
    }
    for (i, a) in parts.iter().enumerate() {
        let curve = exec::map(&a.boundary(4096), |z| p(*z).0);
        for (k, b) in parts.iter().enumerate() {
            if i == k {
                continue;
            }
            for z in b.boundary(256).iter().chain(probe_points(b, probe_count).iter()) {
                if crate::geometry::crossing_winding(&curve, p(*z).0) != 0 {
                    return Err(ApproxError::CertificationFailed {
                        witness: *z,
                        reason: format!("images of components {i} and {k} meet"),
                    });
                }
            }
        }
    }
    Ok(certs)
}

/// Interior probe points: an evenly thinned interior grid, keeping only
/// points at least a quarter of the deepest grid depth from the boundary.
pub fn probe_points(r: &Region, count: usize) -> Vec<C64> {
    let g = r.interior_grid(32);
    if g.is_empty() {
        return vec![r.centroid()];
    }
    let depth: Vec<f64> = g.iter().map(|z| -r.signed_distance(*z)).collect();
    let deepest = depth.iter().copied().fold(0.0, f64::max);
    let g: Vec<C64> = g.into_iter().zip(depth).filter(|(_, d)| *d >= 0.25 * deepest).map(|(z, _)| z).collect();
    let step = (g.len() / count.max(1)).max(1);
    g.into_iter().step_by(step).take(count.max(1)).collect()
}

/// Largest `eps <= cap` (halving from `cap`) at which every predicate holds.
pub fn epsilon_search(predicates: &[&dyn Fn(f64) -> bool], cap: f64, floor: f64) -> Result<f64, ApproxError> {
    let mut eps = cap;
    while eps >= floor {
        if predicates.iter().all(|p| p(eps)) {
            return Ok(eps);
        }
        eps *= 0.5;
    }
    Err(ApproxError::NoFeasibleEpsilon { floor })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o() -> C64 {
        C64::new(0.0, 0.0)
    }

    #[test]
    fn horner_matches_monomial() {
        let p = NewtonPoly::monomial(vec![C64::new(1.0, 0.0), C64::new(0.0, 2.0), C64::new(-3.0, 0.5)]);
        let z = C64::new(0.3, -0.7);
        let want = C64::new(1.0, 0.0) + C64::new(0.0, 2.0) * z + C64::new(-3.0, 0.5) * z * z;
        let (v, d) = p.eval_d(z);
        assert!((v - want).norm() < 1e-15);
        assert!((d - (C64::new(0.0, 2.0) + 2.0 * C64::new(-3.0, 0.5) * z)).norm() < 1e-15);
    }

    #[test]
    fn linear_target_is_reproduced() {
        let f = |z: C64| 3.0 * z;
        let task = ApproximationTask {
            pieces: vec![Piece::new(Region::disk(o(), 1.0 / 9.0), &f)],
            constraints: vec![Constraint { point: o(), value: o(), derivative: Some(C64::new(3.0, 0.0)) }],
            epsilon: 1e-6,
            config: ApproxConfig { max_degree: 64, ..Default::default() },
        };
        let (p, cert) = approximate(&task).unwrap();
        assert!(cert.worst() < 1e-12);
        assert!(cert.constraint_residuals.iter().all(|r| *r <= 1e-12));
        assert!((p.eval(C64::new(0.05, 0.02)) - f(C64::new(0.05, 0.02))).norm() < 1e-13);
    }

    #[test]
    fn two_disks_step_function() {
        let zero = |_: C64| C64::new(0.0, 0.0);
        let one = |_: C64| C64::new(1.0, 0.0);
        let task = ApproximationTask {
            pieces: vec![
                Piece::new(Region::disk(o(), 0.05), &zero),
                Piece::new(Region::disk(C64::new(1.0, 0.0), 0.05), &one),
            ],
            constraints: vec![],
            epsilon: 1e-3,
            config: ApproxConfig { max_degree: 256, ..Default::default() },
        };
        let (p, cert) = approximate(&task).unwrap();
        assert!(cert.worst() <= 1e-3);
        // independent check on a finer, rotated sampling
        for (c, v) in [(0.0, 0.0), (1.0, 1.0)] {
            for k in 0..997 {
                let z = C64::new(c, 0.0) + C64::from_polar(0.05, 0.37 + k as f64 * 0.0063);
                assert!((p.eval(z) - v).norm() < 1e-3);
            }
        }
    }

    #[test]
    fn conflicting_constraints_rejected() {
        let f = |z: C64| z;
        let task = ApproximationTask {
            pieces: vec![Piece::new(Region::disk(o(), 1.0), &f)],
            constraints: vec![
                Constraint { point: o(), value: o(), derivative: None },
                Constraint { point: o(), value: C64::new(1.0, 0.0), derivative: None },
            ],
            epsilon: 1e-3,
            config: ApproxConfig::default(),
        };
        assert!(matches!(approximate(&task), Err(ApproxError::ConstraintConflict(_))));
    }

    #[test]
    fn budget_exceeded_is_reported() {
        let zero = |_: C64| C64::new(0.0, 0.0);
        let one = |_: C64| C64::new(1.0, 0.0);
        let task = ApproximationTask {
            pieces: vec![
                Piece::new(Region::disk(o(), 0.45), &zero),
                Piece::new(Region::disk(C64::new(1.0, 0.0), 0.45), &one),
            ],
            constraints: vec![],
            epsilon: 1e-12,
            config: ApproxConfig { max_degree: 40, ..Default::default() },
        };
        assert!(matches!(approximate(&task), Err(ApproxError::DegreeBudgetExceeded { .. })));
    }

    #[test]
    fn certify_error_examples() {
        let f = |z: C64| z * z;
        let r = Region::disk(o(), 0.5);
        assert_eq!(certify_error(&f, &r, &f, 1024, 1.5), 0.0);
        let g = |z: C64| z * z + 1e-4;
        let e = certify_error(&g, &r, &f, 1024, 1.5);
        assert!((e - 1.5e-4).abs() < 1e-15);
    }

    #[test]
    fn univalence_examples() {
        let lin = |z: C64| (3.0 * z, C64::new(3.0, 0.0));
        let c = certify_univalence(&lin, &Region::disk(o(), 0.108), 16, 1.5).unwrap();
        assert!((c.derivative_lower_bound - 3.0).abs() < 1e-15);
        let sq = |z: C64| (z * z, 2.0 * z);
        assert!(certify_univalence(&sq, &Region::disk(o(), 1.0), 16, 0.0).is_err());
        // shifted square: derivative stays away from zero but the map folds
        let fold = |z: C64| ((z + 0.1) * (z + 0.1), 2.0 * (z + 0.1));
        assert!(certify_univalence(&fold, &Region::disk(C64::new(2.0, 0.0), 2.5), 16, -1.0).is_err());
    }

    #[test]
    fn union_univalence_detects_shared_images() {
        let sq = |z: C64| (z * z, 2.0 * z);
        let parts = [Region::disk(C64::new(1.0, 0.0), 0.2), Region::disk(C64::new(-1.0, 0.0), 0.2)];
        assert!(certify_univalence_union(&sq, &parts, 8, 0.1).is_err());
        let parts = [Region::disk(C64::new(1.0, 0.0), 0.2), Region::disk(C64::new(0.0, 1.0), 0.2)];
        assert!(certify_univalence_union(&sq, &parts, 8, 0.1).is_ok());
    }

    #[test]
    fn epsilon_search_examples() {
        let yes = |_: f64| true;
        assert_eq!(epsilon_search(&[&yes], 0.25, 1e-12), Ok(0.25));
        let margin = |e: f64| 2.0 * e <= 0.01;
        let e = epsilon_search(&[&margin], 0.25, 1e-12).unwrap();
        assert!(e <= 0.005 && e > 0.0025);
        let never = |_: f64| false;
        assert!(epsilon_search(&[&never], 1.0, 1e-12).is_err());
    }

    #[test]
    fn univalence_soundness_on_small_grids() {
        // maps with two grid points colliding must never be certified
        let maps: Vec<Box<dyn Fn(C64) -> (C64, C64) + Sync>> = vec![
            Box::new(|z: C64| (z * z, 2.0 * z)),
            Box::new(|z: C64| (z * z * z, 3.0 * z * z)),
            Box::new(|z: C64| ((4.0 * z).exp(), 4.0 * (4.0 * z).exp())),
        ];
        let r = Region::disk(o(), 1.0);
        let g = r.interior_grid(24);
        for f in &maps {
            let vals: Vec<C64> = g.iter().map(|z| f(*z).0).collect();
            let collide = (0..vals.len()).any(|i| (i + 1..vals.len()).any(|k| (vals[i] - vals[k]).norm() <= 1e-14));
            if collide {
                assert!(certify_univalence(f.as_ref(), &r, 16, 0.0).is_err());
            }
        }
    }
}
