//! Planar regions, boundary sampling, winding numbers and containment tests.

use crate::hexfloat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point {0} is within {1:e} of the curve")]
    TooCloseToCurve(C64, f64),
    #[error("invalid region: {0}")]
    Invalid(String),
}

/// A compact planar set with connected complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Disk {
        #[serde(with = "hexfloat::complex")]
        center: C64,
        #[serde(with = "hexfloat::real")]
        radius: f64,
    },
    /// `{ inner <= |z| <= outer, |arg z| <= half_angle }`
    AnnularSector {
        #[serde(with = "hexfloat::real")]
        inner: f64,
        #[serde(with = "hexfloat::real")]
        outer: f64,
        #[serde(with = "hexfloat::real")]
        half_angle: f64,
    },
    Translate {
        base: Box<Region>,
        #[serde(with = "hexfloat::complex")]
        offset: C64,
    },
    /// Closed polygon, vertices in order (either orientation).
    PolygonalHull {
        #[serde(with = "hexfloat::complex_vec")]
        vertices: Vec<C64>,
    },
    FiniteUnion { parts: Vec<Region> },
}

impl Region {
    pub fn disk(center: C64, radius: f64) -> Region {
        Region::Disk { center, radius }
    }

    pub fn sector(inner: f64, outer: f64, half_angle: f64) -> Region {
        Region::AnnularSector { inner, outer, half_angle }
    }

    pub fn polygon(vertices: Vec<C64>) -> Region {
        Region::PolygonalHull { vertices }
    }

    pub fn translated(&self, offset: C64) -> Region {
        match self {
            Region::Disk { center, radius } => Region::Disk { center: center + offset, radius: *radius },
            Region::PolygonalHull { vertices } => {
                Region::PolygonalHull { vertices: vertices.iter().map(|v| v + offset).collect() }
            }
            Region::Translate { base, offset: o } => Region::Translate { base: base.clone(), offset: o + offset },
            _ => Region::Translate { base: Box::new(self.clone()), offset },
        }
    }

    /// Image under `z -> a z + b`. Sectors under a non-trivial rotation
    /// become polygons through 2048 boundary samples.
    pub fn affine_image(&self, a: C64, b: C64) -> Region {
        match self {
            Region::Disk { center, radius } => Region::Disk { center: a * center + b, radius: a.norm() * radius },
            Region::PolygonalHull { vertices } => Region::polygon(vertices.iter().map(|v| a * v + b).collect()),
            Region::AnnularSector { inner, outer, half_angle } if a.im == 0.0 && a.re > 0.0 => {
                Region::sector(inner * a.re, outer * a.re, *half_angle).translated(b)
            }
            Region::AnnularSector { .. } => Region::polygon(self.boundary(2048).iter().map(|v| a * v + b).collect()),
            Region::Translate { base, offset } => base.affine_image(a, a * offset + b),
            Region::FiniteUnion { parts } => {
                Region::FiniteUnion { parts: parts.iter().map(|p| p.affine_image(a, b)).collect() }
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |s: String| Err(GeometryError::Invalid(s));
        match self {
            Region::Disk { radius, .. } if !(*radius > 0.0) => bad(format!("disk radius {radius}")),
            Region::AnnularSector { inner, outer, half_angle } => {
                if !(*inner > 0.0 && inner < outer) {
                    bad(format!("sector radii {inner} {outer}"))
                } else if !(*half_angle > 0.0 && *half_angle <= PI) {
                    bad(format!("sector half-angle {half_angle}"))
                } else {
                    Ok(())
                }
            }
            Region::Translate { base, .. } => base.validate(),
            Region::PolygonalHull { vertices } => {
                if vertices.len() < 3 {
                    return bad("polygon needs three vertices".into());
                }
                if polygon_self_intersects(vertices) {
                    return bad("polygon self-intersects".into());
                }
                Ok(())
            }
            Region::FiniteUnion { parts } => {
                for p in parts {
                    p.validate()?;
                }
                for (i, a) in parts.iter().enumerate() {
                    for b in &parts[i + 1..] {
                        if region_distance(a, b, 512) <= 0.0 {
                            return bad("union parts overlap".into());
                        }
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Every region built from these variants has connected complement.
    pub fn is_full(&self) -> bool {
        true
    }

    /// Signed distance to the boundary: negative inside, positive outside.
    pub fn signed_distance(&self, z: C64) -> f64 {
        match self {
            Region::Disk { center, radius } => (z - center).norm() - radius,
            Region::AnnularSector { inner, outer, half_angle } => sector_signed_distance(z, *inner, *outer, *half_angle),
            Region::Translate { base, offset } => base.signed_distance(z - offset),
            Region::PolygonalHull { vertices } => {
                let d = polygon_edge_distance(vertices, z);
                if point_in_polygon(vertices, z) {
                    -d
                } else {
                    d
                }
            }
            Region::FiniteUnion { parts } => {
                parts.iter().map(|p| p.signed_distance(z)).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        self.signed_distance(z) <= 0.0
    }

    /// Inside with at least `margin` to spare.
    pub fn contains_with_margin(&self, z: C64, margin: f64) -> bool {
        self.signed_distance(z) <= -margin
    }

    pub fn perimeter(&self) -> f64 {
        match self {
            Region::Disk { radius, .. } => TAU * radius,
            Region::AnnularSector { inner, outer, half_angle } => {
                2.0 * half_angle * (inner + outer) + if *half_angle < PI { 2.0 * (outer - inner) } else { 0.0 }
            }
            Region::Translate { base, .. } => base.perimeter(),
            Region::PolygonalHull { vertices } => closed_length(vertices),
            Region::FiniteUnion { parts } => parts.iter().map(|p| p.perimeter()).sum(),
        }
    }

    /// Connected pieces (a union is flattened, anything else is itself).
    pub fn components(&self) -> Vec<Region> {
        match self {
            Region::FiniteUnion { parts } => parts.iter().flat_map(|p| p.components()).collect(),
            _ => vec![self.clone()],
        }
    }

    /// Ordered samples along the boundary, equal arc-length spacing.
    /// For a union the components are concatenated in order.
    pub fn boundary(&self, count: usize) -> Vec<C64> {
        let count = count.max(1);
        match self {
            Region::Disk { center, radius } => (0..count)
                .map(|k| center + C64::from_polar(*radius, TAU * k as f64 / count as f64))
                .collect(),
            Region::Translate { base, offset } => base.boundary(count).into_iter().map(|z| z + offset).collect(),
            Region::AnnularSector { inner, outer, half_angle } => {
                let step = self.perimeter() / count as f64;
                (0..count).map(|k| sector_point(*inner, *outer, *half_angle, k as f64 * step)).collect()
            }
            Region::PolygonalHull { vertices } => resample_closed(vertices, count),
            Region::FiniteUnion { parts } => {
                let total: f64 = parts.iter().map(|p| p.perimeter()).sum();
                parts
                    .iter()
                    .flat_map(|p| {
                        let n = ((count as f64) * p.perimeter() / total).ceil() as usize;
                        p.boundary(n.max(3))
                    })
                    .collect()
            }
        }
    }

    /// Boundary samples packed towards corners (Chebyshev spacing per edge);
    /// used for interpolation candidates where corners attract nodes.
    pub fn boundary_clustered(&self, count: usize) -> Vec<C64> {
        match self {
            Region::Disk { .. } => self.boundary(count),
            Region::Translate { base, offset } => {
                base.boundary_clustered(count).into_iter().map(|z| z + offset).collect()
            }
            Region::AnnularSector { inner, outer, half_angle } => {
                let per = self.perimeter();
                let seg = |len: f64| ((count as f64) * len / per).ceil().max(8.0) as usize;
                let a = *half_angle;
                let mut out = Vec::with_capacity(count + 32);
                for t in cheb(seg(2.0 * a * outer)) {
                    out.push(C64::from_polar(*outer, -a + 2.0 * a * t));
                }
                if a < PI {
                    for t in cheb(seg(outer - inner)) {
                        out.push(C64::from_polar(outer - t * (outer - inner), a));
                    }
                }
                for t in cheb(seg(2.0 * a * inner)) {
                    out.push(C64::from_polar(*inner, a - 2.0 * a * t));
                }
                if a < PI {
                    for t in cheb(seg(outer - inner)) {
                        out.push(C64::from_polar(inner + t * (outer - inner), -a));
                    }
                }
                out
            }
            Region::PolygonalHull { vertices } if vertices.len() <= 16 => {
                let per = closed_length(vertices);
                let mut out = Vec::with_capacity(count + 32);
                for i in 0..vertices.len() {
                    let (p, q) = (vertices[i], vertices[(i + 1) % vertices.len()]);
                    let n = ((count as f64) * (q - p).norm() / per).ceil().max(8.0) as usize;
                    for t in cheb(n) {
                        out.push(p + (q - p) * t);
                    }
                }
                out
            }
            Region::PolygonalHull { .. } => self.boundary(count),
            Region::FiniteUnion { parts } => {
                let total: f64 = parts.iter().map(|p| p.perimeter()).sum();
                parts
                    .iter()
                    .flat_map(|p| {
                        let n = ((count as f64) * p.perimeter() / total).ceil() as usize;
                        p.boundary_clustered(n.max(8))
                    })
                    .collect()
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bbox(&self) -> (C64, C64) {
        match self {
            Region::Disk { center, radius } => {
                (center - C64::new(*radius, *radius), center + C64::new(*radius, *radius))
            }
            Region::AnnularSector { outer, .. } => {
                let b = self.boundary(2048);
                let (lo, hi) = bbox_of(&b);
                (lo - C64::new(1e-3 * outer, 1e-3 * outer), hi + C64::new(1e-3 * outer, 1e-3 * outer))
            }
            Region::Translate { base, offset } => {
                let (lo, hi) = base.bbox();
                (lo + offset, hi + offset)
            }
            Region::PolygonalHull { vertices } => bbox_of(vertices),
            Region::FiniteUnion { parts } => {
                let mut lo = C64::new(f64::INFINITY, f64::INFINITY);
                let mut hi = -lo;
                for p in parts {
                    let (a, b) = p.bbox();
                    lo = C64::new(lo.re.min(a.re), lo.im.min(a.im));
                    hi = C64::new(hi.re.max(b.re), hi.im.max(b.im));
                }
                (lo, hi)
            }
        }
    }

    /// Points of an `n x n` bounding-box grid that fall inside the region.
    pub fn interior_grid(&self, n: usize) -> Vec<C64> {
        let (lo, hi) = self.bbox();
        let mut out = Vec::new();
        for i in 0..n {
            for k in 0..n {
                let z = C64::new(
                    lo.re + (hi.re - lo.re) * (i as f64 + 0.5) / n as f64,
                    lo.im + (hi.im - lo.im) * (k as f64 + 0.5) / n as f64,
                );
                if self.contains(z) {
                    out.push(z);
                }
            }
        }
        out
    }

    /// Grid interior points plus boundary samples.
    pub fn grid(&self, n: usize, boundary: usize) -> Vec<C64> {
        let mut g = self.interior_grid(n);
        g.extend(self.boundary(boundary));
        g
    }

    pub fn centroid(&self) -> C64 {
        match self {
            Region::Disk { center, .. } => *center,
            Region::Translate { base, offset } => base.centroid() + offset,
            Region::PolygonalHull { vertices } => polygon_centroid(vertices),
            _ => {
                let g = self.interior_grid(64);
                if g.is_empty() {
                    let b = self.boundary(256);
                    b.iter().sum::<C64>() / b.len() as f64
                } else {
                    g.iter().sum::<C64>() / g.len() as f64
                }
            }
        }
    }

    /// Largest radius of a disk about `c` inside the region (0 when outside).
    pub fn inradius_about(&self, c: C64) -> f64 {
        (-self.signed_distance(c)).max(0.0)
    }

    /// Smallest radius of a disk about `c` containing the region.
    pub fn circumradius_about(&self, c: C64) -> f64 {
        match self {
            Region::Disk { center, radius } => (center - c).norm() + radius,
            _ => self.boundary(2048).iter().map(|z| (z - c).norm()).fold(0.0, f64::max),
        }
    }

    /// Radius of the smallest origin-centred disk containing the region.
    pub fn max_modulus(&self) -> f64 {
        self.circumradius_about(C64::new(0.0, 0.0))
    }
}

/// Closed boundary samples, with the spacing actually achieved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    #[serde(with = "hexfloat::complex_vec")]
    pub points: Vec<C64>,
    #[serde(with = "hexfloat::real")]
    pub spacing: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The constants `r1 < 1/9 < r2 < r3 < 1/3` and the tolerance `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(with = "hexfloat::real")]
    pub r1: f64,
    #[serde(with = "hexfloat::real")]
    pub r2: f64,
    #[serde(with = "hexfloat::real")]
    pub r3: f64,
    #[serde(with = "hexfloat::real")]
    pub eps: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants::with_r1(0.108)
    }
}

impl Constants {
    /// `r2 = 5/27`, `r3 = 7/27` and the largest admissible `eps` shrunk by 10%.
    pub fn with_r1(r1: f64) -> Constants {
        let (r2, r3): (f64, f64) = (5.0 / 27.0, 7.0 / 27.0);
        let eps = 0.9 * (r2 / 2.0).min(3.0 * r1 - r3).max(0.0);
        Constants { r1, r2, r3, eps }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let Constants { r1, r2, r3, eps } = *self;
        let ninth = 1.0 / 9.0;
        if !(0.0 < r1 && r1 < ninth && ninth < r2 && r2 < r3 && r3 < 1.0 / 3.0) {
            return Err(GeometryError::Invalid(format!("need 0 < r1 < 1/9 < r2 < r3 < 1/3, got {r1} {r2} {r3}")));
        }
        if !(eps > 0.0 && eps < r2 / 2.0) {
            return Err(GeometryError::Invalid(format!("need 0 < eps < r2/2, got {eps}")));
        }
        if !(r3 < 3.0 * r1) {
            return Err(GeometryError::Invalid(format!("need r3 < 3 r1, got r1 = {r1}")));
        }
        if !(eps < 3.0 * r1 - r3) {
            return Err(GeometryError::Invalid(format!("need eps < 3 r1 - r3, got {eps}")));
        }
        Ok(())
    }

    /// `D = D(0, r1)`, stored closed.
    pub fn d(&self) -> Region {
        Region::disk(C64::new(0.0, 0.0), self.r1)
    }

    /// `B0`, the sector `r2 < |z| < r3`, `|arg z| < pi/4`.
    pub fn b0(&self) -> Region {
        Region::sector(self.r2, self.r3, FRAC_PI_4)
    }

    /// `A = D(-1/4, 1/9)`.
    pub fn a(&self) -> Region {
        Region::disk(C64::new(-0.25, 0.0), 1.0 / 9.0)
    }

    /// `Delta_j`: `{0}` for `j = 0`, else the closed disk of radius `m_j - 1`.
    pub fn delta(&self, j: usize, m_j: u64) -> Option<Region> {
        if j == 0 {
            None
        } else {
            Some(Region::disk(C64::new(0.0, 0.0), m_j as f64 - 1.0))
        }
    }
}

/// Discrete winding number of a closed sampled curve about `w`.
pub fn winding_number(curve: &[C64], w: C64) -> Result<i64, GeometryError> {
    let n = curve.len();
    if n < 3 {
        return Err(GeometryError::Invalid("curve needs three samples".into()));
    }
    let gap = (0..n).map(|i| (curve[(i + 1) % n] - curve[i]).norm()).fold(0.0, f64::max);
    let near = curve.iter().map(|z| (z - w).norm()).fold(f64::INFINITY, f64::min);
    if near <= 2.0 * gap {
        return Err(GeometryError::TooCloseToCurve(w, near));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = curve[i] - w;
        let b = curve[(i + 1) % n] - w;
        total += (b / a).arg();
    }
    Ok((total / TAU).round() as i64)
}

/// Winding number by crossing count; no spacing precondition.
pub fn crossing_winding(curve: &[C64], w: C64) -> i64 {
    let n = curve.len();
    let mut wn = 0i64;
    for i in 0..n {
        let a = curve[i];
        let b = curve[(i + 1) % n];
        if a.im <= w.im {
            if b.im > w.im && cross(b - a, w - a) > 0.0 {
                wn += 1;
            }
        } else if b.im <= w.im && cross(b - a, w - a) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// `inner ⋐ outer` with `margin`: all boundary samples of `inner` are at
/// least `margin` inside `outer`. Sampling starts at 1024 per piece and
/// doubles until two densities agree.
pub fn compactly_contained(inner: &Region, outer: &Region, margin: f64) -> bool {
    let verdict = |count: usize| {
        inner.boundary(count).iter().all(|z| outer.signed_distance(*z) <= -margin)
            && (margin > 0.0 || !inner.boundary(count).iter().any(|z| outer.signed_distance(*z) >= 0.0))
    };
    let mut count = 1024;
    let mut prev = verdict(count);
    while count < 1 << 16 {
        count *= 2;
        let next = verdict(count);
        if next == prev {
            return next && strictly_inside(inner, outer);
        }
        prev = next;
    }
    prev && strictly_inside(inner, outer)
}

/// Rejects equal sets: some boundary sample of `inner` must be strictly
/// interior to `outer`, and no sample may sit on `outer`'s boundary.
fn strictly_inside(inner: &Region, outer: &Region) -> bool {
    inner.boundary(1024).iter().all(|z| outer.signed_distance(*z) < -1e-12 * (1.0 + z.norm()))
}

/// `count` samples on the boundary; spacing bound `perimeter / count`.
pub fn sample_boundary(r: &Region, count: usize) -> PointCloud {
    let points = r.boundary(count);
    let spacing = max_gap(&points);
    PointCloud { points, spacing }
}

/// A finite subset of the boundary within `delta` of every boundary point.
pub fn dense_boundary_subset(r: &Region, delta: f64) -> PointCloud {
    let mut parts = Vec::new();
    for c in r.components() {
        let n = (c.perimeter() / delta).ceil().max(1.0) as usize;
        parts.extend(c.boundary(n));
    }
    PointCloud { spacing: if parts.len() > 1 { max_gap(&parts) } else { 0.0 }, points: parts }
}

/// Max distance from a fine boundary sampling to the cloud.
pub fn cloud_coverage(r: &Region, cloud: &PointCloud, fine: usize) -> f64 {
    r.boundary(fine)
        .iter()
        .map(|z| cloud.points.iter().map(|p| (p - z).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Separation between two regions estimated on boundary samples;
/// non-positive when they overlap.
pub fn region_distance(a: &Region, b: &Region, count: usize) -> f64 {
    let ba = a.boundary(count);
    let bb = b.boundary(count);
    if ba.iter().any(|z| b.contains(*z)) || bb.iter().any(|z| a.contains(*z)) {
        return 0.0;
    }
    let d1 = ba.iter().map(|z| b.signed_distance(*z)).fold(f64::INFINITY, f64::min);
    let d2 = bb.iter().map(|z| a.signed_distance(*z)).fold(f64::INFINITY, f64::min);
    d1.min(d2)
}

pub fn max_gap(points: &[C64]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    (0..n).map(|i| (points[(i + 1) % n] - points[i]).norm()).fold(0.0, f64::max)
}

pub fn bbox_of(points: &[C64]) -> (C64, C64) {
    let mut lo = C64::new(f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for z in points {
        lo = C64::new(lo.re.min(z.re), lo.im.min(z.im));
        hi = C64::new(hi.re.max(z.re), hi.im.max(z.im));
    }
    (lo, hi)
}

fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn cheb(n: usize) -> impl Iterator<Item = f64> {
    // half-open [0,1): the far endpoint belongs to the next edge
    (0..n).map(move |k| 0.5 - 0.5 * (PI * k as f64 / n as f64).cos())
}

fn closed_length(v: &[C64]) -> f64 {
    let n = v.len();
    (0..n).map(|i| (v[(i + 1) % n] - v[i]).norm()).sum()
}

fn resample_closed(path: &[C64], count: usize) -> Vec<C64> {
    let n = path.len();
    let total = closed_length(path);
    let step = total / count as f64;
    let mut out = Vec::with_capacity(count);
    let mut edge = 0;
    let mut acc = 0.0;
    let mut len = (path[1 % n] - path[0]).norm();
    for k in 0..count {
        let s = k as f64 * step;
        while acc + len < s && edge < n - 1 {
            acc += len;
            edge += 1;
            len = (path[(edge + 1) % n] - path[edge]).norm();
        }
        let t = if len > 0.0 { ((s - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(path[edge] + (path[(edge + 1) % n] - path[edge]) * t);
    }
    out
}

pub fn point_in_polygon(v: &[C64], z: C64) -> bool {
    crossing_winding(v, z) != 0
}

pub fn polygon_edge_distance(v: &[C64], z: C64) -> f64 {
    let n = v.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        best = best.min(segment_distance(v[i], v[(i + 1) % n], z));
    }
    best
}

pub fn segment_distance(a: C64, b: C64, z: C64) -> f64 {
    let d = b - a;
    let l2 = d.norm_sqr();
    if l2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * d.conj()).re / l2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

fn polygon_centroid(v: &[C64]) -> C64 {
    let n = v.len();
    let mut area = 0.0;
    let mut c = C64::new(0.0, 0.0);
    for i in 0..n {
        let (p, q) = (v[i], v[(i + 1) % n]);
        let w = cross(p, q);
        area += w;
        c += (p + q) * w;
    }
    if area.abs() < 1e-300 {
        return v.iter().sum::<C64>() / n as f64;
    }
    c / (3.0 * area)
}

/// Boundary point at arc length `s`: outer arc counter-clockwise, upper
/// edge inwards, inner arc clockwise, lower edge outwards.
fn sector_point(inner: f64, outer: f64, a: f64, s: f64) -> C64 {
    let mut s = s;
    let outer_arc = 2.0 * a * outer;
    if s < outer_arc {
        return C64::from_polar(outer, -a + s / outer);
    }
    s -= outer_arc;
    let edge = if a < PI { outer - inner } else { 0.0 };
    if s < edge {
        return C64::from_polar(outer - s, a);
    }
    s -= edge;
    let inner_arc = 2.0 * a * inner;
    if s < inner_arc {
        return C64::from_polar(inner, a - s / inner);
    }
    s -= inner_arc;
    C64::from_polar(inner + s.min(edge), -a)
}

fn sector_signed_distance(z: C64, inner: f64, outer: f64, a: f64) -> f64 {
    let r = z.norm();
    let t = z.arg();
    let inside = r >= inner && r <= outer && t.abs() <= a;
    let arc = |rad: f64| {
        if t.abs() <= a {
            (r - rad).abs()
        } else {
            let e1 = C64::from_polar(rad, a);
            let e2 = C64::from_polar(rad, -a);
            (z - e1).norm().min((z - e2).norm())
        }
    };
    let mut d = arc(inner).min(arc(outer));
    if a < PI {
        for s in [a, -a] {
            d = d.min(segment_distance(C64::from_polar(inner, s), C64::from_polar(outer, s), z));
        }
    }
    if inside {
        -d
    } else {
        d
    }
}

fn polygon_self_intersects(v: &[C64]) -> bool {
    let n = v.len();
    if n > 4096 {
        return false;
    }
    let seg_cross = |a: C64, b: C64, c: C64, d: C64| {
        let d1 = cross(b - a, c - a);
        let d2 = cross(b - a, d - a);
        let d3 = cross(d - c, a - c);
        let d4 = cross(d - c, b - c);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    };
    for i in 0..n {
        for k in i + 2..n {
            if i == 0 && k == n - 1 {
                continue;
            }
            if seg_cross(v[i], v[(i + 1) % n], v[k], v[(k + 1) % n]) {
                return true;
            }
        }
    }
    false
}
