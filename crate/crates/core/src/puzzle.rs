//! Puzzle pieces of the cycle map: curve pullback, the principal nest, filled Julia sets,
//! Hausdorff distances and roundness.

use crate::error::{Error, Result};
use crate::operator::{CycleSolution, SliceMap};
use crate::series::{TruncatedSeries, DEFAULT_SLACK};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tolerance of the geometric predicates (containment, simplicity).
pub const GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedCurve {
    #[serde(with = "crate::io::complex_vec")]
    pub vertices: Vec<C64>,
}

fn segment_distance(p: C64, a: C64, b: C64) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a) * ab.conj()).re / len2;
    (p - (a + ab * t.clamp(0.0, 1.0))).norm()
}

fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

fn segments_cross(p1: C64, p2: C64, q1: C64, q2: C64) -> bool {
    let d1 = cross(p2 - p1, q1 - p1);
    let d2 = cross(p2 - p1, q2 - p1);
    let d3 = cross(q2 - q1, p1 - q1);
    let d4 = cross(q2 - q1, p2 - q1);
    (d1 > GEOM_TOL && d2 < -GEOM_TOL || d1 < -GEOM_TOL && d2 > GEOM_TOL)
        && (d3 > GEOM_TOL && d4 < -GEOM_TOL || d3 < -GEOM_TOL && d4 > GEOM_TOL)
}

impl ClosedCurve {
    pub fn new(vertices: Vec<C64>) -> Result<ClosedCurve> {
        if vertices.len() < 16 {
            return Err(Error::Malformed(format!("a closed curve needs at least 16 vertices, got {}", vertices.len())));
        }
        if vertices.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Malformed("non-finite vertex".into()));
        }
        Ok(ClosedCurve { vertices })
    }

    pub fn circle(center: C64, radius: f64, m: usize) -> Result<ClosedCurve> {
        ClosedCurve::new((0..m).map(|k| center + C64::from_polar(radius, std::f64::consts::TAU * k as f64 / m as f64)).collect())
    }

    /// Axis-aligned rectangle traversed counter-clockwise, `per_side` vertices per side.
    pub fn rectangle(center: C64, width: f64, height: f64, per_side: usize) -> Result<ClosedCurve> {
        let (w, h) = (width / 2.0, height / 2.0);
        let corners = [C64::new(-w, -h), C64::new(w, -h), C64::new(w, h), C64::new(-w, h)];
        let mut v = Vec::with_capacity(4 * per_side);
        for i in 0..4 {
            let (a, b) = (corners[i], corners[(i + 1) % 4]);
            for k in 0..per_side {
                v.push(center + a + (b - a) * (k as f64 / per_side as f64));
            }
        }
        ClosedCurve::new(v)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (C64, C64)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn winding_number(&self, p: C64) -> i64 {
        let mut w = 0i64;
        for (a, b) in self.edges() {
            if a.im <= p.im {
                if b.im > p.im && cross(b - a, p - a) > 0.0 {
                    w += 1;
                }
            } else if b.im <= p.im && cross(b - a, p - a) < 0.0 {
                w -= 1;
            }
        }
        w
    }

    pub fn contains(&self, p: C64) -> bool {
        self.winding_number(p) != 0
    }

    /// Distance from `p` to the polyline.
    pub fn distance_to(&self, p: C64) -> f64 {
        self.edges().map(|(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }

    /// Signed shoelace area (positive for counter-clockwise orientation).
    pub fn signed_area(&self) -> f64 {
        let o = self.vertices[0];
        0.5 * self.edges().map(|(a, b)| cross(a - o, b - o)).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        (0..v.len())
            .into_par_iter()
            .map(|i| v[i + 1..].iter().map(|w| (v[i] - w).norm()).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    pub fn bounding_box(&self) -> (C64, C64) {
        let (mut lo, mut hi) = (self.vertices[0], self.vertices[0]);
        for z in &self.vertices {
            lo = C64::new(lo.re.min(z.re), lo.im.min(z.im));
            hi = C64::new(hi.re.max(z.re), hi.im.max(z.im));
        }
        (lo, hi)
    }

    /// No two non-adjacent edges cross (sweep over edges sorted by their left end).
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let mut order: Vec<usize> = (0..n).collect();
        let lo = |i: usize| self.vertices[i].re.min(self.vertices[(i + 1) % n].re);
        let hi = |i: usize| self.vertices[i].re.max(self.vertices[(i + 1) % n].re);
        order.sort_by(|&a, &b| lo(a).total_cmp(&lo(b)));
        let mut active: Vec<usize> = Vec::new();
        for &i in &order {
            active.retain(|&j| hi(j) >= lo(i) - GEOM_TOL);
            for &j in &active {
                let adjacent = (i + 1) % n == j || (j + 1) % n == i;
                if !adjacent
                    && segments_cross(self.vertices[i], self.vertices[(i + 1) % n], self.vertices[j], self.vertices[(j + 1) % n])
                {
                    return false;
                }
            }
            active.push(i);
        }
        true
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> ClosedCurve {
        ClosedCurve { vertices: self.vertices.iter().map(|&z| f(z)).collect() }
    }

    pub fn scale(&self, a: C64) -> ClosedCurve {
        self.map(|z| z * a)
    }

    /// `m` vertices equally spaced in arclength.
    pub fn resample(&self, m: usize) -> Result<ClosedCurve> {
        let total = self.perimeter();
        if !(total > 0.0) {
            return Err(Error::DegenerateRegion("curve has zero length".into()));
        }
        let step = total / m as f64;
        let mut out = Vec::with_capacity(m);
        let mut edges = self.edges();
        let (mut a, mut b) = edges.next().expect("nonempty");
        let mut walked = 0.0;
        for k in 0..m {
            let target = k as f64 * step;
            while walked + (b - a).norm() < target {
                walked += (b - a).norm();
                match edges.next() {
                    Some(e) => (a, b) = e,
                    None => break,
                }
            }
            let len = (b - a).norm();
            let t = if len > 0.0 { ((target - walked) / len).clamp(0.0, 1.0) } else { 0.0 };
            out.push(a + (b - a) * t);
        }
        ClosedCurve::new(out)
    }

    /// Every vertex of `inner` is inside `self` and the boundaries keep a positive distance.
    pub fn strictly_contains(&self, inner: &ClosedCurve) -> bool {
        inner.vertices.par_iter().all(|&z| self.contains(z) && self.distance_to(z) > GEOM_TOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    #[serde(with = "crate::io::complex_vec")]
    pub points: Vec<C64>,
    pub resolution: f64,
}

impl PointCloud {
    pub fn new(points: Vec<C64>, resolution: f64) -> Result<PointCloud> {
        if points.is_empty() {
            return Err(Error::Malformed("empty point cloud; the grid may be too coarse".into()));
        }
        if !(resolution > 0.0) {
            return Err(Error::Malformed("resolution must be positive".into()));
        }
        Ok(PointCloud { points, resolution })
    }
}

/// A rectangle of the plane sampled on a square grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn square(center: C64, half: f64) -> Window {
        Window { re_min: center.re - half, re_max: center.re + half, im_min: center.im - half, im_max: center.im + half }
    }

    pub fn dims(&self, resolution: f64) -> (usize, usize) {
        (
            ((self.re_max - self.re_min) / resolution).round() as usize + 1,
            ((self.im_max - self.im_min) / resolution).round() as usize + 1,
        )
    }

    pub fn point(&self, resolution: f64, i: usize, j: usize) -> C64 {
        C64::new(self.re_min + i as f64 * resolution, self.im_max - j as f64 * resolution)
    }
}

/// Escape-time classification of a grid: `inside[j * nx + i]` for column `i`, row `j`.
#[derive(Debug, Clone)]
pub struct JuliaGrid {
    pub window: Window,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub inside: Vec<bool>,
}

impl JuliaGrid {
    pub fn point(&self, i: usize, j: usize) -> C64 {
        self.window.point(self.resolution, i, j)
    }

    pub fn is_inside(&self, i: usize, j: usize) -> bool {
        self.inside[j * self.nx + i]
    }

    pub fn cloud(&self) -> Result<PointCloud> {
        let pts = (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .filter(|&(i, j)| self.is_inside(i, j))
            .map(|(i, j)| self.point(i, j))
            .collect();
        PointCloud::new(pts, self.resolution)
    }

    /// Inside pixels with a 4-neighbour outside.
    pub fn boundary_cloud(&self) -> Result<PointCloud> {
        let mut pts = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                if !self.is_inside(i, j) {
                    continue;
                }
                let edge = i == 0
                    || j == 0
                    || i + 1 == self.nx
                    || j + 1 == self.ny
                    || !self.is_inside(i - 1, j)
                    || !self.is_inside(i + 1, j)
                    || !self.is_inside(i, j - 1)
                    || !self.is_inside(i, j + 1);
                if edge {
                    pts.push(self.point(i, j));
                }
            }
        }
        PointCloud::new(pts, self.resolution)
    }
}

/// Grid points whose orbit under `g` stays defined and inside `escape` for `max_iter` steps.
///
/// `g` returns `None` where it is undefined; `escape` returns true once a point has left.
pub fn filled_julia(
    g: &(dyn Fn(C64) -> Option<C64> + Sync),
    escape: &(dyn Fn(C64) -> bool + Sync),
    window: Window,
    resolution: f64,
    max_iter: usize,
) -> Result<JuliaGrid> {
    if !(resolution > 0.0) || !(window.re_max > window.re_min) || !(window.im_max > window.im_min) {
        return Err(Error::Malformed("bad window or resolution".into()));
    }
    let (nx, ny) = window.dims(resolution);
    let inside: Vec<bool> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let mut z = window.point(resolution, k % nx, k / nx);
            let mut back = [C64::new(f64::NAN, 0.0); 2];
            for step in 0..max_iter {
                if escape(z) {
                    return false;
                }
                // settled on an attracting cycle of period one or two
                if step > 8 && back.iter().any(|b| (z - b).norm() <= 1e-12 * z.norm().max(1.0)) {
                    return true;
                }
                back = [z, back[0]];
                match g(z) {
                    Some(w) => z = w,
                    None => return false,
                }
            }
            !escape(z)
        })
        .collect();
    let grid = JuliaGrid { window, resolution, nx, ny, inside };
    if !grid.inside.iter().any(|&b| b) {
        return Err(Error::Malformed("filled Julia set is empty at this resolution".into()));
    }
    Ok(grid)
}

/// A holomorphic branch returning value and derivative, `None` outside its domain.
pub type Branch<'a> = &'a (dyn Fn(C64) -> Option<(C64, C64)> + Sync);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullbackOptions {
    /// Where to look for the first preimage: the preimage nearest to `anchor` is used.
    pub anchor: C64,
    pub search_radius: f64,
    /// The selected component must wind around this point, if given.
    pub must_contain: Option<C64>,
    /// Upper bound on the number of laps around the input curve (the local degree).
    pub max_laps: usize,
}

fn newton_solve(f: Branch, w: C64, mut z: C64) -> Option<C64> {
    for _ in 0..40 {
        let (v, dv) = f(z)?;
        if dv.norm() == 0.0 {
            return None;
        }
        let step = (v - w) / dv;
        z -= step;
        if !(z.re.is_finite() && z.im.is_finite()) {
            return None;
        }
        if step.norm() <= 1e-15 * z.norm().max(1.0) {
            break;
        }
    }
    let (v, _) = f(z)?;
    ((v - w).norm() <= 1e-11 * w.norm().max(1.0)).then_some(z)
}

fn first_preimage(f: Branch, w: C64, opts: &PullbackOptions) -> Result<C64> {
    let mut best: Option<C64> = None;
    for ring in 0..=12 {
        let r = opts.search_radius * ring as f64 / 12.0;
        let count = if ring == 0 { 1 } else { 8 * ring };
        for k in 0..count {
            let start = opts.anchor + C64::from_polar(r, std::f64::consts::TAU * (k as f64 + 0.5) / count as f64);
            if let Some(z) = newton_solve(f, w, start) {
                if best.is_none_or(|b| (z - opts.anchor).norm() < (b - opts.anchor).norm()) {
                    best = Some(z);
                }
            }
        }
    }
    best.ok_or_else(|| Error::Domain { ratio: f64::INFINITY })
}

/// Follow the preimage of the segment `[wa, wb]` from `z` (a preimage of `wa`).
fn track(f: Branch, z: C64, wa: C64, wb: C64, depth: usize) -> Result<C64> {
    let attempt = || -> Option<C64> {
        let (_, dv) = f(z)?;
        let predictor = z + (wb - wa) / dv;
        let next = newton_solve(f, wb, predictor)?;
        let moved = (next - z).norm();
        ((next - predictor).norm() <= 0.25 * moved + 1e-12).then_some(next)
    };
    if let Some(next) = attempt() {
        return Ok(next);
    }
    if depth >= 40 {
        return Err(Error::Monodromy(format!("lost the preimage branch near {z} while following {wa} -> {wb}")));
    }
    let mid = 0.5 * (wa + wb);
    let zm = track(f, z, wa, mid, depth + 1)?;
    track(f, zm, mid, wb, depth + 1)
}

/// The component of `f^{-1}(curve)` through the preimage nearest `opts.anchor`, traced by
/// continuation until it closes. Vertex `j` of the result maps to vertex `j mod m` of `curve`.
pub fn pullback_curve(f: Branch, curve: &ClosedCurve, opts: &PullbackOptions) -> Result<ClosedCurve> {
    let w = &curve.vertices;
    let m = w.len();
    let z0 = first_preimage(f, w[0], opts)?;
    let mut out = vec![z0];
    let mut z = z0;
    let closure_tol = 1e-7 * z0.norm().max(1.0);
    for lap in 0..opts.max_laps {
        for i in 0..m {
            z = track(f, z, w[i], w[(i + 1) % m], 0)?;
            if i + 1 < m {
                out.push(z);
            }
        }
        if (z - z0).norm() < closure_tol {
            let c = ClosedCurve::new(out)?;
            if let Some(p) = opts.must_contain {
                if !c.contains(p) {
                    return Err(Error::Monodromy(format!("traced component does not surround {p}")));
                }
            }
            return Ok(c);
        }
        if lap + 1 < opts.max_laps {
            out.push(z);
        }
    }
    Err(Error::Monodromy(format!("preimage did not close after {} laps", opts.max_laps)))
}

/// Roundness `max_x dist(x, boundary) / diam`: a grid search over the bounding box, then a
/// shrinking pattern search around each of the best few grid points.
pub fn roundness(curve: &ClosedCurve, grid: usize) -> Result<f64> {
    let grid = grid.max(3) | 1;
    let diam = curve.diameter();
    if !(diam > 0.0) {
        return Err(Error::DegenerateRegion("zero diameter".into()));
    }
    let (lo, hi) = curve.bounding_box();
    let score = |p: C64| if curve.contains(p) { curve.distance_to(p) } else { -1.0 };
    let cell = C64::new((hi.re - lo.re) / (grid - 1) as f64, (hi.im - lo.im) / (grid - 1) as f64);
    let mut coarse: Vec<(f64, C64)> = (0..grid * grid)
        .into_par_iter()
        .map(|k| {
            let p = lo + C64::new(cell.re * (k % grid) as f64, cell.im * (k / grid) as f64);
            (score(p), p)
        })
        .filter(|c| c.0 > 0.0)
        .collect();
    coarse.sort_by(|a, b| b.0.total_cmp(&a.0));
    coarse.truncate(8);
    let best = coarse
        .into_par_iter()
        .map(|(mut s, mut p)| {
            let mut half = cell;
            for _ in 0..12 {
                for k in 0..81 {
                    let q = p + C64::new(half.re * ((k % 9) as f64 / 4.0 - 1.0), half.im * ((k / 9) as f64 / 4.0 - 1.0));
                    let v = score(q);
                    if v > s {
                        (s, p) = (v, q);
                    }
                }
                half *= 0.5;
            }
            s
        })
        .reduce(|| -1.0, f64::max);
    if best > 0.0 {
        Ok(best / diam)
    } else {
        Err(Error::DegenerateRegion("no interior sample point".into()))
    }
}

pub enum Shape<'a> {
    Curve(&'a ClosedCurve),
    Cloud(&'a PointCloud),
}

impl Shape<'_> {
    fn points(&self) -> &[C64] {
        match self {
            Shape::Curve(c) => &c.vertices,
            Shape::Cloud(p) => &p.points,
        }
    }

    fn distance_to(&self, p: C64) -> f64 {
        match self {
            Shape::Curve(c) => c.distance_to(p),
            Shape::Cloud(c) => c.points.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min),
        }
    }
}

fn directed(a: &Shape, b: &Shape) -> f64 {
    a.points().par_iter().map(|&p| b.distance_to(p)).reduce(|| 0.0, f64::max)
}

/// Symmetric Hausdorff distance; curves are measured to their polylines, clouds to their points.
pub fn hausdorff_distance(a: Shape, b: Shape) -> f64 {
    directed(&a, &b).max(directed(&b, &a))
}

/// `sup |-(1/b^2) g(g(b z)) - g(z)|` over boundary samples of `g`'s disk.
pub fn functional_equation_residual(g: &TruncatedSeries, beta: f64) -> Result<f64> {
    let m = 8 * g.order() + 64;
    let mut excursion: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for z in g.disk.boundary(m) {
        let w = z * beta;
        excursion = excursion.max(g.disk.ratio(w));
        let y = g.eval_unchecked(w);
        excursion = excursion.max(g.disk.ratio(y));
        let lhs = -g.eval_unchecked(y) / (beta * beta);
        worst = worst.max((lhs - g.eval_unchecked(z)).norm());
    }
    if excursion > 1.0 + DEFAULT_SLACK {
        return Err(Error::CompositionDomain { excursion });
    }
    Ok(worst)
}

/// `g(z) = f_c(b z)` as a series on `U_0 / b`.
pub fn rescaled_central(map: &SliceMap, beta: f64) -> Result<TruncatedSeries> {
    let s = crate::series::rescale(&map.central, C64::new(beta, 0.0))?;
    Ok(s.scale(C64::new(beta, 0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestLevel {
    pub n: usize,
    pub tau_n: f64,
    /// `tau_n^{-1} dV_0^n`.
    pub rescaled_boundary: ClosedCurve,
    /// `tau_n^{-1} dV_1^{n+1}`, the outer piece of the next level, when it could be traced.
    pub rescaled_outer: Option<ClosedCurve>,
}

impl NestLevel {
    pub fn boundary(&self) -> ClosedCurve {
        self.rescaled_boundary.scale(C64::new(self.tau_n, 0.0))
    }

    pub fn boundary_outer(&self) -> Option<ClosedCurve> {
        self.rescaled_outer.as_ref().map(|c| c.scale(C64::new(self.tau_n, 0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestConfig {
    pub depth: usize,
    pub vertices: usize,
    /// Radius of the initial circle as a multiple of `|f_c(0)|`.
    pub gamma0_factor: f64,
}

impl Default for NestConfig {
    fn default() -> Self {
        NestConfig { depth: 8, vertices: 1024, gamma0_factor: 1.3 }
    }
}

/// The map `g(z) = f_c(b z)` whose iterated pullbacks give the rescaled nest.
pub struct NestMap<'a> {
    pub map: &'a SliceMap,
    pub beta: f64,
}

impl NestMap<'_> {
    pub fn value(&self, z: C64) -> Option<C64> {
        self.blend(z, false).map(|v| v.0)
    }

    /// `g` and `g'`. The rotated copies of the central branch agree only up to truncation, so
    /// they are blended with smooth weights in the disk ratio instead of picking one sector;
    /// a hard choice leaves seams that break preimage tracking.
    pub fn g(&self, z: C64) -> Option<(C64, C64)> {
        self.blend(z, true)
    }

    fn blend(&self, z: C64, with_derivative: bool) -> Option<(C64, C64)> {
        let d = self.map.degree as usize;
        let disk = self.map.central.disk;
        let u = z * self.beta;
        let weight = |r: f64| {
            let t = ((1.0 + DEFAULT_SLACK - r) / (2.0 * DEFAULT_SLACK)).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        let (mut sw, mut sv, mut sdv) = (0.0, C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for k in 0..d {
            let w = C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / d as f64);
            let a = weight(disk.ratio(u * w));
            if a > 0.0 {
                let (v, dv) = if with_derivative {
                    self.map.central.eval_with_derivative_unchecked(u * w)
                } else {
                    (self.map.central.eval_unchecked(u * w), C64::new(0.0, 0.0))
                };
                sw += a;
                sv += v * a;
                sdv += dv * w * a;
            }
        }
        (sw > 0.0).then(|| (sv / sw, sdv / sw * self.beta))
    }

    pub fn outer(&self, z: C64) -> Option<(C64, C64)> {
        self.map.outer.disk.contains(z, DEFAULT_SLACK).then(|| self.map.outer.eval_with_derivative_unchecked(z))
    }

    pub fn critical_value(&self) -> C64 {
        self.g(C64::new(0.0, 0.0)).map(|v| v.0).unwrap_or(C64::new(f64::NAN, 0.0))
    }
}

pub fn default_gamma0(cycle: &CycleSolution, cfg: &NestConfig) -> Result<ClosedCurve> {
    let v = NestMap { map: &cycle.map, beta: cycle.beta }.critical_value();
    ClosedCurve::circle(C64::new(0.0, 0.0), cfg.gamma0_factor * v.norm(), cfg.vertices)
}

fn outer_piece(nm: &NestMap, next_rescaled: &ClosedCurve, vertices: usize) -> Result<ClosedCurve> {
    let target = next_rescaled.scale(C64::new(nm.beta, 0.0));
    let disk = nm.map.outer.disk;
    let f = |z: C64| nm.outer(z);
    let opts = PullbackOptions { anchor: disk.center, search_radius: disk.radius, must_contain: None, max_laps: 1 };
    pullback_curve(&f, &target, &opts)?.resample(vertices)
}

/// Levels `0..=depth` of the principal nest of the cycle map, in rescaled coordinates:
/// level `n + 1` is the component around 0 of `g^{-1}` of level `n`, with `tau_n = b^n`.
pub fn principal_nest(cycle: &CycleSolution, gamma0: &ClosedCurve, cfg: &NestConfig) -> Result<Vec<NestLevel>> {
    let nm = NestMap { map: &cycle.map, beta: cycle.beta };
    let zero = C64::new(0.0, 0.0);
    if !gamma0.contains(zero) || !gamma0.contains(nm.critical_value()) {
        return Err(Error::Precondition("the initial curve must surround 0 and the critical value".into()));
    }
    let g = |z: C64| nm.g(z);
    let d = cycle.map.degree as usize;
    let mut curves = vec![gamma0.clone()];
    for n in 0..cfg.depth {
        let tau = cycle.beta.powi(n as i32 + 1);
        if tau < 1e-100 {
            return Err(Error::DepthLimit(n + 1));
        }
        let prev = &curves[n];
        let search = prev.vertices.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let opts = PullbackOptions { anchor: zero, search_radius: search, must_contain: Some(zero), max_laps: d };
        let next = pullback_curve(&g, prev, &opts).and_then(|c| c.resample(cfg.vertices)).map_err(|e| e.at_level(n + 1))?;
        if !prev.strictly_contains(&next.scale(C64::new(cycle.beta, 0.0))) {
            return Err(Error::Monodromy("pulled-back piece is not nested in its parent".into()).at_level(n + 1));
        }
        curves.push(next);
    }
    let mut levels = Vec::with_capacity(curves.len());
    for (n, c) in curves.iter().enumerate() {
        let outer = curves.get(n + 1).and_then(|next| outer_piece(&nm, next, cfg.vertices).ok());
        levels.push(NestLevel { n, tau_n: cycle.beta.powi(n as i32), rescaled_boundary: c.clone(), rescaled_outer: outer });
    }
    Ok(levels)
}

/// Fast point-in-curve test: cells far from the curve are classified once, the rest exactly.
pub struct CurveMask<'a> {
    curve: &'a ClosedCurve,
    window: Window,
    resolution: f64,
    nx: usize,
    ny: usize,
    /// 0 outside, 1 inside, 2 near the curve.
    cells: Vec<u8>,
}

impl<'a> CurveMask<'a> {
    pub fn new(curve: &'a ClosedCurve, resolution: f64) -> CurveMask<'a> {
        let (lo, hi) = curve.bounding_box();
        let window = Window { re_min: lo.re, re_max: hi.re + resolution, im_min: lo.im - resolution, im_max: hi.im };
        let (nx, ny) = window.dims(resolution);
        let near = resolution * std::f64::consts::SQRT_2;
        let cells = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let p = window.point(resolution, k % nx, k / nx) + C64::new(0.5 * resolution, -0.5 * resolution);
                if curve.distance_to(p) <= near {
                    2
                } else {
                    u8::from(curve.contains(p))
                }
            })
            .collect();
        CurveMask { curve, window, resolution, nx, ny, cells }
    }

    pub fn contains(&self, z: C64) -> bool {
        let i = (z.re - self.window.re_min) / self.resolution;
        let j = (self.window.im_max - z.im) / self.resolution;
        if !(i >= 0.0 && j >= 0.0) || i as usize >= self.nx || j as usize >= self.ny {
            return false;
        }
        match self.cells[j as usize * self.nx + i as usize] {
            0 => false,
            1 => true,
            _ => self.curve.contains(z),
        }
    }
}

/// Filled Julia set of `g(z) = f_c(b z)` as a polynomial-like map on `domain`, the level-1
/// piece: grid points whose orbit never leaves it. Escaping through `domain` rather than the
/// larger level-0 curve matters: other preimage components of the level-0 disk would otherwise
/// contribute spurious copies of the set.
pub fn nest_julia(cycle: &CycleSolution, domain: &ClosedCurve, resolution: f64, max_iter: usize) -> Result<JuliaGrid> {
    let nm = NestMap { map: &cycle.map, beta: cycle.beta };
    let (lo, hi) = domain.bounding_box();
    let half = (hi.re - lo.re).max(hi.im - lo.im) / 2.0 * 1.02;
    let window = Window::square((lo + hi) / 2.0, half);
    let mask = CurveMask::new(domain, resolution.min(half / 200.0));
    let g = |z: C64| nm.value(z);
    let escape = |z: C64| !mask.contains(z);
    filled_julia(&g, &escape, window, resolution, max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub n: usize,
    pub dist_h: f64,
    pub roundness: f64,
    /// `None` when the outer piece could not be traced.
    pub eq1_distance: Option<f64>,
}

/// Per level: Hausdorff distance from the rescaled boundary to the boundary of the filled Julia
/// set, its roundness, and the distance from the critical value to the rescaled outer piece.
pub fn shape_convergence_report(cycle: &CycleSolution, levels: &[NestLevel], julia: &JuliaGrid, round_grid: usize) -> Result<Vec<ShapeRow>> {
    let edge = julia.boundary_cloud()?;
    let cv = NestMap { map: &cycle.map, beta: cycle.beta }.critical_value();
    levels
        .iter()
        .map(|l| {
            let dist_h = hausdorff_distance(Shape::Curve(&l.rescaled_boundary), Shape::Cloud(&edge));
            let roundness = roundness(&l.rescaled_boundary, round_grid).map_err(|e| e.at_level(l.n))?;
            let eq1_distance = l.rescaled_outer.as_ref().map(|c| c.distance_to(cv));
            Ok(ShapeRow { n: l.n, dist_h, roundness, eq1_distance })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Disk;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn square_root_pullback() {
        let sq = |z: C64| Some((z * z, 2.0 * z));
        let circle = ClosedCurve::circle(c(0.0, 0.0), 4.0, 64).unwrap();
        let opts = PullbackOptions { anchor: c(0.0, 0.0), search_radius: 3.0, must_contain: Some(c(0.0, 0.0)), max_laps: 2 };
        let pre = pullback_curve(&sq, &circle, &opts).unwrap();
        assert_eq!(pre.len(), 128);
        for (j, z) in pre.vertices.iter().enumerate() {
            assert!((z.norm() - 2.0).abs() < 1e-10);
            assert!((z * z - circle.vertices[j % 64]).norm() < 1e-8);
        }
    }

    #[test]
    fn translation_pullback() {
        let shift = |z: C64| Some((z + 1.0, c(1.0, 0.0)));
        let curve = ClosedCurve::rectangle(c(0.3, 0.2), 2.0, 1.0, 8).unwrap();
        let opts = PullbackOptions { anchor: c(-0.7, 0.2), search_radius: 2.0, must_contain: None, max_laps: 1 };
        let pre = pullback_curve(&shift, &curve, &opts).unwrap();
        for (a, b) in pre.vertices.iter().zip(&curve.vertices) {
            assert!((a - (b - 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn roundness_examples() {
        let circle = ClosedCurve::circle(c(0.0, 0.0), 1.0, 512).unwrap();
        assert!((roundness(&circle, 65).unwrap() - 0.5).abs() < 1e-3);
        let square = ClosedCurve::rectangle(c(0.0, 0.0), 1.0, 1.0, 32).unwrap();
        assert!((roundness(&square, 65).unwrap() - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-3);
        let thin = ClosedCurve::rectangle(c(0.0, 0.0), 10.0, 1.0, 40).unwrap();
        assert!((roundness(&thin, 65).unwrap() - 0.5 / 101f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn hausdorff_examples() {
        let a = PointCloud::new(vec![c(0.0, 0.0)], 1.0).unwrap();
        let b = PointCloud::new(vec![c(3.0, 4.0)], 1.0).unwrap();
        assert_eq!(hausdorff_distance(Shape::Cloud(&a), Shape::Cloud(&b)), 5.0);
        let c1 = ClosedCurve::circle(c(0.0, 0.0), 1.0, 256).unwrap();
        let c2 = ClosedCurve::circle(c(0.0, 0.0), 2.0, 256).unwrap();
        assert!((hausdorff_distance(Shape::Curve(&c1), Shape::Curve(&c2)) - 1.0).abs() < 1e-3);
        assert_eq!(hausdorff_distance(Shape::Curve(&c1), Shape::Curve(&c1)), 0.0);
    }

    #[test]
    fn basilica_contains_its_cycle() {
        let g = |z: C64| Some(z * z - 1.0);
        let escape = |z: C64| z.norm() > 2.0;
        let grid = filled_julia(&g, &escape, Window::square(c(0.0, 0.0), 2.0), 0.01, 200).unwrap();
        let cloud = grid.cloud().unwrap();
        for p in [c(0.0, 0.0), c(-1.0, 0.0)] {
            assert!(cloud.points.iter().any(|q| (q - p).norm() < 1e-9));
        }
    }

    #[test]
    fn filled_julia_of_square_is_the_disk() {
        let g = |z: C64| Some(z * z);
        let escape = |z: C64| z.norm() > 2.0;
        let res = 0.02;
        let grid = filled_julia(&g, &escape, Window::square(c(0.0, 0.0), 1.5), res, 60).unwrap();
        let edge = grid.boundary_cloud().unwrap();
        let circle = ClosedCurve::circle(c(0.0, 0.0), 1.0, 1024).unwrap();
        assert!(hausdorff_distance(Shape::Cloud(&edge), Shape::Curve(&circle)) < 2.0 * res);
    }

    #[test]
    fn zero_series_satisfies_the_equation() {
        let g = TruncatedSeries::zero(Disk::real(0.0, 1.0).unwrap(), 8, crate::series::Parity::All);
        assert_eq!(functional_equation_residual(&g, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mask_agrees_with_winding() {
        let curve = ClosedCurve::rectangle(c(0.1, -0.2), 2.0, 1.0, 16).unwrap();
        let mask = CurveMask::new(&curve, 0.05);
        for k in 0..2000 {
            let t = k as f64 * 0.618;
            let p = c(1.5 * t.sin(), 1.0 * (1.3 * t).cos());
            assert_eq!(mask.contains(p), curve.contains(p));
        }
    }

    #[test]
    fn simple_and_figure_eight() {
        assert!(ClosedCurve::circle(c(0.0, 0.0), 1.0, 64).unwrap().is_simple());
        let eight = ClosedCurve::new(
            (0..64).map(|k| {
                let t = std::f64::consts::TAU * (k as f64 + 0.5) / 64.0;
                c(t.sin(), (2.0 * t).sin() / 2.0)
            })
            .collect(),
        )
        .unwrap();
        assert!(!eight.is_simple());
    }
}
