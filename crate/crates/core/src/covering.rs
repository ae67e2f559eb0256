//! Covering families of planar regions: the Markov property, maximal subfamilies, covering at
//! small scales, bounded geometry and circular dilatation.

use crate::error::{Error, Result};
use crate::puzzle::{roundness, ClosedCurve, GEOM_TOL};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Roundness at or below this is reported as bad geometry.
pub const BAD_ROUNDNESS: f64 = 0.05;
/// Grid density of the roundness search.
pub const ROUNDNESS_GRID: usize = 65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub boundary: ClosedCurve,
}

impl Region {
    pub fn new(id: impl Into<String>, boundary: ClosedCurve) -> Result<Region> {
        let id = id.into();
        if !(boundary.area() > 0.0) {
            return Err(Error::Malformed(format!("region {id} has zero area")));
        }
        if !boundary.is_simple() {
            return Err(Error::Malformed(format!("region {id} has a self-intersecting boundary")));
        }
        Ok(Region { id, boundary })
    }

    pub fn disk(id: impl Into<String>, center: C64, radius: f64) -> Result<Region> {
        Region::new(id, ClosedCurve::circle(center, radius, 64)?)
    }

    pub fn contains(&self, p: C64) -> bool {
        self.boundary.contains(p)
    }

    pub fn diameter(&self) -> f64 {
        self.boundary.diameter()
    }

    fn bbox(&self) -> (C64, C64) {
        self.boundary.bounding_box()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredRegion {
    pub region: Region,
    #[serde(with = "crate::io::complex_pair")]
    pub center: C64,
}

impl CenteredRegion {
    pub fn new(region: Region, center: C64) -> Result<CenteredRegion> {
        if !region.contains(center) || region.boundary.distance_to(center) <= GEOM_TOL {
            return Err(Error::Malformed(format!("center {center} is not strictly inside region {}", region.id)));
        }
        Ok(CenteredRegion { region, center })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Disjoint,
    /// The first region lies inside the second.
    Inside,
    /// The first region contains the second.
    Contains,
    Overlap,
}

fn boxes_meet(a: (C64, C64), b: (C64, C64)) -> bool {
    a.0.re <= b.1.re + GEOM_TOL && b.0.re <= a.1.re + GEOM_TOL && a.0.im <= b.1.im + GEOM_TOL && b.0.im <= a.1.im + GEOM_TOL
}

fn cross(a: C64, b: C64) -> f64 {
    a.re * b.im - a.im * b.re
}

/// Segments meet, touching included (within tolerance).
fn segments_meet(p1: C64, p2: C64, q1: C64, q2: C64) -> bool {
    let (lo_p, hi_p) = (C64::new(p1.re.min(p2.re), p1.im.min(p2.im)), C64::new(p1.re.max(p2.re), p1.im.max(p2.im)));
    let (lo_q, hi_q) = (C64::new(q1.re.min(q2.re), q1.im.min(q2.im)), C64::new(q1.re.max(q2.re), q1.im.max(q2.im)));
    if !boxes_meet((lo_p, hi_p), (lo_q, hi_q)) {
        return false;
    }
    let d1 = cross(p2 - p1, q1 - p1);
    let d2 = cross(p2 - p1, q2 - p1);
    let d3 = cross(q2 - q1, p1 - q1);
    let d4 = cross(q2 - q1, p2 - q1);
    d1 * d2 <= GEOM_TOL * GEOM_TOL && d3 * d4 <= GEOM_TOL * GEOM_TOL
}

fn boundaries_meet(a: &ClosedCurve, b: &ClosedCurve) -> bool {
    let bb = b.bounding_box();
    a.edges().any(|(p1, p2)| {
        let eb = (C64::new(p1.re.min(p2.re), p1.im.min(p2.im)), C64::new(p1.re.max(p2.re), p1.im.max(p2.im)));
        boxes_meet(eb, bb) && b.edges().any(|(q1, q2)| segments_meet(p1, p2, q1, q2))
    })
}

/// How two regions sit relative to each other; touching boundaries count as overlap.
pub fn relation(a: &Region, b: &Region) -> Relation {
    if !boxes_meet(a.bbox(), b.bbox()) {
        return Relation::Disjoint;
    }
    if boundaries_meet(&a.boundary, &b.boundary) {
        return Relation::Overlap;
    }
    if b.contains(a.boundary.vertices[0]) {
        Relation::Inside
    } else if a.contains(b.boundary.vertices[0]) {
        Relation::Contains
    } else {
        Relation::Disjoint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovVerdict {
    pub markov: bool,
    /// Indices of an overlapping pair, the first found in index order.
    pub violation: Option<(usize, usize)>,
}

/// Every pair is disjoint or nested.
pub fn markov_check(regions: &[Region]) -> Result<MarkovVerdict> {
    for r in regions {
        if !(r.boundary.area() > 0.0) {
            return Err(Error::Malformed(format!("region {} is degenerate", r.id)));
        }
    }
    let n = regions.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let violation = pairs
        .par_iter()
        .filter(|&&(i, j)| relation(&regions[i], &regions[j]) == Relation::Overlap)
        .min()
        .copied();
    Ok(MarkovVerdict { markov: violation.is_none(), violation })
}

/// A Markov family with its nesting forest: `parent[i]` is the smallest region strictly
/// containing region `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovFamily {
    pub regions: Vec<Region>,
    pub parent: Vec<Option<usize>>,
}

impl MarkovFamily {
    pub fn new(regions: Vec<Region>) -> Result<MarkovFamily> {
        let verdict = markov_check(&regions)?;
        if let Some((i, j)) = verdict.violation {
            return Err(Error::Malformed(format!("regions {} and {} overlap", regions[i].id, regions[j].id)));
        }
        let areas: Vec<f64> = regions.iter().map(|r| r.boundary.area()).collect();
        let parent = (0..regions.len())
            .into_par_iter()
            .map(|i| {
                (0..regions.len())
                    .filter(|&j| j != i && relation(&regions[i], &regions[j]) == Relation::Inside)
                    .min_by(|&a, &b| areas[a].total_cmp(&areas[b]))
            })
            .collect();
        Ok(MarkovFamily { regions, parent })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Regions containing `p`, innermost first.
    pub fn chain(&self, p: C64) -> Vec<usize> {
        let mut hits: Vec<usize> = (0..self.len()).filter(|&i| self.regions[i].contains(p)).collect();
        hits.sort_by(|&a, &b| self.regions[a].boundary.area().total_cmp(&self.regions[b].boundary.area()));
        hits
    }
}

/// For each target the largest region containing it; the selection is pairwise disjoint.
pub fn markov_subfamily(f: &MarkovFamily, targets: &[C64]) -> Result<MarkovFamily> {
    let mut chosen: Vec<usize> = Vec::new();
    for &t in targets {
        let outermost = f.chain(t).last().copied().ok_or_else(|| Error::Coverage(format!("{t}")))?;
        if !chosen.contains(&outermost) {
            chosen.push(outermost);
        }
    }
    chosen.sort_unstable();
    Ok(MarkovFamily { regions: chosen.iter().map(|&i| f.regions[i].clone()).collect(), parent: vec![None; chosen.len()] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCoverage {
    /// `covered[i][k]`: point `i` has a region of diameter at most `scales[k]`.
    pub covered: Vec<Vec<bool>>,
    pub all: bool,
}

/// For each point of `x` and scale: a region containing it with diameter at most the scale
/// whose boundary avoids `x`.
pub fn covers_arbitrary_small_scales(family: &[Region], x: &[C64], scales: &[f64]) -> ScaleCoverage {
    let usable: Vec<(f64, &Region)> = family
        .par_iter()
        .filter(|r| x.iter().all(|&p| r.boundary.distance_to(p) > GEOM_TOL))
        .map(|r| (r.diameter(), r))
        .collect();
    let covered: Vec<Vec<bool>> = x
        .par_iter()
        .map(|&p| {
            let smallest = usable.iter().filter(|(_, r)| r.contains(p)).map(|(d, _)| *d).fold(f64::INFINITY, f64::min);
            scales.iter().map(|&e| smallest <= e).collect()
        })
        .collect();
    let all = covered.iter().all(|row| row.iter().all(|&b| b));
    ScaleCoverage { covered, all }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeometryMode {
    Uniform,
    Pointwise,
    AllScales { scales: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GeometryStats {
    /// Roundness per region, its minimum, and the regions at or below [`BAD_ROUNDNESS`].
    Uniform { per_region: Vec<f64>, floor: f64, flagged: Vec<usize> },
    /// `dist(center, boundary) / diam` per region and its minimum.
    Pointwise { per_region: Vec<f64>, floor: f64 },
    /// Per distinct center, the smallest `C` with `eps / C <= diam A <= C eps` for some region
    /// centered there, at every supplied scale.
    AllScales {
        #[serde(with = "crate::io::complex_vec")]
        centers: Vec<C64>,
        constants: Vec<f64>,
    },
}

pub fn uniform_geometry(regions: &[Region]) -> Result<GeometryStats> {
    if regions.is_empty() {
        return Err(Error::Malformed("empty family".into()));
    }
    let per_region = regions.par_iter().map(|r| roundness(&r.boundary, ROUNDNESS_GRID)).collect::<Result<Vec<f64>>>()?;
    let floor = per_region.iter().copied().fold(f64::INFINITY, f64::min);
    let flagged = (0..per_region.len()).filter(|&i| per_region[i] <= BAD_ROUNDNESS).collect();
    Ok(GeometryStats::Uniform { per_region, floor, flagged })
}

pub fn bounded_geometry(family: &[CenteredRegion], mode: &GeometryMode) -> Result<GeometryStats> {
    if family.is_empty() {
        return Err(Error::Malformed("empty family".into()));
    }
    match mode {
        GeometryMode::Uniform => uniform_geometry(&family.iter().map(|c| c.region.clone()).collect::<Vec<_>>()),
        GeometryMode::Pointwise => {
            let per_region: Vec<f64> =
                family.par_iter().map(|c| c.region.boundary.distance_to(c.center) / c.region.diameter()).collect();
            let floor = per_region.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(GeometryStats::Pointwise { per_region, floor })
        }
        GeometryMode::AllScales { scales } => {
            if scales.is_empty() || scales.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::Malformed("scales must be positive".into()));
            }
            let mut centers: Vec<C64> = Vec::new();
            for c in family {
                if !centers.iter().any(|&z| (z - c.center).norm() <= GEOM_TOL) {
                    centers.push(c.center);
                }
            }
            let diams: Vec<f64> = family.par_iter().map(|c| c.region.diameter()).collect();
            let constants = centers
                .iter()
                .map(|&x| {
                    let mine: Vec<f64> = (0..family.len()).filter(|&i| (family[i].center - x).norm() <= GEOM_TOL).map(|i| diams[i]).collect();
                    scales
                        .iter()
                        .map(|&e| mine.iter().map(|&d| (d / e).max(e / d)).fold(f64::INFINITY, f64::min))
                        .fold(1.0, f64::max)
                })
                .collect();
            Ok(GeometryStats::AllScales { centers, constants })
        }
    }
}

/// `max |h - h(x0)| / min |h - h(x0)|` over `samples` equispaced points of `|x - x0| = r0`.
pub fn circular_dilatation(h: impl Fn(C64) -> C64, x0: C64, r0: f64, samples: usize) -> Result<f64> {
    if !(r0 > 0.0) || samples < 3 {
        return Err(Error::Malformed("need r0 > 0 and at least 3 samples".into()));
    }
    let h0 = h(x0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..samples {
        let x = x0 + C64::from_polar(r0, std::f64::consts::TAU * k as f64 / samples as f64);
        let m = (h(x) - h0).norm();
        if !(m > 0.0) {
            return Err(Error::DegenerateMap(format!("h({x}) = h({x0})")));
        }
        lo = lo.min(m);
        hi = hi.max(m);
    }
    Ok(hi / lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn concentric_disks_are_markov() {
        let regions: Vec<Region> = [1.0, 2.0, 4.0].iter().map(|&r| Region::disk(format!("r{r}"), c(0.0, 0.0), r).unwrap()).collect();
        assert!(markov_check(&regions).unwrap().markov);
        let f = MarkovFamily::new(regions).unwrap();
        assert_eq!(f.parent, vec![Some(1), Some(2), None]);
        let sub = markov_subfamily(&f, &[c(0.0, 0.0)]).unwrap();
        assert_eq!(sub.regions.len(), 1);
        assert_eq!(sub.regions[0].id, "r4");
    }

    #[test]
    fn overlapping_disks_are_reported() {
        let regions = vec![Region::disk("a", c(0.0, 0.0), 1.0).unwrap(), Region::disk("b", c(1.0, 0.0), 1.0).unwrap()];
        let v = markov_check(&regions).unwrap();
        assert!(!v.markov);
        assert_eq!(v.violation, Some((0, 1)));
    }

    #[test]
    fn disjoint_targets_pick_both() {
        let regions = vec![Region::disk("a", c(0.0, 0.0), 1.0).unwrap(), Region::disk("b", c(3.0, 0.0), 1.0).unwrap()];
        let f = MarkovFamily::new(regions).unwrap();
        let sub = markov_subfamily(&f, &[c(0.1, 0.0), c(3.0, 0.2)]).unwrap();
        assert_eq!(sub.regions.len(), 2);
        assert!(matches!(markov_subfamily(&f, &[c(10.0, 0.0)]), Err(Error::Coverage(_))));
    }

    #[test]
    fn dyadic_squares_cover_small_scales() {
        let x = [c(0.3, 0.3), c(0.71, 0.2)];
        let mut family = Vec::new();
        for level in 0..5 {
            let s = 0.5f64.powi(level);
            for &p in &x {
                let corner = c((p.re / s).floor() * s, (p.im / s).floor() * s);
                let sq = ClosedCurve::rectangle(corner + c(s / 2.0, s / 2.0), s, s, 4).unwrap();
                family.push(Region::new(format!("{level}"), sq).unwrap());
            }
        }
        let scales: Vec<f64> = (0..5).map(|l| 0.5f64.powi(l) * 2f64.sqrt() * 1.001).collect();
        let rep = covers_arbitrary_small_scales(&family, &x, &scales);
        assert!(rep.all);
        let short: Vec<Region> = family.into_iter().filter(|r| r.id != "4").collect();
        let rep = covers_arbitrary_small_scales(&short, &x, &scales);
        assert!(!rep.all);
        assert!(!rep.covered[0][4]);
        assert!(rep.covered[0][3]);
    }

    #[test]
    fn geometry_statistics() {
        let disks: Vec<CenteredRegion> = [(c(0.0, 0.0), 1.0), (c(5.0, 1.0), 0.3)]
            .iter()
            .map(|&(z, r)| CenteredRegion::new(Region::disk("d", z, r).unwrap(), z).unwrap())
            .collect();
        let GeometryStats::Pointwise { floor, .. } = bounded_geometry(&disks, &GeometryMode::Pointwise).unwrap() else { panic!() };
        assert!((floor - 0.5).abs() < 1e-3);
        let rect = Region::new("thin", ClosedCurve::rectangle(c(0.0, 0.0), 100.0, 1.0, 100).unwrap()).unwrap();
        let GeometryStats::Uniform { floor, flagged, .. } = uniform_geometry(&[disks[0].region.clone(), rect]).unwrap() else { panic!() };
        assert!(floor <= 0.005);
        assert_eq!(flagged, vec![1]);
    }

    #[test]
    fn dilatation_examples() {
        assert!((circular_dilatation(|z| 2.0 * z + 3.0, c(0.3, -0.1), 0.7, 64).unwrap() - 1.0).abs() < 1e-10);
        assert!((circular_dilatation(|z| c(2.0 * z.re, z.im), c(1.0, 2.0), 0.5, 64).unwrap() - 2.0).abs() < 1e-6);
        assert!((circular_dilatation(|z| z * z.norm(), c(0.0, 0.0), 1.3, 64).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(circular_dilatation(|_| c(1.0, 0.0), c(0.0, 0.0), 1.0, 8), Err(Error::DegenerateMap(_))));
    }
}
