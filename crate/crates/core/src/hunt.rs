//! Superattracting parameters with Fibonacci combinatorics in `x^d + c`, the gap ratios that
//! converge to the universality constant, and the Newton seed built from rescaled return maps.

use crate::dynamics::{closest_returns, fib, renormalize_levels, PowerFamilyMap, RealRenormData, ReturnSignature, TwoBranch};
use crate::error::{Error, Result};
use crate::operator::{find_cycle, CycleSolution, Geometry, NewtonConfig, SliceMap};
use crate::series::{default_samples, fit_from_samples, Disk, Parity};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Grid points used to look for sign changes inside a window.
const SCAN_POINTS: usize = 400;

/// Largest admissible `max |b (x_1 + r_1 w) - c_0| / r_0` in the geometry search.
const MAX_USAGE: f64 = 0.985;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuntRecord {
    pub n: usize,
    pub period: u64,
    pub c: f64,
    pub bracket: (f64, f64),
    pub signature: ReturnSignature,
    pub iterations: usize,
    /// `|f_c^{S_n}(0)|` at the returned parameter.
    pub residual: f64,
}

/// `f_c^{S_n}(0)` and its `c`-derivative.
pub fn critical_return(d: u32, c: f64, period: u64) -> (f64, f64) {
    let (mut x, mut dx) = (0.0f64, 0.0f64);
    for _ in 0..period {
        dx = d as f64 * x.powi(d as i32 - 1) * dx + 1.0;
        x = x.powi(d as i32) + c;
    }
    (x, dx)
}

fn fibonacci_prefix(n: usize) -> Result<Vec<usize>> {
    (0..=n).map(|k| fib(k).map(|s| s as usize)).collect()
}

fn check_signature(d: u32, c: f64, n: usize, period: u64) -> Result<ReturnSignature> {
    let map = PowerFamilyMap::new(d, c)?;
    let sig = closest_returns(&map, period as usize)?;
    let want = fibonacci_prefix(n)?;
    if sig.times != want {
        return Err(Error::Combinatorics(format!("c = {c}: closest returns {:?}, expected {want:?}", sig.times)));
    }
    Ok(sig)
}

/// Bisect a sign change of `f_c^{S_n}(0)` down to adjacent doubles.
fn bisect_root(d: u32, period: u64, mut a: f64, mut b: f64) -> Result<(f64, usize)> {
    let g = |c: f64| critical_return(d, c, period).0;
    let mut ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Ok((a, 0));
    }
    if gb == 0.0 {
        return Ok((b, 0));
    }
    if ga.signum() == gb.signum() {
        return Err(Error::Bracket(format!("no sign change of f^{period}(0) on [{a}, {b}]")));
    }
    let mut iters = 0;
    loop {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        iters += 1;
        let gm = g(m);
        if gm == 0.0 {
            return Ok((m, iters));
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    let (ra, rb) = (g(a).abs(), g(b).abs());
    Ok((if ra <= rb { a } else { b }, iters))
}

/// The superattracting parameter of period `S_n` in `bracket`, with its signature verified.
pub fn superattractor_parameter(d: u32, n: usize, bracket: (f64, f64)) -> Result<HuntRecord> {
    PowerFamilyMap::new(d, 0.0)?;
    let period = fib(n)?;
    let (lo, hi) = (bracket.0.min(bracket.1), bracket.0.max(bracket.1));
    let (c, iterations) = bisect_root(d, period, lo, hi)?;
    let signature = check_signature(d, c, n, period)?;
    let residual = critical_return(d, c, period).0.abs();
    Ok(HuntRecord { n, period, c, bracket: (lo, hi), signature, iterations, residual })
}

/// Scan `[from, to]` starting at `from` and return the first root with the Fibonacci signature.
fn first_valid_root(d: u32, n: usize, from: f64, to: f64) -> Result<Option<HuntRecord>> {
    let period = fib(n)?;
    let mut prev = from;
    let mut gprev = critical_return(d, prev, period).0;
    for i in 1..=SCAN_POINTS {
        let x = from + (to - from) * i as f64 / SCAN_POINTS as f64;
        if x == prev {
            continue;
        }
        let gx = critical_return(d, x, period).0;
        if gx == 0.0 || gprev.signum() != gx.signum() {
            match superattractor_parameter(d, n, (prev, x)) {
                Ok(r) => return Ok(Some(r)),
                Err(Error::Combinatorics(_) | Error::Escape { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        prev = x;
        gprev = gx;
    }
    Ok(None)
}

/// Records `n = 1 ..= n_max`, or the records reached before the search failed.
///
/// Each window starts at `c_n` and extends `1.5 |c_n - c_{n-1}|` away from `c_{n-1}`; it is
/// scanned outward from `c_n`.
pub fn fibonacci_chain_partial(d: u32, n_max: usize) -> (Vec<HuntRecord>, Option<Error>) {
    let mut out = Vec::new();
    let err = (|| -> Result<()> {
        if n_max < 3 {
            return Err(Error::Precondition(format!("n_max must be at least 3, got {n_max}")));
        }
        PowerFamilyMap::new(d, 0.0)?;
        out.push(superattractor_parameter(d, 1, (-1.5, -0.5))?);
        let second = first_valid_root(d, 2, -1.0 - 1e-9, -2.0)?
            .ok_or_else(|| Error::Bracket("no period-3 superattractor with Fibonacci returns in [-2, -1)".into()))?;
        out.push(second);
        for n in 3..=n_max {
            let (cp, cq) = (out[n - 2].c, out[n - 3].c);
            let gap = cp - cq;
            let dir = gap.signum();
            let start = cp + dir * 1e-3 * gap.abs();
            let end = cp + dir * 1.5 * gap.abs();
            if (end - cp).abs() < 1e-15 || start == cp {
                return Err(Error::PrecisionLimit { max_n: n - 1 });
            }
            match first_valid_root(d, n, cp + dir * f64::EPSILON * cp.abs(), end)? {
                Some(r) => out.push(r),
                None if gap.abs() < 1e-12 => return Err(Error::PrecisionLimit { max_n: n - 1 }),
                None => {
                    return Err(Error::Bracket(format!("no Fibonacci superattractor of period S_{n} in the window from {cp} to {end}")))
                }
            }
        }
        Ok(())
    })()
    .err();
    (out, err)
}

pub fn fibonacci_bracket_chain(d: u32, n_max: usize) -> Result<Vec<HuntRecord>> {
    match fibonacci_chain_partial(d, n_max) {
        (records, None) => Ok(records),
        (_, Some(e)) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub ratios: Vec<f64>,
    pub gamma_estimate: f64,
    pub extrapolated_gamma: f64,
    pub c_infinity_estimate: f64,
}

/// `x_k - (x_{k+1} - x_k)^2 / (x_{k+2} - 2 x_{k+1} + x_k)` on the last three terms.
pub fn aitken(xs: &[f64]) -> Option<f64> {
    let [a, b, c] = xs.get(xs.len().checked_sub(3)?..)? else { return None };
    let den = c - 2.0 * b + a;
    if den == 0.0 || !den.is_finite() {
        return Some(*c);
    }
    Some(c - (c - b) * (c - b) / den)
}

pub fn ratios_of(params: &[f64]) -> Result<Vec<f64>> {
    params
        .windows(3)
        .map(|w| {
            let den = w[1] - w[2];
            if den == 0.0 {
                Err(Error::Degenerate(format!("repeated parameter {}", w[1])))
            } else {
                Ok((w[0] - w[1]) / den)
            }
        })
        .collect()
}

pub fn ratio_table(records: &[HuntRecord]) -> Result<RatioReport> {
    if records.len() < 5 {
        return Err(Error::Precondition(format!("need at least 5 records, got {}", records.len())));
    }
    let params: Vec<f64> = records.iter().map(|r| r.c).collect();
    ratio_report_from_params(&params)
}

pub fn ratio_report_from_params(params: &[f64]) -> Result<RatioReport> {
    let ratios = ratios_of(params)?;
    let gamma_estimate = *ratios.last().ok_or_else(|| Error::Precondition("too few parameters".into()))?;
    let extrapolated_gamma = aitken(&ratios).unwrap_or(gamma_estimate);
    let c_infinity_estimate = aitken(params).unwrap_or(params[params.len() - 1]);
    Ok(RatioReport { ratios, gamma_estimate, extrapolated_gamma, c_infinity_estimate })
}

/// `n` levels of real renormalization of `x^d + c`: the level map, `tau_n`, and the next `beta`.
pub struct LevelMap {
    pub map: Arc<dyn TwoBranch>,
    pub tau: f64,
    pub betas: Vec<f64>,
    pub next_beta: f64,
}

pub fn level_map(d: u32, c: f64, n: usize) -> Result<LevelMap> {
    let f = PowerFamilyMap::new(d, c)?;
    let (map, betas) = renormalize_levels(&f, n).map_err(|e| Error::BootstrapDomain(format!("real renormalization failed: {e}")))?;
    let next_beta = RealRenormData::from_orbit(map.as_ref())
        .map_err(|e| Error::BootstrapDomain(format!("level {n} map is not renormalizable: {e}")))?
        .beta;
    Ok(LevelMap { map, tau: betas.iter().product(), betas, next_beta })
}

fn sample_branch(m: usize, disk: Disk, eval: impl Fn(C64) -> Option<(C64, C64)>) -> Result<Vec<C64>> {
    disk.boundary(m)
        .into_iter()
        .map(|z| match eval(z) {
            Some((v, _)) if v.norm() < 1e6 => Ok(v),
            _ => Err(Error::BootstrapDomain(format!(
                "orbit of {z} is not tame at this depth; try a larger n or smaller disks"
            ))),
        })
        .collect()
}

/// A candidate domain geometry and how well the seed fits on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryCandidate {
    pub geometry: Geometry,
    /// `max |b (x_1 + r_1 w) - c_0| / r_0`: how deep `b U_1` sits inside `U_0`.
    pub usage: f64,
    pub central_tail: f64,
    pub disjoint: bool,
}

/// Search disks `U_0 = D(c_0, r_0)`, `U_1 = D(x_1, r_1)` such that `f_c(b U_0)` lies in `U_1`
/// and `b U_1` lies in `U_0`, for the central branch of `seed` and the rescaling `b > 0`.
pub fn auto_geometry(seed: &dyn TwoBranch, b: f64, order: usize) -> Result<GeometryCandidate> {
    let probe = 256;
    let w: Vec<C64> = (0..probe).map(|k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / probe as f64)).collect();
    let mut best: Option<(bool, f64, GeometryCandidate)> = None;
    for i in 0..=12 {
        let c0 = 0.05 * i as f64;
        for j in 0..=32 {
            let r0 = 0.8 + 0.025 * j as f64;
            if c0 - r0 > -0.1 || c0 + r0 < 1.1 {
                continue;
            }
            let img: Option<Vec<C64>> = w.iter().map(|&e| seed.central((c0 + r0 * e) * b).map(|(v, _)| v)).collect();
            let Some(img) = img else { continue };
            let lo = img.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            let hi = img.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let mut pick: Option<(f64, f64, f64)> = None;
            for k in 0..=40 {
                let x1 = lo + (hi - lo) * k as f64 / 40.0;
                let r1 = 1.05 * img.iter().map(|z| (z - x1).norm()).fold(0.0, f64::max);
                let usage = w.iter().map(|e| ((x1 + r1 * e) * b - c0).norm()).fold(0.0, f64::max) / r0;
                if pick.is_none_or(|p| usage < p.0) {
                    pick = Some((usage, x1, r1));
                }
            }
            let Some((usage, x1, r1)) = pick else { continue };
            if usage > MAX_USAGE || x1 - r1 <= 0.0 {
                continue;
            }
            let Ok(geometry) = Geometry::new(c0, r0, x1, r1) else { continue };
            let m = default_samples(order);
            let Ok(vals) = sample_branch(m, geometry.u0, |z| seed.central(z)) else { continue };
            let Ok(fit) = fit_from_samples(&vals, geometry.u0, order, Parity::All, None) else { continue };
            let cand = GeometryCandidate { geometry, usage, central_tail: fit.tail_ratio(), disjoint: geometry.disjoint() };
            let key = (cand.disjoint, cand.central_tail);
            let better = match &best {
                None => true,
                Some((dj, tail, _)) => (key.0 && !dj) || (key.0 == *dj && key.1 < *tail),
            };
            if better {
                best = Some((key.0, key.1, cand));
            }
        }
    }
    best.map(|b| b.2).ok_or_else(|| Error::BootstrapDomain("no admissible disk geometry found".into()))
}

/// Newton seed: the level-`n` rescaled return map, fitted on `geometry` and normalized.
///
/// Returns the seed and the `beta` of `R o phi` at it (positive).
pub fn bootstrap_slice_map(d: u32, level: &LevelMap, geometry: Geometry, order: usize) -> Result<(SliceMap, f64)> {
    geometry.validate()?;
    let even = geometry.u0.center.re == 0.0;
    let parity = if even { Parity::Even } else { Parity::All };
    let vc = sample_branch(default_samples(order), geometry.u0, |z| level.map.central(z))?;
    let vo = sample_branch(default_samples(order), geometry.u1, |z| level.map.outer(z))?;
    let central = fit_from_samples(&vc, geometry.u0, order, parity, None)?;
    let outer = fit_from_samples(&vo, geometry.u1, order, Parity::All, None)?;
    let raw = SliceMap { degree: d, central, outer, even_mode: even };
    let seed = raw.project()?;
    let seed = if level.next_beta < 0.0 { seed } else { seed.phi() };
    Ok((seed, level.next_beta.abs()))
}

/// Longest chain the hunt reaches in double precision before gaps drown in rounding.
pub fn default_hunt_depth(d: u32) -> usize {
    if d <= 2 { 10 } else { 12 }
}

/// Hunt the chain and extrapolate the accumulation parameter.
pub fn hunted_parameter(d: u32, n_max: usize) -> Result<(Vec<HuntRecord>, RatioReport)> {
    let records = fibonacci_bracket_chain(d, n_max)?;
    let report = ratio_table(&records)?;
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclePlan {
    /// Renormalization depths tried in order for the Newton seed.
    pub depths: Vec<usize>,
    pub order: usize,
    pub geometry: Option<Geometry>,
    pub newton: NewtonConfig,
}

impl Default for CyclePlan {
    fn default() -> Self {
        CyclePlan { depths: vec![6, 7, 8, 5], order: 60, geometry: None, newton: NewtonConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct CycleRun {
    pub solution: CycleSolution,
    pub depth: usize,
    pub geometry: Geometry,
}

/// Seed from the level maps of `x^d + c` and solve for the cycle, trying each planned depth.
pub fn solve_cycle(d: u32, c: f64, plan: &CyclePlan) -> Result<CycleRun> {
    let mut failures = Vec::new();
    for &depth in &plan.depths {
        let attempt = || -> Result<CycleRun> {
            let level = level_map(d, c, depth)?;
            let geometry = match plan.geometry {
                Some(g) => g,
                None => auto_geometry(level.map.as_ref(), level.next_beta.abs(), plan.order)?.geometry,
            };
            let (seed, beta) = bootstrap_slice_map(d, &level, geometry, plan.order)?;
            let solution = find_cycle(&seed, beta, &plan.newton)?;
            Ok(CycleRun { solution, depth, geometry })
        };
        match attempt() {
            Ok(run) => return Ok(run),
            Err(e) => failures.push((depth, e)),
        }
    }
    match failures.pop() {
        Some((_, e @ Error::NonConvergence { .. })) => Err(e),
        Some((depth, e)) => {
            let earlier: Vec<String> = failures.iter().map(|(n, e)| format!("depth {n}: {e}")).collect();
            Err(Error::BootstrapDomain(format!("depth {depth}: {e}; {}", earlier.join("; "))))
        }
        None => Err(Error::Precondition("no bootstrap depths given".into())),
    }
}
