//! Unimodal maps `x^d + c`, two-branch maps, closest returns and real Fibonacci renormalization.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `S_0 = 1, S_1 = 2, S_n = S_{n-1} + S_{n-2}`.
pub fn fib(n: usize) -> Result<u64> {
    let (mut a, mut b) = (1u64, 2u64);
    if n == 0 {
        return Ok(1);
    }
    for _ in 1..n {
        let next = a.checked_add(b).ok_or_else(|| Error::Range(format!("S_{n} overflows u64")))?;
        a = b;
        b = next;
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFamilyMap {
    pub degree: u32,
    pub c: f64,
}

impl PowerFamilyMap {
    pub fn new(degree: u32, c: f64) -> Result<PowerFamilyMap> {
        if degree < 2 || degree % 2 != 0 {
            return Err(Error::Usage(format!("degree must be even and at least 2, got {degree}")));
        }
        if !c.is_finite() {
            return Err(Error::Malformed("parameter c must be finite".into()));
        }
        Ok(PowerFamilyMap { degree, c })
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        x.powi(self.degree as i32) + self.c
    }

    pub fn eval(&self, z: C64) -> C64 {
        z.powu(self.degree) + self.c
    }

    /// `max(2, (|c| + 1)^{1/(d-1)} + 1)`: beyond it `|x|^d - |c| > |x|`.
    pub fn escape_radius(&self) -> f64 {
        let d = self.degree as f64;
        ((self.c.abs() + 1.0).powf(1.0 / (d - 1.0)) + 1.0).max(2.0)
    }

    /// Real orbit of 0: `[f(0), f^2(0), ..., f^t(0)]`.
    pub fn critical_orbit(&self, t: usize) -> Vec<f64> {
        let mut x = 0.0;
        (0..t)
            .map(|_| {
                x = self.eval_real(x);
                x
            })
            .collect()
    }

    pub fn escape_time(&self, z: C64, max_iter: usize) -> Option<usize> {
        escape_time(|w| self.eval(w), z, max_iter, self.escape_radius())
    }
}

/// Times at which the critical orbit comes strictly closer to 0 than ever before.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnSignature {
    pub times: Vec<usize>,
}

/// Ties within this distance do not count as a closer return.
pub const RETURN_TIE_TOLERANCE: f64 = 1e-12;

pub fn closest_returns(map: &PowerFamilyMap, t_max: usize) -> Result<ReturnSignature> {
    let radius = map.escape_radius();
    let mut x = 0.0f64;
    let mut best = f64::INFINITY;
    let mut times = Vec::new();
    for t in 1..=t_max {
        x = map.eval_real(x);
        if !(x.abs() <= radius) {
            return Err(Error::Escape { escape_time: t, partial: times });
        }
        if x.abs() < best - RETURN_TIE_TOLERANCE || t == 1 {
            times.push(t);
            best = x.abs();
        }
    }
    debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
    Ok(ReturnSignature { times })
}

/// Smallest `n <= max_iter` with `|f^n(z)| > radius`.
pub fn escape_time(f: impl Fn(C64) -> C64, z: C64, max_iter: usize, radius: f64) -> Option<usize> {
    let mut w = z;
    for n in 1..=max_iter {
        w = f(w);
        if !(w.norm() <= radius) {
            return Some(n);
        }
    }
    None
}

/// A map with a central branch (containing the critical point 0) and an outer branch.
///
/// Both return value and derivative, or `None` outside the branch's domain.
pub trait TwoBranch: Send + Sync {
    fn central(&self, z: C64) -> Option<(C64, C64)>;
    fn outer(&self, z: C64) -> Option<(C64, C64)>;

    /// `f_o(f_c(z))`, the first return on the central piece, with its derivative.
    fn second(&self, z: C64) -> Option<(C64, C64)> {
        let (y, dy) = self.central(z)?;
        let (v, dv) = self.outer(y)?;
        Some((v, dv * dy))
    }
}

impl TwoBranch for PowerFamilyMap {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        let d = self.degree;
        Some((self.eval(z), z.powu(d - 1) * d as f64))
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        self.central(z)
    }
}

/// Use a single holomorphic map as both branches.
pub struct SingleBranch<F>(pub F);

impl<F: Fn(C64) -> (C64, C64) + Send + Sync> TwoBranch for SingleBranch<F> {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        Some((self.0)(z))
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        Some((self.0)(z))
    }
}

impl<T: TwoBranch + ?Sized> TwoBranch for Arc<T> {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        (**self).central(z)
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        (**self).outer(z)
    }
}

/// `(1/b) f_o(f_c(b z))` on the central piece, `(1/b) f_c(b z)` on the outer one.
#[derive(Clone)]
pub struct Renormalized {
    pub inner: Arc<dyn TwoBranch>,
    pub beta: f64,
}

impl TwoBranch for Renormalized {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        let (v, dv) = self.inner.second(z * self.beta)?;
        Some((v / self.beta, dv))
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        let (v, dv) = self.inner.central(z * self.beta)?;
        Some((v / self.beta, dv))
    }
}

fn real2(map: &dyn TwoBranch, x: f64) -> Option<(f64, f64)> {
    map.second(C64::new(x, 0.0)).map(|(v, d)| (v.re, d.re))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPoint {
    pub beta: f64,
    /// `D(f^2)(beta)`; negative for a valid point.
    pub df2: f64,
}

/// Residual accepted for `|f^2(beta) - beta|`, relative to `max(1, |beta|)`.
pub const BETA_TOL: f64 = 1e-11;

/// Looser residual for deep real level maps of `x^d + c`, whose evaluation loses about
/// `eps / tau_n^d` relative precision to the addition of `c`.
pub const LEVEL_BETA_TOL: f64 = 1e-6;

/// Newton polish of a fixed point of `f^2` starting at `seed`.
pub fn beta_newton(map: &dyn TwoBranch, seed: f64) -> Result<BetaPoint> {
    beta_newton_tol(map, seed, BETA_TOL)
}

pub fn beta_newton_tol(map: &dyn TwoBranch, seed: f64, tol: f64) -> Result<BetaPoint> {
    let mut x = seed;
    for _ in 0..60 {
        let (v, d) = real2(map, x).ok_or_else(|| Error::NoValidBeta(format!("f^2 undefined at {x}")))?;
        let g = v - x;
        if d == 1.0 {
            return Err(Error::NeutralMultiplier(0.0));
        }
        let step = g / (d - 1.0);
        x -= step;
        if !x.is_finite() {
            return Err(Error::NoValidBeta("Newton diverged".into()));
        }
        if step.abs() < 1e-15 * x.abs().max(1e-300) {
            break;
        }
    }
    finish_beta(map, x, tol)
}

fn finish_beta(map: &dyn TwoBranch, x: f64, tol: f64) -> Result<BetaPoint> {
    let (v, d) = real2(map, x).ok_or_else(|| Error::NoValidBeta(format!("f^2 undefined at {x}")))?;
    if !((v - x).abs() < tol * x.abs().max(1.0)) {
        return Err(Error::NoValidBeta(format!("residual |f^2(b) - b| = {:.3e} at b = {x}", (v - x).abs())));
    }
    if !(d < 0.0) {
        return Err(Error::NoValidBeta(format!("Df^2(b) = {d} is not negative at b = {x}")));
    }
    Ok(BetaPoint { beta: x, df2: d })
}

/// Fixed point of `f^2` in `[lo, hi]` closest to 0 with negative multiplier.
///
/// Sign changes of `f^2(x) - x` on a grid are bisected, then polished by Newton.
pub fn beta_fixed_point(map: &dyn TwoBranch, bracket: (f64, f64)) -> Result<BetaPoint> {
    beta_fixed_point_tol(map, bracket, BETA_TOL)
}

pub fn beta_fixed_point_tol(map: &dyn TwoBranch, bracket: (f64, f64), tol: f64) -> Result<BetaPoint> {
    let (lo, hi) = bracket;
    if !(lo < hi) {
        return Err(Error::Precondition(format!("empty bracket [{lo}, {hi}]")));
    }
    const GRID: usize = 4000;
    let g = |x: f64| real2(map, x).map(|(v, _)| v - x);
    let mut candidates = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=GRID {
        let x = lo + (hi - lo) * i as f64 / GRID as f64;
        let Some(gx) = g(x) else {
            prev = None;
            continue;
        };
        if gx == 0.0 {
            candidates.push(x);
        } else if let Some((xp, gp)) = prev {
            if gp != 0.0 && gp.signum() != gx.signum() {
                candidates.push(bisect(&g, xp, x, gp));
            }
        }
        prev = Some((x, gx));
    }
    candidates.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    for x in candidates {
        let polished = beta_newton_tol(map, x, tol).ok().filter(|p| (p.beta - x).abs() < 1e-6 * (hi - lo));
        let point = match polished {
            Some(p) => Ok(p),
            None => finish_beta(map, x, tol),
        };
        if let Ok(p) = point {
            return Ok(p);
        }
    }
    Err(Error::NoValidBeta(format!("no fixed point of f^2 with negative multiplier in [{lo}, {hi}]")))
}

fn bisect(g: &impl Fn(f64) -> Option<f64>, mut a: f64, mut b: f64, mut ga: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        match g(m) {
            Some(gm) if gm == 0.0 => return m,
            Some(gm) if gm.signum() == ga.signum() => {
                a = m;
                ga = gm;
            }
            _ => b = m,
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo: lo.min(hi), hi: lo.max(hi) }
    }
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
    pub fn interior_contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
    pub fn disjoint(&self, o: &Interval) -> bool {
        self.hi < o.lo || o.hi < self.lo
    }
    pub fn expand(&self, frac: f64) -> Interval {
        let pad = frac * (self.hi - self.lo);
        Interval { lo: self.lo - pad, hi: self.hi + pad }
    }
    pub fn scale(&self, s: f64) -> Interval {
        Interval::new(self.lo * s, self.hi * s)
    }
    pub fn hull(&self, o: &Interval) -> Interval {
        Interval { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Real intervals of one level of the real Fibonacci renormalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRenormData {
    pub i0_1: Interval,
    pub i1_1: Interval,
    pub i0_0: Interval,
    pub beta: f64,
    pub i0_2: Interval,
    pub i1_2: Interval,
}

fn real1(f: impl Fn(C64) -> Option<(C64, C64)>, x: f64) -> Option<f64> {
    f(C64::new(x, 0.0)).map(|(v, _)| v.re)
}

/// Walk from `start` in direction `dir` while `pred` holds; return the last point where it held.
fn march(pred: &impl Fn(f64) -> bool, start: f64, dir: f64, limit: f64) -> f64 {
    let steps = 2000;
    let h = limit / steps as f64;
    let mut inside = start;
    for i in 1..=steps {
        let x = start + dir * h * i as f64;
        if !pred(x) {
            let (mut a, mut b) = (inside, x);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if pred(m) {
                    a = m
                } else {
                    b = m
                }
            }
            return a;
        }
        inside = x;
    }
    inside
}

impl RealRenormData {
    /// Build the intervals from the orbit of the critical point and the point `beta`.
    pub fn from_orbit(map: &dyn TwoBranch) -> Result<RealRenormData> {
        let fc = |x: f64| real1(|z| map.central(z), x);
        let fo = |x: f64| real1(|z| map.outer(z), x);
        let undefined = || Error::Malformed("critical orbit leaves the branch domains".into());
        let a1 = fc(0.0).ok_or_else(undefined)?;
        let a2 = fo(a1).ok_or_else(undefined)?;
        let a3 = fc(a2).ok_or_else(undefined)?;
        let span = a1.abs().max(a2.abs()).max(a3.abs());
        if !(span > 0.0) {
            return Err(Error::Malformed("critical point is fixed".into()));
        }
        let b = beta_fixed_point_tol(map, (-span, span), LEVEL_BETA_TOL)?;
        let q = 1.05 * a2.abs().max(a3.abs()).max(b.beta.abs());
        let i0_1 = Interval::new(-q, q);
        let fb = fc(b.beta).ok_or_else(undefined)?;
        let i1_1 = Interval::new(a1, fb).expand(0.05);
        if i1_1.contains(0.0) {
            return Err(Error::Malformed(format!("outer interval [{}, {}] contains the critical point", i1_1.lo, i1_1.hi)));
        }
        let i0_0 = i0_1.hull(&i1_1).expand(0.05);
        let central_ok = |x: f64| {
            i0_1.contains(x)
                && fc(x).is_some_and(|y| i1_1.contains(y) && fo(y).is_some_and(|v| i0_1.contains(v)))
        };
        let r = march(&central_ok, 0.0, 1.0, q);
        let l = march(&central_ok, 0.0, -1.0, q);
        let i0_2 = Interval::new(l, r);
        // the return-time-one piece around f^2(0), kept off the return-time-two piece
        let outer_ok = |x: f64| {
            i0_1.contains(x) && !i0_2.contains(x) && fc(x).is_some_and(|y| i0_1.contains(y))
        };
        let i1_2 = if outer_ok(a2) {
            Interval::new(march(&outer_ok, a2, -1.0, 2.0 * q), march(&outer_ok, a2, 1.0, 2.0 * q))
        } else {
            Interval::new(a2, a2)
        };
        Ok(RealRenormData { i0_1, i1_1, i0_0, beta: b.beta, i0_2, i1_2 })
    }

    fn validate(&self) -> Result<()> {
        if !self.i0_1.interior_contains(0.0) {
            return Err(Error::Malformed("0 is not interior to the central interval".into()));
        }
        if self.i1_1.contains(0.0) {
            return Err(Error::Malformed("0 lies in the outer interval".into()));
        }
        if !self.i0_2.disjoint(&self.i1_2) {
            return Err(Error::Malformed("first-return components overlap".into()));
        }
        Ok(())
    }
}

/// The four conditions: `f(0)` in the outer interval, `f^2(0)` and `f^3(0)` in the central one,
/// and a fixed point of `f^2` with negative multiplier on the central return domain.
pub fn is_fibonacci_renormalizable(map: &dyn TwoBranch, data: &RealRenormData) -> Result<bool> {
    data.validate()?;
    let Some(a1) = real1(|z| map.central(z), 0.0) else { return Ok(false) };
    if !data.i1_1.contains(a1) {
        return Ok(false);
    }
    let Some(a2) = real1(|z| map.outer(z), a1) else { return Ok(false) };
    if !data.i0_1.contains(a2) {
        return Ok(false);
    }
    let Some(a3) = real1(|z| map.central(z), a2) else { return Ok(false) };
    if !data.i0_1.contains(a3) {
        return Ok(false);
    }
    let seed = if data.beta.is_finite() && data.i0_2.contains(data.beta) {
        beta_newton_tol(map, data.beta, LEVEL_BETA_TOL).ok()
    } else {
        None
    };
    let found = match seed {
        Some(b) => Some(b),
        None => beta_fixed_point_tol(map, (data.i0_2.lo, data.i0_2.hi), LEVEL_BETA_TOL).ok(),
    };
    Ok(found.is_some_and(|b| data.i0_2.contains(b.beta) && b.df2 < 0.0))
}

pub struct RealRenorm {
    pub map: Renormalized,
    pub beta: f64,
    /// Intervals of the renormalized map, when it is itself renormalizable.
    pub data: Option<RealRenormData>,
}

pub fn real_renormalize(map: Arc<dyn TwoBranch>, data: &RealRenormData) -> Result<RealRenorm> {
    if !is_fibonacci_renormalizable(map.as_ref(), data)? {
        return Err(Error::Precondition("map is not Fibonacci renormalizable on these intervals".into()));
    }
    let b = beta_newton_tol(map.as_ref(), data.beta, LEVEL_BETA_TOL)?;
    if b.beta.abs() < 1e-6 {
        return Err(Error::SingularRescale(b.beta.abs()));
    }
    let next = Renormalized { inner: map, beta: b.beta };
    let data = RealRenormData::from_orbit(&next).ok().filter(|d| d.validate().is_ok());
    Ok(RealRenorm { map: next, beta: b.beta, data })
}

/// `n` successive real renormalizations of `x^d + c`, returning the level map and the betas.
///
/// `tau_n` is the product of the returned betas.
pub fn renormalize_levels(f: &PowerFamilyMap, n: usize) -> Result<(Arc<dyn TwoBranch>, Vec<f64>)> {
    let mut map: Arc<dyn TwoBranch> = Arc::new(*f);
    let mut betas = Vec::with_capacity(n);
    for level in 0..n {
        let data = RealRenormData::from_orbit(map.as_ref()).map_err(|e| e.at_level(level))?;
        let r = real_renormalize(map, &data).map_err(|e| e.at_level(level))?;
        betas.push(r.beta);
        map = Arc::new(r.map);
    }
    Ok((map, betas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fib_base_cases_and_recurrence() {
        assert_eq!(fib(0).unwrap(), 1);
        assert_eq!(fib(1).unwrap(), 2);
        assert_eq!(fib(5).unwrap(), 13);
        for n in 2..=40 {
            assert_eq!(fib(n).unwrap(), fib(n - 1).unwrap() + fib(n - 2).unwrap());
        }
        assert!(matches!(fib(100), Err(Error::Range(_))));
    }

    #[test]
    fn closest_returns_examples() {
        let f = PowerFamilyMap::new(2, -1.0).unwrap();
        assert_eq!(closest_returns(&f, 10).unwrap().times, vec![1, 2]);
        let f = PowerFamilyMap::new(2, 0.0).unwrap();
        assert_eq!(closest_returns(&f, 10).unwrap().times, vec![1]);
    }

    #[test]
    fn closest_returns_reports_escape() {
        let f = PowerFamilyMap::new(2, 1.0).unwrap();
        match closest_returns(&f, 50) {
            Err(Error::Escape { escape_time, partial }) => {
                assert!(escape_time > 1);
                assert_eq!(partial, vec![1]);
            }
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn odd_degree_rejected() {
        assert!(matches!(PowerFamilyMap::new(3, -1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn escape_time_examples() {
        let f = PowerFamilyMap::new(2, -1.0).unwrap();
        assert_eq!(f.escape_time(C64::new(0.0, 0.0), 500), None);
        let g = PowerFamilyMap::new(2, 0.0).unwrap();
        assert_eq!(escape_time(|z| g.eval(z), C64::new(2.0, 0.0), 10, 2.0), Some(1));
        assert_eq!(escape_time(|z| f.eval(z), C64::new(2.0, 0.0), 10, 2.0), Some(1));
    }

    #[test]
    fn linear_map_has_no_valid_beta() {
        let m = SingleBranch(|z: C64| (-2.0 * z, C64::new(-2.0, 0.0)));
        assert!(matches!(beta_fixed_point(&m, (-1.0, 1.0)), Err(Error::NoValidBeta(_))));
    }

    #[test]
    fn zero_parameter_is_not_renormalizable() {
        let f = PowerFamilyMap::new(2, 0.0).unwrap();
        let data = RealRenormData {
            i0_1: Interval::new(-0.5, 0.5),
            i1_1: Interval::new(0.6, 1.0),
            i0_0: Interval::new(-1.0, 1.0),
            beta: 0.3,
            i0_2: Interval::new(-0.2, 0.2),
            i1_2: Interval::new(0.3, 0.4),
        };
        assert!(!is_fibonacci_renormalizable(&f, &data).unwrap());
    }

    #[test]
    fn malformed_intervals_rejected() {
        let f = PowerFamilyMap::new(2, -1.0).unwrap();
        let data = RealRenormData {
            i0_1: Interval::new(0.1, 0.5),
            i1_1: Interval::new(0.6, 1.0),
            i0_0: Interval::new(-1.0, 1.0),
            beta: 0.3,
            i0_2: Interval::new(-0.2, 0.2),
            i1_2: Interval::new(0.3, 0.4),
        };
        assert!(matches!(is_fibonacci_renormalizable(&f, &data), Err(Error::Malformed(_))));
    }
}
