//! Truncated power series on disks.
//!
//! A [`TruncatedSeries`] stores `c_0 .. c_N` of `sum c_k (z - center)^k` together with the disk
//! it is meant to represent a function on. Composition is not done symbolically: the composite
//! is sampled on the boundary circle of the target disk and refitted with a discrete Fourier
//! transform, which doubles as the restriction step onto the new domain.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DEFAULT_SLACK: f64 = 0.05;
pub const DEFAULT_SPILL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    #[serde(with = "crate::io::complex_pair")]
    pub center: C64,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: C64, radius: f64) -> Result<Disk> {
        if !(radius > 0.0) || !radius.is_finite() || !center.re.is_finite() || !center.im.is_finite() {
            return Err(Error::Malformed(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Disk { center, radius })
    }

    pub fn real(center: f64, radius: f64) -> Result<Disk> {
        Disk::new(C64::new(center, 0.0), radius)
    }

    /// `|z - center| / radius`; at most 1 inside the closed disk.
    pub fn ratio(&self, z: C64) -> f64 {
        (z - self.center).norm() / self.radius
    }

    pub fn contains(&self, z: C64, slack: f64) -> bool {
        self.ratio(z) <= 1.0 + slack
    }

    /// `M` equispaced points on the boundary circle, starting at angle 0.
    pub fn boundary(&self, m: usize) -> Vec<C64> {
        (0..m)
            .map(|j| self.center + C64::from_polar(self.radius, 2.0 * PI * j as f64 / m as f64))
            .collect()
    }

    /// The disk `s * self`.
    pub fn scaled(&self, s: C64) -> Disk {
        Disk { center: self.center * s, radius: self.radius * s.norm() }
    }

    pub fn disjoint(&self, other: &Disk) -> bool {
        (self.center - other.center).norm() > self.radius + other.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    All,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSeries {
    pub disk: Disk,
    #[serde(with = "crate::io::complex_vec")]
    pub coeffs: Vec<C64>,
    pub parity: Parity,
}

/// Number of boundary samples used for an order-`n` fit.
pub fn default_samples(n: usize) -> usize {
    4 * n + 16
}

impl TruncatedSeries {
    pub fn new(disk: Disk, coeffs: Vec<C64>, parity: Parity) -> Result<TruncatedSeries> {
        if coeffs.len() < 2 {
            return Err(Error::Malformed("a series needs at least c_0 and c_1".into()));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Malformed("non-finite coefficient".into()));
        }
        if parity == Parity::Even && coeffs.iter().skip(1).step_by(2).any(|c| *c != C64::new(0.0, 0.0)) {
            return Err(Error::Malformed("even parity with a nonzero odd coefficient".into()));
        }
        Ok(TruncatedSeries { disk, coeffs, parity })
    }

    pub fn from_real(disk: Disk, coeffs: &[f64]) -> Result<TruncatedSeries> {
        TruncatedSeries::new(disk, coeffs.iter().map(|&c| C64::new(c, 0.0)).collect(), Parity::All)
    }

    pub fn zero(disk: Disk, n: usize, parity: Parity) -> TruncatedSeries {
        TruncatedSeries { disk, coeffs: vec![C64::new(0.0, 0.0); n + 1], parity }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Horner evaluation with no domain check.
    pub fn eval_unchecked(&self, z: C64) -> C64 {
        let u = z - self.disk.center;
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * u + c)
    }

    /// Value and first derivative in one Horner pass.
    pub fn eval_with_derivative_unchecked(&self, z: C64) -> (C64, C64) {
        let u = z - self.disk.center;
        let zero = C64::new(0.0, 0.0);
        let mut p = zero;
        let mut dp = zero;
        for &c in self.coeffs.iter().rev() {
            dp = dp * u + p;
            p = p * u + c;
        }
        (p, dp)
    }

    pub fn eval_with_slack(&self, z: C64, slack: f64) -> Result<C64> {
        let ratio = self.disk.ratio(z);
        if ratio > 1.0 + slack {
            return Err(Error::Domain { ratio });
        }
        Ok(self.eval_unchecked(z))
    }

    pub fn eval(&self, z: C64) -> Result<C64> {
        self.eval_with_slack(z, DEFAULT_SLACK)
    }

    /// Scaled coefficient magnitudes `|c_k| r^k`; these are what the sup norm sees.
    pub fn scaled_magnitudes(&self) -> Vec<f64> {
        let r = self.disk.radius;
        let mut rk = 1.0;
        self.coeffs
            .iter()
            .map(|c| {
                let v = c.norm() * rk;
                rk *= r;
                v
            })
            .collect()
    }

    /// Relative size of the last nonzero-parity coefficient: the truncation health indicator.
    pub fn tail_ratio(&self) -> f64 {
        let mags = self.scaled_magnitudes();
        let max = mags.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        let n = mags.len();
        let tail = match self.parity {
            Parity::All => mags[n - 1],
            Parity::Even => mags[n - 1].max(mags[n - 2]),
        };
        tail / max
    }

    pub fn samples(&self, m: usize) -> Vec<C64> {
        self.disk.boundary(m).into_iter().map(|z| self.eval_unchecked(z)).collect()
    }

    pub fn derivative(&self) -> TruncatedSeries {
        let coeffs: Vec<C64> = if self.coeffs.len() > 2 {
            self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect()
        } else {
            vec![self.coeffs[1], C64::new(0.0, 0.0)]
        };
        TruncatedSeries { disk: self.disk, coeffs, parity: Parity::All }
    }

    /// Max of `|s|` on the boundary circle: `m` equispaced samples, then every sampled local
    /// peak within half of the best is polished by golden-section search between its neighbours.
    pub fn sup_norm_with(&self, m: usize) -> f64 {
        let m = m.max(3);
        let mags: Vec<f64> = self.samples(m).iter().map(|v| v.norm()).collect();
        let best = mags.iter().cloned().fold(0.0, f64::max);
        let step = std::f64::consts::TAU / m as f64;
        let at = |t: f64| self.eval_unchecked(self.disk.center + C64::from_polar(self.disk.radius, t)).norm();
        let mut sup = best;
        for i in 0..m {
            let (l, r) = (mags[(i + m - 1) % m], mags[(i + 1) % m]);
            if mags[i] < 0.5 * best || mags[i] < l || mags[i] < r || (mags[i] == l && mags[i] == r) {
                continue;
            }
            let (mut a, mut b) = ((i as f64 - 1.0) * step, (i as f64 + 1.0) * step);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
            let (mut f1, mut f2) = (at(x1), at(x2));
            while b - a > 1e-10 * step {
                if f1 < f2 {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + g * (b - a);
                    f2 = at(x2);
                } else {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - g * (b - a);
                    f1 = at(x1);
                }
            }
            sup = sup.max(f1).max(f2);
        }
        sup
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm_with((4 * self.order()).max(64))
    }

    pub fn scale(&self, a: C64) -> TruncatedSeries {
        TruncatedSeries { disk: self.disk, coeffs: self.coeffs.iter().map(|c| c * a).collect(), parity: self.parity }
    }

    /// Coefficientwise sum; both series must live on the same disk.
    pub fn add(&self, other: &TruncatedSeries) -> Result<TruncatedSeries> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &TruncatedSeries) -> Result<TruncatedSeries> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &TruncatedSeries, op: impl Fn(C64, C64) -> C64) -> Result<TruncatedSeries> {
        if self.disk != other.disk {
            return Err(Error::Precondition("series live on different disks".into()));
        }
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = C64::new(0.0, 0.0);
        let coeffs = (0..n)
            .map(|k| op(*self.coeffs.get(k).unwrap_or(&zero), *other.coeffs.get(k).unwrap_or(&zero)))
            .collect();
        let parity = if self.parity == Parity::Even && other.parity == Parity::Even { Parity::Even } else { Parity::All };
        Ok(TruncatedSeries { disk: self.disk, coeffs, parity })
    }

    /// Resample onto a new truncation order (same disk).
    pub fn refit(&self, n: usize) -> Result<TruncatedSeries> {
        let m = default_samples(n.max(self.order()));
        fit_from_samples(&self.samples(m), self.disk, n, self.parity, None)
    }
}

/// Fit `c_0..c_N` from values at `center + r e^{2 pi i j / M}`.
///
/// The spill check is skipped when `spill` is `None`.
pub fn fit_from_samples(values: &[C64], disk: Disk, n: usize, parity: Parity, spill: Option<f64>) -> Result<TruncatedSeries> {
    let m = values.len();
    if n < 1 {
        return Err(Error::Precondition("truncation order must be at least 1".into()));
    }
    if m < 2 * n + 2 {
        return Err(Error::Precondition(format!("need at least {} samples for order {n}, got {m}", 2 * n + 2)));
    }
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("non-finite sample".into()));
    }
    let mut buf = values.to_vec();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let inv_m = 1.0 / m as f64;
    let mut rk = 1.0;
    let mut coeffs = Vec::with_capacity(n + 1);
    for (k, b) in buf.iter().take(n + 1).enumerate() {
        let c = if parity == Parity::Even && k % 2 == 1 { C64::new(0.0, 0.0) } else { b * (inv_m / rk) };
        coeffs.push(c);
        rk *= disk.radius;
    }
    let s = TruncatedSeries { disk, coeffs, parity };
    if let Some(threshold) = spill {
        let tail = s.tail_ratio();
        if !(tail < threshold) {
            return Err(Error::TruncationOverflow { tail, threshold });
        }
    }
    Ok(s)
}

/// Sample `f` on the boundary of `disk` and fit at order `n`.
pub fn fit_function(disk: Disk, n: usize, parity: Parity, spill: Option<f64>, f: impl Fn(C64) -> Result<C64>) -> Result<TruncatedSeries> {
    let values = disk.boundary(default_samples(n)).into_iter().map(f).collect::<Result<Vec<_>>>()?;
    fit_from_samples(&values, disk, n, parity, spill)
}

/// `outer o inner` on `inner.disk`, built by boundary sampling.
pub fn compose(outer: &TruncatedSeries, inner: &TruncatedSeries, slack: f64) -> Result<TruncatedSeries> {
    let n = outer.order().max(inner.order());
    let m = default_samples(n);
    let mut excursion: f64 = 0.0;
    let mut values = Vec::with_capacity(m);
    for z in inner.disk.boundary(m) {
        let w = inner.eval_unchecked(z);
        excursion = excursion.max(outer.disk.ratio(w));
        values.push(outer.eval_unchecked(w));
    }
    if excursion > 1.0 + slack {
        return Err(Error::CompositionDomain { excursion });
    }
    fit_from_samples(&values, inner.disk, n, Parity::All, None)
}

/// `z -> (1/beta) s(beta z)` on the disk `s.disk / beta`: exactly `c_k beta^(k-1)` about `center / beta`.
pub fn rescale(s: &TruncatedSeries, beta: C64) -> Result<TruncatedSeries> {
    if beta.norm() < 1e-6 {
        return Err(Error::SingularRescale(beta.norm()));
    }
    let mut bk = C64::new(1.0, 0.0) / beta;
    let coeffs = s
        .coeffs
        .iter()
        .map(|c| {
            let v = c * bk;
            bk *= beta;
            v
        })
        .collect();
    let disk = Disk { center: s.disk.center / beta, radius: s.disk.radius / beta.norm() };
    Ok(TruncatedSeries { disk, coeffs, parity: s.parity })
}

/// `z -> (1/beta) s(beta z)` refitted on an arbitrary target disk with `beta * target` inside `s.disk`.
pub fn rescale_onto(s: &TruncatedSeries, beta: C64, target: Disk, slack: f64) -> Result<TruncatedSeries> {
    if beta.norm() < 1e-6 {
        return Err(Error::SingularRescale(beta.norm()));
    }
    let n = s.order();
    let m = default_samples(n);
    let mut excursion: f64 = 0.0;
    let values: Vec<C64> = target
        .boundary(m)
        .into_iter()
        .map(|z| {
            let w = beta * z;
            excursion = excursion.max(s.disk.ratio(w));
            s.eval_unchecked(w) / beta
        })
        .collect();
    if excursion > 1.0 + slack {
        return Err(Error::CompositionDomain { excursion });
    }
    fit_from_samples(&values, target, n, Parity::All, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn unit() -> Disk {
        Disk::real(0.0, 1.0).unwrap()
    }

    #[test]
    fn identity_and_quadratic_eval() {
        let id = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        let z = C64::new(0.3, 0.4);
        assert_eq!(id.eval(z).unwrap(), z);
        let q = TruncatedSeries::from_real(Disk::real(0.0, 2.0).unwrap(), &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(q.eval(c(1.0)).unwrap(), c(0.0));
    }

    #[test]
    fn out_of_disk_is_refused() {
        let id = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        match id.eval(c(1.2)) {
            Err(Error::Domain { ratio }) => assert!((ratio - 1.2).abs() < 1e-15),
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(id.eval(c(1.04)).is_ok());
    }

    #[test]
    fn fit_recovers_square() {
        let s = fit_function(unit(), 4, Parity::All, Some(DEFAULT_SPILL), |z| Ok(z * z));
        // z^2 at order 4: tail coefficient is zero, so the spill check passes.
        let s = s.unwrap();
        for (k, v) in s.coeffs.iter().enumerate() {
            let want = if k == 2 { 1.0 } else { 0.0 };
            assert!((v - c(want)).norm() < 1e-15, "k={k} got {v}");
        }
    }

    #[test]
    fn fit_geometric_series() {
        let s = fit_function(unit(), 20, Parity::All, None, |z| Ok(C64::new(1.0, 0.0) / (c(2.0) - z))).unwrap();
        for (k, v) in s.coeffs.iter().enumerate() {
            let want = 0.5f64.powi(k as i32 + 1);
            assert!((v - c(want)).norm() < 2f64.powi(-21), "k={k}");
        }
    }

    #[test]
    fn fit_exponential_against_factorials() {
        let s = fit_function(unit(), 20, Parity::All, Some(DEFAULT_SPILL), |z| Ok(z.exp())).unwrap();
        let mut fact = 1.0;
        for (k, v) in s.coeffs.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            assert!((v - c(1.0 / fact)).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn spill_threshold_trips() {
        let r = fit_function(unit(), 8, Parity::All, Some(DEFAULT_SPILL), |z| Ok(C64::new(1.0, 0.0) / (c(1.2) - z)));
        assert!(matches!(r, Err(Error::TruncationOverflow { .. })));
    }

    #[test]
    fn too_few_samples() {
        let v = vec![c(1.0); 10];
        assert!(matches!(fit_from_samples(&v, unit(), 8, Parity::All, None), Err(Error::Precondition(_))));
    }

    #[test]
    fn compose_polynomials() {
        let d = Disk::real(0.0, 1.0).unwrap();
        // z^2 expanded about 1: 1 + 2(z-1) + (z-1)^2
        let sq = TruncatedSeries::from_real(Disk::real(1.0, 1.5).unwrap(), &[1.0, 2.0, 1.0]).unwrap();
        let shift = TruncatedSeries::from_real(d, &[1.0, 1.0, 0.0]).unwrap();
        let out = compose(&sq, &shift, DEFAULT_SLACK).unwrap();
        for (k, want) in [1.0, 2.0, 1.0].iter().enumerate() {
            assert!((out.coeffs[k] - c(*want)).norm() < 1e-14);
        }
    }

    #[test]
    fn compose_with_identity() {
        let s = TruncatedSeries::from_real(unit(), &[0.1, -0.2, 0.3, 0.05]).unwrap();
        let id = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        let out = compose(&id, &s, DEFAULT_SLACK).unwrap();
        for k in 0..4 {
            assert!((out.coeffs[k] - s.coeffs[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn compose_superattracting_two_cycle() {
        let inner = TruncatedSeries::from_real(Disk::real(0.0, 1.2).unwrap(), &[-1.0, 0.0, 1.0]).unwrap();
        let outer = TruncatedSeries::from_real(Disk::real(0.0, 3.0).unwrap(), &[-1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let ff = compose(&outer, &inner, DEFAULT_SLACK).unwrap();
        assert!(ff.eval(c(0.0)).unwrap().norm() < 1e-14);
        assert!((ff.eval(c(-1.0)).unwrap() + 1.0).norm() < 1e-13);
    }

    #[test]
    fn compose_range_violation() {
        let small = TruncatedSeries::from_real(Disk::real(0.0, 0.5).unwrap(), &[0.0, 1.0]).unwrap();
        let big = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        assert!(matches!(compose(&small, &big, DEFAULT_SLACK), Err(Error::CompositionDomain { .. })));
    }

    #[test]
    fn rescale_laws() {
        let id = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        let r = rescale(&id, c(0.37)).unwrap();
        assert_eq!(r.coeffs, id.coeffs);
        let s = TruncatedSeries::from_real(unit(), &[1.0, 0.0, 1.0]).unwrap();
        let r = rescale(&s, c(2.0)).unwrap();
        assert_eq!(r.coeffs, vec![c(0.5), c(0.0), c(2.0)]);
        assert!(matches!(rescale(&s, c(1e-7)), Err(Error::SingularRescale(_))));
    }

    #[test]
    fn derivative_basics() {
        let s = TruncatedSeries::from_real(unit(), &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.derivative().coeffs, vec![c(0.0), c(2.0)]);
        let k = TruncatedSeries::from_real(unit(), &[3.0, 0.0]).unwrap();
        assert!(k.derivative().coeffs.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sup_norm_examples() {
        let id = TruncatedSeries::from_real(unit(), &[0.0, 1.0]).unwrap();
        assert!((id.sup_norm() - 1.0).abs() < 1e-15);
        let sq = TruncatedSeries::from_real(Disk::real(0.0, 2.0).unwrap(), &[0.0, 0.0, 1.0]).unwrap();
        assert!((sq.sup_norm() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn even_parity_rejects_odd_terms() {
        let r = TruncatedSeries::new(unit(), vec![c(1.0), c(0.5), c(1.0)], Parity::Even);
        assert!(matches!(r, Err(Error::Malformed(_))));
    }
}
