//! Eigenvalues of the linearized operator at the cycle and the hyperbolicity verdict.

use crate::error::{Error, Result};
use crate::operator::{find_cycle, jacobian_phi, renormalize, CycleSolution, Layout, NewtonConfig, SliceMap};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_DRIFT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    #[serde(with = "crate::io::complex_vec")]
    pub eigenvalues: Vec<C64>,
    pub unstable_count: usize,
    pub neutral_count: usize,
    pub margin: f64,
    pub truncation_order: usize,
    /// Change of `|lambda_1|` under refinement of the truncation order; NaN until measured.
    pub drift: f64,
}

impl SpectrumReport {
    pub fn stable_count(&self) -> usize {
        self.eigenvalues.len() - self.unstable_count - self.neutral_count
    }

    pub fn leading(&self) -> Option<C64> {
        self.eigenvalues.first().copied()
    }
}

/// All eigenvalues of a real square matrix, sorted by descending modulus.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::Precondition(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("matrix has non-finite entries".into()));
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 1000 * m.nrows().max(1))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let mut ev: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Classify the spectrum of `m` against the band `[1 - margin, 1 + margin]`.
pub fn spectrum(m: &DMatrix<f64>, margin: f64, truncation_order: usize) -> Result<SpectrumReport> {
    let eigenvalues = eigenvalues(m)?;
    let unstable_count = eigenvalues.iter().filter(|z| z.norm() > 1.0 + margin).count();
    let neutral_count = eigenvalues.iter().filter(|z| (z.norm() - 1.0).abs() <= margin).count();
    Ok(SpectrumReport { eigenvalues, unstable_count, neutral_count, margin, truncation_order, drift: f64::NAN })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub hyperbolic: bool,
    #[serde(with = "crate::io::complex_pair")]
    pub unstable_eigenvalue: C64,
    pub gamma: f64,
}

/// Hyperbolic means exactly one eigenvalue outside the band and none inside it.
pub fn hyperbolicity_verdict(r: &SpectrumReport, drift_tol: f64) -> Result<Verdict> {
    if !(r.drift < drift_tol) {
        return Err(Error::Inconclusive(format!("drift {:.3e} is not below {drift_tol:.1e}", r.drift)));
    }
    let top = r.leading().ok_or_else(|| Error::Precondition("empty spectrum".into()))?;
    Ok(Verdict { hyperbolic: r.unstable_count == 1 && r.neutral_count == 0, unstable_eigenvalue: top, gamma: top.norm() })
}

/// Spectrum of `D(R o phi)` at a cycle solution, with drift measured by re-solving at
/// `order + refine`.
pub fn cycle_spectrum(sol: &CycleSolution, margin: f64, refine: usize, newton: &NewtonConfig) -> Result<(SpectrumReport, CycleSolution)> {
    let order = sol.map.order();
    let j = jacobian_phi(&sol.map, sol.beta, newton.mode)?;
    let mut report = spectrum(&j, margin, order)?;
    let refined_seed = sol.map.refit(order + refine)?;
    let refined = find_cycle(&refined_seed, sol.beta, newton)?;
    let top_refined = eigenvalues(&jacobian_phi(&refined.map, refined.beta, newton.mode)?)?[0].norm();
    report.drift = (top_refined - report.leading().map_or(f64::NAN, |z| z.norm())).abs();
    Ok((report, refined))
}

/// `R(R(f))` starting from the `beta` seed of `f`; the second step uses the opposite sign.
pub fn renormalize_twice(f: &SliceMap, beta_seed: f64) -> Result<SliceMap> {
    let (g, b) = renormalize(f, beta_seed)?;
    Ok(renormalize(&g, -b)?.0)
}

/// Matrix of `D(R^2)` at a fixed point `h` of `R o phi`, by central differences of `R o R` in
/// the free coordinates of [`Layout::of`].
pub fn jacobian_r_squared(h: &SliceMap, beta: f64) -> Result<DMatrix<f64>> {
    let layout = Layout::of(h);
    let x0 = layout.pack(h);
    let dim = layout.dim();
    let step = 1e-8;
    let cols: Vec<DVector<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let mut xp = x0.clone();
            xp[j] += step;
            let mut xm = x0.clone();
            xm[j] -= step;
            // at h the first beta is -beta
            let p = renormalize_twice(&layout.unpack(&xp)?, -beta)?;
            let m = renormalize_twice(&layout.unpack(&xm)?, -beta)?;
            Ok((layout.pack(&p) - layout.pack(&m)) / (2.0 * step))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// Real eigenvector for a real eigenvalue, by inverse iteration with a shifted matrix.
pub fn real_eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let shift = lambda * (1.0 + 1e-10) + 1e-12;
    let lu = (m - DMatrix::identity(n, n) * shift).lu();
    let mut x = DVector::from_fn(n, |i, _| 1.0 / (1.0 + i as f64));
    for _ in 0..50 {
        let y = lu.solve(&x).ok_or_else(|| Error::Conditioning("shifted matrix is singular".into()))?;
        let norm = y.amax();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        x = y / norm;
    }
    Ok(x)
}
