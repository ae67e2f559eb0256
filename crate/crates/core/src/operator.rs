//! The complex renormalization operator on normalized two-branch maps.
//!
//! A [`SliceMap`] carries a central branch on `U_0` and an outer branch on `U_1`, normalized by
//! `f(1) = 1` and `f^{(i)}(0) = 0` for `1 <= i < d`. The operator is
//! `R f = ((1/b) f_o(f_c(b z)), (1/b) f_c(b z))` where `b` is the fixed point of `f_o o f_c` with
//! negative multiplier, and `phi` negates the outer branch. Newton runs on the disk-scaled
//! coefficients `c_k r^k`, which is the coordinate system in which the sup norm lives.

use crate::dynamics::{beta_newton, BetaPoint, TwoBranch};
use crate::error::{Error, Result};
use crate::series::{default_samples, fit_from_samples, Disk, Parity, TruncatedSeries, DEFAULT_SLACK};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tolerance on the normalization of maps produced by the operator.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub u0: Disk,
    pub u1: Disk,
}

impl Geometry {
    pub fn new(c0: f64, r0: f64, x1: f64, r1: f64) -> Result<Geometry> {
        let g = Geometry { u0: Disk::real(c0, r0)?, u1: Disk::real(x1, r1)? };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.u0.center.im != 0.0 || self.u1.center.im != 0.0 {
            return Err(Error::Malformed("disk centers must be real".into()));
        }
        if !self.u0.contains(C64::new(0.0, 0.0), 0.0) || !self.u0.contains(C64::new(1.0, 0.0), 0.0) {
            return Err(Error::Malformed("U_0 must contain 0 and 1".into()));
        }
        if self.u1.contains(C64::new(0.0, 0.0), 0.0) {
            return Err(Error::Malformed("U_1 must not contain the critical point".into()));
        }
        Ok(())
    }

    pub fn disjoint(&self) -> bool {
        self.u0.disjoint(&self.u1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMap {
    pub degree: u32,
    pub central: TruncatedSeries,
    pub outer: TruncatedSeries,
    pub even_mode: bool,
}

/// An increment of a slice map: same shape, no normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub central: TruncatedSeries,
    pub outer: TruncatedSeries,
}

fn binomial(k: usize, i: usize) -> f64 {
    (0..i).fold(1.0, |acc, j| acc * (k - j) as f64 / (j + 1) as f64)
}

/// Rows: value at 1, then the Taylor coefficients of order `1..d-1` at 0, as linear forms in
/// the raw central coefficients about `center`.
fn constraint_rows(degree: usize, center: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(degree, n + 1, |i, k| {
        if i == 0 {
            (1.0 - center).powi(k as i32)
        } else if k >= i {
            binomial(k, i) * (-center).powi((k - i) as i32)
        } else {
            0.0
        }
    })
}

/// Solve for `c_0 .. c_{d-1}` so the constraints read `(rhs0, 0, ..., 0)`.
fn impose(coeffs: &mut [C64], degree: usize, center: f64, rhs0: f64) -> Result<()> {
    let n = coeffs.len() - 1;
    let a = constraint_rows(degree, center, n);
    let head = a.columns(0, degree).into_owned();
    let lu = head.lu();
    for part in 0..2 {
        let get = |c: &C64| if part == 0 { c.re } else { c.im };
        let mut rhs = DVector::from_fn(degree, |i, _| if i == 0 && part == 0 { rhs0 } else { 0.0 });
        for k in degree..=n {
            let v = get(&coeffs[k]);
            if v != 0.0 {
                for i in 0..degree {
                    rhs[i] -= a[(i, k)] * v;
                }
            }
        }
        let sol = lu.solve(&rhs).ok_or_else(|| Error::Conditioning("normalization system is singular".into()))?;
        for i in 0..degree {
            if part == 0 {
                coeffs[i].re = sol[i];
            } else {
                coeffs[i].im = sol[i];
            }
        }
    }
    Ok(())
}

fn neg(s: &TruncatedSeries) -> TruncatedSeries {
    s.scale(C64::new(-1.0, 0.0))
}

impl SliceMap {
    pub fn new(degree: u32, central: TruncatedSeries, outer: TruncatedSeries, even_mode: bool) -> Result<SliceMap> {
        let m = SliceMap { degree, central, outer, even_mode };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 || self.degree % 2 != 0 {
            return Err(Error::Usage(format!("degree must be even and at least 2, got {}", self.degree)));
        }
        self.geometry().validate()?;
        if self.even_mode && (self.central.parity != Parity::Even || self.central.disk.center.re != 0.0) {
            return Err(Error::Malformed("even mode needs an even central series centered at 0".into()));
        }
        if self.central.order() < self.degree as usize {
            return Err(Error::Malformed("central order below the critical degree".into()));
        }
        let defect = self.normalization_defect();
        if !(defect < NORMALIZATION_TOL) {
            return Err(Error::Malformed(format!("map is not normalized (defect {defect:.3e})")));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry { u0: self.central.disk, u1: self.outer.disk }
    }

    pub fn order(&self) -> usize {
        self.central.order()
    }

    /// `max(|f(1) - 1|, |f^{(i)}(0)/i!|)`.
    pub fn normalization_defect(&self) -> f64 {
        let d = self.degree as usize;
        let a = constraint_rows(d, self.central.disk.center.re, self.central.order());
        (0..d)
            .map(|i| {
                let v: C64 = self.central.coeffs.iter().enumerate().map(|(k, c)| c * a[(i, k)]).sum();
                if i == 0 {
                    (v - 1.0).norm()
                } else {
                    v.norm()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Adjust `c_0 .. c_{d-1}` of the central branch so the normalization holds exactly.
    pub fn project(&self) -> Result<SliceMap> {
        let mut central = self.central.clone();
        if self.even_mode {
            for (k, c) in central.coeffs.iter_mut().enumerate() {
                if k % 2 == 1 {
                    *c = C64::new(0.0, 0.0);
                }
            }
            central.parity = Parity::Even;
        }
        impose(&mut central.coeffs, self.degree as usize, central.disk.center.re, 1.0)?;
        Ok(SliceMap { degree: self.degree, central, outer: self.outer.clone(), even_mode: self.even_mode })
    }

    /// Negate the outer branch.
    pub fn phi(&self) -> SliceMap {
        SliceMap { degree: self.degree, central: self.central.clone(), outer: neg(&self.outer), even_mode: self.even_mode }
    }

    /// Largest branchwise sup-norm difference, sampled finer than the fitting grid.
    pub fn distance(&self, other: &SliceMap) -> Result<f64> {
        let m = 8 * self.order().max(other.order()) + 8;
        let dc = sampled_distance(&self.central, &other.central, m)?;
        let dout = sampled_distance(&self.outer, &other.outer, m)?;
        Ok(dc.max(dout))
    }

    pub fn sup_norm(&self) -> f64 {
        self.central.sup_norm().max(self.outer.sup_norm())
    }

    /// Refit both branches at a new truncation order and re-normalize.
    pub fn refit(&self, n: usize) -> Result<SliceMap> {
        let central = self.central.refit(n)?;
        let outer = self.outer.refit(n)?;
        SliceMap { degree: self.degree, central, outer, even_mode: self.even_mode }.project()
    }

    pub fn add_tangent(&self, v: &Tangent, h: f64) -> Result<SliceMap> {
        let hc = C64::new(h, 0.0);
        Ok(SliceMap {
            degree: self.degree,
            central: self.central.add(&v.central.scale(hc))?,
            outer: self.outer.add(&v.outer.scale(hc))?,
            even_mode: self.even_mode,
        })
    }

    /// Central branch evaluated after rotating `z` by a `d`-th root of unity into `U_0`.
    ///
    /// Only meaningful for maps whose central branch is a function of `z^d`.
    pub fn central_symmetric(&self, z: C64) -> Option<(C64, C64)> {
        let d = self.degree as usize;
        let disk = self.central.disk;
        if disk.ratio(z) <= 1.0 {
            return Some(self.central.eval_with_derivative_unchecked(z));
        }
        let (best, ratio) = (0..d)
            .map(|k| {
                let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / d as f64);
                (w, disk.ratio(z * w))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if ratio > 1.0 + DEFAULT_SLACK {
            return None;
        }
        let (v, dv) = self.central.eval_with_derivative_unchecked(z * best);
        Some((v, dv * best))
    }
}

/// The real-symmetric extension used by the real and geometric tools.
impl TwoBranch for SliceMap {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        self.central_symmetric(z)
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        self.outer.disk.contains(z, DEFAULT_SLACK).then(|| self.outer.eval_with_derivative_unchecked(z))
    }
}

/// How the central branch is read at negative `beta`.
///
/// The central branch of an even map is a function of `z^d`, so `f_c(-z) = f_c(z)`. With
/// `Reflect`, a negative `beta` is handled by evaluating `f_c(-z)`, which keeps every sample
/// point inside an off-center `U_0`. `Plain` never reflects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reflection {
    Reflect,
    Plain,
}

/// Evaluation inside the disks, with the central branch optionally read at `-z`.
struct View<'a> {
    map: &'a SliceMap,
    sign: f64,
}

impl TwoBranch for View<'_> {
    fn central(&self, z: C64) -> Option<(C64, C64)> {
        let c = &self.map.central;
        let w = z * self.sign;
        c.disk.contains(w, DEFAULT_SLACK).then(|| {
            let (v, dv) = c.eval_with_derivative_unchecked(w);
            (v, dv * self.sign)
        })
    }
    fn outer(&self, z: C64) -> Option<(C64, C64)> {
        let o = &self.map.outer;
        o.disk.contains(z, DEFAULT_SLACK).then(|| o.eval_with_derivative_unchecked(z))
    }
}

fn reflection_sign(seed: f64, mode: Reflection) -> f64 {
    if mode == Reflection::Reflect && seed < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn sampled_distance(a: &TruncatedSeries, b: &TruncatedSeries, m: usize) -> Result<f64> {
    if a.disk != b.disk {
        return Err(Error::Precondition("branches live on different disks".into()));
    }
    Ok(a.disk
        .boundary(m)
        .into_iter()
        .map(|z| (a.eval_unchecked(z) - b.eval_unchecked(z)).norm())
        .fold(0.0, f64::max))
}

/// The fixed point of `f_o o f_c` reached by Newton from `seed`.
pub fn slice_beta(f: &SliceMap, seed: f64) -> Result<BetaPoint> {
    slice_beta_with(f, seed, Reflection::Reflect)
}

pub fn slice_beta_with(f: &SliceMap, seed: f64, mode: Reflection) -> Result<BetaPoint> {
    let sign = reflection_sign(seed, mode);
    let b = beta_newton(&View { map: f, sign }, seed)?;
    if b.beta.abs() < 1e-6 {
        return Err(Error::SingularRescale(b.beta.abs()));
    }
    if b.beta.signum() != seed.signum() {
        return Err(Error::NoValidBeta(format!("beta changed sign: seed {seed}, found {}", b.beta)));
    }
    Ok(b)
}

struct Excursion(f64);

impl Excursion {
    fn check(&mut self, disk: &Disk, z: C64) {
        self.0 = self.0.max(disk.ratio(z));
    }
    fn finish(self) -> Result<()> {
        if self.0 > 1.0 + DEFAULT_SLACK {
            Err(Error::CompositionDomain { excursion: self.0 })
        } else {
            Ok(())
        }
    }
}

/// `R f` together with the `beta` used.
pub fn renormalize(f: &SliceMap, beta_seed: f64) -> Result<(SliceMap, f64)> {
    renormalize_with(f, beta_seed, Reflection::Reflect)
}

pub fn renormalize_with(f: &SliceMap, beta_seed: f64, mode: Reflection) -> Result<(SliceMap, f64)> {
    let sign = reflection_sign(beta_seed, mode);
    let b = slice_beta_with(f, beta_seed, mode)?;
    let beta = b.beta;
    let bc = beta * sign;
    let g = f.geometry();
    let n = f.order();
    let no = f.outer.order();
    let mut exc = Excursion(0.0);
    let central_vals: Vec<C64> = g
        .u0
        .boundary(default_samples(n))
        .into_iter()
        .map(|z| {
            let w = z * bc;
            exc.check(&g.u0, w);
            let y = f.central.eval_unchecked(w);
            exc.check(&g.u1, y);
            f.outer.eval_unchecked(y) / beta
        })
        .collect();
    let outer_vals: Vec<C64> = g
        .u1
        .boundary(default_samples(no))
        .into_iter()
        .map(|z| {
            let w = z * bc;
            exc.check(&g.u0, w);
            f.central.eval_unchecked(w) / beta
        })
        .collect();
    exc.finish()?;
    let parity = if f.even_mode { Parity::Even } else { Parity::All };
    let central = fit_from_samples(&central_vals, g.u0, n, parity, None)?;
    let outer = fit_from_samples(&outer_vals, g.u1, no, Parity::All, None)?;
    let out = SliceMap { degree: f.degree, central, outer, even_mode: f.even_mode };
    let defect = out.normalization_defect();
    if !(defect < NORMALIZATION_TOL) {
        return Err(Error::Numerical(format!("renormalized map lost its normalization (defect {defect:.3e})")));
    }
    Ok((out, beta))
}

/// `R(phi(f))`.
pub fn renormalize_phi(f: &SliceMap, beta_seed: f64) -> Result<(SliceMap, f64)> {
    renormalize(&f.phi(), beta_seed)
}

/// Coordinates used by Newton and by the Jacobian: scaled real parts of the free coefficients.
#[derive(Debug, Clone)]
pub struct Layout {
    degree: usize,
    central_free: Vec<usize>,
    n_outer: usize,
    template: SliceMap,
}

impl Layout {
    pub fn of(f: &SliceMap) -> Layout {
        let d = f.degree as usize;
        let central_free = (d..=f.central.order()).filter(|k| !f.even_mode || k % 2 == 0).collect();
        let mut template = f.clone();
        template.central.coeffs.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        template.outer.coeffs.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        Layout { degree: d, central_free, n_outer: f.outer.order(), template }
    }

    pub fn dim(&self) -> usize {
        self.central_free.len() + self.n_outer + 1
    }

    fn pack_parts(&self, central: &TruncatedSeries, outer: &TruncatedSeries) -> DVector<f64> {
        let r0 = central.disk.radius;
        let r1 = outer.disk.radius;
        let mut x = Vec::with_capacity(self.dim());
        x.extend(self.central_free.iter().map(|&k| central.coeffs[k].re * r0.powi(k as i32)));
        x.extend(outer.coeffs.iter().enumerate().map(|(k, c)| c.re * r1.powi(k as i32)));
        DVector::from_vec(x)
    }

    fn unpack_parts(&self, x: &DVector<f64>, rhs0: f64) -> Result<(TruncatedSeries, TruncatedSeries)> {
        let mut central = self.template.central.clone();
        let mut outer = self.template.outer.clone();
        let r0 = central.disk.radius;
        let r1 = outer.disk.radius;
        let nc = self.central_free.len();
        for (j, &k) in self.central_free.iter().enumerate() {
            central.coeffs[k] = C64::new(x[j] / r0.powi(k as i32), 0.0);
        }
        for k in 0..=self.n_outer {
            outer.coeffs[k] = C64::new(x[nc + k] / r1.powi(k as i32), 0.0);
        }
        impose(&mut central.coeffs, self.degree, central.disk.center.re, rhs0)?;
        Ok((central, outer))
    }

    pub fn pack(&self, f: &SliceMap) -> DVector<f64> {
        self.pack_parts(&f.central, &f.outer)
    }

    pub fn unpack(&self, x: &DVector<f64>) -> Result<SliceMap> {
        let (central, outer) = self.unpack_parts(x, 1.0)?;
        Ok(SliceMap { degree: self.template.degree, central, outer, even_mode: self.template.even_mode })
    }

    pub fn pack_tangent(&self, v: &Tangent) -> DVector<f64> {
        self.pack_parts(&v.central, &v.outer)
    }

    /// Tangent vectors satisfy the homogeneous constraints `v(1) = 0`, `v^{(i)}(0) = 0`.
    pub fn unpack_tangent(&self, x: &DVector<f64>) -> Result<Tangent> {
        let (central, outer) = self.unpack_parts(x, 0.0)?;
        Ok(Tangent { central, outer })
    }

    /// Diagonal of `phi` in these coordinates.
    pub fn phi_signs(&self) -> DVector<f64> {
        let nc = self.central_free.len();
        DVector::from_fn(self.dim(), |i, _| if i < nc { 1.0 } else { -1.0 })
    }
}

impl Tangent {
    pub fn zero_like(f: &SliceMap) -> Tangent {
        let l = Layout::of(f);
        Tangent { central: l.template.central.clone(), outer: l.template.outer.clone() }
    }

    pub fn phi(&self) -> Tangent {
        Tangent { central: self.central.clone(), outer: neg(&self.outer) }
    }

    pub fn sup_norm(&self) -> f64 {
        self.central.sup_norm().max(self.outer.sup_norm())
    }

    pub fn scale(&self, a: f64) -> Tangent {
        let a = C64::new(a, 0.0);
        Tangent { central: self.central.scale(a), outer: self.outer.scale(a) }
    }

    pub fn add(&self, o: &Tangent) -> Result<Tangent> {
        Ok(Tangent { central: self.central.add(&o.central)?, outer: self.outer.add(&o.outer)? })
    }

    pub fn sub(&self, o: &Tangent) -> Result<Tangent> {
        Ok(Tangent { central: self.central.sub(&o.central)?, outer: self.outer.sub(&o.outer)? })
    }

    pub fn distance(&self, o: &Tangent) -> Result<f64> {
        let m = 8 * self.central.order() + 8;
        Ok(sampled_distance(&self.central, &o.central, m)?.max(sampled_distance(&self.outer, &o.outer, m)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    FiniteDiff,
    Analytic,
}

/// Everything about `f` that the analytic derivative needs, evaluated once.
struct DerivativeContext {
    beta: f64,
    sign: f64,
    one_minus_df2: f64,
    // (z, w = b z, f_c(w), f_c'(w), f_o(f_c(w)), f_o'(f_c(w))) on the U_0 circle
    central: Vec<[C64; 6]>,
    // (z, w, f_c(w), f_c'(w)) on the U_1 circle
    outer: Vec<[C64; 4]>,
    // f_c(b), f_o'(f_c(b))
    at_beta: [C64; 2],
    geometry: Geometry,
    n: usize,
    no: usize,
    parity: Parity,
}

impl DerivativeContext {
    fn new(f: &SliceMap, beta_seed: f64) -> Result<DerivativeContext> {
        let sign = reflection_sign(beta_seed, Reflection::Reflect);
        let b = slice_beta(f, beta_seed)?;
        let beta = b.beta;
        let bc = beta * sign;
        let one_minus_df2 = 1.0 - b.df2;
        if one_minus_df2.abs() < 1e-8 {
            return Err(Error::NeutralMultiplier(one_minus_df2.abs()));
        }
        let g = f.geometry();
        let n = f.order();
        let no = f.outer.order();
        let central = g
            .u0
            .boundary(default_samples(n))
            .into_iter()
            .map(|z| {
                let w = z * bc;
                let (y, dy) = f.central.eval_with_derivative_unchecked(w);
                let (v, dv) = f.outer.eval_with_derivative_unchecked(y);
                [z, w, y, dy, v, dv]
            })
            .collect();
        let outer = g
            .u1
            .boundary(default_samples(no))
            .into_iter()
            .map(|z| {
                let w = z * bc;
                let (y, dy) = f.central.eval_with_derivative_unchecked(w);
                [z, w, y, dy]
            })
            .collect();
        let yb = f.central.eval_unchecked(C64::new(bc, 0.0));
        let (_, dob) = f.outer.eval_with_derivative_unchecked(yb);
        let parity = if f.even_mode { Parity::Even } else { Parity::All };
        Ok(DerivativeContext { beta, sign, one_minus_df2, central, outer, at_beta: [yb, dob], geometry: g, n, no, parity })
    }

    /// `a_1 = v`, `a_2(x) = v(f(x)) + Df(f(x)) a_1(x)`, `Db.v = a_2(b) / (1 - Df^2(b))`, then
    /// `DR.v = -(Db.v / b)(1/b) f^n(b z) + (1/b)(a_n(b z) + Df^n(b z) Db.v z)`.
    /// With reflection the central branch is read at `-b z`, which only flips the sign of the
    /// chain-rule term.
    fn apply(&self, v: &Tangent) -> Result<Tangent> {
        let beta = C64::new(self.beta, 0.0);
        let [yb, dob] = self.at_beta;
        let a2b = v.outer.eval_unchecked(yb) + dob * v.central.eval_unchecked(beta * self.sign);
        let dbeta = a2b / self.one_minus_df2;
        let dbc = dbeta * self.sign;
        let central_vals: Vec<C64> = self
            .central
            .iter()
            .map(|&[z, w, y, dy, f2, df_o]| {
                let a2 = v.outer.eval_unchecked(y) + df_o * v.central.eval_unchecked(w);
                let df2 = df_o * dy;
                -(dbeta / beta) * (f2 / beta) + (a2 + df2 * dbc * z) / beta
            })
            .collect();
        let outer_vals: Vec<C64> = self
            .outer
            .iter()
            .map(|&[z, w, y, dy]| {
                let a1 = v.central.eval_unchecked(w);
                -(dbeta / beta) * (y / beta) + (a1 + dy * dbc * z) / beta
            })
            .collect();
        Ok(Tangent {
            central: fit_from_samples(&central_vals, self.geometry.u0, self.n, self.parity, None)?,
            outer: fit_from_samples(&outer_vals, self.geometry.u1, self.no, Parity::All, None)?,
        })
    }
}

/// `DR_f . v`.
pub fn derivative_apply(f: &SliceMap, v: &Tangent, beta_seed: f64, mode: DerivativeMode) -> Result<Tangent> {
    match mode {
        DerivativeMode::Analytic => DerivativeContext::new(f, beta_seed)?.apply(v),
        DerivativeMode::FiniteDiff => {
            let size = v.sup_norm();
            if size == 0.0 {
                return Ok(Tangent::zero_like(f));
            }
            let h = 1e-5 / size;
            let (plus, _) = renormalize(&f.add_tangent(v, h)?, beta_seed)?;
            let (minus, _) = renormalize(&f.add_tangent(v, -h)?, beta_seed)?;
            let s = C64::new(0.5 / h, 0.0);
            Ok(Tangent {
                central: plus.central.sub(&minus.central)?.scale(s),
                outer: plus.outer.sub(&minus.outer)?.scale(s),
            })
        }
    }
}

/// `D(R o phi)_f . v = DR_{phi f} . (phi v)`.
pub fn derivative_apply_phi(f: &SliceMap, v: &Tangent, beta_seed: f64, mode: DerivativeMode) -> Result<Tangent> {
    derivative_apply(&f.phi(), &v.phi(), beta_seed, mode)
}

/// Matrix of `DR_f` on the free coefficients of [`Layout::of`].
pub fn jacobian_matrix(f: &SliceMap, beta_seed: f64, mode: DerivativeMode) -> Result<DMatrix<f64>> {
    let layout = Layout::of(f);
    let dim = layout.dim();
    let ctx = match mode {
        DerivativeMode::Analytic => Some(DerivativeContext::new(f, beta_seed)?),
        DerivativeMode::FiniteDiff => None,
    };
    let columns: Vec<DVector<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| {
            let e = DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 });
            let v = layout.unpack_tangent(&e)?;
            let out = match &ctx {
                Some(ctx) => ctx.apply(&v)?,
                None => derivative_apply(f, &v, beta_seed, DerivativeMode::FiniteDiff)?,
            };
            Ok(layout.pack_tangent(&out))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// Matrix of `D(R o phi)_f`: the matrix of `DR` at `phi(f)` times the diagonal of `phi`.
pub fn jacobian_phi(f: &SliceMap, beta_seed: f64, mode: DerivativeMode) -> Result<DMatrix<f64>> {
    let mut m = jacobian_matrix(&f.phi(), beta_seed, mode)?;
    let signs = Layout::of(f).phi_signs();
    for (j, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub mode: DerivativeMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-10, max_iters: 30, mode: DerivativeMode::Analytic }
    }
}

/// A fixed point of `R o phi`.
///
/// `residual` is the sup-norm distance between `f` and `R(phi(f))` brought back onto the
/// normalized slice; `normalization_defect` is how far the unprojected `R(phi(f))` is from it,
/// which is a truncation effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSolution {
    pub map: SliceMap,
    pub beta: f64,
    pub residual: f64,
    pub normalization_defect: f64,
    pub newton_iters: usize,
    pub residual_trace: Vec<f64>,
}

impl CycleSolution {
    /// The other point of the period-two orbit of `R`.
    pub fn companion(&self) -> SliceMap {
        self.map.phi()
    }

    /// Worst truncation-tail ratio of the two branches.
    pub fn tail_ratio(&self) -> f64 {
        self.map.central.tail_ratio().max(self.map.outer.tail_ratio())
    }
}

struct NewtonState {
    x: DVector<f64>,
    g: DVector<f64>,
    beta: f64,
    residual: f64,
}

fn newton_eval(layout: &Layout, x: DVector<f64>, beta_seed: f64) -> Result<NewtonState> {
    let f = layout.unpack(&x)?;
    let (rf, beta) = renormalize_phi(&f, beta_seed)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::NoValidBeta(format!("beta = {beta} left (0, 1)")));
    }
    let residual = rf.project()?.distance(&f)?;
    let g = layout.pack(&rf) - &x;
    Ok(NewtonState { x, g, beta, residual })
}

/// Newton iteration for `R(phi(f)) = f`, with step halving and limited Jacobian reuse.
pub fn find_cycle(initial: &SliceMap, beta_seed: f64, cfg: &NewtonConfig) -> Result<CycleSolution> {
    let start = initial.project()?;
    let layout = Layout::of(&start);
    let mut state = newton_eval(&layout, layout.pack(&start), beta_seed)?;
    let mut trace = vec![state.residual];
    let mut iters = 0;
    let mut lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
    let mut reuses = 0;
    while !(state.residual < cfg.tol) {
        if iters >= cfg.max_iters {
            return Err(Error::NonConvergence { message: format!("no convergence in {iters} steps"), trace });
        }
        let mut fresh = false;
        if lu.is_none() || reuses >= 3 {
            let f = layout.unpack(&state.x)?;
            let j = jacobian_phi(&f, state.beta, cfg.mode)? - DMatrix::identity(layout.dim(), layout.dim());
            lu = Some(j.lu());
            reuses = 0;
            fresh = true;
        }
        let delta = lu
            .as_ref()
            .and_then(|lu| lu.solve(&state.g))
            .ok_or_else(|| Error::Conditioning("singular Newton system; try damping or a better seed".into()))?;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=8 {
            let x_new = &state.x - &delta * step;
            if let Ok(s) = newton_eval(&layout, x_new, state.beta) {
                if s.residual < state.residual {
                    accepted = Some(s);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(s) => {
                let ratio = s.residual / state.residual;
                state = s;
                reuses = if ratio < 0.1 { reuses + 1 } else { 3 };
            }
            None if !fresh => {
                lu = None;
                continue;
            }
            None => {
                return Err(Error::NonConvergence { message: "no descent along the Newton direction".into(), trace });
            }
        }
        iters += 1;
        trace.push(state.residual);
        let k = trace.len();
        if k > 5 && trace[k - 1] > 0.9 * trace[k - 6] {
            return Err(Error::NonConvergence { message: "residual stagnated over 5 steps".into(), trace });
        }
    }
    let map = layout.unpack(&state.x)?;
    let normalization_defect = renormalize_phi(&map, state.beta)?.0.normalization_defect();
    Ok(CycleSolution {
        map,
        beta: state.beta,
        residual: state.residual,
        normalization_defect,
        newton_iters: iters,
        residual_trace: trace,
    })
}
