//! Standing-assumption checks and gain synthesis.
//!
//! The closed-loop wave operator with feedback `w_x(1) = -alpha w(1) - beta w_t(1)`
//! and free left end has spectrum given by the zeros of
//! `lambda sinh lambda + (alpha + beta lambda) cosh lambda`; the estimator
//! operator with `f'(0) = k g(0)`, `f'(1) = -alpha f(1)` has spectrum given by the
//! zeros of `(1 + k)(lambda + alpha) e^lambda + (1 - k)(alpha - lambda) e^-lambda`.
//! Neither may meet the spectrum of `A`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::matrixfun::mat_cosh;
use crate::plant::PlantConfig;

/// Default spectral-disjointness threshold.
pub const DEFAULT_MARGIN: f64 = 1e-8;

/// Relative accuracy required of the placed closed-loop poles.
pub const PLACEMENT_TOL: f64 = 1e-6;

pub fn char_a1(lambda: Complex64, alpha: f64, beta: f64) -> Complex64 {
    lambda * lambda.sinh() + (alpha + beta * lambda) * lambda.cosh()
}

pub fn char_a1_derivative(lambda: Complex64, alpha: f64, beta: f64) -> Complex64 {
    let (s, c) = (lambda.sinh(), lambda.cosh());
    s + lambda * c + beta * c + (alpha + beta * lambda) * s
}

pub fn char_a(lambda: Complex64, alpha: f64, k: f64) -> Complex64 {
    (1.0 + k) * (lambda + alpha) * lambda.exp() + (1.0 - k) * (alpha - lambda) * (-lambda).exp()
}

pub fn char_a_derivative(lambda: Complex64, alpha: f64, k: f64) -> Complex64 {
    (1.0 + k) * (1.0 + lambda + alpha) * lambda.exp() - (1.0 - k) * (1.0 + alpha - lambda) * (-lambda).exp()
}

/// Newton iteration for a zero of an analytic function.
pub fn newton_root(
    f: impl Fn(Complex64) -> Complex64,
    df: impl Fn(Complex64) -> Complex64,
    seed: Complex64,
) -> Result<Complex64> {
    let mut z = seed;
    for _ in 0..100 {
        let d = df(z);
        if d.norm() == 0.0 || !d.is_finite() {
            break;
        }
        let step = f(z) / d;
        z -= step;
        if step.norm() <= 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    if z.is_finite() && f(z).norm() <= 1e-10 {
        Ok(z)
    } else {
        Err(Error::invalid(format!("Newton iteration from {seed} did not converge")))
    }
}

/// Characteristic function of the finite-difference discretization of the
/// estimator operator on `N` intervals.
///
/// Eigenvectors of the semi-discrete operator satisfy the node equations
/// `lambda² u_j = (u_{j+1} - 2 u_j + u_{j-1}) / h²` with ghost-point closures of
/// `u_x(0) = k lambda u(0)` and `u_x(1) = -alpha u(1)`. The left closure and the
/// interior recurrence determine `u` from `u_0 = 1`; the right closure residual
/// is returned and vanishes exactly at discrete eigenvalues.
pub fn char_a_discrete(lambda: Complex64, alpha: f64, k: f64, n: usize) -> Complex64 {
    let h = 1.0 / n as f64;
    let l2h2 = lambda * lambda * h * h;
    let mut prev = Complex64::new(1.0, 0.0);
    let mut cur = prev * (1.0 + 0.5 * l2h2 + k * h * lambda);
    for _ in 1..n {
        let next = (2.0 + l2h2) * cur - prev;
        prev = cur;
        cur = next;
    }
    2.0 * (prev - cur) / (h * h) - 2.0 * alpha * cur / h - lambda * lambda * cur
}

/// Eigenvalues of the semi-discrete estimator operator as a dense `2(N+1)` system.
pub fn discrete_a_spectrum(alpha: f64, k: f64, n: usize) -> Vec<Complex64> {
    let m = n + 1;
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut op = DMatrix::zeros(2 * m, 2 * m);
    for j in 0..m {
        op[(j, m + j)] = 1.0;
    }
    for j in 1..n {
        op[(m + j, j - 1)] = inv_h2;
        op[(m + j, j)] = -2.0 * inv_h2;
        op[(m + j, j + 1)] = inv_h2;
    }
    op[(m, 0)] = -2.0 * inv_h2;
    op[(m, 1)] = 2.0 * inv_h2;
    op[(m, m)] = -2.0 * k / h;
    op[(m + n, n - 1)] = 2.0 * inv_h2;
    op[(m + n, n)] = -2.0 * inv_h2 - 2.0 * alpha / h;
    op.complex_eigenvalues().iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenMargin {
    pub eigenvalue: Complex64,
    /// `|characteristic value|` at the eigenvalue.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub spectrum_a1_ok: bool,
    pub spectrum_a_ok: bool,
    pub a1_margins: Vec<EigenMargin>,
    pub a_margins: Vec<EigenMargin>,
    pub controllable: bool,
    pub controllability_rank: usize,
    pub observable: bool,
    pub observability_rank: usize,
    pub margin_threshold: f64,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.spectrum_a1_ok && self.spectrum_a_ok && self.controllable && self.observable
    }

    /// Human-readable list of failed checks.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let bad = |m: &[EigenMargin]| {
            m.iter()
                .filter(|e| e.margin <= self.margin_threshold)
                .map(|e| format!("{:.6}{:+.6}i", e.eigenvalue.re, e.eigenvalue.im))
                .collect::<Vec<_>>()
                .join(", ")
        };
        if !self.spectrum_a1_ok {
            out.push(format!(
                "eigenvalue(s) {} of A lie in the spectrum of the closed-loop wave operator",
                bad(&self.a1_margins)
            ));
        }
        if !self.spectrum_a_ok {
            out.push(format!(
                "eigenvalue(s) {} of A lie in the spectrum of the estimator operator",
                bad(&self.a_margins)
            ));
        }
        if !self.controllable {
            out.push(format!(
                "(A, AB2 + B1 + cosh(A)(AB4 + B3)) is not controllable (rank {} < {})",
                self.controllability_rank,
                self.a1_margins.len()
            ));
        }
        if !self.observable {
            out.push(format!(
                "(A, C) is not observable (rank {} < {})",
                self.observability_rank,
                self.a1_margins.len()
            ));
        }
        out
    }
}

/// Numerical rank with a relative singular-value cutoff.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    let tol = max * (m.nrows().max(m.ncols()) as f64) * 1e-12;
    sv.iter().filter(|&&s| s > tol).count()
}

/// `[b, Ab, ..., A^{n-1} b]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        out.set_column(j, &col);
        col = a * col;
    }
    out
}

/// `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let q = c.nrows();
    let mut out = DMatrix::zeros(n * q, n);
    let mut block = c.clone();
    for j in 0..n {
        out.rows_mut(j * q, q).copy_from(&block);
        block = &block * a;
    }
    out
}

pub fn check_assumptions(cfg: &PlantConfig) -> Result<AssumptionReport> {
    check_assumptions_with_margin(cfg, DEFAULT_MARGIN)
}

pub fn check_assumptions_with_margin(cfg: &PlantConfig, threshold: f64) -> Result<AssumptionReport> {
    cfg.validate()?;
    let eig = cfg.a.complex_eigenvalues();
    let margins = |f: &dyn Fn(Complex64) -> Complex64| {
        eig.iter()
            .map(|&l| EigenMargin { eigenvalue: l, margin: f(l).norm() })
            .collect::<Vec<_>>()
    };
    let a1_margins = margins(&|l| char_a1(l, cfg.alpha, cfg.beta));
    let a_margins = margins(&|l| char_a(l, cfg.alpha, cfg.k_est));
    let pair = cfg.left_drive() + mat_cosh(&cfg.a)? * cfg.right_drive();
    let n = cfg.n();
    let controllability_rank = numerical_rank(&controllability_matrix(&cfg.a, &pair));
    let observability_rank = numerical_rank(&observability_matrix(&cfg.a, &cfg.c));
    Ok(AssumptionReport {
        spectrum_a1_ok: a1_margins.iter().all(|m| m.margin > threshold),
        spectrum_a_ok: a_margins.iter().all(|m| m.margin > threshold),
        a1_margins,
        a_margins,
        controllable: controllability_rank == n,
        controllability_rank,
        observable: observability_rank == n,
        observability_rank,
        margin_threshold: threshold,
    })
}

/// Real coefficients `[c_0, ..., c_{n-1}]` of the monic polynomial
/// `s^n + c_{n-1} s^{n-1} + ... + c_0` with the given roots.
pub fn poly_from_roots(roots: &[Complex64]) -> Result<Vec<f64>> {
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * r;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::invalid("desired poles must be closed under complex conjugation"));
    }
    coeffs.pop();
    Ok(coeffs.into_iter().map(|c| c.re).collect())
}

fn poly_of_matrix(a: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
    // Horner: ((A + c_{n-1}) A + c_{n-2}) A + ... + c_0
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut acc = id.clone();
    for &c in coeffs.iter().rev() {
        acc = &acc * a + &id * c;
    }
    acc
}

fn check_poles(poles: &[Complex64], n: usize) -> Result<()> {
    if poles.len() != n {
        return Err(Error::invalid(format!("expected {n} desired poles, got {}", poles.len())));
    }
    if poles.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("desired poles must be finite"));
    }
    Ok(())
}

/// `max_i min_j |eig_i - p_j| / max(1, |p_j|)` after greedy matching.
fn placement_error(m: &DMatrix<f64>, poles: &[Complex64]) -> f64 {
    let mut remaining: Vec<Complex64> = poles.to_vec();
    let mut worst: f64 = 0.0;
    for e in m.complex_eigenvalues().iter() {
        let (idx, err) = remaining
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (e - p).norm() / p.norm().max(1.0)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("one pole per eigenvalue");
        remaining.swap_remove(idx);
        worst = worst.max(err);
    }
    worst
}

/// Ackermann's formula: `K` with `σ(A + b Kᵀ) = poles`.
pub fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[Complex64]) -> Result<DVector<f64>> {
    let n = a.nrows();
    check_poles(poles, n)?;
    let ctrb = controllability_matrix(a, b);
    let rank = numerical_rank(&ctrb);
    if rank < n {
        return Err(Error::DesignInfeasible(format!(
            "pair is not controllable (controllability rank {rank} < {n})"
        )));
    }
    let phi = poly_of_matrix(a, &poly_from_roots(poles)?);
    // Last row of C^{-1}: solve Cᵀ y = e_n.
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let y = ctrb
        .transpose()
        .lu()
        .solve(&e_n)
        .ok_or_else(|| Error::DesignInfeasible("controllability matrix is singular".into()))?;
    let k = -(phi.transpose() * y);
    let closed = a + b * k.transpose();
    let err = placement_error(&closed, poles);
    if !(err <= PLACEMENT_TOL) {
        return Err(Error::DesignInfeasible(format!(
            "pole placement is ill-conditioned: placed poles deviate by {err:.3e} (relative)"
        )));
    }
    Ok(k)
}

/// State-feedback gain with `σ(A + L2(1) Kᵀ) = poles`.
pub fn place_k(cfg: &PlantConfig, ks: &KernelSet, poles: &[Complex64]) -> Result<DVector<f64>> {
    ackermann(&cfg.a, &ks.l2_at_1, poles)
}

/// Output-injection gain with `σ(A + H C) = poles`, by duality.
///
/// For several outputs the injection is restricted to `H = h vᵀ` with the
/// first weight vector `v` that makes `(Aᵀ, Cᵀ v)` controllable.
pub fn place_h(a: &DMatrix<f64>, c: &DMatrix<f64>, poles: &[Complex64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let q = c.nrows();
    if c.ncols() != n {
        return Err(Error::invalid(format!("C must have {n} columns, got {}", c.ncols())));
    }
    check_poles(poles, n)?;
    let rank = numerical_rank(&observability_matrix(a, c));
    if rank < n {
        return Err(Error::DesignInfeasible(format!(
            "(A, C) is not observable (observability rank {rank} < {n})"
        )));
    }
    let at = a.transpose();
    let mut candidates = vec![DVector::from_element(q, 1.0)];
    candidates.extend((0..q).map(|i| {
        let mut v = DVector::zeros(q);
        v[i] = 1.0;
        v
    }));
    let mut last_err = None;
    for v in candidates {
        let b = c.transpose() * &v;
        match ackermann(&at, &b, poles) {
            Ok(h) => return Ok(h * v.transpose()),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::DesignInfeasible("no single-output direction makes (A, C) observable".into())
    }))
}

/// `{-1, -2, ..., -n}`.
pub fn default_k_poles(n: usize) -> Vec<Complex64> {
    (0..n).map(|j| Complex64::new(-1.0 - j as f64, 0.0)).collect()
}

/// `{-3, -6, ..., -3n}`.
pub fn default_h_poles(n: usize) -> Vec<Complex64> {
    (0..n).map(|j| Complex64::new(-3.0 * (1.0 + j as f64), 0.0)).collect()
}

/// A desired pole given as a real number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl PoleSpec {
    pub fn value(self) -> Complex64 {
        match self {
            PoleSpec::Real(r) => Complex64::new(r, 0.0),
            PoleSpec::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub k: DVector<f64>,
    pub h: DMatrix<f64>,
    pub poles_k: Vec<Complex64>,
    pub poles_h: Vec<Complex64>,
}

impl GainSet {
    /// Largest real part of `σ(A + L2(1) Kᵀ)`.
    pub fn state_feedback_abscissa(&self, cfg: &PlantConfig, ks: &KernelSet) -> f64 {
        spectral_abscissa(&(&cfg.a + &ks.l2_at_1 * self.k.transpose()))
    }

    /// Largest real part of `σ(A + H C)`.
    pub fn observer_abscissa(&self, cfg: &PlantConfig) -> f64 {
        spectral_abscissa(&(&cfg.a + &self.h * &cfg.c))
    }
}

pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Place both gains, using the default pole sets where none are given.
pub fn synthesize(
    cfg: &PlantConfig,
    ks: &KernelSet,
    poles_k: Option<&[Complex64]>,
    poles_h: Option<&[Complex64]>,
) -> Result<GainSet> {
    let n = cfg.n();
    let poles_k = poles_k.map_or_else(|| default_k_poles(n), <[_]>::to_vec);
    let poles_h = poles_h.map_or_else(|| default_h_poles(n), <[_]>::to_vec);
    let k = place_k(cfg, ks, &poles_k)?;
    let h = place_h(&cfg.a, &cfg.c, &poles_h)?;
    Ok(GainSet { k, h, poles_k, poles_h })
}

/// Reject configurations that violate a standing assumption.
pub fn require_assumptions(cfg: &PlantConfig) -> Result<AssumptionReport> {
    let report = check_assumptions(cfg)?;
    if !report.all_ok() {
        return Err(Error::DesignInfeasible(report.failures().join("; ")));
    }
    Ok(report)
}
