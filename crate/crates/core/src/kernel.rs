//! Kernels of the state transformation
//!
//! ```text
//! Y = X + L3 w(0) + L4 w(1) + ∫ L1(x) w(x) dx + ∫ L2(x) w_t(x) dx
//! ```
//!
//! which moves the boundary input into the ODE block. With `P = A B2 + B1`
//! the kernels are
//!
//! ```text
//! L2(x) = -x G(Ax) P + cosh(Ax) Q
//! L1(x) = -sinh(Ax) P + A cosh(Ax) Q
//! L3    = -B2
//! L4    = -beta G(A) P + beta cosh(A) Q - B4
//! Q     = [A sinh A + (alpha + beta A) cosh A]^{-1} {A B4 + B3 + [cosh A + (alpha + beta A) G(A)] P}
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::design::{char_a1, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::matrixfun::{hyperbolic, Hyperbolic};
use crate::plant::PlantConfig;
use crate::wavesolver::{check_grid_size, quadrature, Against, WaveGridState};

/// Condition number above which the kernel denominator is treated as singular.
pub const DENOMINATOR_COND_LIMIT: f64 = 1e12;

/// Sampled kernels on the uniform grid `x_i = i / N`.
#[derive(Debug, Clone)]
pub struct KernelSet {
    n_grid: usize,
    /// `L1(x_i)` in column `i`.
    pub l1: DMatrix<f64>,
    /// `L2(x_i)` in column `i`.
    pub l2: DMatrix<f64>,
    pub l3: DVector<f64>,
    pub l4: DVector<f64>,
    pub q: DVector<f64>,
    pub l2_at_1: DVector<f64>,
    /// Closed-form `L2'(0) = -P`.
    pub l2_prime_0: DVector<f64>,
    /// Closed-form `L2'(1) = -cosh(A) P + A sinh(A) Q`.
    pub l2_prime_1: DVector<f64>,
}

/// State pair the transformation acts on.
#[derive(Debug, Clone)]
pub struct TransformState {
    pub x: DVector<f64>,
    pub field: WaveGridState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Max-norm residuals of the six kernel conditions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelResidual {
    /// `L2'' - A² L2` with a fourth-order difference for `L2''`.
    pub ode: f64,
    /// `L1 - A L2`.
    pub coupling: f64,
    /// `B1 - A L3 + L2'(0)` with a fourth-order one-sided `L2'(0)`.
    pub left: f64,
    /// `B2 + L3`.
    pub b2: f64,
    /// `B3 - A L4 - L2'(1) - alpha L2(1)` with a fourth-order one-sided `L2'(1)`.
    pub right: f64,
    /// `B4 + L4 - beta L2(1)`.
    pub b4: f64,
    /// The `left` and `right` residuals using the closed-form derivatives.
    pub left_analytic: f64,
    pub right_analytic: f64,
}

impl KernelResidual {
    pub fn max(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }

    /// The six residuals in the order ode, coupling, left, b2, right, b4.
    pub fn as_array(&self) -> [f64; 6] {
        [self.ode, self.coupling, self.left, self.b2, self.right, self.b4]
    }
}

pub const RESIDUAL_NAMES: [&str; 6] = [
    "L2'' - A^2 L2",
    "L1 - A L2",
    "B1 - A L3 + L2'(0)",
    "B2 + L3",
    "B3 - A L4 - L2'(1) - alpha L2(1)",
    "B4 + L4 - beta L2(1)",
];

/// `A sinh A + (alpha + beta A) cosh A`.
fn denominator(cfg: &PlantConfig, h: &Hyperbolic) -> DMatrix<f64> {
    &cfg.a * &h.sinh + cfg.robin_matrix() * &h.cosh
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn solve_denominator(cfg: &PlantConfig, h: &Hyperbolic, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let d = denominator(cfg, h);
    let cond = condition_number(&d);
    // The eigenvalues of the denominator are the characteristic values at the eigenvalues of A.
    let (worst, margin) = cfg
        .a
        .complex_eigenvalues()
        .iter()
        .map(|&l| (l, char_a1(l, cfg.alpha, cfg.beta).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default();
    if !(cond < DENOMINATOR_COND_LIMIT) || margin <= DEFAULT_MARGIN {
        return Err(Error::DesignInfeasible(format!(
            "A sinh A + (alpha + beta A) cosh A is singular (condition number {cond:.3e}); \
             eigenvalue {:.6}{:+.6}i of A is in the spectrum of the closed-loop wave operator",
            worst.re, worst.im
        )));
    }
    d.lu()
        .solve(rhs)
        .ok_or_else(|| Error::DesignInfeasible("kernel denominator is singular".into()))
}

/// The vector `Q` fixing the `cosh(Ax)` component of `L2`.
pub fn compute_q(cfg: &PlantConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    let h = hyperbolic(&cfg.a)?;
    compute_q_with(cfg, &h)
}

fn compute_q_with(cfg: &PlantConfig, h: &Hyperbolic) -> Result<DVector<f64>> {
    let p = cfg.left_drive();
    let rhs = cfg.right_drive() + (&h.cosh + cfg.robin_matrix() * &h.gfun) * &p;
    solve_denominator(cfg, h, &rhs)
}

/// `Q1 = [A sinh A + (alpha + beta A) cosh A]^{-1} [cosh A + (alpha + beta A) G(A)] B1`,
/// the special case `B2 = B3 = B4 = 0` of [`compute_q`].
pub fn reduced_q1(cfg: &PlantConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    if [&cfg.b2, &cfg.b3, &cfg.b4].iter().any(|b| b.iter().any(|&v| v != 0.0)) {
        return Err(Error::invalid("reduced Q1 requires B2 = B3 = B4 = 0"));
    }
    let h = hyperbolic(&cfg.a)?;
    let rhs = (&h.cosh + cfg.robin_matrix() * &h.gfun) * &cfg.b1;
    solve_denominator(cfg, &h, &rhs)
}

pub fn compute_kernels(cfg: &PlantConfig, n_grid: usize) -> Result<KernelSet> {
    cfg.validate()?;
    check_grid_size(n_grid)?;
    let h1 = hyperbolic(&cfg.a)?;
    let q = compute_q_with(cfg, &h1)?;
    let ks = kernels_from_q(cfg, n_grid, q)?;

    // Independent closed form: L2(1) = D^{-1} [P + cosh(A)(A B4 + B3)].
    let closed = solve_denominator(cfg, &h1, &(cfg.left_drive() + &h1.cosh * cfg.right_drive()))?;
    let gap = (&closed - &ks.l2_at_1).amax();
    if gap > 1e-9 * (1.0 + ks.l2_at_1.amax()) {
        return Err(Error::DesignInfeasible(format!(
            "kernel evaluation is ill-conditioned: two expressions for L2(1) differ by {gap:.3e}"
        )));
    }
    Ok(ks)
}

/// Kernels generated from a caller-supplied `Q` instead of the one the
/// boundary conditions determine. With a wrong `Q` the result violates the
/// right-end conditions, which makes it a fault-injection hook for
/// [`kernel_residual`].
pub fn kernels_from_q(cfg: &PlantConfig, n_grid: usize, q: DVector<f64>) -> Result<KernelSet> {
    cfg.validate()?;
    check_grid_size(n_grid)?;
    let n = cfg.n();
    if q.len() != n {
        return Err(Error::invalid(format!("Q has length {}, expected {n}", q.len())));
    }
    let h1 = hyperbolic(&cfg.a)?;
    let p = cfg.left_drive();

    let (l1, l2) = match KernelSeries::new(&cfg.a, &p, &q) {
        Some(series) => series.sample(n_grid),
        None => {
            let mut l1 = DMatrix::zeros(n, n_grid + 1);
            let mut l2 = DMatrix::zeros(n, n_grid + 1);
            for i in 0..=n_grid {
                let x = i as f64 / n_grid as f64;
                let hx = hyperbolic(&(&cfg.a * x))?;
                let cosh_q = &hx.cosh * &q;
                l2.set_column(i, &(&hx.gfun * &p * (-x) + &cosh_q));
                l1.set_column(i, &(-(&hx.sinh * &p) + &cfg.a * &cosh_q));
            }
            (l1, l2)
        }
    };

    let l2_at_1 = -(&h1.gfun * &p) + &h1.cosh * &q;
    let l4 = &l2_at_1 * cfg.beta - &cfg.b4;
    let l2_prime_1 = -(&h1.cosh * &p) + &cfg.a * (&h1.sinh * &q);

    Ok(KernelSet {
        n_grid,
        l1,
        l2,
        l3: -&cfg.b2,
        l4,
        q,
        l2_at_1,
        l2_prime_0: -p,
        l2_prime_1,
    })
}

/// Largest `‖A‖_∞` for which the kernels are summed as power series; beyond
/// it cancellation between terms would cost more accuracy than the series saves.
const SERIES_NORM_LIMIT: f64 = 8.0;

/// `L2(x) = Σ x^{2k} (u_k - x v_k)` and `L1(x) = Σ x^{2k} A (u_k - x v_k)` with
/// `u_k = A^{2k} Q / (2k)!`, `v_k = A^{2k} P / (2k+1)!`.
///
/// The coefficient vectors are shared by all nodes, so node values differ only
/// by the rounding of a scalar Horner recurrence. Evaluating the matrix
/// functions node by node instead gives errors that jump with the scaling
/// exponent, which fourth-order difference stencils amplify by `1/h²`.
struct KernelSeries {
    u: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    au: Vec<DVector<f64>>,
    av: Vec<DVector<f64>>,
}

impl KernelSeries {
    fn new(a: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> Option<Self> {
        let norm = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        if norm > SERIES_NORM_LIMIT {
            return None;
        }
        let a2 = a * a;
        let (mut u, mut v) = (vec![q.clone()], vec![p.clone()]);
        let scale = q.amax().max(p.amax()).max(f64::MIN_POSITIVE);
        for k in 1..200 {
            let kf = k as f64;
            let next_u = &a2 * &u[k - 1] / ((2.0 * kf - 1.0) * 2.0 * kf);
            let next_v = &a2 * &v[k - 1] / (2.0 * kf * (2.0 * kf + 1.0));
            let small = next_u.amax().max(next_v.amax()) <= 1e-3 * f64::EPSILON * scale;
            u.push(next_u);
            v.push(next_v);
            // Terms decay factorially once k exceeds the norm.
            if small && kf > norm {
                break;
            }
        }
        let au = u.iter().map(|t| a * t).collect();
        let av = v.iter().map(|t| a * t).collect();
        Some(Self { u, v, au, av })
    }

    fn horner(coeffs: &[DVector<f64>], t: f64) -> DVector<f64> {
        let mut acc = coeffs[coeffs.len() - 1].clone();
        for c in coeffs.iter().rev().skip(1) {
            acc = acc * t + c;
        }
        acc
    }

    fn sample(&self, n_grid: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.u[0].len();
        let mut l1 = DMatrix::zeros(n, n_grid + 1);
        let mut l2 = DMatrix::zeros(n, n_grid + 1);
        for i in 0..=n_grid {
            let x = i as f64 / n_grid as f64;
            let t = x * x;
            l2.set_column(i, &(Self::horner(&self.u, t) - Self::horner(&self.v, t) * x));
            l1.set_column(i, &(Self::horner(&self.au, t) - Self::horner(&self.av, t) * x));
        }
        (l1, l2)
    }
}

impl KernelSet {
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn check_grid(&self, s: &WaveGridState) -> Result<()> {
        if s.n() != self.n_grid {
            return Err(Error::invalid(format!(
                "field grid N = {} does not match kernel grid N = {}",
                s.n(),
                self.n_grid
            )));
        }
        Ok(())
    }

    /// `L3 w(0) + L4 w(1) + ∫ L1 w + ∫ L2 w_t`, the non-identity part of the transform.
    pub fn field_term(&self, w: &WaveGridState) -> Result<DVector<f64>> {
        self.check_grid(w)?;
        let n = w.n();
        Ok(&self.l3 * w.disp[0]
            + &self.l4 * w.disp[n]
            + quadrature(&self.l1, w, Against::Disp)?
            + quadrature(&self.l2, w, Against::Vel)?)
    }

    /// KernelSet export: CSV with columns `x, L1_1..L1_n, L2_1..L2_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        header.extend((1..=n).map(|j| format!("L1_{j}")));
        header.extend((1..=n).map(|j| format!("L2_{j}")));
        wtr.write_record(&header)?;
        for i in 0..=self.n_grid {
            let mut row = vec![format!("{:.12e}", i as f64 / self.n_grid as f64)];
            row.extend(self.l1.column(i).iter().map(|v| format!("{v:.12e}")));
            row.extend(self.l2.column(i).iter().map(|v| format!("{v:.12e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Forward: `Y = X + P(w)`. Inverse: `X = Y - P(w)`.
pub fn apply_transform(direction: Direction, s: &TransformState, ks: &KernelSet) -> Result<DVector<f64>> {
    if s.x.len() != ks.dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, kernels have {}",
            s.x.len(),
            ks.dim()
        )));
    }
    let p = ks.field_term(&s.field)?;
    Ok(match direction {
        Direction::Forward => &s.x + p,
        Direction::Inverse => &s.x - p,
    })
}

fn column_max(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Fourth-order second derivative at node `i` of equally spaced samples.
fn second_derivative_4(f: &DMatrix<f64>, i: usize, h: f64) -> DVector<f64> {
    let n = f.ncols() - 1;
    let c = |j: usize| f.column(j).into_owned();
    let scale = 1.0 / (12.0 * h * h);
    if i >= 2 && i + 2 <= n {
        (-c(i + 2) + c(i + 1) * 16.0 - c(i) * 30.0 + c(i - 1) * 16.0 - c(i - 2)) * scale
    } else {
        // One-sided stencils, mirrored at the right end.
        let (idx, sign): (Box<dyn Fn(usize) -> usize>, bool) = if i < 2 {
            (Box::new(|k| k), true)
        } else {
            (Box::new(move |k| n - k), false)
        };
        let local = if sign { i } else { n - i };
        let coeffs: [f64; 6] = if local == 0 {
            [45.0, -154.0, 214.0, -156.0, 61.0, -10.0]
        } else {
            [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]
        };
        let mut acc = DVector::zeros(f.nrows());
        for (k, ck) in coeffs.iter().enumerate() {
            acc += c(idx(k)) * *ck;
        }
        acc * scale
    }
}

/// Fourth-order one-sided first derivatives at both ends.
fn end_slopes_4(f: &DMatrix<f64>, h: f64) -> (DVector<f64>, DVector<f64>) {
    let n = f.ncols() - 1;
    let c = |j: usize| f.column(j).into_owned();
    let left = (c(0) * -25.0 + c(1) * 48.0 - c(2) * 36.0 + c(3) * 16.0 - c(4) * 3.0) / (12.0 * h);
    let right = (c(n) * 25.0 - c(n - 1) * 48.0 + c(n - 2) * 36.0 - c(n - 3) * 16.0 + c(n - 4) * 3.0) / (12.0 * h);
    (left, right)
}

/// Evaluate the six kernel conditions on the sampled kernels.
pub fn kernel_residual(ks: &KernelSet, cfg: &PlantConfig) -> KernelResidual {
    let n = ks.n_grid;
    let h = 1.0 / n as f64;
    let a2 = &cfg.a * &cfg.a;

    let ode = (0..=n)
        .map(|i| (second_derivative_4(&ks.l2, i, h) - &a2 * ks.l2.column(i)).amax())
        .fold(0.0, f64::max);
    let coupling = column_max(&(&ks.l1 - &cfg.a * &ks.l2));
    let (d0, d1) = end_slopes_4(&ks.l2, h);
    let l2_1 = ks.l2.column(n).into_owned();

    let left_with = |d: &DVector<f64>| (&cfg.b1 - &cfg.a * &ks.l3 + d).amax();
    let right_with =
        |d: &DVector<f64>| (&cfg.b3 - &cfg.a * &ks.l4 - d - &l2_1 * cfg.alpha).amax();

    KernelResidual {
        ode,
        coupling,
        left: left_with(&d0),
        b2: (&cfg.b2 + &ks.l3).amax(),
        right: right_with(&d1),
        b4: (&cfg.b4 + &ks.l4 - &l2_1 * cfg.beta).amax(),
        left_analytic: left_with(&ks.l2_prime_0),
        right_analytic: right_with(&ks.l2_prime_1),
    }
}

/// Per-sample noise of node values of a smooth function, from the eighth
/// difference. For smooth data that difference is `O(h⁸)`; what remains is
/// rounding, and `max |Δ⁸ f| / sqrt(C(16, 8))` bounds its size up to a factor
/// of a few.
fn sample_noise(f: &DMatrix<f64>) -> f64 {
    const C8: [f64; 9] = [1.0, -8.0, 28.0, -56.0, 70.0, -56.0, 28.0, -8.0, 1.0];
    let cols = f.ncols();
    if cols < C8.len() {
        return 0.0;
    }
    let max = (0..=cols - C8.len())
        .map(|j| (0..f.nrows()).map(|r| C8.iter().enumerate().map(|(k, c)| c * f[(r, j + k)]).sum::<f64>().abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    max / 12870f64.sqrt()
}

/// Size each residual can reach from floating-point rounding alone.
///
/// The per-sample noise of the computed kernels is estimated from the samples
/// and pushed through the difference stencils; independent errors combine
/// through the 2-norm of the stencil coefficients, and the largest stencils
/// are the one-sided ones at the ends. The algebraic conditions involve no
/// differencing and sit at a few ulps of the kernel scale. A residual at or
/// below this level no longer carries discretization error.
pub fn residual_floor(ks: &KernelSet, cfg: &PlantConfig) -> KernelResidual {
    // 2-norms of the one-sided second-derivative and end-slope stencils.
    const SECOND_DERIVATIVE_NORM: f64 = 315.74 / 12.0;
    const SLOPE_NORM: f64 = 67.05 / 12.0;
    let h = 1.0 / ks.n_grid as f64;
    let scale = ks.l1.amax().max(ks.l2.amax()).max(ks.l3.amax()).max(ks.l4.amax()).max(1.0);
    let noise = sample_noise(&ks.l1).max(sample_noise(&ks.l2));
    let a = cfg.a.amax();
    let dim = cfg.n() as f64;
    let algebraic = noise.max(4.0 * f64::EPSILON * scale) * (1.0 + dim * a + cfg.alpha.abs() + cfg.beta.abs());
    let ode = noise * SECOND_DERIVATIVE_NORM / (h * h) + algebraic * dim * a;
    let slope = noise * SLOPE_NORM / h;
    KernelResidual {
        ode,
        coupling: algebraic,
        left: slope + algebraic,
        b2: algebraic,
        right: slope + algebraic,
        b4: algebraic,
        left_analytic: algebraic,
        right_analytic: algebraic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar(a: f64, b1: f64) -> PlantConfig {
        let mut cfg = PlantConfig::worked_scalar();
        cfg.a = dmatrix![a];
        cfg.b1 = DVector::from_element(1, b1);
        cfg
    }

    #[test]
    fn q_worked_scalar() {
        // At A = 0 the formula collapses to (B3 + (1 + alpha) B1) / alpha.
        assert_relative_eq!(compute_q(&PlantConfig::worked_scalar()).unwrap()[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn q_scalar_a_one() {
        let (s, c) = (1f64.sinh(), 1f64.cosh());
        let expected = (c + 2.0 * s) / (s + 2.0 * c);
        assert_relative_eq!(compute_q(&scalar(1.0, 1.0)).unwrap()[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn q_vanishes_without_coupling() {
        let mut cfg = PlantConfig::demo();
        for b in [&mut cfg.b1, &mut cfg.b2, &mut cfg.b3, &mut cfg.b4] {
            b.fill(0.0);
        }
        assert_eq!(compute_q(&cfg).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn worked_scalar_kernels_are_affine() {
        let ks = compute_kernels(&PlantConfig::worked_scalar(), 20).unwrap();
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert_relative_eq!(ks.l2[(0, i)], 2.0 - x, epsilon = 1e-14);
            assert_eq!(ks.l1[(0, i)], 0.0);
        }
        assert_eq!(ks.l3[0], 0.0);
        assert_relative_eq!(ks.l4[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(ks.l2_at_1[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(ks.l2_prime_0[0], -1.0);
        assert_relative_eq!(ks.l2_prime_1[0] + ks.l2_at_1[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn structural_identities() {
        let cfg = PlantConfig::demo();
        let ks = compute_kernels(&cfg, 40).unwrap();
        assert_eq!(ks.l3, -&cfg.b2);
        assert_relative_eq!(ks.l2.column(0).into_owned(), ks.q, epsilon = 1e-14);
        assert_relative_eq!(ks.l2.column(40).into_owned(), ks.l2_at_1, epsilon = 1e-12);
        assert_relative_eq!(ks.l4, &ks.l2_at_1 * cfg.beta - &cfg.b4, epsilon = 1e-14);
    }

    #[test]
    fn residual_worked_scalar() {
        let cfg = PlantConfig::worked_scalar();
        let ks = compute_kernels(&cfg, 200).unwrap();
        let r = kernel_residual(&ks, &cfg);
        assert!(r.max() <= 1e-8, "{r:?}");
        assert!(r.left_analytic <= 1e-14 && r.right_analytic <= 1e-14);
    }

    #[test]
    fn residual_detects_injected_fault() {
        let cfg = PlantConfig::worked_scalar();
        let n = 200;
        let mut ks = compute_kernels(&cfg, n).unwrap();
        ks.l2[(0, 100)] += 1.0;
        let r = kernel_residual(&ks, &cfg);
        let h = 1.0 / n as f64;
        assert!(r.ode >= 2.0 / (h * h), "{}", r.ode);
    }

    #[test]
    fn flipped_q_breaks_right_end() {
        let cfg = PlantConfig::demo();
        let good = compute_kernels(&cfg, 100).unwrap();
        let bad = kernels_from_q(&cfg, 100, -good.q.clone()).unwrap();
        let r = kernel_residual(&bad, &cfg);
        assert!(r.right > 1e-2, "{r:?}");
        assert!(r.ode < 1e-4 && r.left < 1e-6, "{r:?}");
    }

    #[test]
    fn floor_sits_below_residuals_and_above_rounding() {
        let cfg = PlantConfig::demo();
        let ks = compute_kernels(&cfg, 400).unwrap();
        let floor = residual_floor(&ks, &cfg);
        let r = kernel_residual(&ks, &cfg);
        assert!(floor.ode < 1e-7 && floor.coupling < 1e-12, "{floor:?}");
        assert!(r.coupling <= floor.coupling && r.b2 <= floor.b2 && r.b4 <= floor.b4, "{r:?} {floor:?}");
    }

    #[test]
    fn residual_random_stable_three_by_three() {
        let a = dmatrix![-1.0, 0.4, 0.2; -0.3, -0.8, 0.5; 0.1, -0.6, -1.5];
        assert!(a.complex_eigenvalues().iter().all(|l| l.re < 0.0));
        let cfg = PlantConfig::new(
            a,
            DVector::from_vec(vec![1.0, -0.5, 0.3]),
            DVector::from_vec(vec![0.2, 0.1, 0.0]),
            DVector::from_vec(vec![0.0, 0.4, -0.2]),
            DVector::from_vec(vec![0.1, 0.0, 0.3]),
            dmatrix![1.0, 0.0, 0.0],
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        let r400 = kernel_residual(&compute_kernels(&cfg, 400).unwrap(), &cfg);
        assert!(r400.ode <= 1e-5, "{r400:?}");
        assert!(r400.max() <= 1e-5, "{r400:?}");
        // Fourth order while truncation dominates rounding.
        let r25 = kernel_residual(&compute_kernels(&cfg, 24).unwrap(), &cfg);
        let r50 = kernel_residual(&compute_kernels(&cfg, 48).unwrap(), &cfg);
        assert!(r25.ode / r50.ode >= 15.0, "{} {}", r25.ode, r50.ode);
        assert!(r25.right / r50.right >= 15.0, "{} {}", r25.right, r50.right);
    }

    #[test]
    fn difference_stencils_are_exact_on_quintics() {
        let n = 10;
        let h = 0.1;
        let f = DMatrix::from_fn(1, n + 1, |_, i| {
            let x = i as f64 * h;
            1.0 + x - 2.0 * x.powi(2) + 0.5 * x.powi(3) + x.powi(4) - 0.3 * x.powi(5)
        });
        let d2 = |x: f64| -4.0 + 3.0 * x + 12.0 * x * x - 6.0 * x.powi(3);
        for i in 0..=n {
            let got = second_derivative_4(&f, i, h)[0];
            assert!((got - d2(i as f64 * h)).abs() < 1e-9, "node {i}: {got}");
        }
        let (l, r) = end_slopes_4(&f, h);
        let d1 = |x: f64| 1.0 - 4.0 * x + 1.5 * x * x + 4.0 * x.powi(3) - 1.5 * x.powi(4);
        // the five-point one-sided stencil is exact through degree four only
        assert!((l[0] - d1(0.0)).abs() < 1e-3);
        assert!((r[0] - d1(1.0)).abs() < 1e-3);
    }

    #[test]
    fn transform_examples() {
        let cfg = PlantConfig::worked_scalar();
        let ks = compute_kernels(&cfg, 40).unwrap();
        let zero = TransformState { x: DVector::from_element(1, 0.7), field: WaveGridState::zeros(40).unwrap() };
        assert_eq!(apply_transform(Direction::Forward, &zero, &ks).unwrap(), zero.x);
        let ones = TransformState {
            x: DVector::zeros(1),
            field: WaveGridState::from_fn(40, |_| 1.0, |_| 0.0).unwrap(),
        };
        assert_relative_eq!(apply_transform(Direction::Forward, &ones, &ks).unwrap()[0], 1.0, epsilon = 1e-14);
        let bad = TransformState { x: DVector::zeros(1), field: WaveGridState::zeros(20).unwrap() };
        assert!(apply_transform(Direction::Forward, &bad, &ks).is_err());
    }

    #[test]
    fn reduced_q1_examples() {
        assert_relative_eq!(reduced_q1(&PlantConfig::worked_scalar()).unwrap()[0], 2.0, epsilon = 1e-14);
        assert_eq!(reduced_q1(&scalar(0.5, 0.0)).unwrap()[0], 0.0);
        assert!(matches!(reduced_q1(&PlantConfig::demo()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn singular_denominator_is_infeasible() {
        // Plant a root of lambda sinh lambda + (alpha + beta lambda) cosh lambda into A.
        let root = crate::design::newton_root(
            |l| char_a1(l, 1.0, 1.0),
            |l| crate::design::char_a1_derivative(l, 1.0, 1.0),
            num_complex::Complex64::new(-0.5, 1.0),
        )
        .unwrap();
        let mut cfg = PlantConfig::demo();
        cfg.a = dmatrix![root.re, root.im; -root.im, root.re];
        let err = compute_q(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("eigenvalue"), "{err}");
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = DVector<f64>> {
        proptest::collection::vec(-1.0f64..1.0, n).prop_map(DVector::from_vec)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn transform_round_trip(
            x in vec_strategy(2),
            a in proptest::collection::vec(-1.0f64..1.0, 8),
            b in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let cfg = PlantConfig::demo();
            let ks = compute_kernels(&cfg, 32).unwrap();
            let field = WaveGridState::from_fn(
                32,
                |s| a.iter().enumerate().map(|(j, c)| c * (j as f64 * s * 3.0).cos()).sum(),
                |s| b.iter().enumerate().map(|(j, c)| c * (j as f64 * s * 2.0).sin()).sum(),
            ).unwrap();
            let fwd = TransformState { x: x.clone(), field: field.clone() };
            let y = apply_transform(Direction::Forward, &fwd, &ks).unwrap();
            let back = apply_transform(Direction::Inverse, &TransformState { x: y, field: field.clone() }, &ks).unwrap();
            prop_assert!((&back - &x).amax() <= 1e-10);
            let inv = apply_transform(Direction::Inverse, &fwd, &ks).unwrap();
            let again = apply_transform(Direction::Forward, &TransformState { x: inv, field }, &ks).unwrap();
            prop_assert!((again - x).amax() <= 1e-10);
        }

        #[test]
        fn q_equals_q1_under_reduction(a in proptest::collection::vec(-1.0f64..1.0, 4), b1 in vec_strategy(2)) {
            let mut cfg = PlantConfig::demo();
            cfg.a = DMatrix::from_vec(2, 2, a);
            cfg.b1 = b1;
            cfg.b2.fill(0.0);
            cfg.b3.fill(0.0);
            cfg.b4.fill(0.0);
            let q = compute_q(&cfg).unwrap();
            let q1 = reduced_q1(&cfg).unwrap();
            prop_assert!((q - q1).amax() <= 1e-11);
        }
    }
}
