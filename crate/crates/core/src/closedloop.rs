//! Closed-loop simulation: plant, controllers, disturbance estimator,
//! observer and the error systems.
//!
//! All wave fields share one grid and one time step and are advanced by the
//! kick-drift-kick scheme of [`crate::wavesolver`]. The ODE blocks use the
//! classical fourth-order Runge–Kutta method over the same step with the
//! boundary traces held at their values at the start of the step.
//!
//! Within a step every field receives its opening half kick from data at
//! `t_n`. After the drift, the closing kicks are ordered so that every
//! boundary signal is evaluated from already-updated quantities: the plant's
//! left end first (its velocity drives the observer and estimator left ends),
//! the observer's right end next (implicit in its own boundary velocity, which
//! enters the controller), then the control `u_{n+1}`, the plant's right end,
//! and finally the estimator pair `(z, p)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{energy_diagnostics, h1_norm, EnergyDiagnostics};
use crate::design::GainSet;
use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::plant::PlantConfig;
use crate::wavesolver::{
    boundary_trace, check_cfl, simpson, simpson_weights, Boundary, End, WaveGridState,
};

/// Magnitude treated as numerical blow-up.
pub const BLOWUP_LIMIT: f64 = 1e100;

/// Interior uncertainty `f(w, w_t)` as a function of `s = ∫ (w² + w_t²)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    #[default]
    Zero,
    /// `c sin(s)`.
    BoundedNonlinear { c: f64 },
    /// Piecewise-linear `f(s)` through the given points, constant beyond them.
    Tabulated { s: Vec<f64>, f: Vec<f64> },
}

/// External disturbance `d(t)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum External {
    #[default]
    Zero,
    /// `a sin(omega t + phi)`.
    Sinusoid {
        a: f64,
        omega: f64,
        #[serde(default)]
        phi: f64,
    },
    /// `a` for `t >= t0`, zero before.
    Step { a: f64, t0: f64 },
    /// Piecewise-linear `d(t)`, constant beyond the table.
    Tabulated { t: Vec<f64>, d: Vec<f64> },
}

/// Total disturbance `F(t) = f(w, w_t) + d(t)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub f: Nonlinearity,
    #[serde(default)]
    pub d: External,
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

fn check_table(name: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid(format!("{name}: table must be non-empty with matching columns")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name}: table has non-finite entries")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{name}: abscissae must be strictly increasing")));
    }
    Ok(())
}

impl Nonlinearity {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::BoundedNonlinear { c } => c * s.sin(),
            Nonlinearity::Tabulated { s: xs, f } => interpolate(xs, f, s),
        }
    }
}

impl External {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            External::Zero => 0.0,
            External::Sinusoid { a, omega, phi } => a * (omega * t + phi).sin(),
            External::Step { a, t0 } => {
                if t >= *t0 {
                    *a
                } else {
                    0.0
                }
            }
            External::Tabulated { t: ts, d } => interpolate(ts, d, t),
        }
    }
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn sinusoid(a: f64, omega: f64) -> Self {
        Self { f: Nonlinearity::Zero, d: External::Sinusoid { a, omega, phi: 0.0 } }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.f, Nonlinearity::Zero) && matches!(self.d, External::Zero)
    }

    /// `f(0, 0) = 0` and `d ≡ 0`.
    pub fn vanishes_at_rest(&self) -> bool {
        matches!(self.d, External::Zero) && self.f.eval(0.0) == 0.0
    }

    /// Scale both parts by `c` (used by sweeps over the disturbance amplitude).
    pub fn scaled(&self, c: f64) -> Self {
        let f = match &self.f {
            Nonlinearity::Zero => Nonlinearity::Zero,
            Nonlinearity::BoundedNonlinear { c: a } => Nonlinearity::BoundedNonlinear { c: a * c },
            Nonlinearity::Tabulated { s, f } => Nonlinearity::Tabulated { s: s.clone(), f: f.iter().map(|v| v * c).collect() },
        };
        let d = match &self.d {
            External::Zero => External::Zero,
            External::Sinusoid { a, omega, phi } => External::Sinusoid { a: a * c, omega: *omega, phi: *phi },
            External::Step { a, t0 } => External::Step { a: a * c, t0: *t0 },
            External::Tabulated { t, d } => External::Tabulated { t: t.clone(), d: d.iter().map(|v| v * c).collect() },
        };
        Self { f, d }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.f {
            Nonlinearity::BoundedNonlinear { c } if !c.is_finite() => {
                return Err(Error::invalid("disturbance f: c must be finite"))
            }
            Nonlinearity::Tabulated { s, f } => check_table("disturbance f", s, f)?,
            _ => {}
        }
        match &self.d {
            External::Sinusoid { a, omega, phi } if ![a, omega, phi].iter().all(|v| v.is_finite()) => {
                Err(Error::invalid("disturbance d: sinusoid parameters must be finite"))
            }
            External::Step { a, t0 } if !(a.is_finite() && t0.is_finite()) => {
                Err(Error::invalid("disturbance d: step parameters must be finite"))
            }
            External::Tabulated { t, d } => check_table("disturbance d", t, d),
            _ => Ok(()),
        }
    }
}

/// `F = f(w, w_t) + d(t)` with `f` evaluated from `∫ (w² + w_t²)` by Simpson's rule.
pub fn eval_total_disturbance(dist: &DisturbanceSpec, w: &WaveGridState, t: f64) -> f64 {
    let f = match dist.f {
        Nonlinearity::Zero => 0.0,
        _ => {
            let sq: Vec<f64> = w.disp.iter().zip(&w.vel).map(|(a, b)| a * a + b * b).collect();
            dist.f.eval(simpson(&sq))
        }
    };
    f + dist.d.eval(t)
}

/// `F̂ = -p_x(1) - alpha p(1)`.
pub fn estimate_disturbance(p: &WaveGridState, alpha: f64) -> f64 {
    let tr = boundary_trace(p, End::Right);
    -tr.slope - alpha * tr.value
}

/// `Kᵀ [x + L3 f(0) + L4 w1 + ∫ L1 f + ∫ L2 f_t]` with Simpson weights folded in.
#[derive(Debug, Clone)]
struct FeedbackTerms {
    k: DVector<f64>,
    l1: Vec<f64>,
    l2: Vec<f64>,
    l3: f64,
    l4: f64,
}

impl FeedbackTerms {
    fn new(ks: &KernelSet, k: &DVector<f64>) -> Result<Self> {
        if k.len() != ks.dim() {
            return Err(Error::invalid(format!("K has length {}, expected {}", k.len(), ks.dim())));
        }
        let weights = simpson_weights(ks.n_grid());
        let kl1 = ks.l1.tr_mul(k);
        let kl2 = ks.l2.tr_mul(k);
        Ok(Self {
            k: k.clone(),
            l1: weights.iter().zip(kl1.iter()).map(|(w, v)| w * v).collect(),
            l2: weights.iter().zip(kl2.iter()).map(|(w, v)| w * v).collect(),
            l3: k.dot(&ks.l3),
            l4: k.dot(&ks.l4),
        })
    }

    /// Value with the right-end velocity of `f` left out.
    fn partial(&self, x: &DVector<f64>, f: &WaveGridState, w1: f64) -> f64 {
        let n = f.n();
        let mut acc = self.k.dot(x) + self.l3 * f.disp[0] + self.l4 * w1;
        for i in 0..=n {
            acc += self.l1[i] * f.disp[i];
        }
        for i in 0..n {
            acc += self.l2[i] * f.vel[i];
        }
        acc
    }

    /// Coefficient of the right-end velocity of `f`.
    fn end_gain(&self) -> f64 {
        *self.l2.last().expect("non-empty grid")
    }

    fn eval(&self, x: &DVector<f64>, f: &WaveGridState, w1: f64) -> f64 {
        self.partial(x, f, w1) + self.end_gain() * f.vel[f.n()]
    }
}

/// `u = -alpha w(1) - beta w_t(1) + Kᵀ [X + L3 w(0) + L4 w(1) + ∫ L1 w + ∫ L2 w_t]`.
pub fn control_state_feedback(
    x: &DVector<f64>,
    w: &WaveGridState,
    ks: &KernelSet,
    k: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    ks.check_grid(w)?;
    let n = w.n();
    let y = x + ks.field_term(w)?;
    Ok(-alpha * w.disp[n] - beta * w.vel[n] + k.dot(&y))
}

/// `u = -alpha w(1) - beta ŵ_t(1) + Kᵀ [X̂ + L3 ŵ(0) + L4 w(1) + ∫ L1 ŵ + ∫ L2 ŵ_t] + p_x(1) + alpha p(1)`.
///
/// The measured `w(1)` multiplies `L4` while `ŵ(0)` and `ŵ_t(1)` come from the observer.
#[allow(clippy::too_many_arguments)]
pub fn control_output_feedback(
    xhat: &DVector<f64>,
    what: &WaveGridState,
    w1: f64,
    p: &WaveGridState,
    ks: &KernelSet,
    k: &DVector<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    ks.check_grid(what)?;
    what.check_same_grid(p)?;
    let n = what.n();
    let mut field = ks.field_term(what)?;
    field += &ks.l4 * (w1 - what.disp[n]);
    let y = xhat + field;
    Ok(-alpha * w1 - beta * what.vel[n] + k.dot(&y) - estimate_disturbance(p, alpha))
}

/// One classical Runge–Kutta step of `x' = M x + g` with constant `g`.
fn rk4_affine(m: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let f = |y: &DVector<f64>| m * y + g;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (0.5 * dt)));
    let k3 = f(&(x + &k2 * (0.5 * dt)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// `B1 f(0) + B2 g(0) + B3 f(1) + B4 g(1)`.
fn ode_forcing(cfg: &PlantConfig, f0: f64, g0: f64, f1: f64, g1: f64) -> DVector<f64> {
    &cfg.b1 * f0 + &cfg.b2 * g0 + &cfg.b3 * f1 + &cfg.b4 * g1
}

fn field_is_sane(s: &WaveGridState) -> bool {
    s.disp.iter().chain(&s.vel).all(|v| v.abs() < BLOWUP_LIMIT)
}

fn vector_is_sane(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.abs() < BLOWUP_LIMIT)
}

/// One recorded sample. Columns that do not apply to a scenario are NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub u: f64,
    /// `w_t(0)`.
    pub y1: f64,
    /// `w(1)`.
    pub y2: f64,
    /// First component of `C X`.
    pub y3: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "F_hat")]
    pub f_hat: f64,
    #[serde(rename = "norm_X")]
    pub norm_x: f64,
    pub norm_w: f64,
    #[serde(rename = "norm_Xhat")]
    pub norm_xhat: f64,
    pub norm_what: f64,
    pub norm_z: f64,
    pub norm_p: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub rho: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    /// `‖(X̃, w̃, w̃_t, p̂, p̂_t)‖`.
    pub norm_err: f64,
}

pub const TRACE_COLUMNS: [&str; 18] = [
    "t", "u", "y1", "y2", "y3", "F", "F_hat", "norm_X", "norm_w", "norm_Xhat", "norm_what", "norm_z",
    "norm_p", "E0", "rho", "E", "E2", "norm_err",
];

impl TraceRow {
    fn values(&self) -> [f64; 18] {
        [
            self.t, self.u, self.y1, self.y2, self.y3, self.f, self.f_hat, self.norm_x, self.norm_w,
            self.norm_xhat, self.norm_what, self.norm_z, self.norm_p, self.e0, self.rho, self.e, self.e2,
            self.norm_err,
        ]
    }

    fn empty(t: f64) -> Self {
        let nan = f64::NAN;
        Self {
            t,
            u: nan,
            y1: nan,
            y2: nan,
            y3: nan,
            f: nan,
            f_hat: nan,
            norm_x: nan,
            norm_w: nan,
            norm_xhat: nan,
            norm_what: nan,
            norm_z: nan,
            norm_p: nan,
            e0: nan,
            rho: nan,
            e: nan,
            e2: nan,
            norm_err: nan,
        }
    }

    /// `‖(X, w, w_t)‖`.
    pub fn norm_plant(&self) -> f64 {
        self.norm_x.hypot(self.norm_w)
    }

    /// `‖(X̂, ŵ, ŵ_t)‖`.
    pub fn norm_observer(&self) -> f64 {
        self.norm_xhat.hypot(self.norm_what)
    }

    /// `‖(z, z_t, p, p_t)‖`.
    pub fn norm_estimator(&self) -> f64 {
        self.norm_z.hypot(self.norm_p)
    }
}

/// Recorded time series of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&TraceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// CSV with the columns of [`TRACE_COLUMNS`], values in `%.12e` format.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(TRACE_COLUMNS)?;
        for r in &self.rows {
            wtr.write_record(r.values().iter().map(|v| format!("{v:.12e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Default fourth-difference damping coefficient.
pub const DEFAULT_DISSIPATION: f64 = 0.02;

fn check_dissipation(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Config(format!("dissipation must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

/// Time stepping parameters shared by all scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    /// Record every this many steps (the final step is always recorded).
    pub record_every: usize,
    /// Fourth-difference velocity damping applied to every field after each
    /// step, see [`WaveGridState::dissipate`].
    pub dissipation: f64,
}

impl SimOptions {
    /// `dt = dt_factor / N`, shrunk so that the horizon is a whole number of steps.
    pub fn new(horizon: f64, n_grid: usize, dt_factor: f64, record_every: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let dx = 1.0 / n_grid as f64;
        check_cfl(n_grid, dt_factor * dx)?;
        let steps = (horizon / (dt_factor * dx)).ceil().max(1.0);
        Ok(Self { horizon, dt: horizon / steps, record_every, dissipation: DEFAULT_DISSIPATION })
    }

    pub fn with_dissipation(mut self, eps: f64) -> Result<Self> {
        check_dissipation(eps)?;
        self.dissipation = eps;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

fn drive<L>(lp: &mut L, opts: &SimOptions, step: fn(&mut L) -> Result<()>, row: fn(&L) -> TraceRow) -> Result<Trace> {
    let steps = opts.steps();
    let mut trace = Trace::default();
    trace.rows.push(row(lp));
    for i in 1..=steps {
        if let Err(e) = step(lp) {
            return Err(match e {
                Error::BlowUp { t, what, .. } => Error::BlowUp { t, what, partial: Box::new(trace) },
                other => other,
            });
        }
        if i % opts.record_every == 0 || i == steps {
            trace.rows.push(row(lp));
        }
    }
    Ok(trace)
}

/// Plant under the full-state controller, `F ≡ 0`.
#[derive(Debug, Clone)]
pub struct StateFeedbackLoop {
    cfg: PlantConfig,
    fb: FeedbackTerms,
    x: DVector<f64>,
    w: WaveGridState,
    u: f64,
    dt: f64,
    dissipation: f64,
}

impl StateFeedbackLoop {
    pub fn new(cfg: &PlantConfig, ks: &KernelSet, k: &DVector<f64>, x0: DVector<f64>, w0: WaveGridState, dt: f64) -> Result<Self> {
        cfg.validate()?;
        ks.check_grid(&w0)?;
        check_cfl(w0.n(), dt)?;
        if x0.len() != cfg.n() {
            return Err(Error::invalid(format!("X(0) has length {}, expected {}", x0.len(), cfg.n())));
        }
        let fb = FeedbackTerms::new(ks, k)?;
        let n = w0.n();
        let u = -cfg.alpha * w0.disp[n] - cfg.beta * w0.vel[n] + fb.eval(&x0, &w0, w0.disp[n]);
        Ok(Self { cfg: cfg.clone(), fb, x: x0, w: w0, u, dt, dissipation: DEFAULT_DISSIPATION })
    }

    pub fn with_dissipation(mut self, eps: f64) -> Result<Self> {
        check_dissipation(eps)?;
        self.dissipation = eps;
        Ok(self)
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn w(&self) -> &WaveGridState {
        &self.w
    }

    pub fn t(&self) -> f64 {
        self.w.t
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn step(&mut self) -> Result<()> {
        let (cfg, dt) = (&self.cfg, self.dt);
        let n = self.w.n();
        let w = &mut self.w;
        let g = ode_forcing(cfg, w.disp[0], w.vel[0], w.disp[n], w.vel[n]);
        let x_next = rk4_affine(&cfg.a, &g, &self.x, dt);

        w.half_kick(Boundary::neumann(0.0), Boundary::neumann(self.u), dt);
        w.drift(dt);
        w.kick_interior(dt);
        w.kick_end(End::Left, Boundary::neumann(0.0), dt);
        self.x = x_next;
        let value = -cfg.alpha * w.disp[n] + self.fb.partial(&self.x, w, w.disp[n]);
        let gain = -cfg.beta + self.fb.end_gain();
        w.kick_end(End::Right, Boundary::Flux { value, gain, stiffness: 0.0 }, dt);
        self.u = value + gain * w.vel[n];
        w.dissipate(self.dissipation);

        if !(field_is_sane(w) && vector_is_sane(&self.x)) {
            return Err(Error::BlowUp { t: w.t, what: "state-feedback loop".into(), partial: Box::default() });
        }
        Ok(())
    }

    pub fn row(&self) -> TraceRow {
        let n = self.w.n();
        let mut r = TraceRow::empty(self.w.t);
        r.u = self.u;
        r.y1 = self.w.vel[0];
        r.y2 = self.w.disp[n];
        r.y3 = (&self.cfg.c * &self.x)[0];
        r.f = 0.0;
        r.norm_x = self.x.norm();
        r.norm_w = h1_norm(&self.w, self.cfg.alpha);
        r
    }
}

pub fn simulate_state_feedback(
    cfg: &PlantConfig,
    ks: &KernelSet,
    gains: &GainSet,
    x0: DVector<f64>,
    w0: WaveGridState,
    opts: &SimOptions,
) -> Result<Trace> {
    let mut lp = StateFeedbackLoop::new(cfg, ks, &gains.k, x0, w0, opts.dt)?.with_dissipation(opts.dissipation)?;
    drive(&mut lp, opts, StateFeedbackLoop::step, StateFeedbackLoop::row)
}

/// The ten-component state of the output-feedback loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub x: DVector<f64>,
    pub w: WaveGridState,
    pub xhat: DVector<f64>,
    pub what: WaveGridState,
    pub z: WaveGridState,
    pub p: WaveGridState,
}

impl ClosedLoopState {
    /// Checks grids, dimensions and `p(1, 0) = z(1, 0) - w(1, 0)`.
    pub fn new(
        x: DVector<f64>,
        w: WaveGridState,
        xhat: DVector<f64>,
        what: WaveGridState,
        z: WaveGridState,
        p: WaveGridState,
    ) -> Result<Self> {
        for f in [&what, &z, &p] {
            w.check_same_grid(f)?;
        }
        if x.len() != xhat.len() {
            return Err(Error::invalid("X(0) and X̂(0) differ in dimension"));
        }
        let n = w.n();
        let gap = p.disp[n] - (z.disp[n] - w.disp[n]);
        if gap.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "incompatible initial data: p(1,0) - (z(1,0) - w(1,0)) = {gap:.3e}"
            )));
        }
        let gap = p.vel[n] - (z.vel[n] - w.vel[n]);
        if gap.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "incompatible initial data: p_t(1,0) - (z_t(1,0) - w_t(1,0)) = {gap:.3e}"
            )));
        }
        let mut s = Self { x, w, xhat, what, z, p };
        s.set_time(0.0);
        Ok(s)
    }

    /// Observer and estimator at rest, `p(·, 0)` the constant `z(1, 0) - w(1, 0)`
    /// with velocity `z_t(1, 0) - w_t(1, 0)`.
    pub fn from_plant(x: DVector<f64>, w: WaveGridState) -> Result<Self> {
        let n = w.n();
        let zero = WaveGridState::zeros(n)?;
        let p = WaveGridState::from_fn(n, |_| -w.disp[n], |_| -w.vel[n])?;
        let xhat = DVector::zeros(x.len());
        Self::new(x, w, xhat, zero.clone(), zero, p)
    }

    fn set_time(&mut self, t: f64) {
        for f in [&mut self.w, &mut self.what, &mut self.z, &mut self.p] {
            f.t = t;
        }
    }

    pub fn t(&self) -> f64 {
        self.w.t
    }

    /// `ẑ = z - w`.
    pub fn z_hat(&self) -> WaveGridState {
        self.z.minus(&self.w)
    }

    /// `p̂ = p - ẑ`.
    pub fn p_hat(&self) -> WaveGridState {
        self.p.minus(&self.z_hat())
    }

    /// `w̃ = ŵ - w`.
    pub fn w_tilde(&self) -> WaveGridState {
        self.what.minus(&self.w)
    }

    /// `X̃ = X̂ - X`.
    pub fn x_tilde(&self) -> DVector<f64> {
        &self.xhat - &self.x
    }

    fn is_sane(&self) -> bool {
        [&self.w, &self.what, &self.z, &self.p].iter().all(|f| field_is_sane(f))
            && vector_is_sane(&self.x)
            && vector_is_sane(&self.xhat)
    }
}

/// Boundary data applied to the plant in the last step, for driving the
/// directly integrated error systems.
#[derive(Debug, Clone, Copy, Default)]
struct AppliedDisturbance {
    opening: f64,
    closing: f64,
}

/// Plant, observer and disturbance estimator under the output-feedback controller.
#[derive(Debug, Clone)]
pub struct OutputFeedbackLoop {
    cfg: PlantConfig,
    fb: FeedbackTerms,
    h: DMatrix<f64>,
    joint: DMatrix<f64>,
    dist: DisturbanceSpec,
    state: ClosedLoopState,
    u: f64,
    f: f64,
    applied: AppliedDisturbance,
    dt: f64,
    dissipation: f64,
}

impl OutputFeedbackLoop {
    pub fn new(
        cfg: &PlantConfig,
        ks: &KernelSet,
        gains: &GainSet,
        ic: ClosedLoopState,
        dist: &DisturbanceSpec,
        dt: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        dist.validate()?;
        ks.check_grid(&ic.w)?;
        check_cfl(ic.w.n(), dt)?;
        let n = cfg.n();
        if ic.x.len() != n {
            return Err(Error::invalid(format!("X(0) has length {}, expected {n}", ic.x.len())));
        }
        if gains.h.shape() != (n, cfg.q()) {
            return Err(Error::invalid(format!("H must be {n}x{}, got {:?}", cfg.q(), gains.h.shape())));
        }
        let fb = FeedbackTerms::new(ks, &gains.k)?;
        let hc = &gains.h * &cfg.c;
        let mut joint = DMatrix::zeros(2 * n, 2 * n);
        joint.view_mut((0, 0), (n, n)).copy_from(&cfg.a);
        joint.view_mut((n, 0), (n, n)).copy_from(&(-&hc));
        joint.view_mut((n, n), (n, n)).copy_from(&(&cfg.a + &hc));
        let mut lp = Self {
            cfg: cfg.clone(),
            fb,
            h: gains.h.clone(),
            joint,
            dist: dist.clone(),
            state: ic,
            u: 0.0,
            f: 0.0,
            applied: AppliedDisturbance::default(),
            dt,
            dissipation: DEFAULT_DISSIPATION,
        };
        lp.u = lp.control();
        lp.f = eval_total_disturbance(&lp.dist, &lp.state.w, lp.state.t());
        Ok(lp)
    }

    pub fn with_dissipation(mut self, eps: f64) -> Result<Self> {
        check_dissipation(eps)?;
        self.dissipation = eps;
        Ok(self)
    }

    pub fn state(&self) -> &ClosedLoopState {
        &self.state
    }

    pub fn t(&self) -> f64 {
        self.state.t()
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    /// `F(t)` as applied at the current time level.
    pub fn disturbance(&self) -> f64 {
        self.f
    }

    fn control(&self) -> f64 {
        let s = &self.state;
        let n = s.w.n();
        let w1 = s.w.disp[n];
        -self.cfg.alpha * w1 - self.cfg.beta * s.what.vel[n] + self.fb.eval(&s.xhat, &s.what, w1)
            - estimate_disturbance(&s.p, self.cfg.alpha)
    }

    pub fn step(&mut self) -> Result<()> {
        let cfg = &self.cfg;
        let (alpha, k, dt) = (cfg.alpha, cfg.k_est, self.dt);
        let nx = cfg.n();
        let s = &mut self.state;
        let n = s.w.n();

        // ODE blocks with traces held at t_n.
        let mut g = DVector::zeros(2 * nx);
        g.rows_mut(0, nx).copy_from(&ode_forcing(cfg, s.w.disp[0], s.w.vel[0], s.w.disp[n], s.w.vel[n]));
        g.rows_mut(nx, nx).copy_from(&ode_forcing(cfg, s.what.disp[0], s.w.vel[0], s.w.disp[n], s.what.vel[n]));
        let mut joint_state = DVector::zeros(2 * nx);
        joint_state.rows_mut(0, nx).copy_from(&s.x);
        joint_state.rows_mut(nx, nx).copy_from(&s.xhat);
        let joint_next = rk4_affine(&self.joint, &g, &joint_state, dt);

        // Opening half kicks from data at t_n.
        let wv0 = s.w.vel[0];
        let w1 = s.w.disp[n];
        let f_hat = estimate_disturbance(&s.p, alpha);
        let bc_w = Boundary::neumann(self.u + self.f);
        let bc_what = Boundary::neumann(-alpha * (s.what.disp[n] - w1) + self.u + f_hat);
        let bc_z = Boundary::neumann(-alpha * (s.z.disp[n] - w1) + self.u);
        let left_rel = Boundary::damped_relative(k, wv0);
        s.w.half_kick(Boundary::neumann(0.0), bc_w, dt);
        s.what.half_kick(left_rel, bc_what, dt);
        s.z.half_kick(left_rel, bc_z, dt);
        s.p.half_kick(Boundary::damped(k), Boundary::dirichlet(0.0, 0.0), dt);
        self.applied.opening = self.f;

        for f in [&mut s.w, &mut s.what, &mut s.z, &mut s.p] {
            f.drift(dt);
        }
        s.p.pin(End::Right, s.z.disp[n] - s.w.disp[n]);
        for f in [&mut s.w, &mut s.what, &mut s.z, &mut s.p] {
            f.kick_interior(dt);
        }

        s.w.kick_end(End::Left, Boundary::neumann(0.0), dt);
        let wv0 = s.w.vel[0];
        s.what.kick_end(End::Left, Boundary::damped_relative(k, wv0), dt);
        s.x.copy_from(&joint_next.rows(0, nx));
        s.xhat.copy_from(&joint_next.rows(nx, nx));

        // ŵ_x(1) = -alpha (ŵ(1) - w(1)) + u - p_x(1) - alpha p(1); the estimator
        // terms of u cancel, leaving a condition affine in ŵ_t(1).
        let w1 = s.w.disp[n];
        let value = -alpha * s.what.disp[n] + self.fb.partial(&s.xhat, &s.what, w1);
        let gain = -cfg.beta + self.fb.end_gain();
        s.what.kick_end(End::Right, Boundary::Flux { value, gain, stiffness: 0.0 }, dt);
        s.p.kick_end(End::Left, Boundary::damped(k), dt);

        let u = -alpha * w1 - cfg.beta * s.what.vel[n] + self.fb.eval(&s.xhat, &s.what, w1)
            - estimate_disturbance(&s.p, alpha);
        let f = eval_total_disturbance(&self.dist, &s.w, s.w.t);
        s.w.kick_end(End::Right, Boundary::neumann(u + f), dt);
        s.z.kick_end(End::Left, Boundary::damped_relative(k, wv0), dt);
        s.z.kick_end(End::Right, Boundary::neumann(-alpha * (s.z.disp[n] - w1) + u), dt);
        let rate = s.z.vel[n] - s.w.vel[n];
        s.p.kick_end(End::Right, Boundary::dirichlet(s.z.disp[n] - w1, rate), dt);

        for f in [&mut s.w, &mut s.what, &mut s.z, &mut s.p] {
            f.dissipate(self.dissipation);
        }
        self.u = u;
        self.f = f;
        self.applied.closing = f;

        if !s.is_sane() {
            return Err(Error::BlowUp { t: s.t(), what: "output-feedback loop".into(), partial: Box::default() });
        }
        Ok(())
    }

    pub fn row(&self) -> TraceRow {
        let s = &self.state;
        let n = s.w.n();
        let alpha = self.cfg.alpha;
        let w_tilde = s.w_tilde();
        let p_hat = s.p_hat();
        let diag = energy_diagnostics(&w_tilde, &p_hat, &w_tilde.plus(&p_hat), alpha);
        let mut r = TraceRow::empty(s.t());
        r.u = self.u;
        r.y1 = s.w.vel[0];
        r.y2 = s.w.disp[n];
        r.y3 = (&self.cfg.c * &s.x)[0];
        r.f = self.f;
        r.f_hat = estimate_disturbance(&s.p, alpha);
        r.norm_x = s.x.norm();
        r.norm_w = h1_norm(&s.w, alpha);
        r.norm_xhat = s.xhat.norm();
        r.norm_what = h1_norm(&s.what, alpha);
        r.norm_z = h1_norm(&s.z, alpha);
        r.norm_p = h1_norm(&s.p, alpha);
        set_energies(&mut r, &diag, &s.x_tilde());
        r
    }

    /// Output-injection gain in use.
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
}

fn set_energies(r: &mut TraceRow, d: &EnergyDiagnostics, x_tilde: &DVector<f64>) {
    r.e0 = d.e0;
    r.rho = d.rho;
    r.e = d.e;
    r.e2 = d.e2;
    // ‖w̃‖² + ‖p̂‖² is E0.
    r.norm_err = (x_tilde.norm_squared() + d.e0).sqrt();
}

pub fn simulate_output_feedback(
    cfg: &PlantConfig,
    ks: &KernelSet,
    gains: &GainSet,
    ic: ClosedLoopState,
    dist: &DisturbanceSpec,
    opts: &SimOptions,
) -> Result<Trace> {
    let mut lp = OutputFeedbackLoop::new(cfg, ks, gains, ic, dist, opts.dt)?.with_dissipation(opts.dissipation)?;
    drive(&mut lp, opts, OutputFeedbackLoop::step, OutputFeedbackLoop::row)
}

/// Error variables `ẑ`, `p̂`, `w̃`, `X̃`, `ε̃` integrated by their own equations
/// alongside the full loop that supplies `F(t)`.
#[derive(Debug, Clone)]
pub struct ErrorSystemsLoop {
    full: OutputFeedbackLoop,
    z_hat: WaveGridState,
    p_hat: WaveGridState,
    w_tilde: WaveGridState,
    x_tilde: DVector<f64>,
    eps: WaveGridState,
    a_hc: DMatrix<f64>,
    superposition_gap_linear: f64,
    superposition_gap: f64,
    epsilon_gap: f64,
    identity_gap: f64,
    identity_gap_settled: f64,
}

/// Two unit-speed transits of the domain.
pub const IDENTITY_SETTLE_TIME: f64 = 2.0;

/// Accuracy checks accumulated over an error-systems run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSystemsSummary {
    /// Direct `ẑ`, `p̂` against differences of full-loop fields. Both see the
    /// same boundary data as the full loop, so this is at rounding level.
    pub superposition_gap_linear: f64,
    /// Direct `ẑ`, `p̂`, `w̃`, `X̃` against differences of full-loop fields.
    /// `w̃` is driven by `p̂_x(1)` where the full loop applies `F̂ - F`; the
    /// two agree up to the discrete boundary identity, so this is a grid error
    /// that keeps the start-up contribution for the whole run.
    pub superposition_gap: f64,
    /// Direct `ε̃` against direct `w̃ + p̂`.
    pub epsilon_gap: f64,
    /// `max |F + ẑ_x(1) + alpha ẑ(1)|` with a one-sided slope.
    pub identity_gap: f64,
    /// Same maximum over `t >= IDENTITY_SETTLE_TIME`, after the start-up
    /// corner has crossed the domain and left through `x = 0`.
    pub identity_gap_settled: f64,
}

impl ErrorSystemsLoop {
    pub fn new(
        cfg: &PlantConfig,
        ks: &KernelSet,
        gains: &GainSet,
        ic: ClosedLoopState,
        dist: &DisturbanceSpec,
        dt: f64,
    ) -> Result<Self> {
        let z_hat = ic.z_hat();
        let p_hat = ic.p_hat();
        let w_tilde = ic.w_tilde();
        let x_tilde = ic.x_tilde();
        let eps = w_tilde.plus(&p_hat);
        let full = OutputFeedbackLoop::new(cfg, ks, gains, ic, dist, dt)?;
        let a_hc = &cfg.a + &gains.h * &cfg.c;
        let mut lp = Self {
            full,
            z_hat,
            p_hat,
            w_tilde,
            x_tilde,
            eps,
            a_hc,
            superposition_gap_linear: 0.0,
            superposition_gap: 0.0,
            epsilon_gap: 0.0,
            identity_gap: 0.0,
            identity_gap_settled: 0.0,
        };
        lp.update_gaps();
        Ok(lp)
    }

    pub fn t(&self) -> f64 {
        self.full.t()
    }

    /// Applies to the full loop and to the directly integrated error fields.
    pub fn with_dissipation(mut self, eps: f64) -> Result<Self> {
        self.full = self.full.with_dissipation(eps)?;
        Ok(self)
    }

    pub fn full(&self) -> &OutputFeedbackLoop {
        &self.full
    }

    pub fn z_hat(&self) -> &WaveGridState {
        &self.z_hat
    }

    pub fn p_hat(&self) -> &WaveGridState {
        &self.p_hat
    }

    pub fn w_tilde(&self) -> &WaveGridState {
        &self.w_tilde
    }

    pub fn x_tilde(&self) -> &DVector<f64> {
        &self.x_tilde
    }

    pub fn eps(&self) -> &WaveGridState {
        &self.eps
    }

    pub fn summary(&self) -> ErrorSystemsSummary {
        ErrorSystemsSummary {
            superposition_gap_linear: self.superposition_gap_linear,
            superposition_gap: self.superposition_gap,
            epsilon_gap: self.epsilon_gap,
            identity_gap: self.identity_gap,
            identity_gap_settled: self.identity_gap_settled,
        }
    }

    fn update_gaps(&mut self) {
        let s = self.full.state();
        let linear = self.z_hat.max_abs_diff(&s.z_hat()).max(self.p_hat.max_abs_diff(&s.p_hat()));
        let gap = linear
            .max(self.w_tilde.max_abs_diff(&s.w_tilde()))
            .max((&self.x_tilde - s.x_tilde()).amax());
        let settled = self.t() >= IDENTITY_SETTLE_TIME;
        self.superposition_gap_linear = self.superposition_gap_linear.max(linear);
        self.superposition_gap = self.superposition_gap.max(gap);
        self.epsilon_gap = self.epsilon_gap.max(self.eps.max_abs_diff(&self.w_tilde.plus(&self.p_hat)));
        let tr = boundary_trace(&self.z_hat, End::Right);
        let identity = (self.full.disturbance() + tr.slope + self.full.cfg.alpha * tr.value).abs();
        self.identity_gap = self.identity_gap.max(identity);
        if settled {
            self.identity_gap_settled = self.identity_gap_settled.max(identity);
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let cfg = &self.full.cfg;
        let (alpha, k, dt) = (cfg.alpha, cfg.k_est, self.full.dt);
        let n = self.z_hat.n();
        let damped = Boundary::damped(k);

        let wt = &self.w_tilde;
        let g = &cfg.b1 * wt.disp[0] + &cfg.b4 * wt.vel[n];
        let x_next = rk4_affine(&self.a_hc, &g, &self.x_tilde, dt);

        let f_open = self.full.f;
        let zero = Boundary::dirichlet(0.0, 0.0);
        // w̃_x(1) = -alpha w̃(1) - p̂_x(1); the two-point slope keeps w̃ + p̂
        // on the same discrete Robin condition as ε̃.
        let inv_h = n as f64;
        let bc_w_tilde = |p_hat: &WaveGridState| Boundary::Flux {
            value: -(p_hat.disp[n] - p_hat.disp[n - 1]) * inv_h,
            gain: 0.0,
            stiffness: alpha,
        };
        let open_w = bc_w_tilde(&self.p_hat);
        self.z_hat.half_kick(damped, Boundary::Flux { value: -f_open, gain: 0.0, stiffness: alpha }, dt);
        self.p_hat.half_kick(damped, zero, dt);
        self.w_tilde.half_kick(damped, open_w, dt);
        self.eps.half_kick(damped, Boundary::robin(alpha, 0.0, 0.0), dt);

        self.full.step()?;
        let f_close = self.full.applied.closing;
        debug_assert_eq!(self.full.applied.opening, f_open);

        for f in [&mut self.z_hat, &mut self.p_hat, &mut self.w_tilde, &mut self.eps] {
            f.drift(dt);
        }
        self.p_hat.pin(End::Right, 0.0);
        for f in [&mut self.z_hat, &mut self.p_hat, &mut self.w_tilde, &mut self.eps] {
            f.kick_interior(dt);
        }
        for f in [&mut self.z_hat, &mut self.p_hat, &mut self.w_tilde, &mut self.eps] {
            f.kick_end(End::Left, damped, dt);
        }
        self.z_hat.kick_end(End::Right, Boundary::Flux { value: -f_close, gain: 0.0, stiffness: alpha }, dt);
        self.p_hat.kick_end(End::Right, zero, dt);
        let close_w = bc_w_tilde(&self.p_hat);
        self.w_tilde.kick_end(End::Right, close_w, dt);
        self.eps.kick_end(End::Right, Boundary::robin(alpha, 0.0, 0.0), dt);
        self.x_tilde = x_next;
        let eps = self.full.dissipation;
        for f in [&mut self.z_hat, &mut self.p_hat, &mut self.w_tilde, &mut self.eps] {
            f.dissipate(eps);
        }

        let sane = [&self.z_hat, &self.p_hat, &self.w_tilde, &self.eps].iter().all(|f| field_is_sane(f))
            && vector_is_sane(&self.x_tilde);
        if !sane {
            return Err(Error::BlowUp { t: self.t(), what: "error systems".into(), partial: Box::default() });
        }
        self.update_gaps();
        Ok(())
    }

    /// Full-loop row with the energy columns taken from the direct error fields.
    pub fn row(&self) -> TraceRow {
        let mut r = self.full.row();
        let d = energy_diagnostics(&self.w_tilde, &self.p_hat, &self.eps, self.full.cfg.alpha);
        set_energies(&mut r, &d, &self.x_tilde);
        r
    }
}

pub fn simulate_error_systems(
    cfg: &PlantConfig,
    ks: &KernelSet,
    gains: &GainSet,
    ic: ClosedLoopState,
    dist: &DisturbanceSpec,
    opts: &SimOptions,
) -> Result<(Trace, ErrorSystemsSummary)> {
    let mut lp = ErrorSystemsLoop::new(cfg, ks, gains, ic, dist, opts.dt)?.with_dissipation(opts.dissipation)?;
    let trace = drive(&mut lp, opts, ErrorSystemsLoop::step, ErrorSystemsLoop::row)?;
    Ok((trace, lp.summary()))
}

/// One step of an isolated `p̂` run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyStep {
    pub t: f64,
    /// Simpson value of `∫ (p̂_x² + p̂_t²)`.
    pub e2: f64,
    /// Staggered discrete energy between this step and the next.
    pub e2_discrete: f64,
    /// Decrease of the discrete energy over this step.
    pub decrement: f64,
    /// `2 k p̂_t(0)² dt`.
    pub predicted: f64,
}

/// Integrate `p̂_tt = p̂_xx`, `p̂_x(0) = k p̂_t(0)`, `p̂(1) = 0` and record its energies.
pub fn p_hat_energy_run(p0: WaveGridState, k: f64, dt: f64, steps: usize) -> Result<Vec<EnergyStep>> {
    use crate::analysis::h2_norm_sq;
    use crate::wavesolver::{leapfrog_energy, step_wave};

    let left = move |_: f64| Boundary::damped(k);
    let right = |_: f64| Boundary::dirichlet(0.0, 0.0);
    let mut prev = p0;
    let mut cur = step_wave(&prev, &left, &right, dt)?;
    let mut e_prev = leapfrog_energy(&prev, &cur, dt, 0.0);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let next = step_wave(&cur, &left, &right, dt)?;
        let e = leapfrog_energy(&cur, &next, dt, 0.0);
        out.push(EnergyStep {
            t: cur.t,
            e2: h2_norm_sq(&cur),
            e2_discrete: e,
            decrement: e_prev - e,
            predicted: 2.0 * k * cur.vel[0].powi(2) * dt,
        });
        e_prev = e;
        prev = cur;
        cur = next;
    }
    let _ = prev;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::synthesize;
    use crate::kernel::compute_kernels;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn scalar_setup(n: usize) -> (PlantConfig, KernelSet, GainSet) {
        let cfg = PlantConfig::worked_scalar();
        let ks = compute_kernels(&cfg, n).unwrap();
        let gains = synthesize(&cfg, &ks, None, None).unwrap();
        (cfg, ks, gains)
    }

    #[test]
    fn disturbance_examples() {
        let w = WaveGridState::from_fn(20, |_| 1.0, |_| 0.0).unwrap();
        assert_eq!(eval_total_disturbance(&DisturbanceSpec::zero(), &w, 1.0), 0.0);
        let d = DisturbanceSpec::sinusoid(1.0, 2.0);
        assert_relative_eq!(eval_total_disturbance(&d, &w, PI / 4.0), 1.0, epsilon = 1e-15);
        let f = DisturbanceSpec { f: Nonlinearity::BoundedNonlinear { c: 0.1 }, d: External::Zero };
        assert_relative_eq!(eval_total_disturbance(&f, &w, 0.0), 0.1 * 1f64.sin(), epsilon = 1e-14);
        assert!(f.vanishes_at_rest());
        assert!(!d.vanishes_at_rest());
    }

    #[test]
    fn disturbance_tables_and_steps() {
        let d = External::Tabulated { t: vec![0.0, 1.0, 3.0], d: vec![0.0, 2.0, -2.0] };
        assert_eq!(d.eval(-1.0), 0.0);
        assert_eq!(d.eval(0.5), 1.0);
        assert_eq!(d.eval(2.0), 0.0);
        assert_eq!(d.eval(10.0), -2.0);
        let s = External::Step { a: 3.0, t0: 1.0 };
        assert_eq!(s.eval(0.999), 0.0);
        assert_eq!(s.eval(1.0), 3.0);
        let bad = DisturbanceSpec { f: Nonlinearity::Tabulated { s: vec![1.0, 0.0], f: vec![0.0, 1.0] }, d: External::Zero };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn disturbance_json_layout() {
        let json = r#"{"f": {"kind": "bounded_nonlinear", "c": 0.1}, "d": {"kind": "sinusoid", "a": 1.0, "omega": 2.0}}"#;
        let d: DisturbanceSpec = serde_json::from_str(json).unwrap();
        assert_eq!(d.f, Nonlinearity::BoundedNonlinear { c: 0.1 });
        assert_eq!(d.d, External::Sinusoid { a: 1.0, omega: 2.0, phi: 0.0 });
        let d: DisturbanceSpec = serde_json::from_str("{}").unwrap();
        assert!(d.is_zero());
    }

    #[test]
    fn estimate_examples() {
        let z = WaveGridState::zeros(10).unwrap();
        assert_eq!(estimate_disturbance(&z, 1.0), 0.0);
        let p = WaveGridState::from_fn(10, |x| 1.0 - x, |_| 0.0).unwrap();
        assert_relative_eq!(estimate_disturbance(&p, 1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn state_feedback_control_examples() {
        let (cfg, ks, _) = scalar_setup(40);
        let k = DVector::from_element(1, -1.0);
        let zero = WaveGridState::zeros(40).unwrap();
        assert_eq!(control_state_feedback(&DVector::zeros(1), &zero, &ks, &k, 1.0, 1.0).unwrap(), 0.0);
        let ones = WaveGridState::from_fn(40, |_| 1.0, |_| 0.0).unwrap();
        let u = control_state_feedback(&DVector::zeros(1), &ones, &ks, &k, cfg.alpha, cfg.beta).unwrap();
        assert_relative_eq!(u, -2.0, epsilon = 1e-13);
        let w = WaveGridState::from_fn(40, |x| x * x, |x| x).unwrap();
        let u0 = control_state_feedback(&DVector::zeros(1), &w, &ks, &DVector::zeros(1), 2.0, 3.0).unwrap();
        assert_relative_eq!(u0, -2.0 - 3.0, epsilon = 1e-14);
        assert!(control_state_feedback(&DVector::zeros(1), &WaveGridState::zeros(20).unwrap(), &ks, &k, 1.0, 1.0).is_err());
    }

    #[test]
    fn output_feedback_control_examples() {
        let (cfg, ks, _) = scalar_setup(40);
        let k = DVector::from_element(1, -1.0);
        let zero = WaveGridState::zeros(40).unwrap();
        let u = control_output_feedback(&DVector::from_element(1, 1.0), &zero, 0.0, &zero, &ks, &k, 1.0, 1.0).unwrap();
        assert_relative_eq!(u, -1.0, epsilon = 1e-15);
        // With p ≡ 0 and the observer equal to the plant both controllers agree.
        let w = WaveGridState::from_fn(40, |x| (2.0 * x).cos(), |x| x - 0.3).unwrap();
        let x = DVector::from_element(1, 0.4);
        let a = control_output_feedback(&x, &w, w.disp[40], &zero, &ks, &k, cfg.alpha, cfg.beta).unwrap();
        let b = control_state_feedback(&x, &w, &ks, &k, cfg.alpha, cfg.beta).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-13);
    }

    #[test]
    fn loop_feedback_matches_public_controller() {
        let (cfg, ks, gains) = scalar_setup(40);
        let w = WaveGridState::from_fn(40, |x| (PI * x).cos(), |x| x).unwrap();
        let x = DVector::from_element(1, 0.7);
        let lp = StateFeedbackLoop::new(&cfg, &ks, &gains.k, x.clone(), w.clone(), 0.0125).unwrap();
        let u = control_state_feedback(&x, &w, &ks, &gains.k, cfg.alpha, cfg.beta).unwrap();
        assert_relative_eq!(lp.u(), u, epsilon = 1e-13);
    }

    #[test]
    fn zero_data_stays_zero() {
        let (cfg, ks, gains) = scalar_setup(20);
        let opts = SimOptions::new(2.0, 20, 0.5, 5).unwrap();
        let tr = simulate_state_feedback(&cfg, &ks, &gains, DVector::zeros(1), WaveGridState::zeros(20).unwrap(), &opts).unwrap();
        assert!(tr.rows.iter().all(|r| r.u == 0.0 && r.norm_x == 0.0 && r.norm_w == 0.0));
        let ic = ClosedLoopState::from_plant(DVector::zeros(1), WaveGridState::zeros(20).unwrap()).unwrap();
        let f = DisturbanceSpec { f: Nonlinearity::BoundedNonlinear { c: 0.1 }, d: External::Zero };
        let tr = simulate_output_feedback(&cfg, &ks, &gains, ic, &f, &opts).unwrap();
        assert!(tr.rows.iter().all(|r| r.u == 0.0 && r.norm_z == 0.0 && r.norm_p == 0.0 && r.e0 == 0.0));
    }

    #[test]
    fn incompatible_initial_data_is_rejected() {
        let w = WaveGridState::from_fn(20, |_| 1.0, |_| 0.0).unwrap();
        let z = WaveGridState::zeros(20).unwrap();
        let err = ClosedLoopState::new(DVector::zeros(1), w, DVector::zeros(1), z.clone(), z.clone(), z).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn state_feedback_worked_scalar_decays() {
        let (cfg, ks, gains) = scalar_setup(200);
        let w0 = WaveGridState::from_fn(200, |x| (PI * x).cos(), |_| 0.0).unwrap();
        let opts = SimOptions::new(40.0, 200, 0.5, 20).unwrap();
        let tr = simulate_state_feedback(&cfg, &ks, &gains, DVector::from_element(1, 1.0), w0, &opts).unwrap();
        let first = tr.rows[0].norm_plant();
        let last = tr.rows.last().unwrap().norm_plant();
        assert!(last <= 1e-2 * first, "{last} vs {first}");
    }

    fn superposition_run(n: usize) -> (Trace, ErrorSystemsSummary) {
        let cfg = PlantConfig::demo();
        let ks = compute_kernels(&cfg, n).unwrap();
        let gains = synthesize(&cfg, &ks, None, None).unwrap();
        let w0 = WaveGridState::from_fn(n, |x| 0.5 * (PI * x).cos(), |x| 0.2 * x).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        // Estimator started on the plant so that ẑ(·, 0) = 0 meets its boundary conditions.
        let p0 = WaveGridState::zeros(n).unwrap();
        let ic = ClosedLoopState::new(x0, w0.clone(), DVector::zeros(2), WaveGridState::zeros(n).unwrap(), w0, p0).unwrap();
        let dist = DisturbanceSpec::sinusoid(1.0, 2.0);
        let opts = SimOptions::new(5.0, n, 0.5, 4).unwrap();
        simulate_error_systems(&cfg, &ks, &gains, ic, &dist, &opts).unwrap()
    }

    #[test]
    fn error_systems_superpose() {
        let (tr, coarse) = superposition_run(40);
        let (_, fine) = superposition_run(80);
        assert!(coarse.epsilon_gap <= 1e-8 && fine.epsilon_gap <= 1e-8, "{coarse:?}");
        assert!(coarse.superposition_gap_linear <= 1e-8 && fine.superposition_gap_linear <= 1e-8, "{fine:?}");
        // The start-up corner (F'(0) != 0) makes the whole-run gaps first order.
        assert!(coarse.identity_gap / fine.identity_gap >= 1.7, "{coarse:?} {fine:?}");
        assert!(coarse.superposition_gap / fine.superposition_gap >= 1.7, "{coarse:?} {fine:?}");
        assert!(coarse.identity_gap_settled / fine.identity_gap_settled >= 3.0, "{coarse:?} {fine:?}");
        assert!(fine.identity_gap_settled <= 5e-3, "{fine:?}");
        for r in &tr.rows {
            assert!(r.rho.abs() <= r.e0 + 1e-15);
        }
    }

    #[test]
    fn error_systems_without_error_stay_zero() {
        // Observer and estimator started on the plant with F ≡ 0: every error field vanishes.
        let (cfg, ks, gains) = scalar_setup(20);
        let w0 = WaveGridState::from_fn(20, |x| (PI * x).cos(), |_| 0.0).unwrap();
        let x0 = DVector::from_element(1, 0.5);
        let ic = ClosedLoopState::new(x0.clone(), w0.clone(), x0, w0.clone(), w0, WaveGridState::zeros(20).unwrap()).unwrap();
        let opts = SimOptions::new(2.0, 20, 0.5, 4).unwrap();
        let (tr, _) = simulate_error_systems(&cfg, &ks, &gains, ic, &DisturbanceSpec::zero(), &opts).unwrap();
        assert!(tr.rows.iter().all(|r| r.e0 == 0.0 && r.norm_err == 0.0));
    }

    #[test]
    fn p_hat_energy_matches_boundary_flux() {
        let p0 = WaveGridState::from_fn(200, |x| (-((x - 0.5) / 0.1).powi(2)).exp() * x * (1.0 - x) * 4.0, |_| 0.0).unwrap();
        let steps = p_hat_energy_run(p0, 1.0, 0.0025, 1000).unwrap();
        let e_start = steps[0].e2_discrete;
        for s in &steps {
            assert!(s.decrement >= -1e-14 * e_start);
            assert!((s.decrement - s.predicted).abs() <= 1e-12 * e_start);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let tr = Trace { rows: vec![TraceRow::empty(0.0)] };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,u,y1,y2,y3,F,F_hat,norm_X,norm_w,norm_Xhat,norm_what,norm_z,norm_p,E0,rho,E,E2,norm_err\n"));
    }
}
