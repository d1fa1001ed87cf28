//! Run configuration: JSON schema, initial profiles, the single-run driver
//! and cartesian parameter sweeps.
//!
//! A run file looks like
//!
//! ```json
//! {
//!   "plant": { "a": [[0.0]], "b1": [1.0], "c": [[1.0]], "alpha": 1.0, "beta": 1.0, "k_est": 1.0 },
//!   "scenario": "output_feedback",
//!   "gains": { "poles_k": [-1.0], "poles_h": [-3.0] },
//!   "disturbance": { "d": { "kind": "sinusoid", "a": 1.0, "omega": 2.0 } },
//!   "initial": { "x": [0.5], "w": { "kind": "gaussian", "amplitude": 1.0, "center": 0.5, "width": 0.08 } },
//!   "grid": 200,
//!   "horizon": 30.0
//! }
//! ```
//!
//! Omitted fields take the defaults of [`RunConfig`]. Matrices are row-major
//! nested arrays; poles are numbers or `[re, im]` pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    boundedness, fit_decay_above, tracking_error, DecayFit, SimReport, DEFAULT_FIT_WINDOW,
};
use crate::closedloop::{
    simulate_error_systems, simulate_output_feedback, simulate_state_feedback, ClosedLoopState,
    DisturbanceSpec, ErrorSystemsSummary, SimOptions, Trace, TraceRow, DEFAULT_DISSIPATION,
};
use crate::design::{
    place_h, place_k, require_assumptions, AssumptionReport, GainSet, PoleSpec,
};
use crate::error::{Error, Result};
use crate::kernel::{compute_kernels, KernelSet};
use crate::plant::PlantConfig;
use crate::wavesolver::{check_grid_size, WaveGridState};

/// Samples below this fraction of a series' peak are treated as rounding
/// noise and left out of decay fits.
pub const FIT_FLOOR_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    StateFeedback,
    OutputFeedback,
    ErrorSystems,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::StateFeedback => "state_feedback",
            Scenario::OutputFeedback => "output_feedback",
            Scenario::ErrorSystems => "error_systems",
        }
    }
}

/// Initial profile of one field component on `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `amplitude cos(mode π x)`.
    Cosine {
        amplitude: f64,
        #[serde(default = "one")]
        mode: f64,
    },
    /// `amplitude exp(-((x - center) / width)² / 2)`.
    Gaussian { amplitude: f64, center: f64, width: f64 },
    /// `amplitude Σ_{j < modes} c_j cos(jπx) / (1 + j)²` with `c_j` uniform on
    /// `[-1, 1]`, drawn from the run seed.
    RandomModes { amplitude: f64, modes: usize },
}

fn one() -> f64 {
    1.0
}

impl Profile {
    fn validate(&self, name: &str) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match self {
            Profile::Zero => true,
            Profile::Constant { value } => value.is_finite(),
            Profile::Cosine { amplitude, mode } => finite(&[*amplitude, *mode]),
            Profile::Gaussian { amplitude, center, width } => finite(&[*amplitude, *center, *width]) && *width > 0.0,
            Profile::RandomModes { amplitude, modes } => amplitude.is_finite() && *modes > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("initial profile {name}: parameters must be finite, widths positive, modes >= 1")))
        }
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let x = |i: usize| i as f64 / n as f64;
        match self {
            Profile::Zero => vec![0.0; n + 1],
            Profile::Constant { value } => vec![*value; n + 1],
            Profile::Cosine { amplitude, mode } => {
                (0..=n).map(|i| amplitude * (mode * std::f64::consts::PI * x(i)).cos()).collect()
            }
            Profile::Gaussian { amplitude, center, width } => {
                (0..=n).map(|i| amplitude * (-((x(i) - center) / width).powi(2) / 2.0).exp()).collect()
            }
            Profile::RandomModes { amplitude, modes } => {
                let c: Vec<f64> = (0..*modes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                (0..=n)
                    .map(|i| {
                        let s: f64 = c
                            .iter()
                            .enumerate()
                            .map(|(j, cj)| cj * (j as f64 * std::f64::consts::PI * x(i)).cos() / ((1 + j) as f64).powi(2))
                            .sum();
                        amplitude * s
                    })
                    .collect()
            }
        }
    }
}

/// Initial data of every state component. Profiles are sampled in field
/// order, so random profiles depend only on the seed and their position.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditions {
    /// `X(0)`; zeros when omitted.
    pub x: Option<Vec<f64>>,
    pub w: Profile,
    pub w_t: Profile,
    /// `X̂(0)`; zeros when omitted.
    pub xhat: Option<Vec<f64>>,
    pub what: Profile,
    pub what_t: Profile,
    pub z: Profile,
    pub z_t: Profile,
    /// `p(·, 0)` and `p_t(·, 0)`, shifted by constants so that
    /// `p(1, 0) = z(1, 0) - w(1, 0)` and likewise for the velocities.
    pub p: Profile,
    pub p_t: Profile,
}

impl InitialConditions {
    fn profiles(&self) -> [(&'static str, &Profile); 8] {
        [
            ("w", &self.w),
            ("w_t", &self.w_t),
            ("what", &self.what),
            ("what_t", &self.what_t),
            ("z", &self.z),
            ("z_t", &self.z_t),
            ("p", &self.p),
            ("p_t", &self.p_t),
        ]
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for (name, v) in [("x", &self.x), ("xhat", &self.xhat)] {
            if let Some(v) = v {
                if v.len() != dim {
                    return Err(Error::invalid(format!("initial {name} has length {}, expected {dim}", v.len())));
                }
                if v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::invalid(format!("initial {name} has non-finite entries")));
                }
            }
        }
        self.profiles().iter().try_for_each(|(name, p)| p.validate(name))
    }

    /// Build the full initial state on an `n`-interval grid.
    pub fn build(&self, dim: usize, n: usize, seed: u64) -> Result<ClosedLoopState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.profiles().map(|(_, p)| p.sample(n, &mut rng));
        let shift = (s[4][n] - s[0][n]) - s[6][n];
        s[6].iter_mut().for_each(|v| *v += shift);
        let shift = (s[5][n] - s[1][n]) - s[7][n];
        s[7].iter_mut().for_each(|v| *v += shift);
        let [w, w_t, what, what_t, z, z_t, p, p_t] = s;
        let vector = |v: &Option<Vec<f64>>| v.as_ref().map_or_else(|| DVector::zeros(dim), |v| DVector::from_vec(v.clone()));
        ClosedLoopState::new(
            vector(&self.x),
            WaveGridState::from_samples(w, w_t)?,
            vector(&self.xhat),
            WaveGridState::from_samples(what, what_t)?,
            WaveGridState::from_samples(z, z_t)?,
            WaveGridState::from_samples(p, p_t)?,
        )
    }
}

/// Desired pole sets or explicit gains. A pole set and an explicit gain for
/// the same loop are mutually exclusive; with neither, the default poles are
/// used.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSpec {
    pub poles_k: Option<Vec<PoleSpec>>,
    pub poles_h: Option<Vec<PoleSpec>>,
    pub k: Option<Vec<f64>>,
    /// `n x q`, row-major.
    pub h: Option<Vec<Vec<f64>>>,
}

impl GainsSpec {
    fn validate(&self, cfg: &PlantConfig) -> Result<()> {
        let (n, q) = (cfg.n(), cfg.q());
        if self.poles_k.is_some() && self.k.is_some() {
            return Err(Error::invalid("gains: give either poles_k or k, not both"));
        }
        if self.poles_h.is_some() && self.h.is_some() {
            return Err(Error::invalid("gains: give either poles_h or h, not both"));
        }
        for (name, poles) in [("poles_k", &self.poles_k), ("poles_h", &self.poles_h)] {
            if let Some(p) = poles {
                if p.len() != n {
                    return Err(Error::invalid(format!("gains: {name} has {} poles, expected {n}", p.len())));
                }
                if p.iter().any(|z| !(z.value().re.is_finite() && z.value().im.is_finite())) {
                    return Err(Error::invalid(format!("gains: {name} has non-finite entries")));
                }
            }
        }
        if let Some(k) = &self.k {
            if k.len() != n || k.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("gains: k must have {n} finite entries")));
            }
        }
        if let Some(h) = &self.h {
            if h.len() != n || h.iter().any(|r| r.len() != q || r.iter().any(|v| !v.is_finite())) {
                return Err(Error::invalid(format!("gains: h must be a finite {n}x{q} matrix")));
            }
        }
        Ok(())
    }

    /// Poles as complex numbers, default sets where none are given.
    fn poles(spec: &Option<Vec<PoleSpec>>) -> Option<Vec<Complex64>> {
        spec.as_ref().map(|p| p.iter().map(|z| z.value()).collect())
    }

    pub fn synthesize(&self, cfg: &PlantConfig, ks: &KernelSet) -> Result<GainSet> {
        self.validate(cfg)?;
        let n = cfg.n();
        let (k, poles_k) = match &self.k {
            Some(k) => {
                let k = DVector::from_vec(k.clone());
                let m = &cfg.a + &ks.l2_at_1 * k.transpose();
                (k, m.complex_eigenvalues().iter().copied().collect())
            }
            None => {
                let poles = Self::poles(&self.poles_k).unwrap_or_else(|| crate::design::default_k_poles(n));
                (place_k(cfg, ks, &poles)?, poles)
            }
        };
        let (h, poles_h) = match &self.h {
            Some(rows) => {
                let h = DMatrix::from_fn(n, cfg.q(), |i, j| rows[i][j]);
                let m = &cfg.a + &h * &cfg.c;
                (h, m.complex_eigenvalues().iter().copied().collect())
            }
            None => {
                let poles = Self::poles(&self.poles_h).unwrap_or_else(|| crate::design::default_h_poles(n));
                (place_h(&cfg.a, &cfg.c, &poles)?, poles)
            }
        };
        Ok(GainSet { k, h, poles_k, poles_h })
    }
}

fn default_grid() -> usize {
    200
}
fn default_horizon() -> f64 {
    20.0
}
fn default_dt_factor() -> f64 {
    0.5
}
fn default_record_every() -> usize {
    10
}
fn default_dissipation() -> f64 {
    DEFAULT_DISSIPATION
}
fn default_fit_window() -> f64 {
    DEFAULT_FIT_WINDOW
}

/// One simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub scenario: Scenario,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub initial: InitialConditions,
    /// Number of grid intervals `N`.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// `dt = dt_factor / N`; must not exceed the CFL limit.
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_dissipation")]
    pub dissipation: f64,
    /// Seed for random initial profiles.
    #[serde(default)]
    pub seed: u64,
    /// Trailing fraction of the horizon used by decay fits.
    #[serde(default = "default_fit_window")]
    pub fit_window: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(plant: PlantConfig, scenario: Scenario) -> Self {
        Self {
            plant,
            scenario,
            gains: GainsSpec::default(),
            disturbance: DisturbanceSpec::default(),
            initial: InitialConditions::default(),
            grid: default_grid(),
            horizon: default_horizon(),
            dt_factor: default_dt_factor(),
            record_every: default_record_every(),
            dissipation: default_dissipation(),
            seed: 0,
            fit_window: default_fit_window(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn sim_options(&self) -> Result<SimOptions> {
        check_grid_size(self.grid)?;
        SimOptions::new(self.horizon, self.grid, self.dt_factor, self.record_every)?.with_dissipation(self.dissipation)
    }

    /// Checks every invariant that does not need kernels or the assumption
    /// test.
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.disturbance.validate()?;
        self.gains.validate(&self.plant)?;
        self.initial.validate(self.plant.n())?;
        if self.scenario == Scenario::StateFeedback && !self.disturbance.is_zero() {
            return Err(Error::Config("the state_feedback scenario requires a zero disturbance".into()));
        }
        if !(self.fit_window > 0.0 && self.fit_window <= 1.0) {
            return Err(Error::Config(format!("fit_window must lie in (0, 1], got {}", self.fit_window)));
        }
        if !(self.dt_factor.is_finite() && self.dt_factor > 0.0) {
            return Err(Error::Config(format!("dt_factor must be positive, got {}", self.dt_factor)));
        }
        self.sim_options().map(|_| ())
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub assumptions: AssumptionReport,
    pub gains: GainSet,
    pub trace: Trace,
    pub report: SimReport,
}

/// Validate, check assumptions, build kernels and gains, then simulate.
///
/// A blow-up is returned as [`Error::BlowUp`] carrying the partial trace.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let opts = cfg.sim_options()?;
    let assumptions = require_assumptions(&cfg.plant)?;
    let ks = compute_kernels(&cfg.plant, cfg.grid)?;
    let gains = cfg.gains.synthesize(&cfg.plant, &ks)?;
    let ic = cfg.initial.build(cfg.plant.n(), cfg.grid, cfg.seed)?;
    let (trace, summary) = match cfg.scenario {
        Scenario::StateFeedback => (simulate_state_feedback(&cfg.plant, &ks, &gains, ic.x, ic.w, &opts)?, None),
        Scenario::OutputFeedback => {
            (simulate_output_feedback(&cfg.plant, &ks, &gains, ic, &cfg.disturbance, &opts)?, None)
        }
        Scenario::ErrorSystems => {
            let (t, s) = simulate_error_systems(&cfg.plant, &ks, &gains, ic, &cfg.disturbance, &opts)?;
            (t, Some(s))
        }
    };
    let report = build_report(cfg, &opts, &trace, summary)?;
    Ok(RunOutput { assumptions, gains, trace, report })
}

/// Decay fit ignoring the rounding-noise tail; `None` when nothing is left to fit.
pub fn fit_norm(t: &[f64], values: &[f64], window: f64) -> Option<DecayFit> {
    let peak = values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    fit_decay_above(t, values, window, FIT_FLOOR_RELATIVE * peak).ok()
}

type Column = (&'static str, fn(&TraceRow) -> f64);

fn scenario_columns(s: Scenario) -> Vec<Column> {
    let plant: Vec<Column> = vec![
        ("X", |r| r.norm_x),
        ("w", |r| r.norm_w),
        ("plant", TraceRow::norm_plant),
    ];
    let observer: Vec<Column> = vec![
        ("Xhat", |r| r.norm_xhat),
        ("what", |r| r.norm_what),
        ("observer", TraceRow::norm_observer),
        ("z", |r| r.norm_z),
        ("p", |r| r.norm_p),
        ("estimator", TraceRow::norm_estimator),
        ("error", |r| r.norm_err),
    ];
    match s {
        Scenario::StateFeedback => plant,
        _ => plant.into_iter().chain(observer).collect(),
    }
}

pub fn build_report(
    cfg: &RunConfig,
    opts: &SimOptions,
    trace: &Trace,
    summary: Option<ErrorSystemsSummary>,
) -> Result<SimReport> {
    let t = trace.times();
    let mut fits = BTreeMap::new();
    let mut final_norms = BTreeMap::new();
    let mut initial_norms = BTreeMap::new();
    for (name, f) in scenario_columns(cfg.scenario) {
        let v = trace.column(f);
        fits.insert(name.to_string(), fit_norm(&t, &v, cfg.fit_window));
        initial_norms.insert(name.to_string(), v.first().copied().unwrap_or(f64::NAN));
        final_norms.insert(name.to_string(), v.last().copied().unwrap_or(f64::NAN));
    }
    let mut report = SimReport {
        scenario: cfg.scenario.name().to_string(),
        horizon: opts.horizon,
        grid: cfg.grid,
        dt: opts.dt,
        steps: opts.steps(),
        fits,
        final_norms,
        initial_norms,
        error_systems: summary,
        ..SimReport::default()
    };
    if cfg.scenario != Scenario::StateFeedback {
        let f = trace.column(|r| r.f);
        let f_hat = trace.column(|r| r.f_hat);
        report.tracking = Some(tracking_error(&f, &f_hat, cfg.fit_window)?);
        report.boundedness_zp = Some(boundedness(&t, &trace.column(TraceRow::norm_estimator))?);
        report.rho_bounded = Some(trace.rows.iter().all(|r| r.rho.abs() <= r.e0 * (1.0 + 1e-12) + 1e-300));
    }
    Ok(report)
}

/// Cartesian ranges over a base run. An empty range keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub k_est: Vec<f64>,
    #[serde(default)]
    pub poles_k: Vec<Vec<PoleSpec>>,
    #[serde(default)]
    pub poles_h: Vec<Vec<PoleSpec>>,
    /// Multiplies both parts of the base disturbance.
    #[serde(default)]
    pub disturbance_amplitude: Vec<f64>,
}

/// Parameters of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k_est: f64,
    /// Poles joined by `;`, complex ones as `re+imi`; empty for the base gains.
    pub poles_k: String,
    pub poles_h: String,
    pub disturbance_amplitude: f64,
}

/// Summary CSV row of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k_est: f64,
    pub poles_k: String,
    pub poles_h: String,
    pub disturbance_amplitude: f64,
    /// `ok` or the failure class (`invalid`, `infeasible`, `blow_up`, ...).
    pub status: String,
    pub exit_code: i32,
    pub gamma_plant: Option<f64>,
    pub gamma_observer: Option<f64>,
    pub gamma_error: Option<f64>,
    pub tracking_ratio: Option<f64>,
    pub bounded_zp: Option<bool>,
    pub rho_bounded: Option<bool>,
    pub message: String,
}

fn format_poles(p: &[PoleSpec]) -> String {
    p.iter()
        .map(|z| match z {
            PoleSpec::Real(r) => format!("{r}"),
            PoleSpec::Complex([re, im]) => format!("{re}{im:+}i"),
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn range_or(v: &[f64], base: f64) -> Vec<f64> {
    if v.is_empty() {
        vec![base]
    } else {
        v.to_vec()
    }
}

fn sets_or(v: &[Vec<PoleSpec>]) -> Vec<Option<Vec<PoleSpec>>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().cloned().map(Some).collect()
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One run config per combination, in lexicographic order of
    /// (alpha, beta, k_est, poles_k, poles_h, disturbance_amplitude).
    /// Combinations are not validated here, so an invalid one becomes a
    /// flagged row rather than aborting the sweep.
    pub fn expand(&self) -> Vec<(SweepPoint, RunConfig)> {
        let b = &self.base;
        let mut out = Vec::new();
        for &alpha in &range_or(&self.alpha, b.plant.alpha) {
            for &beta in &range_or(&self.beta, b.plant.beta) {
                for &k_est in &range_or(&self.k_est, b.plant.k_est) {
                    for pk in sets_or(&self.poles_k) {
                        for ph in sets_or(&self.poles_h) {
                            for &amp in &range_or(&self.disturbance_amplitude, 1.0) {
                                let mut cfg = b.clone();
                                cfg.plant.alpha = alpha;
                                cfg.plant.beta = beta;
                                cfg.plant.k_est = k_est;
                                if let Some(p) = &pk {
                                    cfg.gains.poles_k = Some(p.clone());
                                    cfg.gains.k = None;
                                }
                                if let Some(p) = &ph {
                                    cfg.gains.poles_h = Some(p.clone());
                                    cfg.gains.h = None;
                                }
                                cfg.disturbance = b.disturbance.scaled(amp);
                                let point = SweepPoint {
                                    index: out.len(),
                                    alpha,
                                    beta,
                                    k_est,
                                    poles_k: pk.as_deref().map(format_poles).unwrap_or_default(),
                                    poles_h: ph.as_deref().map(format_poles).unwrap_or_default(),
                                    disturbance_amplitude: amp,
                                };
                                out.push((point, cfg));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Json(_) => "invalid",
        Error::DesignInfeasible(_) => "infeasible",
        Error::BlowUp { .. } => "blow_up",
        Error::FitFailed(_) => "fit_failed",
        Error::Verification(_) => "verification",
        Error::Io(_) | Error::Csv(_) => "io",
    }
}

impl SweepRow {
    pub fn from_result(point: SweepPoint, result: &Result<RunOutput>) -> Self {
        let SweepPoint { index, alpha, beta, k_est, poles_k, poles_h, disturbance_amplitude } = point;
        match result {
            Ok(out) => {
                let gamma = |k: &str| out.report.fits.get(k).and_then(|f| f.as_ref()).map(|f| f.gamma);
                Self {
                    index,
                    alpha,
                    beta,
                    k_est,
                    poles_k,
                    poles_h,
                    disturbance_amplitude,
                    status: "ok".into(),
                    exit_code: 0,
                    gamma_plant: gamma("plant"),
                    gamma_observer: gamma("observer"),
                    gamma_error: gamma("error"),
                    tracking_ratio: out.report.tracking.and_then(|t| t.ratio),
                    bounded_zp: out.report.boundedness_zp.map(|b| b.bounded()),
                    rho_bounded: out.report.rho_bounded,
                    message: String::new(),
                }
            }
            Err(e) => Self {
                index,
                alpha,
                beta,
                k_est,
                poles_k,
                poles_h,
                disturbance_amplitude,
                status: status_of(e).into(),
                exit_code: e.exit_code(),
                gamma_plant: None,
                gamma_observer: None,
                gamma_error: None,
                tracking_ratio: None,
                bounded_zp: None,
                rho_bounded: None,
                message: e.to_string(),
            },
        }
    }
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
