//! Boundary stabilization of an ODE cascaded with a wave equation through
//! four boundary interconnections
//!
//! ```text
//! X'(t)   = A X + B1 w(0) + B2 w_t(0) + B3 w(1) + B4 w_t(1)
//! w_tt    = w_xx,                     x in (0, 1)
//! w_x(0)  = 0
//! w_x(1)  = u(t) + F(t)
//! y(t)    = { w_t(0), w(1), C X }
//! ```
//!
//! with an unknown total disturbance `F = f(w, w_t) + d(t)` in the control
//! channel. The crate computes the kernels of the state transformation that
//! moves the boundary input into the ODE block, synthesizes the feedback and
//! observer gains, and simulates the state-feedback loop, the output-feedback
//! loop with disturbance estimator and observer, and the associated error
//! systems on a finite-difference grid.
//!
//! ```
//! use odewave_core::{compute_kernels, synthesize, PlantConfig};
//!
//! let cfg = PlantConfig::worked_scalar();
//! let ks = compute_kernels(&cfg, 40).unwrap();
//! let gains = synthesize(&cfg, &ks, None, None).unwrap();
//! assert!((gains.k[0] + 1.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod closedloop;
pub mod config;
pub mod design;
pub mod error;
pub mod kernel;
pub mod matrixfun;
pub mod plant;
pub mod verify;
pub mod wavesolver;

pub use analysis::{
    boundedness, energy_diagnostics, fit_decay, h1_norm, h1_norm_sq, tracking_error, DecayFit,
    EnergyDiagnostics, SimReport, Tracking,
};
pub use closedloop::{
    control_output_feedback, control_state_feedback, estimate_disturbance, eval_total_disturbance,
    simulate_error_systems, simulate_output_feedback, simulate_state_feedback, ClosedLoopState,
    DisturbanceSpec, External, Nonlinearity, SimOptions, Trace, TraceRow,
};
pub use config::{run, RunConfig, RunOutput, Scenario, SweepConfig, SweepRow};
pub use design::{check_assumptions, place_h, place_k, synthesize, AssumptionReport, GainSet};
pub use error::{Error, Result};
pub use kernel::{apply_transform, compute_kernels, compute_q, kernel_residual, reduced_q1, Direction, KernelSet};
pub use matrixfun::{mat_cosh, mat_exp, mat_gfun, mat_sinh};
pub use plant::PlantConfig;
pub use wavesolver::{boundary_trace, step_wave, Boundary, WaveGridState};
