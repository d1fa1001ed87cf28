//! Norms, energy functionals, exponential-rate fits and tracking metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::closedloop::ErrorSystemsSummary;
use crate::error::{Error, Result};
use crate::wavesolver::{derivative, simpson, WaveGridState};

/// Default trailing fraction of the horizon used by decay fits.
pub const DEFAULT_FIT_WINDOW: f64 = 0.5;

/// Squared energy norm `∫ (f'² + g²) + alpha f(1)²`.
pub fn h1_norm_sq(s: &WaveGridState, alpha: f64) -> f64 {
    let n = s.n();
    let d = derivative(&s.disp);
    let integrand: Vec<f64> = d.iter().zip(&s.vel).map(|(f, g)| f * f + g * g).collect();
    simpson(&integrand) + alpha * s.disp[n] * s.disp[n]
}

pub fn h1_norm(s: &WaveGridState, alpha: f64) -> f64 {
    h1_norm_sq(s, alpha).sqrt()
}

/// Squared norm `∫ (f'² + g²)` of fields vanishing at `x = 1`.
pub fn h2_norm_sq(s: &WaveGridState) -> f64 {
    h1_norm_sq(s, 0.0)
}

/// `∫ x g f'`.
pub fn multiplier(s: &WaveGridState) -> f64 {
    let d = derivative(&s.disp);
    let integrand: Vec<f64> = (0..=s.n()).map(|i| s.x(i) * s.vel[i] * d[i]).collect();
    simpson(&integrand)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostics {
    /// Energy of the observer error and the estimator error together.
    pub e0: f64,
    /// Multiplier `∫ x w̃_t w̃_x`.
    pub rho: f64,
    /// Energy of `ε̃ = w̃ + p̂`.
    pub e: f64,
    /// Energy of `p̂`.
    pub e2: f64,
}

impl EnergyDiagnostics {
    pub fn rho_bounded(&self) -> bool {
        self.rho.abs() <= self.e0 * (1.0 + 1e-12) + f64::MIN_POSITIVE
    }
}

/// The four functionals for the observer error `w̃`, the estimator error `p̂`
/// and their sum `ε̃`.
pub fn energy_diagnostics(
    w_tilde: &WaveGridState,
    p_hat: &WaveGridState,
    eps_tilde: &WaveGridState,
    alpha: f64,
) -> EnergyDiagnostics {
    let e2 = h2_norm_sq(p_hat);
    EnergyDiagnostics {
        e0: h1_norm_sq(w_tilde, alpha) + e2,
        rho: multiplier(w_tilde),
        e: h1_norm_sq(eps_tilde, alpha),
        e2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// `exp(intercept)`.
    pub m: f64,
    /// `-slope` of the log-linear fit.
    pub gamma: f64,
    /// RMS of the residual in log space.
    pub residual: f64,
    pub samples: usize,
    /// Samples dropped for being non-positive or below the floor.
    pub dropped: usize,
}

/// Least-squares line through `(t, ln value)` over the trailing `window`
/// fraction of the time span.
pub fn fit_decay(t: &[f64], values: &[f64], window: f64) -> Result<DecayFit> {
    fit_decay_above(t, values, window, 0.0)
}

/// [`fit_decay`] ignoring samples at or below `floor`.
pub fn fit_decay_above(t: &[f64], values: &[f64], window: f64, floor: f64) -> Result<DecayFit> {
    if t.len() != values.len() {
        return Err(Error::invalid("time and value series differ in length"));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::invalid(format!("window must lie in (0, 1], got {window}")));
    }
    let (Some(&t0), Some(&t1)) = (t.first(), t.last()) else {
        return Err(Error::FitFailed("empty series".into()));
    };
    let start = t1 - window * (t1 - t0);
    let in_window: Vec<(f64, f64)> = t
        .iter()
        .zip(values)
        .filter(|(&ti, _)| ti >= start - 1e-12 * (1.0 + start.abs()))
        .map(|(&ti, &v)| (ti, v))
        .collect();
    if in_window.len() < 10 {
        return Err(Error::FitFailed(format!(
            "only {} samples in the fit window, need at least 10",
            in_window.len()
        )));
    }
    let pts: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|(_, v)| v.is_finite() && *v > 0.0 && *v > floor)
        .map(|&(ti, v)| (ti, v.ln()))
        .collect();
    let dropped = in_window.len() - pts.len();
    if pts.len() < 2 {
        return Err(Error::FitFailed("no positive samples in the fit window".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if stt == 0.0 {
        return Err(Error::FitFailed("all samples share one time stamp".into()));
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit { m: intercept.exp(), gamma: -slope, residual, samples: pts.len(), dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tracking {
    pub rms_error: f64,
    pub rms_f: f64,
    /// `rms_error / rms_f`; absent when `rms_f = 0`.
    pub ratio: Option<f64>,
}

/// RMS of `F - F̂` and of `F` over the trailing `window` fraction of samples.
pub fn tracking_error(f: &[f64], f_hat: &[f64], window: f64) -> Result<Tracking> {
    if f.len() != f_hat.len() {
        return Err(Error::invalid("F and F_hat series differ in length"));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::invalid(format!("window must lie in (0, 1], got {window}")));
    }
    let count = (window * f.len() as f64).floor() as usize;
    if count == 0 {
        return Err(Error::invalid("tracking window is empty"));
    }
    let start = f.len() - count;
    let rms = |it: &mut dyn Iterator<Item = f64>| (it.map(|v| v * v).sum::<f64>() / count as f64).sqrt();
    let rms_error = rms(&mut f[start..].iter().zip(&f_hat[start..]).map(|(a, b)| a - b));
    let rms_f = rms(&mut f[start..].iter().copied());
    let ratio = (rms_f > 0.0).then(|| rms_error / rms_f);
    Ok(Tracking { rms_error, rms_f, ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundedness {
    pub sup: f64,
    pub sup_middle: f64,
    pub sup_last: f64,
    pub finite: bool,
    /// `sup` over the last third does not exceed `sup` over the middle third by more than 1%.
    pub non_growing: bool,
}

impl Boundedness {
    pub fn bounded(&self) -> bool {
        self.finite && self.non_growing
    }
}

pub fn boundedness(t: &[f64], values: &[f64]) -> Result<Boundedness> {
    let (Some(&t0), Some(&t1)) = (t.first(), t.last()) else {
        return Err(Error::invalid("empty series"));
    };
    let span = t1 - t0;
    let sup_over = |lo: f64, hi: f64| {
        t.iter()
            .zip(values)
            .filter(|(&ti, _)| ti >= lo && ti <= hi)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max)
    };
    let finite = values.iter().all(|v| v.is_finite());
    let sup = values.iter().copied().fold(0.0, f64::max);
    let sup_middle = sup_over(t0 + span / 3.0, t0 + 2.0 * span / 3.0);
    let sup_last = sup_over(t0 + 2.0 * span / 3.0, t1);
    Ok(Boundedness {
        sup,
        sup_middle,
        sup_last,
        finite,
        non_growing: finite && sup_last <= 1.01 * sup_middle,
    })
}

/// Summary of one simulation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub horizon: f64,
    pub grid: usize,
    pub dt: f64,
    pub steps: usize,
    /// Decay fits per recorded norm; `None` when the fit failed (for
    /// example an identically zero series).
    pub fits: BTreeMap<String, Option<DecayFit>>,
    pub tracking: Option<Tracking>,
    pub boundedness_zp: Option<Boundedness>,
    /// `|rho| <= E0` at every recorded step.
    pub rho_bounded: Option<bool>,
    /// Consistency of the directly integrated error systems with the full loop.
    pub error_systems: Option<ErrorSystemsSummary>,
    pub final_norms: BTreeMap<String, f64>,
    pub initial_norms: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn h1_examples() {
        let z = WaveGridState::zeros(20).unwrap();
        assert_eq!(h1_norm_sq(&z, 1.0), 0.0);
        let c = WaveGridState::from_fn(20, |_| 1.0, |_| 0.0).unwrap();
        assert_eq!(h1_norm_sq(&c, 1.0), 1.0);
        let s = WaveGridState::from_fn(200, |x| (PI * x).sin(), |_| 0.0).unwrap();
        assert!((h1_norm_sq(&s, 1.0) - PI * PI / 2.0).abs() < 1e-3);
    }

    #[test]
    fn h1_converges_at_second_order() {
        let err = |n: usize| {
            let s = WaveGridState::from_fn(n, |x| (2.0 * x).sin(), |x| x * x).unwrap();
            // ∫ 4 cos²(2x) + x⁴ = 2 + sin(4)/2 + 1/5, plus sin²(2)
            let exact = 2.0 + (4f64).sin() / 2.0 + 0.2 + (2f64).sin().powi(2);
            (h1_norm_sq(&s, 1.0) - exact).abs()
        };
        let ratio = err(50) / err(100);
        assert!(ratio >= 3.5, "{ratio}");
    }

    #[test]
    fn energies_of_zero_fields_vanish() {
        let z = WaveGridState::zeros(10).unwrap();
        assert_eq!(energy_diagnostics(&z, &z, &z, 1.0), EnergyDiagnostics::default());
    }

    #[test]
    fn fit_exact_exponential() {
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        let fit = fit_decay(&t, &v, 1.0).unwrap();
        assert_relative_eq!(fit.m, 3.0, epsilon = 1e-6);
        assert_relative_eq!(fit.gamma, 2.0, epsilon = 1e-6);
        let fit = fit_decay(&t, &v, 0.5).unwrap();
        assert_relative_eq!(fit.gamma, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn fit_constant_and_oscillatory() {
        let t: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let fit = fit_decay(&t, &vec![5.0; t.len()], 0.5).unwrap();
        assert!(fit.gamma.abs() < 1e-12);
        let v: Vec<f64> = t.iter().map(|t| (-t).exp() * (2.0 + (5.0 * t).sin())).collect();
        let fit = fit_decay(&t, &v, 1.0).unwrap();
        assert!((0.9..=1.1).contains(&fit.gamma), "{fit:?}");
        assert!(fit.residual > 0.0);
    }

    #[test]
    fn fit_drops_non_positive_samples() {
        let t: Vec<f64> = (0..20).map(f64::from).collect();
        let mut v: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        v[15] = 0.0;
        v[16] = -1.0;
        let fit = fit_decay(&t, &v, 1.0).unwrap();
        assert_eq!(fit.dropped, 2);
        assert_relative_eq!(fit.gamma, 1.0, epsilon = 1e-9);
        assert!(matches!(fit_decay(&t, &[0.0; 20], 1.0), Err(Error::FitFailed(_))));
        assert!(matches!(fit_decay(&t[..5], &v[..5], 1.0), Err(Error::FitFailed(_))));
    }

    #[test]
    fn tracking_examples() {
        let f: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.01).sin()).collect();
        assert_eq!(tracking_error(&f, &f, 0.5).unwrap().ratio, Some(0.0));
        let r = tracking_error(&f, &vec![0.0; f.len()], 0.5).unwrap();
        assert_eq!(r.ratio, Some(1.0));
        assert_eq!(tracking_error(&[0.0; 4], &[0.0; 4], 1.0).unwrap().ratio, None);
        assert!(tracking_error(&[], &[], 0.5).is_err());
    }

    #[test]
    fn boundedness_flags_growth() {
        let t: Vec<f64> = (0..=300).map(|i| i as f64 * 0.1).collect();
        let osc: Vec<f64> = t.iter().map(|t| 1.0 + 0.5 * (3.0 * t).sin()).collect();
        assert!(boundedness(&t, &osc).unwrap().bounded());
        let grow: Vec<f64> = t.iter().map(|t| 0.1 * t).collect();
        assert!(!boundedness(&t, &grow).unwrap().bounded());
    }

    #[test]
    fn multiplier_is_dominated_by_energy() {
        let w = WaveGridState::from_fn(40, |x| (3.0 * x).cos(), |x| (2.0 * x).sin()).unwrap();
        let z = WaveGridState::zeros(40).unwrap();
        let d = energy_diagnostics(&w, &z, &w, 1.0);
        assert!(d.rho_bounded());
    }

    proptest! {
        #[test]
        fn fit_is_scale_equivariant(c in 0.01f64..100.0, g in 0.1f64..3.0, phase in 0.0f64..6.0) {
            let t: Vec<f64> = (0..=80).map(|i| i as f64 * 0.1).collect();
            let v: Vec<f64> = t.iter().map(|t| (-g * t).exp() * (1.5 + (2.0 * t + phase).sin())).collect();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            let a = fit_decay(&t, &v, 0.5).unwrap();
            let b = fit_decay(&t, &scaled, 0.5).unwrap();
            prop_assert!((b.m / a.m - c).abs() <= 1e-9 * c);
            prop_assert!((b.gamma - a.gamma).abs() <= 1e-9);
        }

        #[test]
        fn rho_never_exceeds_e0(a in proptest::collection::vec(-2.0f64..2.0, 6), b in proptest::collection::vec(-2.0f64..2.0, 6)) {
            fn field(c: &[f64], x: f64) -> f64 {
                c.iter().enumerate().map(|(j, v)| v * (j as f64 * 2.7 * x).sin()).sum()
            }
            let w = WaveGridState::from_fn(32, |x| field(&a, x), |x| field(&b, x)).unwrap();
            let z = WaveGridState::zeros(32).unwrap();
            let d = energy_diagnostics(&w, &z, &w, 1.0);
            prop_assert!(d.rho_bounded());
        }
    }
}
