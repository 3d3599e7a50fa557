//! Fibre-length drift and detection-window tracking.
//!
//! The optical path length of a buried fibre follows the temperature with a
//! seasonal and a (lagged) diurnal component. The detectors are gated, so the
//! receiver tracks the arrival time of the pulses; when the tracker falls
//! behind by more than half a gate width, the gate starts to miss the laser
//! pulse and photonic clicks fade while dark counts persist.

use serde::{Deserialize, Serialize};

/// Optical delay per metre of go & return path, from group index 1.5 over
/// c = 3e8 m/s. Makes 6 m correspond to 30 ns exactly.
pub const NS_PER_METRE: f64 = 5.0;

const DAY_S: f64 = 86_400.0;
const YEAR_S: f64 = 365.0 * DAY_S;

/// Sinusoidal drift of the go & return optical length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Amplitude of the 365-day component, metres.
    pub seasonal_amplitude_m: f64,
    /// Amplitude of the 24-hour component, metres.
    pub diurnal_amplitude_m: f64,
    /// Lag of the diurnal component behind the ambient temperature, hours.
    pub phase_lag_hours: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            seasonal_amplitude_m: 6.0,
            diurnal_amplitude_m: 0.5,
            phase_lag_hours: 3.0,
        }
    }
}

/// Tracker behaviour: how fast the gate position may move per batch and the
/// laser pulse shape used for the overlap model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Maximum tracker adjustment per batch, ns.
    pub slew_ns_per_batch: f64,
    /// Laser pulse width (FWHM), ns. Shorter than 1 ns on real hardware.
    pub pulse_fwhm_ns: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            slew_ns_per_batch: 5.0,
            pulse_fwhm_ns: 0.9,
        }
    }
}

/// Per-link drift and tracking state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    /// Delay of the nominal (mean) optical path, ns.
    pub nominal_optical_delay_ns: f64,
    /// Current go & return length deviation from nominal, metres.
    pub current_delta_length_m: f64,
    /// Tracker estimate of the delay deviation, ns.
    pub tracker_offset_ns: f64,
    /// Detection gate width, ns; hardware bound keeps it under 2 ns.
    pub gate_width_ns: f64,
    /// Photonic click retention factor produced by the last tracking update.
    suppression_factor: f64,
}

impl DriftState {
    pub fn new(nominal_optical_delay_ns: f64, gate_width_ns: f64) -> Self {
        assert!(
            gate_width_ns > 0.0 && gate_width_ns < 2.0,
            "gate width must be in (0, 2) ns"
        );
        Self {
            nominal_optical_delay_ns,
            current_delta_length_m: 0.0,
            tracker_offset_ns: 0.0,
            gate_width_ns,
            suppression_factor: 1.0,
        }
    }

    /// Delay deviation implied by the current length deviation, ns.
    pub fn delay_delta_ns(&self) -> f64 {
        self.current_delta_length_m * NS_PER_METRE
    }

    /// Residual tracking error `|delay(current_delta) - tracker_offset|`, ns.
    pub fn tracking_error_ns(&self) -> f64 {
        (self.delay_delta_ns() - self.tracker_offset_ns).abs()
    }

    /// Photonic click retention applied to the next batch, 0..=1.
    pub fn suppression_factor(&self) -> f64 {
        self.suppression_factor
    }
}

/// Moves the fibre state to simulated time `t_s` under `model`.
pub fn apply_drift(drift: &DriftState, t_s: f64, model: &DriftModel) -> DriftState {
    let seasonal = model.seasonal_amplitude_m * (2.0 * std::f64::consts::PI * t_s / YEAR_S).sin();
    let lag_s = model.phase_lag_hours * 3_600.0;
    let diurnal =
        model.diurnal_amplitude_m * (2.0 * std::f64::consts::PI * (t_s - lag_s) / DAY_S).sin();
    DriftState {
        current_delta_length_m: seasonal + diurnal,
        ..*drift
    }
}

/// One tracking step, called once per batch.
///
/// The tracker moves toward the true delay by at most the slew bound. The
/// residual error determines how much of the Gaussian laser pulse still falls
/// inside the detection gate: errors up to half a gate width cost nothing,
/// beyond that photonic clicks are suppressed by the lost overlap.
pub fn track_gate_timing(drift: &DriftState, cfg: &TrackerConfig) -> DriftState {
    let target = drift.delay_delta_ns();
    let step = (target - drift.tracker_offset_ns)
        .clamp(-cfg.slew_ns_per_batch, cfg.slew_ns_per_batch);
    let tracker_offset_ns = drift.tracker_offset_ns + step;
    let residual = (target - tracker_offset_ns).abs();
    let suppression_factor =
        overlap_factor(residual, drift.gate_width_ns, cfg.pulse_fwhm_ns);
    DriftState {
        tracker_offset_ns,
        suppression_factor,
        ..*drift
    }
}

/// Fraction of photonic clicks retained at tracking error `err_ns`.
///
/// Normalized so that any error within half a gate width retains everything;
/// past that, retention decays as the pulse-gate overlap, continuously.
fn overlap_factor(err_ns: f64, gate_width_ns: f64, pulse_fwhm_ns: f64) -> f64 {
    let half = gate_width_ns / 2.0;
    if err_ns <= half {
        return 1.0;
    }
    let sigma = pulse_fwhm_ns / (8.0 * 2f64.ln()).sqrt();
    let overlap = |e: f64| {
        0.5 * (erf((half - e) / (sigma * std::f64::consts::SQRT_2))
            + erf((half + e) / (sigma * std::f64::consts::SQRT_2)))
    };
    let reference = overlap(half);
    if reference <= 0.0 {
        return 0.0;
    }
    (overlap(err_ns) / reference).clamp(0.0, 1.0)
}

/// Abramowitz & Stegun 7.1.26, |error| < 1.5e-7. Plenty for a click-rate
/// suppression model.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_metres_is_thirty_ns() {
        let mut d = DriftState::new(0.0, 1.8);
        d.current_delta_length_m = 6.0;
        assert_eq!(d.delay_delta_ns(), 30.0);
    }

    #[test]
    fn zero_metres_is_zero_ns() {
        let d = DriftState::new(0.0, 1.8);
        assert_eq!(d.delay_delta_ns(), 0.0);
    }

    #[test]
    fn two_metres_is_ten_ns() {
        let mut d = DriftState::new(0.0, 1.8);
        d.current_delta_length_m = 2.0;
        assert_eq!(d.delay_delta_ns(), 10.0);
    }

    #[test]
    fn delay_is_exactly_linear() {
        let mut d = DriftState::new(0.0, 1.8);
        for delta in [-7.25, -0.5, 0.0, 0.1, 3.3, 6.0, 12.0] {
            d.current_delta_length_m = delta;
            assert_eq!(d.delay_delta_ns(), 5.0 * delta);
        }
    }

    #[test]
    fn drift_is_sum_of_sinusoids() {
        let model = DriftModel {
            seasonal_amplitude_m: 6.0,
            diurnal_amplitude_m: 0.5,
            phase_lag_hours: 3.0,
        };
        let d0 = DriftState::new(0.0, 1.8);
        // Quarter year in, midnight: seasonal at full amplitude.
        let quarter_year = 365.0 * 86_400.0 / 4.0;
        let d = apply_drift(&d0, quarter_year, &model);
        let expected_diurnal = 0.5
            * (2.0 * std::f64::consts::PI * (quarter_year - 3.0 * 3600.0) / 86_400.0).sin();
        assert!((d.current_delta_length_m - (6.0 + expected_diurnal)).abs() < 1e-9);
        // Lag shifts the diurnal zero crossing.
        let d_lag0 = apply_drift(
            &d0,
            0.0,
            &DriftModel {
                seasonal_amplitude_m: 0.0,
                diurnal_amplitude_m: 1.0,
                phase_lag_hours: 0.0,
            },
        );
        assert!(d_lag0.current_delta_length_m.abs() < 1e-12);
        let d_lag6 = apply_drift(
            &d0,
            0.0,
            &DriftModel {
                seasonal_amplitude_m: 0.0,
                diurnal_amplitude_m: 1.0,
                phase_lag_hours: 6.0,
            },
        );
        assert!((d_lag6.current_delta_length_m + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_error_keeps_every_photon() {
        let cfg = TrackerConfig::default();
        let d = DriftState::new(0.0, 1.8);
        let tracked = track_gate_timing(&d, &cfg);
        assert_eq!(tracked.suppression_factor(), 1.0);
        assert_eq!(tracked.tracking_error_ns(), 0.0);
    }

    #[test]
    fn large_error_suppresses_all_photons() {
        let cfg = TrackerConfig {
            slew_ns_per_batch: 0.0,
            pulse_fwhm_ns: 0.9,
        };
        let mut d = DriftState::new(0.0, 1.8);
        d.current_delta_length_m = 10.0; // 50 ns off, gate is 1.8 ns wide
        let tracked = track_gate_timing(&d, &cfg);
        assert!(tracked.suppression_factor() < 1e-9);
    }

    #[test]
    fn within_half_gate_width_costs_nothing() {
        assert_eq!(overlap_factor(0.0, 1.8, 0.9), 1.0);
        assert_eq!(overlap_factor(0.89, 1.8, 0.9), 1.0);
        let just_past = overlap_factor(0.95, 1.8, 0.9);
        assert!(just_past < 1.0 && just_past > 0.8, "factor = {just_past}");
    }

    #[test]
    fn step_change_reacquired_within_slew_budget() {
        // 30 ns step with a 5 ns/batch slew bound: locked again by batch 6.
        let cfg = TrackerConfig {
            slew_ns_per_batch: 5.0,
            pulse_fwhm_ns: 0.9,
        };
        let mut d = DriftState::new(0.0, 1.8);
        d.current_delta_length_m = 6.0; // 30 ns
        let mut batches = 0;
        while d.tracking_error_ns() > 0.0 {
            d = track_gate_timing(&d, &cfg);
            batches += 1;
            assert!(batches <= 6, "not reacquired after {batches} batches");
        }
        assert_eq!(batches, 6);
        assert_eq!(d.suppression_factor(), 1.0);
    }

    #[test]
    fn erf_reference_values() {
        assert!((erf(0.0)).abs() < 1e-9);
        assert!((erf(1.0) - 0.842_700_79).abs() < 1e-6);
        assert!((erf(-1.0) + 0.842_700_79).abs() < 1e-6);
        assert!((erf(3.0) - 0.999_977_91).abs() < 1e-6);
    }
}
