//! Statistical model of one plug & play QKD link.
//!
//! The optical train is abstracted to per-gate detection statistics: a
//! Poissonian weak-pulse source attenuated by the fibre (Beer-Lambert), a
//! two-detector receiver with quantum efficiency `eta` and dark-count
//! probability `p_dark` per gate, and interference of limited `visibility`.
//! Fibre-length drift and detection-window tracking live in [`drift`].

mod drift;

pub use drift::{DriftModel, DriftState, TrackerConfig, NS_PER_METRE};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::Bits;
use crate::ids::LinkId;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("link cannot click: detection probability is zero")]
    NoDetections,
}

/// Optical and detector parameters of one QKD link.
///
/// `loss_db` is stored as an attenuation magnitude (>= 0); scenario files may
/// state it negative, sign convention of link budgets, and are normalized on
/// parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPhysics {
    /// Fibre length in km.
    pub fibre_length_km: f64,
    /// Attenuation magnitude in dB.
    pub loss_db: f64,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Detector quantum efficiency, 0..=1.
    pub eta: f64,
    /// Dark-count probability per gate per detector pair, 0..=1.
    pub p_dark: f64,
    /// Detector gate rate in gates/second.
    pub gate_rate_hz: f64,
    /// Interference visibility, 0..=1.
    pub visibility: f64,
}

impl LinkPhysics {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(PhysicsError::InvalidParameter(what.to_string()))
            }
        };
        check(
            self.fibre_length_km > 0.0 && self.fibre_length_km.is_finite(),
            "fibre_length_km must be > 0",
        )?;
        check(
            self.loss_db >= 0.0 && self.loss_db.is_finite(),
            "loss_db magnitude must be >= 0",
        )?;
        check(self.mu > 0.0 && self.mu.is_finite(), "mu must be > 0")?;
        check((0.0..=1.0).contains(&self.eta), "eta must be in [0, 1]")?;
        check(
            (0.0..=1.0).contains(&self.p_dark),
            "p_dark must be in [0, 1]",
        )?;
        check(
            self.gate_rate_hz > 0.0 && self.gate_rate_hz.is_finite(),
            "gate_rate_hz must be > 0",
        )?;
        check(
            self.visibility > 0.0 && self.visibility <= 1.0,
            "visibility must be in (0, 1]",
        )?;
        Ok(())
    }

    /// Linear transmission of the fibre, `10^(-A/10)`.
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }
}

/// Per-gate click statistics at a given photonic suppression factor.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClickStats {
    /// Probability of a click (photon or dark count) per gate.
    pub p_click: f64,
    /// Share of clicks caused by dark counts alone.
    pub dark_share: f64,
    /// Error probability of a photonic click, `(1 - V) / 2`.
    pub p_opt_err: f64,
}

pub(crate) fn click_stats(phys: &LinkPhysics, suppression: f64) -> ClickStats {
    let p_photon = 1.0 - (-phys.mu * phys.transmission() * phys.eta * suppression / 2.0).exp();
    let p_click = 1.0 - (1.0 - phys.p_dark) * (1.0 - p_photon);
    let dark_share = if p_click > 0.0 {
        phys.p_dark * (1.0 - p_photon) / p_click
    } else {
        0.0
    };
    ClickStats {
        p_click,
        dark_share,
        p_opt_err: (1.0 - phys.visibility) / 2.0,
    }
}

/// Expected probability of a detector click per gate.
///
/// `p = 1 - (1 - p_dark) * exp(-mu * 10^(-A/10) * eta / 2)`; the `/2` is the
/// two-detector split of the receiver. This reference value seeds the
/// detection-probability monitor of the distillation round.
pub fn detection_probability(phys: &LinkPhysics) -> Result<f64, PhysicsError> {
    phys.validate()?;
    Ok(click_stats(phys, 1.0).p_click)
}

/// Expected quantum bit error rate of sifted bits from this link.
///
/// Dark clicks carry a random bit (error probability 1/2); photonic clicks
/// err with `(1 - visibility) / 2`.
pub fn qber_expected(phys: &LinkPhysics) -> Result<f64, PhysicsError> {
    phys.validate()?;
    let stats = click_stats(phys, 1.0);
    Ok(0.5 * stats.dark_share + stats.p_opt_err * (1.0 - stats.dark_share))
}

/// One buffer's worth of raw detections on a link, Bob side.
#[derive(Debug, Clone)]
pub struct DetectionBatch {
    pub link_id: LinkId,
    /// Detector gates opened during the exchange.
    pub gates: u64,
    /// Clicks on detector 1 (bit value 0).
    pub clicks_d1: u64,
    /// Clicks on detector 2 (bit value 1).
    pub clicks_d2: u64,
    /// Bob's measured bit per click.
    pub bit_values: Bits,
    /// Per-click encoding metadata consumed by sifting.
    pub basis_choices: SiftMeta,
    /// Simulated seconds.
    pub start_time: f64,
    pub end_time: f64,
    /// False when the exchange was aborted by a link-down signal.
    pub complete: bool,
}

impl DetectionBatch {
    pub fn clicks(&self) -> u64 {
        self.clicks_d1 + self.clicks_d2
    }

    /// Measured click probability per gate, the monitored quantity.
    pub fn click_rate(&self) -> f64 {
        if self.gates == 0 {
            0.0
        } else {
            self.clicks() as f64 / self.gates as f64
        }
    }
}

/// Alice-side preparation record, one entry per registered click.
///
/// SARG sifting is modeled at the acceptance-rate level, so the metadata
/// reduces to the bit Alice encoded for each of Bob's clicks.
#[derive(Debug, Clone, Default)]
pub struct SiftMeta {
    pub alice_bits: Bits,
}

/// Simulates detector gates until `target_detections` clicks accumulate, or
/// until `deadline_s` (a link-down signal) cuts the exchange short.
///
/// Batch duration is `gates / gate_rate_hz` of simulated time. Tracking loss
/// recorded in `drift` suppresses the photonic click rate, leaving dark
/// counts untouched.
pub fn exchange_raw_batch(
    phys: &LinkPhysics,
    drift: &DriftState,
    target_detections: u64,
    start_time: f64,
    deadline_s: Option<f64>,
    rng: &mut impl Rng,
) -> Result<DetectionBatch, PhysicsError> {
    phys.validate()?;
    if target_detections == 0 {
        return Err(PhysicsError::InvalidParameter(
            "target_detections must be > 0".into(),
        ));
    }
    let stats = click_stats(phys, drift.suppression_factor());
    if stats.p_click <= 0.0 {
        return Err(PhysicsError::NoDetections);
    }
    let gate_budget = deadline_s.map(|d| {
        let window = (d - start_time).max(0.0);
        (window * phys.gate_rate_hz).floor() as u64
    });

    let gap = Geometric::new(stats.p_click)
        .map_err(|e| PhysicsError::InvalidParameter(format!("click probability: {e}")))?;
    let mut gates: u64 = 0;
    let mut bob_bits = Bits::with_capacity(target_detections as usize);
    let mut alice_bits = Bits::with_capacity(target_detections as usize);
    let mut complete = true;

    while (bob_bits.len() as u64) < target_detections {
        let next_gate = gates + gap.sample(rng) + 1;
        if let Some(budget) = gate_budget {
            if next_gate > budget {
                gates = budget;
                complete = false;
                break;
            }
        }
        gates = next_gate;
        let dark = rng.gen_bool(stats.dark_share);
        let alice_bit = rng.gen_bool(0.5);
        let bob_bit = if dark {
            rng.gen_bool(0.5)
        } else {
            alice_bit ^ rng.gen_bool(stats.p_opt_err)
        };
        alice_bits.push(alice_bit);
        bob_bits.push(bob_bit);
    }

    let clicks_d2 = bob_bits.count_ones() as u64;
    let clicks_d1 = bob_bits.len() as u64 - clicks_d2;
    let duration = gates as f64 / phys.gate_rate_hz;
    Ok(DetectionBatch {
        link_id: LinkId::new("unassigned"),
        gates,
        clicks_d1,
        clicks_d2,
        bit_values: bob_bits,
        basis_choices: SiftMeta { alice_bits },
        start_time,
        end_time: start_time + duration,
        complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::hamming;
    use crate::rng::stream_rng;

    pub(crate) fn test_physics() -> LinkPhysics {
        LinkPhysics {
            fibre_length_km: 14.4,
            loss_db: 4.6,
            mu: 0.25,
            eta: 0.1,
            p_dark: 1e-4,
            gate_rate_hz: 5e6,
            visibility: 0.98,
        }
    }

    #[test]
    fn detection_probability_no_source_no_dark() {
        // mu > 0 is an invariant, so "no photons" is the eta = 0 limit.
        let phys = LinkPhysics {
            eta: 0.0,
            p_dark: 0.0,
            ..test_physics()
        };
        assert_eq!(detection_probability(&phys).unwrap(), 0.0);
    }

    #[test]
    fn detection_probability_full_attenuation_leaves_dark_counts() {
        let phys = LinkPhysics {
            loss_db: 400.0,
            p_dark: 0.001,
            ..test_physics()
        };
        let p = detection_probability(&phys).unwrap();
        assert!((p - 0.001).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn detection_probability_frozen_value() {
        // Frozen from a 50-digit evaluation of
        // 1 - (1 - 1e-4) * exp(-1 * 10^(-0.46) * 0.1 / 2).
        let phys = LinkPhysics {
            mu: 1.0,
            ..test_physics()
        };
        let p = detection_probability(&phys).unwrap();
        assert!((p - 0.017285705452610194).abs() < 1e-15, "p = {p}");
    }

    #[test]
    fn detection_probability_rejects_invalid() {
        let phys = LinkPhysics {
            eta: 1.5,
            ..test_physics()
        };
        assert!(matches!(
            detection_probability(&phys),
            Err(PhysicsError::InvalidParameter(_))
        ));
        let phys = LinkPhysics {
            fibre_length_km: -1.0,
            ..test_physics()
        };
        assert!(detection_probability(&phys).is_err());
    }

    #[test]
    fn qber_perfect_interference_no_noise() {
        let phys = LinkPhysics {
            visibility: 1.0,
            p_dark: 0.0,
            ..test_physics()
        };
        assert_eq!(qber_expected(&phys).unwrap(), 0.0);
    }

    #[test]
    fn qber_all_dark_counts_is_half() {
        // mu -> 0 limit realized with a vanishing photonic term.
        let phys = LinkPhysics {
            mu: 1e-300,
            p_dark: 1e-4,
            ..test_physics()
        };
        let q = qber_expected(&phys).unwrap();
        assert!((q - 0.5).abs() < 1e-9, "q = {q}");
    }

    #[test]
    fn qber_visibility_dominates() {
        let phys = LinkPhysics {
            visibility: 0.98,
            p_dark: 1e-15,
            ..test_physics()
        };
        let q = qber_expected(&phys).unwrap();
        assert!((q - 0.01).abs() < 1e-9, "q = {q}");
    }

    #[test]
    fn batch_click_count_matches_target() {
        let drift = DriftState::new(0.0, 1.8);
        let mut rng = stream_rng(1, "test-batch");
        let batch =
            exchange_raw_batch(&test_physics(), &drift, 1000, 0.0, None, &mut rng).unwrap();
        assert_eq!(batch.clicks(), 1000);
        assert_eq!(
            batch.clicks_d1 + batch.clicks_d2,
            batch.bit_values.len() as u64
        );
        assert!(batch.complete);
        assert!(batch.gates >= 1000);
        let expected_end = batch.gates as f64 / test_physics().gate_rate_hz;
        assert!((batch.end_time - expected_end).abs() < 1e-9);
    }

    #[test]
    fn batch_reproducible_bit_for_bit() {
        let drift = DriftState::new(0.0, 1.8);
        let a = exchange_raw_batch(
            &test_physics(),
            &drift,
            5000,
            0.0,
            None,
            &mut stream_rng(9, "repro"),
        )
        .unwrap();
        let b = exchange_raw_batch(
            &test_physics(),
            &drift,
            5000,
            0.0,
            None,
            &mut stream_rng(9, "repro"),
        )
        .unwrap();
        assert_eq!(a.bit_values, b.bit_values);
        assert_eq!(a.basis_choices.alice_bits, b.basis_choices.alice_bits);
        assert_eq!(a.gates, b.gates);
    }

    #[test]
    fn batch_click_rate_within_binomial_bounds() {
        // >= 1e6 gates; the empirical click/gate ratio must sit inside the
        // 5-sigma binomial interval around the closed form.
        let phys = test_physics();
        let drift = DriftState::new(0.0, 1.8);
        let p = detection_probability(&phys).unwrap();
        let target = 20_000;
        let mut rng = stream_rng(2, "clickrate");
        let batch = exchange_raw_batch(&phys, &drift, target, 0.0, None, &mut rng).unwrap();
        assert!(batch.gates >= 1_000_000, "gates = {}", batch.gates);
        let sigma = (p * (1.0 - p) / batch.gates as f64).sqrt();
        let observed = batch.click_rate();
        assert!(
            (observed - p).abs() <= 5.0 * sigma,
            "observed {observed}, expected {p} +- {}",
            5.0 * sigma
        );
    }

    #[test]
    fn batch_error_rate_converges_to_qber() {
        let phys = test_physics();
        let drift = DriftState::new(0.0, 1.8);
        let q = qber_expected(&phys).unwrap();
        let target = 200_000;
        let mut rng = stream_rng(3, "qber");
        let batch = exchange_raw_batch(&phys, &drift, target, 0.0, None, &mut rng).unwrap();
        let errors = hamming(&batch.bit_values, &batch.basis_choices.alice_bits);
        let observed = errors as f64 / target as f64;
        let sigma = (q * (1.0 - q) / target as f64).sqrt();
        assert!(
            (observed - q).abs() <= 5.0 * sigma,
            "observed {observed}, expected {q} +- {}",
            5.0 * sigma
        );
    }

    #[test]
    fn batch_deadline_yields_incomplete() {
        let phys = test_physics();
        let drift = DriftState::new(0.0, 1.8);
        let mut rng = stream_rng(4, "deadline");
        // Room for roughly half the target at the expected click rate.
        let p = detection_probability(&phys).unwrap();
        let deadline = 5_000.0 / (p * phys.gate_rate_hz);
        let batch =
            exchange_raw_batch(&phys, &drift, 10_000, 0.0, Some(deadline), &mut rng).unwrap();
        assert!(!batch.complete);
        assert!(batch.clicks() < 10_000);
        assert!(batch.clicks() > 1_000);
        assert!(batch.end_time <= deadline + 1e-9);
    }

    #[test]
    fn monotonicity_in_parameters() {
        // Property sweep: p is non-increasing in attenuation and
        // non-decreasing in mu, eta, p_dark.
        let mut rng = stream_rng(5, "monotone");
        for _ in 0..500 {
            let base = LinkPhysics {
                fibre_length_km: 1.0 + rng.gen::<f64>() * 50.0,
                loss_db: rng.gen::<f64>() * 20.0,
                mu: 0.05 + rng.gen::<f64>() * 2.0,
                eta: rng.gen::<f64>(),
                p_dark: rng.gen::<f64>() * 0.01,
                gate_rate_hz: 5e6,
                visibility: 0.9 + rng.gen::<f64>() * 0.1,
            };
            let p0 = detection_probability(&base).unwrap();
            let more_loss = LinkPhysics {
                loss_db: base.loss_db + rng.gen::<f64>() * 10.0,
                ..base.clone()
            };
            assert!(detection_probability(&more_loss).unwrap() <= p0 + 1e-15);
            let more_mu = LinkPhysics {
                mu: base.mu * (1.0 + rng.gen::<f64>()),
                ..base.clone()
            };
            assert!(detection_probability(&more_mu).unwrap() >= p0 - 1e-15);
            let more_eta = LinkPhysics {
                eta: (base.eta + rng.gen::<f64>() * (1.0 - base.eta)).min(1.0),
                ..base.clone()
            };
            assert!(detection_probability(&more_eta).unwrap() >= p0 - 1e-15);
            let more_dark = LinkPhysics {
                p_dark: (base.p_dark * 2.0).min(1.0),
                ..base.clone()
            };
            assert!(detection_probability(&more_dark).unwrap() >= p0 - 1e-15);
        }
    }
}
