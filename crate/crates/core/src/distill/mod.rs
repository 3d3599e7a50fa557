//! Two-party key distillation: sifting, error correction, privacy
//! amplification, and authentication of the round's classical traffic.
//!
//! A round takes one complete detection batch and either exports a fresh
//! [`SecretKey`] to the key management layer or reports why it could not
//! (monitor abort, authentication failure, exhausted auth pool, or simply no
//! extractable bits). Authentication key consumption is paid out of a per-link
//! pool that the round replenishes from its own output before exporting the
//! remainder.

mod auth;
mod cascade;
mod channel;
mod sift;
mod toeplitz;

pub use auth::{
    verify_tag, wegman_carter_tag, AuthError, AuthKeyPool, AuthTag, AUTH_KEY_BITS_PER_TAG,
};
pub use cascade::{
    cascade_correct, initial_block_size, CascadeOutcome, CorrectedKey, CASCADE_BLOCK_BITS,
    CASCADE_PASSES, VERIFY_PARITIES,
};
pub use channel::{Direction, Phase, RoundChannel, Tamper, Transcript};
pub use sift::{sift_sarg, SiftedKey, SARG_ACCEPT};
pub use toeplitz::{privacy_amplify, ToeplitzError};

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{random_bits, Bits};
use crate::ids::LinkId;
use crate::photonics::DetectionBatch;

/// Distilled secret key exported by one round on one link.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub bits: Bits,
    pub length: usize,
    pub round_id: u64,
    pub link_id: LinkId,
}

/// Binary entropy `h2(q)`, zero at the endpoints.
pub fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
}

/// Extractable secret length for a corrected buffer:
/// `max(0, floor(n * (1 - h2(Q))) - leaked - margin)`.
pub fn secret_length(n: usize, qber: f64, leaked_bits: u64, margin_bits: u64) -> usize {
    if n == 0 {
        return 0;
    }
    let capacity = (n as f64 * (1.0 - binary_entropy(qber))).floor();
    let out = capacity - leaked_bits as f64 - margin_bits as f64;
    if out <= 0.0 {
        0
    } else {
        out as usize
    }
}

/// Secret-fraction bound used to size privacy amplification. The default is
/// the entropy bound above; a protocol-specific bound can replace it.
pub trait SecretBound: Send + Sync {
    fn secret_length(&self, n: usize, qber: f64, leaked_bits: u64) -> usize;
}

/// Default bound: `n (1 - h2(Q)) - leaked - margin`.
#[derive(Debug, Clone, Copy)]
pub struct EntropyMarginBound {
    pub margin_bits: u64,
}

impl SecretBound for EntropyMarginBound {
    fn secret_length(&self, n: usize, qber: f64, leaked_bits: u64) -> usize {
        secret_length(n, qber, leaked_bits, self.margin_bits)
    }
}

/// Distillation parameters of a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Round aborts when the batch click rate falls below this fraction of
    /// the reference detection probability.
    pub monitor_min_fraction: f64,
    /// Provisioned initial secret per link, bits.
    pub initial_secret_bits: u64,
    /// Auth pool replenishment target, bits.
    pub auth_reserve_bits: u64,
    /// Security margin subtracted by the default secret bound, bits.
    pub secret_margin_bits: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            monitor_min_fraction: 0.5,
            initial_secret_bits: 4096,
            auth_reserve_bits: 4096,
            secret_margin_bits: 128,
        }
    }
}

/// Auth key a round must see available before it starts: one tag per
/// direction plus one segment of reserve.
pub const AUTH_ROUND_MINIMUM: u64 = 3 * AUTH_KEY_BITS_PER_TAG;
/// Auth key actually consumed per round: one tag per direction.
pub const AUTH_ROUND_CONSUMED: u64 = 2 * AUTH_KEY_BITS_PER_TAG;

/// Why a round ended without exporting key material.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundFailure {
    /// Click rate below the monitored fraction of the reference; batch
    /// discarded before any classical exchange.
    MonitorAbort { observed: f64, reference: f64 },
    /// A closing tag did not verify; the round's key is discarded.
    AuthFailure,
    /// Not enough auth key left to authenticate a round; the link must halt.
    AuthExhausted { available: u64 },
}

/// Everything a completed (non-aborted) round reports.
#[derive(Debug, Clone)]
pub struct RoundStats {
    pub round_id: u64,
    pub sifted_len: usize,
    pub corrected_len: usize,
    pub qber_measured: f64,
    pub leaked_bits: u64,
    pub secret_len: usize,
    pub auth_consumed: u64,
    pub auth_replenished: u64,
    pub blocks_discarded: usize,
}

/// Outcome of one distillation round.
#[derive(Debug, Clone)]
pub enum RoundOutcome {
    /// Protocol completed and authenticated; `alice` and `bob` carry the
    /// exported copies (bitwise identical).
    Secret {
        alice: SecretKey,
        bob: SecretKey,
        stats: RoundStats,
    },
    /// Protocol completed and authenticated but yielded no exportable bits.
    NoSecret { stats: RoundStats },
    Failed(RoundFailure),
}

/// Per-link distillation state machine: auth pool, QBER memory, round ids.
pub struct LinkDistiller {
    pub link_id: LinkId,
    pub config: DistillConfig,
    auth_pool: AuthKeyPool,
    bound: Arc<dyn SecretBound>,
    /// Reference click probability used by the detection monitor.
    reference_p: f64,
    /// Hint for the next Cascade run; the previous round's exact QBER, or
    /// the expected value before any round completed.
    qber_hint: f64,
    next_round_id: u64,
}

impl LinkDistiller {
    pub fn new(
        link_id: LinkId,
        config: DistillConfig,
        reference_p: f64,
        expected_qber: f64,
        initial_secret: Bits,
    ) -> Self {
        let margin_bits = config.secret_margin_bits;
        Self {
            link_id,
            config,
            auth_pool: AuthKeyPool::new(initial_secret),
            bound: Arc::new(EntropyMarginBound { margin_bits }),
            reference_p,
            qber_hint: expected_qber,
            next_round_id: 0,
        }
    }

    /// Replaces the default secret-fraction bound.
    pub fn with_bound(mut self, bound: Arc<dyn SecretBound>) -> Self {
        self.bound = bound;
        self
    }

    pub fn auth_available(&self) -> u64 {
        self.auth_pool.available()
    }

    pub fn auth_pool(&self) -> &AuthKeyPool {
        &self.auth_pool
    }

    pub fn qber_hint(&self) -> f64 {
        self.qber_hint
    }

    /// Runs sift -> cascade -> privacy amplification over `batch`, then
    /// authenticates the round's concatenated classical transcript once per
    /// direction. `tamper` corrupts one direction in flight (test hook).
    pub fn run_round(
        &mut self,
        batch: &DetectionBatch,
        rng: &mut ChaCha8Rng,
        parallel: bool,
        tamper: Option<Tamper>,
    ) -> RoundOutcome {
        assert!(batch.complete, "incomplete batches are discarded upstream");
        let round_id = self.next_round_id;
        self.next_round_id += 1;

        let observed = batch.click_rate();
        if observed < self.config.monitor_min_fraction * self.reference_p {
            return RoundOutcome::Failed(RoundFailure::MonitorAbort {
                observed,
                reference: self.reference_p,
            });
        }
        if self.auth_pool.available() < AUTH_ROUND_MINIMUM {
            return RoundOutcome::Failed(RoundFailure::AuthExhausted {
                available: self.auth_pool.available(),
            });
        }

        let mut channel = match tamper {
            Some(t) => RoundChannel::with_tamper(round_id, t),
            None => RoundChannel::new(round_id),
        };

        let sifted = sift_sarg(batch, round_id, rng, &mut channel);
        let corrected = cascade_correct(&sifted, self.qber_hint, rng, &mut channel, parallel);
        let n = corrected.length();
        let secret_len = self
            .bound
            .secret_length(n, corrected.alice.qber_measured, corrected.alice.leaked_bits);

        let (secret_alice, secret_bob) = if secret_len > 0 {
            let seed = random_bits(rng, n + secret_len - 1);
            let mut payload = (secret_len as u64).to_le_bytes().to_vec();
            payload.extend_from_slice(&(seed.len() as u64).to_le_bytes());
            payload.extend_from_slice(&crate::bits::to_bytes(&seed));
            channel.send(Direction::AliceToBob, Phase::PaSeed, &payload);
            let a = privacy_amplify(&corrected.alice.bits, &seed, secret_len)
                .expect("seed sized by construction");
            let b = privacy_amplify(&corrected.bob.bits, &seed, secret_len)
                .expect("seed sized by construction");
            (a, b)
        } else {
            (Bits::new(), Bits::new())
        };

        // Close both directions with one Wegman-Carter tag each. The key
        // segments come off the shared pool in a fixed order, so the parties
        // stay aligned.
        let key_ab = self.auth_pool.take(AUTH_KEY_BITS_PER_TAG).expect("precheck");
        let key_ba = self.auth_pool.take(AUTH_KEY_BITS_PER_TAG).expect("precheck");
        let tag_ab = wegman_carter_tag(channel.sent_bytes(Direction::AliceToBob), &key_ab)
            .expect("segment length fixed");
        let tag_ba = wegman_carter_tag(channel.sent_bytes(Direction::BobToAlice), &key_ba)
            .expect("segment length fixed");
        channel.send(Direction::AliceToBob, Phase::AuthTag, &tag_ab.tag);
        channel.send(Direction::BobToAlice, Phase::AuthTag, &tag_ba.tag);

        let received_ab = strip_closing_tag(&channel.received_bytes(Direction::AliceToBob));
        let received_ba = strip_closing_tag(&channel.received_bytes(Direction::BobToAlice));
        let ok_at_bob = verify_tag(&received_ab, &key_ab, &tag_ab).expect("segment length fixed");
        let ok_at_alice =
            verify_tag(&received_ba, &key_ba, &tag_ba).expect("segment length fixed");

        let mut stats = RoundStats {
            round_id,
            sifted_len: sifted.length,
            corrected_len: n,
            qber_measured: corrected.alice.qber_measured,
            leaked_bits: corrected.alice.leaked_bits,
            secret_len,
            auth_consumed: AUTH_ROUND_CONSUMED,
            auth_replenished: 0,
            blocks_discarded: corrected.blocks_discarded,
        };

        if !(ok_at_bob && ok_at_alice) {
            return RoundOutcome::Failed(RoundFailure::AuthFailure);
        }

        assert_eq!(
            secret_alice, secret_bob,
            "verified round produced diverging secrets"
        );
        if n > 0 {
            self.qber_hint = corrected.alice.qber_measured;
        }

        if secret_len == 0 {
            return RoundOutcome::NoSecret { stats };
        }

        // Replenish the auth pool up to its reserve target before exporting.
        let deficit = self
            .config
            .auth_reserve_bits
            .saturating_sub(self.auth_pool.available());
        let replenish = deficit.min(secret_len as u64) as usize;
        self.auth_pool.push(&secret_alice[..replenish]);
        stats.auth_replenished = replenish as u64;

        let export_alice = secret_alice[replenish..].to_bitvec();
        let export_bob = secret_bob[replenish..].to_bitvec();
        stats.secret_len = export_alice.len();
        if export_alice.is_empty() {
            return RoundOutcome::NoSecret { stats };
        }
        RoundOutcome::Secret {
            alice: SecretKey {
                length: export_alice.len(),
                bits: export_alice,
                round_id,
                link_id: self.link_id.clone(),
            },
            bob: SecretKey {
                length: export_bob.len(),
                bits: export_bob,
                round_id,
                link_id: self.link_id.clone(),
            },
            stats,
        }
    }
}

/// The closing tag record is not part of what its own tag covers.
fn strip_closing_tag(transcript: &[u8]) -> Vec<u8> {
    const TAG_RECORD_LEN: usize = 4 + 8 + 1 + 16;
    transcript[..transcript.len() - TAG_RECORD_LEN].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::{
        detection_probability, exchange_raw_batch, qber_expected, DriftState, LinkPhysics,
    };
    use crate::rng::stream_rng;

    fn physics() -> LinkPhysics {
        LinkPhysics {
            fibre_length_km: 3.7,
            loss_db: 2.5,
            mu: 0.25,
            eta: 0.1,
            p_dark: 1e-4,
            gate_rate_hz: 5e6,
            visibility: 0.98,
        }
    }

    fn distiller(seed: u64) -> LinkDistiller {
        let phys = physics();
        LinkDistiller::new(
            LinkId::new("SQ3"),
            DistillConfig::default(),
            detection_probability(&phys).unwrap(),
            qber_expected(&phys).unwrap(),
            random_bits(&mut stream_rng(seed, "initial-secret"), 4096),
        )
    }

    fn batch(target: u64, seed: u64) -> DetectionBatch {
        let drift = DriftState::new(0.0, 1.8);
        exchange_raw_batch(
            &physics(),
            &drift,
            target,
            0.0,
            None,
            &mut stream_rng(seed, "round-batch"),
        )
        .unwrap()
    }

    #[test]
    fn secret_length_perfect_channel() {
        assert_eq!(secret_length(1024, 0.0, 0, 0), 1024);
    }

    #[test]
    fn secret_length_half_qber_is_zero() {
        assert_eq!(secret_length(1024, 0.5, 0, 0), 0);
    }

    #[test]
    fn secret_length_frozen_example() {
        // h2(0.03) = 0.19439185783157616 (50-digit evaluation), so
        // floor(10000 * (1 - h2)) = 8056 and 8056 - 1200 - 128 = 6728.
        assert_eq!(secret_length(10_000, 0.03, 1200, 128), 6728);
    }

    #[test]
    fn secret_length_decreases_with_leakage() {
        let mut last = usize::MAX;
        for leaked in [0u64, 100, 500, 1000, 5000] {
            let n = secret_length(10_000, 0.02, leaked, 128);
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn binary_entropy_endpoints() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nominal_round_exports_key_and_replenishes() {
        let mut d = distiller(1);
        let before = d.auth_available();
        let b = batch(40_000, 2);
        match d.run_round(&b, &mut stream_rng(3, "round"), false, None) {
            RoundOutcome::Secret { alice, bob, stats } => {
                assert_eq!(alice.bits, bob.bits);
                assert!(alice.length > 0);
                assert_eq!(stats.auth_consumed, 512);
                // Pool back at its reserve target: consumed 512, topped up.
                assert_eq!(d.auth_available(), before);
                assert_eq!(stats.auth_replenished, 512);
                assert!(stats.qber_measured > 0.0 && stats.qber_measured < 0.05);
            }
            other => panic!("expected Secret, got {other:?}"),
        }
    }

    #[test]
    fn round_is_deterministic() {
        let b = batch(20_000, 4);
        let run = |seed| {
            let mut d = distiller(9);
            match d.run_round(&b, &mut stream_rng(seed, "det"), false, None) {
                RoundOutcome::Secret { alice, .. } => alice.bits,
                other => panic!("{other:?}"),
            }
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn tampered_transcript_discards_round() {
        let b = batch(20_000, 5);
        let mut d = distiller(2);
        let outcome = d.run_round(
            &b,
            &mut stream_rng(6, "tamper"),
            false,
            Some(Tamper {
                direction: Direction::AliceToBob,
                byte_index: 40,
                xor_mask: 0x80,
            }),
        );
        assert!(matches!(
            outcome,
            RoundOutcome::Failed(RoundFailure::AuthFailure)
        ));
        // Auth key was still consumed and not replenished.
        assert_eq!(d.auth_available(), 4096 - 512);
    }

    #[test]
    fn low_click_rate_trips_monitor() {
        let mut d = distiller(3);
        let mut b = batch(20_000, 7);
        // Report a click rate at 30% of reference against a 50% threshold.
        b.gates = (b.gates as f64 / 0.3 * (b.click_rate() / d.reference_p)) as u64;
        let outcome = d.run_round(&b, &mut stream_rng(8, "monitor"), false, None);
        match outcome {
            RoundOutcome::Failed(RoundFailure::MonitorAbort {
                observed,
                reference,
            }) => {
                assert!(observed < 0.5 * reference);
            }
            other => panic!("expected MonitorAbort, got {other:?}"),
        }
        // Monitor aborts cost no auth key.
        assert_eq!(d.auth_available(), 4096);
    }

    #[test]
    fn auth_pool_exhaustion_halts_link() {
        let phys = physics();
        let mut d = LinkDistiller::new(
            LinkId::new("SQ3"),
            DistillConfig::default(),
            detection_probability(&phys).unwrap(),
            qber_expected(&phys).unwrap(),
            random_bits(&mut stream_rng(10, "tiny-secret"), 512),
        );
        let b = batch(10_000, 11);
        let outcome = d.run_round(&b, &mut stream_rng(12, "exhaust"), false, None);
        assert!(matches!(
            outcome,
            RoundOutcome::Failed(RoundFailure::AuthExhausted { available: 512 })
        ));
    }

    #[test]
    fn auth_conservation_across_rounds() {
        let mut d = distiller(4);
        let mut pool_before = d.auth_available();
        for seed in 0..5 {
            let b = batch(30_000, 100 + seed);
            match d.run_round(&b, &mut stream_rng(200 + seed, "conserve"), false, None) {
                RoundOutcome::Secret { stats, .. } | RoundOutcome::NoSecret { stats } => {
                    assert_eq!(
                        d.auth_available(),
                        pool_before - stats.auth_consumed + stats.auth_replenished
                    );
                }
                RoundOutcome::Failed(f) => panic!("round failed: {f:?}"),
            }
            pool_before = d.auth_available();
        }
    }

    #[test]
    fn parallel_round_matches_serial() {
        let b = batch(60_000, 13);
        let run = |parallel| {
            let mut d = distiller(14);
            match d.run_round(&b, &mut stream_rng(15, "par"), parallel, None) {
                RoundOutcome::Secret { alice, .. } => alice.bits,
                other => panic!("{other:?}"),
            }
        };
        assert_eq!(run(false), run(true));
    }
}
