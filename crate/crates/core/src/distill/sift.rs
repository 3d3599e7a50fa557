//! SARG sifting.
//!
//! The four-state announcement combinatorics reduce, for key purposes, to an
//! acceptance rate of 1/4 per detection; bit values and their error
//! statistics pass through untouched. The keep mask is classical sifting
//! discussion, so it goes on the transcript and both parties derive the same
//! kept-index set.

use rand::Rng;

use crate::bits::{to_bytes, Bits};
use crate::photonics::DetectionBatch;

use super::channel::{Direction, Phase, RoundChannel};

/// Correlated raw key kept after sifting.
#[derive(Debug, Clone)]
pub struct SiftedKey {
    pub bits_alice: Bits,
    pub bits_bob: Bits,
    pub length: usize,
    /// Identifier of the batch the bits came from.
    pub source_batch: u64,
}

/// SARG acceptance probability per detection.
pub const SARG_ACCEPT: f64 = 0.25;

/// Sifts a detection batch; each click survives with probability 1/4.
pub fn sift_sarg(
    batch: &DetectionBatch,
    source_batch: u64,
    rng: &mut impl Rng,
    channel: &mut RoundChannel,
) -> SiftedKey {
    let clicks = batch.bit_values.len();
    let mut keep = Bits::with_capacity(clicks);
    for _ in 0..clicks {
        keep.push(rng.gen_bool(SARG_ACCEPT));
    }

    let mut payload = (clicks as u64).to_le_bytes().to_vec();
    payload.extend_from_slice(&to_bytes(&keep));
    channel.send(Direction::BobToAlice, Phase::SiftKeep, &payload);

    let mut bits_alice = Bits::with_capacity(clicks / 3);
    let mut bits_bob = Bits::with_capacity(clicks / 3);
    for i in keep.iter_ones() {
        bits_alice.push(batch.basis_choices.alice_bits[i]);
        bits_bob.push(batch.bit_values[i]);
    }
    let length = bits_bob.len();
    SiftedKey {
        bits_alice,
        bits_bob,
        length,
        source_batch,
    }
}
