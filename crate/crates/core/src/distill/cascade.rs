//! Cascade error correction.
//!
//! The sifted buffer is split into 8192-bit blocks, each reconciled
//! independently: four passes of sub-block parity comparison with binary
//! search on mismatches, a fresh shuffle before every pass after the first,
//! and back-propagation of every correction into the sub-blocks of earlier
//! passes. Alice is the reference side; every parity she disclosed is counted
//! as leakage. A final batch of random-subset parities confirms equality;
//! a block that fails confirmation is discarded rather than exported.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bits::{hamming, to_bytes, to_words, xor, Bits, BitsSlice};

use super::channel::{Direction, Phase, RoundChannel};
use super::sift::SiftedKey;

/// Reconciliation block size, bits.
pub const CASCADE_BLOCK_BITS: usize = 8192;
/// Number of passes; sub-block size doubles each pass.
pub const CASCADE_PASSES: usize = 4;
/// Random-subset parities in the final equality confirmation.
pub const VERIFY_PARITIES: usize = 50;

/// Reconciled key material as seen by one party.
#[derive(Debug, Clone)]
pub struct CorrectedKey {
    /// Bitwise identical on both sides after a successful protocol run.
    pub bits: Bits,
    /// Exact error rate observed while correcting, flips / length.
    pub qber_measured: f64,
    /// Total parity bits disclosed over the classical channel.
    pub leaked_bits: u64,
}

/// Both parties' views plus the bookkeeping the round needs.
#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    pub alice: CorrectedKey,
    pub bob: CorrectedKey,
    pub flips: u64,
    pub blocks_total: usize,
    pub blocks_discarded: usize,
}

impl CascadeOutcome {
    pub fn length(&self) -> usize {
        self.alice.bits.len()
    }
}

/// First-pass sub-block size for an error-rate estimate.
///
/// `clamp(round(0.73 / q), 8, 8192)`; a hint of zero or below the useful
/// range degenerates to one sub-block per block.
pub fn initial_block_size(qber_hint: f64) -> usize {
    let q = qber_hint.clamp(0.0, 0.5);
    if q <= 0.0 {
        return CASCADE_BLOCK_BITS;
    }
    let k = (0.73 / q).round();
    if !k.is_finite() {
        return CASCADE_BLOCK_BITS;
    }
    (k as usize).clamp(8, CASCADE_BLOCK_BITS)
}

#[derive(Debug, Clone, Copy)]
struct BlockSeeds {
    shuffle: [u64; CASCADE_PASSES],
    verify: u64,
}

struct BlockJob<'a> {
    index: u64,
    alice: &'a BitsSlice,
    bob: &'a BitsSlice,
    seeds: BlockSeeds,
    k1: usize,
}

struct BlockResult {
    bob_final: Bits,
    leaked: u64,
    flips: u64,
    discarded: bool,
    msgs: Vec<(Direction, Phase, Vec<u8>)>,
}

#[inline]
fn subset_parity(bits: &[bool], positions: &[u32]) -> bool {
    let mut p = false;
    for &i in positions {
        p ^= bits[i as usize];
    }
    p
}

/// Isolates one differing position inside an odd-parity sub-block by binary
/// search; Alice discloses one parity per halving step.
fn binary_isolate(
    alice: &[bool],
    bob: &[bool],
    perm: &[u32],
    mut lo: usize,
    mut hi: usize,
    disclosed: &mut Bits,
) -> (u32, u64) {
    let mut steps = 0u64;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let a_left = subset_parity(alice, &perm[lo..mid]);
        disclosed.push(a_left);
        steps += 1;
        let b_left = subset_parity(bob, &perm[lo..mid]);
        if a_left != b_left {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (perm[lo], steps)
}

fn correct_block(job: &BlockJob<'_>) -> BlockResult {
    let n = job.alice.len();
    let alice: Vec<bool> = job.alice.iter().by_vals().collect();
    let mut bob: Vec<bool> = job.bob.iter().by_vals().collect();
    let mut leaked = 0u64;
    let mut msgs: Vec<(Direction, Phase, Vec<u8>)> = Vec::new();

    let mut seed_payload = job.index.to_le_bytes().to_vec();
    for s in &job.seeds.shuffle[1..] {
        seed_payload.extend_from_slice(&s.to_le_bytes());
    }
    seed_payload.extend_from_slice(&job.seeds.verify.to_le_bytes());
    msgs.push((Direction::AliceToBob, Phase::CascadeSeed, seed_payload));

    let mut perms: Vec<Vec<u32>> = Vec::with_capacity(CASCADE_PASSES);
    let mut invs: Vec<Vec<u32>> = Vec::with_capacity(CASCADE_PASSES);
    let mut ks: Vec<usize> = Vec::with_capacity(CASCADE_PASSES);
    // Sub-blocks whose Alice/Bob parities currently disagree, as
    // (pass, sub-block); kept exact under every correction.
    let mut odd: BTreeSet<(u8, u32)> = BTreeSet::new();

    for pass in 0..CASCADE_PASSES {
        let k = (job.k1 << pass).min(n.max(1));
        let mut perm: Vec<u32> = (0..n as u32).collect();
        if pass > 0 {
            let mut prng = ChaCha8Rng::seed_from_u64(job.seeds.shuffle[pass]);
            perm.shuffle(&mut prng);
        }
        let mut inv = vec![0u32; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p as usize] = i as u32;
        }
        perms.push(perm);
        invs.push(inv);
        ks.push(k);

        let nblocks = n.div_ceil(k);
        let mut a_par = Bits::with_capacity(nblocks);
        let mut b_par = Bits::with_capacity(nblocks);
        for b in 0..nblocks {
            let lo = b * k;
            let hi = ((b + 1) * k).min(n);
            let range = &perms[pass][lo..hi];
            a_par.push(subset_parity(&alice, range));
            b_par.push(subset_parity(&bob, range));
        }
        leaked += nblocks as u64;

        let mut payload = job.index.to_le_bytes().to_vec();
        payload.push(pass as u8);
        payload.extend_from_slice(&(nblocks as u32).to_le_bytes());
        payload.extend_from_slice(&to_bytes(&a_par));
        msgs.push((Direction::AliceToBob, Phase::CascadeParity, payload));

        let mismatch = xor(&a_par, &b_par);
        let mut payload = job.index.to_le_bytes().to_vec();
        payload.push(pass as u8);
        payload.extend_from_slice(&(nblocks as u32).to_le_bytes());
        payload.extend_from_slice(&to_bytes(&mismatch));
        msgs.push((Direction::BobToAlice, Phase::CascadeDecision, payload));

        for b in mismatch.iter_ones() {
            odd.insert((pass as u8, b as u32));
        }

        // Drain every mismatched sub-block, earliest pass (smallest k)
        // first. Each correction toggles the membership of the sub-block
        // containing the fixed position in every pass run so far; that is
        // the cascade back-propagation.
        let mut disclosed = Bits::new();
        let mut fixed: Vec<u32> = Vec::new();
        while let Some(&(qp, qb)) = odd.iter().next() {
            let (perm_q, k_q) = (&perms[qp as usize], ks[qp as usize]);
            let lo = qb as usize * k_q;
            let hi = ((qb as usize + 1) * k_q).min(n);
            let (pos, steps) = binary_isolate(&alice, &bob, perm_q, lo, hi, &mut disclosed);
            leaked += steps;
            bob[pos as usize] = !bob[pos as usize];
            fixed.push(pos);
            for q in 0..=pass {
                let sb = (invs[q][pos as usize] as usize / ks[q]) as u32;
                let key = (q as u8, sb);
                if !odd.remove(&key) {
                    odd.insert(key);
                }
            }
        }
        if !fixed.is_empty() {
            let mut payload = job.index.to_le_bytes().to_vec();
            payload.extend_from_slice(&(disclosed.len() as u32).to_le_bytes());
            payload.extend_from_slice(&to_bytes(&disclosed));
            msgs.push((Direction::AliceToBob, Phase::BinaryParity, payload));

            let mut payload = job.index.to_le_bytes().to_vec();
            payload.extend_from_slice(&(fixed.len() as u32).to_le_bytes());
            for pos in &fixed {
                payload.extend_from_slice(&pos.to_le_bytes());
            }
            msgs.push((Direction::BobToAlice, Phase::CorrectedPositions, payload));
        }
    }

    let bob_final: Bits = bob.iter().copied().collect();
    let flips = hamming(job.bob, &bob_final) as u64;

    // Equality confirmation: random-subset parities from a disclosed seed.
    let (a_par, ok) = confirm_parities(job.alice, &bob_final, job.seeds.verify);
    leaked += VERIFY_PARITIES as u64;
    let mut payload = job.index.to_le_bytes().to_vec();
    payload.extend_from_slice(&(VERIFY_PARITIES as u32).to_le_bytes());
    payload.extend_from_slice(&to_bytes(&a_par));
    msgs.push((Direction::AliceToBob, Phase::VerifyParity, payload));
    let mut payload = job.index.to_le_bytes().to_vec();
    payload.push(ok as u8);
    msgs.push((Direction::BobToAlice, Phase::VerifyVerdict, payload));

    BlockResult {
        bob_final,
        leaked,
        flips,
        discarded: !ok,
        msgs,
    }
}

/// Alice's confirmation parities over seeded random word masks, and whether
/// Bob's copies all matched.
fn confirm_parities(alice: &BitsSlice, bob: &BitsSlice, seed: u64) -> (Bits, bool) {
    let aw = to_words(alice);
    let bw = to_words(bob);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a_par = Bits::with_capacity(VERIFY_PARITIES);
    let mut ok = true;
    for _ in 0..VERIFY_PARITIES {
        let mut pa = false;
        let mut pb = false;
        for w in 0..aw.len() {
            let mask = rng.next_u64();
            pa ^= (aw[w] & mask).count_ones() & 1 == 1;
            pb ^= (bw[w] & mask).count_ones() & 1 == 1;
        }
        a_par.push(pa);
        ok &= pa == pb;
    }
    (a_par, ok)
}

/// Runs Cascade over the whole sifted buffer.
///
/// `qber_hint` may be inaccurate; it only sizes the first-pass sub-blocks.
/// With `parallel` the independent 8192-bit blocks are corrected on a thread
/// pool; the transcript and all outputs are identical either way.
pub fn cascade_correct(
    sifted: &SiftedKey,
    qber_hint: f64,
    rng: &mut ChaCha8Rng,
    channel: &mut RoundChannel,
    parallel: bool,
) -> CascadeOutcome {
    let n = sifted.length;
    let empty = |qber| CascadeOutcome {
        alice: CorrectedKey {
            bits: Bits::new(),
            qber_measured: qber,
            leaked_bits: 0,
        },
        bob: CorrectedKey {
            bits: Bits::new(),
            qber_measured: qber,
            leaked_bits: 0,
        },
        flips: 0,
        blocks_total: 0,
        blocks_discarded: 0,
    };
    if n == 0 {
        return empty(0.0);
    }
    let k1 = initial_block_size(qber_hint);
    let nblocks = n.div_ceil(CASCADE_BLOCK_BITS);
    let jobs: Vec<BlockJob<'_>> = (0..nblocks)
        .map(|b| {
            let lo = b * CASCADE_BLOCK_BITS;
            let hi = ((b + 1) * CASCADE_BLOCK_BITS).min(n);
            // Seeds drawn in block order so parallel execution cannot
            // reorder the stream.
            let seeds = BlockSeeds {
                shuffle: [0, rng.gen(), rng.gen(), rng.gen()],
                verify: rng.gen(),
            };
            BlockJob {
                index: b as u64,
                alice: &sifted.bits_alice[lo..hi],
                bob: &sifted.bits_bob[lo..hi],
                seeds,
                k1,
            }
        })
        .collect();

    let results: Vec<BlockResult> = if parallel {
        jobs.par_iter().map(correct_block).collect()
    } else {
        jobs.iter().map(correct_block).collect()
    };

    let mut alice_bits = Bits::with_capacity(n);
    let mut bob_bits = Bits::with_capacity(n);
    let mut leaked = 0u64;
    let mut flips = 0u64;
    let mut kept_flips = 0u64;
    let mut discarded = 0usize;
    for (job, res) in jobs.iter().zip(&results) {
        for (dir, phase, payload) in &res.msgs {
            channel.send(*dir, *phase, payload);
        }
        leaked += res.leaked;
        flips += res.flips;
        if res.discarded {
            discarded += 1;
        } else {
            alice_bits.extend_from_bitslice(job.alice);
            bob_bits.extend_from_bitslice(&res.bob_final);
            kept_flips += res.flips;
        }
    }
    let kept = alice_bits.len();
    let qber_measured = if kept > 0 {
        kept_flips as f64 / kept as f64
    } else if n > 0 {
        0.5
    } else {
        0.0
    };
    CascadeOutcome {
        alice: CorrectedKey {
            bits: alice_bits,
            qber_measured,
            leaked_bits: leaked,
        },
        bob: CorrectedKey {
            bits: bob_bits,
            qber_measured,
            leaked_bits: leaked,
        },
        flips,
        blocks_total: nblocks,
        blocks_discarded: discarded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::random_bits;
    use crate::rng::stream_rng;

    pub(crate) fn planted_instance(n: usize, qber: f64, seed: u64) -> (SiftedKey, usize) {
        let mut rng = stream_rng(seed, "cascade-plant");
        let alice = random_bits(&mut rng, n);
        let mut bob = alice.clone();
        let mut planted = 0;
        for i in 0..n {
            if rng.gen_bool(qber) {
                let v = bob[i];
                bob.set(i, !v);
                planted += 1;
            }
        }
        (
            SiftedKey {
                bits_alice: alice,
                bits_bob: bob,
                length: n,
                source_batch: 0,
            },
            planted,
        )
    }

    fn run(sifted: &SiftedKey, hint: f64, seed: u64) -> CascadeOutcome {
        let mut rng = stream_rng(seed, "cascade-run");
        let mut ch = RoundChannel::new(0);
        cascade_correct(sifted, hint, &mut rng, &mut ch, false)
    }

    #[test]
    fn error_free_block_is_identity() {
        let (sifted, planted) = planted_instance(CASCADE_BLOCK_BITS, 0.0, 1);
        assert_eq!(planted, 0);
        let out = run(&sifted, 0.02, 2);
        assert_eq!(out.bob.bits, sifted.bits_alice);
        assert_eq!(out.alice.bits, out.bob.bits);
        assert_eq!(out.flips, 0);
        assert_eq!(out.qber_measured_both(), 0.0);
        assert_eq!(out.blocks_discarded, 0);
        assert!(out.alice.leaked_bits > 0);
    }

    impl CascadeOutcome {
        fn qber_measured_both(&self) -> f64 {
            assert_eq!(self.alice.qber_measured, self.bob.qber_measured);
            self.alice.qber_measured
        }
    }

    #[test]
    fn three_percent_block_with_matching_hint() {
        let (sifted, planted) = planted_instance(CASCADE_BLOCK_BITS, 0.03, 3);
        let out = run(&sifted, 0.03, 4);
        assert_eq!(out.blocks_discarded, 0);
        assert_eq!(out.alice.bits, out.bob.bits);
        // All corrections are real planted errors: net flips == planted.
        assert_eq!(out.flips as usize, planted);
        let expected_q = planted as f64 / CASCADE_BLOCK_BITS as f64;
        assert!((out.qber_measured_both() - expected_q).abs() < 1e-12);
    }

    #[test]
    fn rough_hint_still_converges() {
        // True QBER 4%, hint says 1%: more binary-search work inside the
        // same 4-pass schedule, confirmed by the closing parities.
        let (sifted, planted) = planted_instance(CASCADE_BLOCK_BITS, 0.04, 5);
        let out = run(&sifted, 0.01, 6);
        assert_eq!(out.blocks_discarded, 0, "confirmation rejected the block");
        assert_eq!(out.alice.bits, out.bob.bits);
        assert_eq!(out.flips as usize, planted);
    }

    #[test]
    fn empty_input_yields_empty_output() {
        let sifted = SiftedKey {
            bits_alice: Bits::new(),
            bits_bob: Bits::new(),
            length: 0,
            source_batch: 0,
        };
        let out = run(&sifted, 0.03, 7);
        assert_eq!(out.length(), 0);
        assert_eq!(out.alice.leaked_bits, 0);
    }

    #[test]
    fn multi_block_and_partial_tail() {
        let n = 2 * CASCADE_BLOCK_BITS + 1234;
        let (sifted, planted) = planted_instance(n, 0.02, 8);
        let out = run(&sifted, 0.02, 9);
        assert_eq!(out.blocks_total, 3);
        assert_eq!(out.blocks_discarded, 0);
        assert_eq!(out.alice.bits, out.bob.bits);
        assert_eq!(out.length(), n);
        assert_eq!(out.flips as usize, planted);
    }

    #[test]
    fn parallel_matches_serial_bit_for_bit() {
        let n = 3 * CASCADE_BLOCK_BITS;
        let (sifted, _) = planted_instance(n, 0.03, 10);
        let mut rng_a = stream_rng(11, "cascade-par");
        let mut rng_b = stream_rng(11, "cascade-par");
        let mut ch_a = RoundChannel::new(0);
        let mut ch_b = RoundChannel::new(0);
        let serial = cascade_correct(&sifted, 0.03, &mut rng_a, &mut ch_a, false);
        let parallel = cascade_correct(&sifted, 0.03, &mut rng_b, &mut ch_b, true);
        assert_eq!(serial.bob.bits, parallel.bob.bits);
        assert_eq!(serial.alice.leaked_bits, parallel.alice.leaked_bits);
        assert_eq!(
            ch_a.sent_bytes(Direction::AliceToBob),
            ch_b.sent_bytes(Direction::AliceToBob)
        );
        assert_eq!(
            ch_a.sent_bytes(Direction::BobToAlice),
            ch_b.sent_bytes(Direction::BobToAlice)
        );
    }

    #[test]
    fn no_silent_mismatch_over_trials() {
        // Smaller sibling of the acceptance soundness suite.
        let mut failures = 0;
        for trial in 0..100 {
            let (sifted, _) = planted_instance(CASCADE_BLOCK_BITS, 0.03, 100 + trial);
            let out = run(&sifted, 0.03, 200 + trial);
            if out.blocks_discarded > 0 {
                failures += 1;
            } else {
                assert_eq!(
                    out.alice.bits, out.bob.bits,
                    "silent mismatch on trial {trial}"
                );
            }
        }
        assert!(failures <= 1, "{failures} discarded blocks out of 100");
    }

    #[test]
    fn initial_block_size_schedule() {
        assert_eq!(initial_block_size(0.0), CASCADE_BLOCK_BITS);
        assert_eq!(initial_block_size(0.5), 8);
        assert_eq!(initial_block_size(0.01), 73);
        assert_eq!(initial_block_size(1e-9), CASCADE_BLOCK_BITS);
    }
}
