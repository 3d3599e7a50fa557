//! Classical-channel message framing for a distillation round.
//!
//! Every piece of classical information the two parties exchange during a
//! round (sifting announcements, Cascade parities, verification subsets, the
//! privacy-amplification seed) is appended to a per-direction transcript as a
//! length-prefixed record. At the end of the round each direction's
//! concatenated transcript is authenticated with a single Wegman-Carter tag.
//!
//! Record layout (all integers little-endian):
//!
//! ```text
//! u32 payload_len | u64 round_id | u8 phase | payload bytes
//! ```
//!
//! The closing record of a direction carries phase [`Phase::AuthTag`] and a
//! 16-byte tag as payload; the tag covers every byte framed before it. See
//! `docs/wire-formats.md` for the payload layout of each phase.

/// Phase tag of a classical record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    /// Sifting decision mask: u64 click count, then packed keep bits.
    SiftKeep = 0x01,
    /// Per-block Cascade shuffle/verify seeds: u64 block, u64 seeds...
    CascadeSeed = 0x10,
    /// Sub-block parities disclosed by the reference side:
    /// u64 block, u8 pass, u32 count, packed parity bits.
    CascadeParity = 0x11,
    /// Mismatch mask sent back: u64 block, u8 pass, u32 count, packed bits.
    CascadeDecision = 0x12,
    /// Binary-search parities: u64 block, u32 count, packed bits.
    BinaryParity = 0x13,
    /// Positions corrected: u64 block, u32 count, u32 positions...
    CorrectedPositions = 0x14,
    /// Verification parities: u64 block, u32 count, packed bits.
    VerifyParity = 0x21,
    /// Verification verdict per block: u64 block, u8 ok.
    VerifyVerdict = 0x22,
    /// Privacy-amplification seed: u64 output length, u64 seed length,
    /// packed seed bits.
    PaSeed = 0x30,
    /// Closing authentication tag: 16 bytes.
    AuthTag = 0x50,
}

/// One direction's transcript: framed records in order of emission.
#[derive(Debug, Clone, Default)]
pub struct Transcript {
    bytes: Vec<u8>,
    records: usize,
}

impl Transcript {
    pub fn push(&mut self, round_id: u64, phase: Phase, payload: &[u8]) {
        self.bytes
            .extend_from_slice(&(payload.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(&round_id.to_le_bytes());
        self.bytes.push(phase as u8);
        self.bytes.extend_from_slice(payload);
        self.records += 1;
    }

    /// Canonical byte stream, the authenticated message.
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn records(&self) -> usize {
        self.records
    }
}

/// Direction of a classical message within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// The two transcripts of one round plus an optional in-flight corruption
/// used to exercise the authentication contract.
#[derive(Debug, Default)]
pub struct RoundChannel {
    pub round_id: u64,
    a_to_b: Transcript,
    b_to_a: Transcript,
    tamper: Option<Tamper>,
}

/// Flips bits of one transcript byte in flight; the receiver sees the
/// corrupted copy, the sender's tag was computed over the original.
#[derive(Debug, Clone, Copy)]
pub struct Tamper {
    pub direction: Direction,
    pub byte_index: usize,
    pub xor_mask: u8,
}

impl RoundChannel {
    pub fn new(round_id: u64) -> Self {
        Self {
            round_id,
            ..Default::default()
        }
    }

    pub fn with_tamper(round_id: u64, tamper: Tamper) -> Self {
        Self {
            round_id,
            tamper: Some(tamper),
            ..Default::default()
        }
    }

    pub fn send(&mut self, direction: Direction, phase: Phase, payload: &[u8]) {
        let t = match direction {
            Direction::AliceToBob => &mut self.a_to_b,
            Direction::BobToAlice => &mut self.b_to_a,
        };
        t.push(self.round_id, phase, payload);
    }

    /// The sender's view of a direction (what the tag is computed over).
    pub fn sent_bytes(&self, direction: Direction) -> &[u8] {
        match direction {
            Direction::AliceToBob => self.a_to_b.bytes(),
            Direction::BobToAlice => self.b_to_a.bytes(),
        }
    }

    /// The receiver's view of a direction (what the tag is verified over).
    pub fn received_bytes(&self, direction: Direction) -> Vec<u8> {
        let mut bytes = self.sent_bytes(direction).to_vec();
        if let Some(t) = self.tamper {
            if t.direction == direction && t.byte_index < bytes.len() {
                bytes[t.byte_index] ^= t.xor_mask;
            }
        }
        bytes
    }

    pub fn records(&self, direction: Direction) -> usize {
        match direction {
            Direction::AliceToBob => self.a_to_b.records(),
            Direction::BobToAlice => self.b_to_a.records(),
        }
    }
}
