//! Deterministic simulator of a metropolitan trusted-node QKD network.
//!
//! The crate models the three layers of such a network:
//!
//! * a **quantum layer** ([`photonics`] + [`distill`]): statistical plug & play
//!   link physics, SARG sifting, Cascade error correction, Toeplitz privacy
//!   amplification and Wegman-Carter authentication of the classical channel;
//! * a **key management layer** ([`keymgmt`]): per-node key servers with raw
//!   key pools, one-time-pad relay through a trusted intermediate node, link
//!   aggregation, XOR dual-key agreement with a PKI keystream and synchronized
//!   delivery of 256-bit key blocks;
//! * an **application layer** ([`consumers`]): encryptor emulators that request
//!   a fresh 256-bit key on a schedule and verify end-to-end key agreement.
//!
//! Everything is driven by the discrete-event engine in [`netsim`], configured
//! through a [`scenario`] file, and fully reproducible: one seed, one trace.

pub mod bits;
pub mod consumers;
pub mod distill;
pub mod ids;
pub mod keymgmt;
pub mod netsim;
pub mod photonics;
pub mod rng;
pub mod scenario;

pub use bits::Bits;
