//! Global key-material ledger.
//!
//! Every movement of key bits through the management layer lands here as one
//! entry: production, auth replenishment, export into pools, block cuts,
//! relay deliveries, dual-key combinations, degraded mints, serves and
//! erasures. The audit recounts the whole run from these entries and must
//! balance to the bit; `ledger.csv` is the exported form.

use crate::ids::{AssociationId, LinkId, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEvent {
    /// Secret bits a distillation round produced, before replenishment.
    SecretProduced { link: LinkId, round: u64, bits: u64 },
    /// Bits the round kept to top up the link's auth pool.
    AuthReplenished { link: LinkId, round: u64, bits: u64 },
    /// Bits exported into the link's raw pools.
    Exported { link: LinkId, round: u64, bits: u64 },
    /// 256-bit blocks cut from a link pool into an association stream.
    BlockCut {
        link: LinkId,
        assoc: AssociationId,
        blocks: u64,
    },
    /// One-time-pad bits consumed from a hop pool by the relay.
    OtpConsumed { link: LinkId, bits: u64 },
    /// Relay payload blocks delivered end to end.
    RelayDelivered { assoc: AssociationId, blocks: u64 },
    /// Stream blocks combined with PKI key into buffer blocks.
    Combined { assoc: AssociationId, blocks: u64 },
    /// PKI-only blocks minted under degraded policy.
    DegradedMinted { assoc: AssociationId, blocks: u64 },
    /// One block served to one endpoint.
    Served {
        assoc: AssociationId,
        endpoint: NodeId,
        block_id: u64,
        pki_only: bool,
    },
    /// Blocks erased after both endpoints consumed them.
    Erased { assoc: AssociationId, blocks: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub time_s: f64,
    pub event: LedgerEvent,
}

#[derive(Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn record(&mut self, time_s: f64, event: LedgerEvent) {
        self.entries.push(LedgerEntry { time_s, event });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// CSV export: `time_s,event,link,assoc,endpoint,round_or_block,bits,blocks`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,event,link,assoc,endpoint,round_or_block,bits,blocks\n");
        for e in &self.entries {
            let time = format_time(e.time_s);
            let row = match &e.event {
                LedgerEvent::SecretProduced { link, round, bits } => {
                    format!("{time},secret_produced,{link},,,{round},{bits},")
                }
                LedgerEvent::AuthReplenished { link, round, bits } => {
                    format!("{time},auth_replenished,{link},,,{round},{bits},")
                }
                LedgerEvent::Exported { link, round, bits } => {
                    format!("{time},exported,{link},,,{round},{bits},")
                }
                LedgerEvent::BlockCut {
                    link,
                    assoc,
                    blocks,
                } => format!("{time},block_cut,{link},{assoc},,,,{blocks}"),
                LedgerEvent::OtpConsumed { link, bits } => {
                    format!("{time},otp_consumed,{link},,,,{bits},")
                }
                LedgerEvent::RelayDelivered { assoc, blocks } => {
                    format!("{time},relay_delivered,,{assoc},,,,{blocks}")
                }
                LedgerEvent::Combined { assoc, blocks } => {
                    format!("{time},combined,,{assoc},,,,{blocks}")
                }
                LedgerEvent::DegradedMinted { assoc, blocks } => {
                    format!("{time},degraded_minted,,{assoc},,,,{blocks}")
                }
                LedgerEvent::Served {
                    assoc,
                    endpoint,
                    block_id,
                    pki_only,
                } => {
                    let bits = if *pki_only { 0 } else { 256 };
                    format!("{time},served,,{assoc},{endpoint},{block_id},{bits},1")
                }
                LedgerEvent::Erased { assoc, blocks } => {
                    format!("{time},erased,,{assoc},,,,{blocks}")
                }
            };
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Seconds with microsecond precision, fixed width fraction.
pub(crate) fn format_time(t: f64) -> String {
    let micros = (t * 1e6).round() as u64;
    format!("{}.{:06}", micros / 1_000_000, micros % 1_000_000)
}
