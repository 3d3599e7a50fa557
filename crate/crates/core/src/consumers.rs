//! Application-layer emulators.
//!
//! A consumer stands in for an encryptor pair: every rekey interval both
//! endpoints of its association request a fresh 256-bit block from their
//! local key server and record what they got. After a run, the audit proves
//! end-to-end key agreement (it must be total), reports outage windows of
//! strict consumers and the PKI-only fraction of degraded ones.

use serde::{Deserialize, Serialize};

use crate::ids::{AssociationId, NodeId};
use crate::keymgmt::{DeliveryPolicy, DeliveryStatus, KeyFabric, KeyRequest, SecurityLevel};

/// Application profile attached to one association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerProfile {
    pub association_id: AssociationId,
    /// Simulated seconds between key requests.
    pub rekey_interval_s: f64,
    pub policy: DeliveryPolicy,
    /// Free-text tag, e.g. "10GbE-L2".
    pub label: String,
}

/// One successful key delivery as seen by one endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedRecord {
    pub time_s: f64,
    pub block_id: u64,
    pub digest: u64,
    pub level: SecurityLevel,
    pub latency_s: f64,
}

#[derive(Debug, Clone)]
pub struct EndpointLog {
    pub node: NodeId,
    pub served: Vec<ServedRecord>,
    /// Closed outage windows (start, end), merged over consecutive failures.
    pub outages: Vec<(f64, f64)>,
    pub failed_ticks: u64,
    open_outage: Option<f64>,
}

impl EndpointLog {
    fn new(node: NodeId) -> Self {
        Self {
            node,
            served: Vec::new(),
            outages: Vec::new(),
            failed_ticks: 0,
            open_outage: None,
        }
    }

    fn record_success(&mut self, rec: ServedRecord) {
        if let Some(start) = self.open_outage.take() {
            self.outages.push((start, rec.time_s));
        }
        self.served.push(rec);
    }

    fn record_failure(&mut self, now: f64) {
        self.failed_ticks += 1;
        if self.open_outage.is_none() {
            self.open_outage = Some(now);
        }
    }

    fn close(&mut self, horizon: f64) {
        if let Some(start) = self.open_outage.take() {
            self.outages.push((start, horizon));
        }
    }
}

/// Per-association consumer state and request history.
#[derive(Debug, Clone)]
pub struct ConsumerLog {
    pub profile: ConsumerProfile,
    pub ends: [EndpointLog; 2],
}

impl ConsumerLog {
    pub fn new(profile: ConsumerProfile, endpoints: [NodeId; 2]) -> Self {
        let ends = endpoints.map(EndpointLog::new);
        Self { profile, ends }
    }

    /// Both endpoints issue `get_key`; requests are local and answered
    /// within the same instant, so latency is zero unless the request fails.
    /// Failures are not retried within a tick (fail-fast).
    pub fn tick(&mut self, fabric: &mut KeyFabric, now: f64) {
        for end in self.ends.iter_mut() {
            let response = fabric.request_key(
                &KeyRequest {
                    association_id: self.profile.association_id.clone(),
                    requester: end.node.clone(),
                },
                now,
            );
            match (response.status, response.block) {
                (DeliveryStatus::Ok, Some(block)) => {
                    end.record_success(ServedRecord {
                        time_s: now,
                        block_id: block.block_id,
                        digest: block.digest(),
                        level: block.security_level,
                        latency_s: 0.0,
                    });
                }
                _ => end.record_failure(now),
            }
        }
    }

    /// Closes any outage still open at the end of the run.
    pub fn finish(&mut self, horizon_s: f64) {
        for end in self.ends.iter_mut() {
            end.close(horizon_s);
        }
    }
}

/// Post-run verdict for one association.
#[derive(Debug, Clone)]
pub struct ConsumerAudit {
    pub association_id: AssociationId,
    pub label: String,
    pub served: [u64; 2],
    /// Fraction of commonly-served blocks whose (id, bits, level) agree;
    /// anything below 1.0 is a simulator bug.
    pub agreement_rate: f64,
    pub pki_only_fraction: f64,
    pub mean_latency_s: f64,
    pub outages: Vec<(f64, f64)>,
    pub failed_ticks: u64,
}

/// Whole-run application audit.
#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub consumers: Vec<ConsumerAudit>,
}

impl AuditReport {
    pub fn all_agree(&self) -> bool {
        self.consumers.iter().all(|c| c.agreement_rate == 1.0)
    }

    /// Structured text rendering, one stanza per consumer.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.consumers {
            out.push_str(&format!(
                "association {} ({})\n  served: {} / {} blocks\n  agreement: {:.6}\n  \
                 pki_only_fraction: {:.6}\n  mean_latency_s: {:.6}\n  failed_ticks: {}\n",
                c.association_id,
                c.label,
                c.served[0],
                c.served[1],
                c.agreement_rate,
                c.pki_only_fraction,
                c.mean_latency_s,
                c.failed_ticks,
            ));
            if c.outages.is_empty() {
                out.push_str("  outages: none\n");
            } else {
                out.push_str("  outages:\n");
                for (s, e) in &c.outages {
                    out.push_str(&format!("    {s:.1} .. {e:.1} s\n"));
                }
            }
        }
        out
    }

    /// CSV rendering: one row per consumer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "association,label,served_a,served_b,agreement_rate,pki_only_fraction,\
             mean_latency_s,failed_ticks,outage_seconds\n",
        );
        for c in &self.consumers {
            let outage_s: f64 = c.outages.iter().map(|(s, e)| e - s).sum();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.association_id,
                c.label,
                c.served[0],
                c.served[1],
                c.agreement_rate,
                c.pki_only_fraction,
                c.mean_latency_s,
                c.failed_ticks,
                outage_s,
            ));
        }
        out
    }
}

/// Verifies end-to-end agreement and summarizes service quality.
pub fn audit(logs: &[ConsumerLog]) -> AuditReport {
    let mut consumers = Vec::new();
    for log in logs {
        let [a, b] = &log.ends;
        let common = a.served.len().min(b.served.len());
        let mut matching = 0usize;
        for i in 0..common {
            if a.served[i].block_id == b.served[i].block_id
                && a.served[i].digest == b.served[i].digest
                && a.served[i].level == b.served[i].level
            {
                matching += 1;
            }
        }
        let agreement_rate = if common == 0 {
            1.0
        } else {
            matching as f64 / common as f64
        };
        let total_served = a.served.len() + b.served.len();
        let pki_only = a
            .served
            .iter()
            .chain(b.served.iter())
            .filter(|r| r.level == SecurityLevel::PkiOnly)
            .count();
        let pki_only_fraction = if total_served == 0 {
            0.0
        } else {
            pki_only as f64 / total_served as f64
        };
        let latency_sum: f64 = a
            .served
            .iter()
            .chain(b.served.iter())
            .map(|r| r.latency_s)
            .sum();
        let mean_latency_s = if total_served == 0 {
            0.0
        } else {
            latency_sum / total_served as f64
        };
        let mut outages = a.outages.clone();
        outages.extend(b.outages.iter().copied());
        outages.sort_by(|x, y| x.partial_cmp(y).unwrap());
        consumers.push(ConsumerAudit {
            association_id: log.profile.association_id.clone(),
            label: log.profile.label.clone(),
            served: [a.served.len() as u64, b.served.len() as u64],
            agreement_rate,
            pki_only_fraction,
            mean_latency_s,
            outages,
            failed_ticks: a.failed_ticks + b.failed_ticks,
        });
    }
    AuditReport { consumers }
}
