//! Key management layer.
//!
//! One key server per node stores the secret bits its links produce, relays
//! key material through the trusted intermediate node with one-time-pad
//! encryption per hop, aggregates direct and relayed streams per association,
//! combines them with an independent PKI keystream (XOR dual-key agreement),
//! and serves synchronized 256-bit blocks to applications.
//!
//! The [`KeyFabric`] owns both endpoints' state for every pool, stream and
//! buffer: the two copies are maintained in lockstep (the synchronization
//! channel between key servers is abstracted away) and their equality is
//! asserted at creation time and audited after a run. A mismatch is a
//! simulator bug, never a statistic.

mod ledger;

pub use ledger::{Ledger, LedgerEntry, LedgerEvent};

use std::collections::{BTreeMap, VecDeque};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{random_bits, to_bytes, xor, Bits, BitsSlice};
use crate::ids::{AssociationId, LinkId, NodeId};
use crate::rng::{fnv1a64, stream_rng};

/// Size of one application key block, bits.
pub const KEY_BLOCK_BITS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SecurityLevel {
    /// QKD-derived key XORed with the PKI key.
    QkdPlusPki,
    /// PKI keystream alone; degraded availability mode.
    PkiOnly,
}

/// One contributing path of a key block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyPath {
    DirectLink(LinkId),
    Relay { via: NodeId },
    Pki,
}

/// 256-bit key block served to an application association.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyBlock {
    /// Monotonically increasing per buffer; equal ids carry equal bits at
    /// both endpoints.
    pub block_id: u64,
    pub bits: Bits,
    pub security_level: SecurityLevel,
    pub provenance: Vec<KeyPath>,
}

impl KeyBlock {
    /// Stable digest of (id, bits) for agreement checks.
    pub fn digest(&self) -> u64 {
        let mut data = self.block_id.to_le_bytes().to_vec();
        data.extend_from_slice(&to_bytes(&self.bits));
        fnv1a64(&data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryPolicy {
    /// Fail when no QKD-backed block is available.
    Strict,
    /// Fall back to PKI-only blocks during QKD outages.
    DegradedAllowed,
}

#[derive(Debug, Error, PartialEq)]
pub enum KeyError {
    #[error("no key available for association {0}")]
    KeyUnavailable(AssociationId),
    #[error("unknown association {0}")]
    UnknownAssociation(AssociationId),
    #[error("node {node} is not an endpoint of association {assoc}")]
    NotAnEndpoint { assoc: AssociationId, node: NodeId },
    #[error("hop pool on link {0} holds fewer than 256 bits")]
    HopPoolEmpty(LinkId),
}

/// Outcome of pushing link key material into a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolStatus {
    Ok,
    /// Fill watermark reached; the link should pause distillation until the
    /// pool drains.
    AboveCapacity,
}

/// FIFO store of exported secret bits at one endpoint of one link.
#[derive(Debug, Clone, Default)]
pub struct LinkPool {
    bits: Bits,
    cursor: usize,
    capacity_bits: Option<u64>,
    pushed: u64,
    taken: u64,
}

impl LinkPool {
    pub fn with_capacity(capacity_bits: Option<u64>) -> Self {
        Self {
            capacity_bits,
            ..Default::default()
        }
    }

    pub fn available(&self) -> u64 {
        (self.bits.len() - self.cursor) as u64
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn taken(&self) -> u64 {
        self.taken
    }

    pub fn above_capacity(&self) -> bool {
        self.capacity_bits
            .map(|c| self.available() >= c)
            .unwrap_or(false)
    }

    /// Appends bits; reports the watermark so the caller can pause the link.
    pub fn push(&mut self, fresh: &BitsSlice) -> PoolStatus {
        self.bits.extend_from_bitslice(fresh);
        self.pushed += fresh.len() as u64;
        if self.above_capacity() {
            PoolStatus::AboveCapacity
        } else {
            PoolStatus::Ok
        }
    }

    /// Pops `n` bits in FIFO order; panics if unavailable (callers check).
    pub fn take(&mut self, n: usize) -> Bits {
        assert!(self.available() >= n as u64, "pool underflow");
        let start = self.cursor;
        self.cursor += n;
        self.taken += n as u64;
        let out = self.bits[start..self.cursor].to_bitvec();
        if self.cursor > 1 << 16 {
            self.bits = self.bits[self.cursor..].to_bitvec();
            self.cursor = 0;
        }
        out
    }
}

/// Simulated authenticated classical key agreement: a seeded keystream whose
/// two copies stay in lockstep, available regardless of QKD link state.
#[derive(Debug, Clone)]
pub struct PkiChannel {
    rng: ChaCha8Rng,
    blocks_drawn: u64,
}

impl PkiChannel {
    fn new(seed: u64, association: &AssociationId, end: usize) -> Self {
        // Both ends derive the same stream; `end` is deliberately absent
        // from the domain.
        let _ = end;
        Self {
            rng: stream_rng(seed, &format!("pki:{association}")),
            blocks_drawn: 0,
        }
    }

    fn next_block(&mut self) -> Bits {
        self.blocks_drawn += 1;
        random_bits(&mut self.rng, KEY_BLOCK_BITS)
    }
}

/// XOR dual-key agreement.
///
/// With a QKD key present the result is `qkd XOR pki` at level
/// [`SecurityLevel::QkdPlusPki`]; without one, a permissive policy passes the
/// PKI key through at [`SecurityLevel::PkiOnly`], a strict policy refuses.
pub fn dual_key_combine(
    qkd_key: Option<&BitsSlice>,
    pki_key: &BitsSlice,
    policy: DeliveryPolicy,
) -> Result<(Bits, SecurityLevel), KeyError> {
    assert_eq!(pki_key.len(), KEY_BLOCK_BITS, "pki block must be 256 bits");
    match qkd_key {
        Some(q) => {
            assert_eq!(q.len(), KEY_BLOCK_BITS, "qkd block must be 256 bits");
            Ok((xor(q, pki_key), SecurityLevel::QkdPlusPki))
        }
        None if policy == DeliveryPolicy::DegradedAllowed => {
            Ok((pki_key.to_bitvec(), SecurityLevel::PkiOnly))
        }
        None => Err(KeyError::KeyUnavailable(AssociationId::new(""))),
    }
}

// ---------------------------------------------------------------------------
// Wiring configuration
// ---------------------------------------------------------------------------

/// Static description of one link's place in the fabric.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkWiring {
    pub id: LinkId,
    /// Ordered (alice node, bob node).
    pub endpoints: [NodeId; 2],
    pub pool_capacity_bits: Option<u64>,
}

/// Direct feed: 256-bit blocks cut from a link pool into an association.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectFeed {
    pub link: LinkId,
    pub assoc: AssociationId,
    pub weight: u32,
}

/// One-intermediate relay route feeding an association.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayRouteConfig {
    pub assoc: AssociationId,
    pub source: NodeId,
    pub via: NodeId,
    pub dest: NodeId,
    pub hop1: LinkId,
    pub hop2: LinkId,
    /// Share weights of the hop pools granted to this relay.
    pub weight_hop1: u32,
    pub weight_hop2: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationConfig {
    pub id: AssociationId,
    pub endpoints: [NodeId; 2],
    pub label: String,
    pub policy: DeliveryPolicy,
    /// Combined blocks held at most; pulls stall above this.
    pub buffer_capacity_blocks: usize,
    /// Cut-ahead depth of the aggregated stream, blocks.
    pub stream_depth_blocks: usize,
}

/// Key-delivery request, the application-facing message.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRequest {
    pub association_id: AssociationId,
    pub requester: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    Ok,
    KeyUnavailable,
    UnknownAssociation,
    NotAnEndpoint,
}

/// Key-delivery response.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyResponse {
    pub status: DeliveryStatus,
    pub block: Option<KeyBlock>,
}

// ---------------------------------------------------------------------------
// Fabric internals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct StreamBlock {
    bits: Bits,
    provenance: KeyPath,
}

#[derive(Debug)]
struct EndpointAssoc {
    node: NodeId,
    qkd_stream: VecDeque<StreamBlock>,
    pki: PkiChannel,
    blocks: BTreeMap<u64, KeyBlock>,
    /// Digest per served block, order of service.
    served: Vec<u64>,
    served_pki_only: u64,
    /// Running digest over every block ever created at this end.
    creation_digest: u64,
}

#[derive(Debug)]
struct AssociationState {
    cfg: AssociationConfig,
    ends: [EndpointAssoc; 2],
    next_block_id: u64,
    cursors: [u64; 2],
    combined: u64,
    minted: u64,
    erased: u64,
    stream_in: u64,
}

impl AssociationState {
    fn end_index(&self, node: &NodeId) -> Option<usize> {
        self.ends.iter().position(|e| &e.node == node)
    }

    fn in_buffer(&self) -> u64 {
        self.ends[0].blocks.len() as u64
    }

    fn stream_len(&self) -> usize {
        self.ends[0].qkd_stream.len()
    }

    fn has_room(&self) -> bool {
        (self.in_buffer() as usize) < self.cfg.buffer_capacity_blocks
    }

    fn stream_has_room(&self) -> bool {
        self.stream_len() < self.cfg.stream_depth_blocks
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SinkKey {
    Assoc(AssociationId),
    RelayHop { route: usize, hop: u8 },
}

#[derive(Debug)]
struct RelayRoute {
    cfg: RelayRouteConfig,
    payload_rng: ChaCha8Rng,
    /// What the trusted intermediate saw in the clear.
    observed_at_via: Vec<Bits>,
    /// What the endpoints received, for the exposure audit.
    delivered: Vec<Bits>,
    sessions: u64,
}

/// A completed relay transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaySession {
    pub source: NodeId,
    pub intermediate: NodeId,
    pub destination: NodeId,
    pub hop_keys_consumed: u64,
    pub payload_key: Bits,
}

/// Central state of the key management layer: every node's pools, streams,
/// buffers and the global ledger.
pub struct KeyFabric {
    links: Vec<LinkWiring>,
    feeds: Vec<DirectFeed>,
    pools: BTreeMap<(NodeId, LinkId), LinkPool>,
    sink_taken: BTreeMap<(LinkId, SinkKey), u64>,
    sink_weights: BTreeMap<LinkId, Vec<(SinkKey, u32)>>,
    routes: Vec<RelayRoute>,
    assocs: BTreeMap<AssociationId, AssociationState>,
    ledger: Ledger,
}

#[derive(Debug, Error, PartialEq)]
pub enum WiringError {
    #[error("{0}")]
    Invalid(String),
}

impl KeyFabric {
    pub fn new(
        seed: u64,
        links: Vec<LinkWiring>,
        feeds: Vec<DirectFeed>,
        route_cfgs: Vec<RelayRouteConfig>,
        assoc_cfgs: Vec<AssociationConfig>,
    ) -> Result<Self, WiringError> {
        let err = |msg: String| Err(WiringError::Invalid(msg));
        let link_of = |id: &LinkId| links.iter().find(|l| &l.id == id);

        let mut pools = BTreeMap::new();
        for l in &links {
            if l.endpoints[0] == l.endpoints[1] {
                return err(format!("link {} connects a node to itself", l.id));
            }
            for n in &l.endpoints {
                pools.insert(
                    (n.clone(), l.id.clone()),
                    LinkPool::with_capacity(l.pool_capacity_bits),
                );
            }
        }

        let mut assocs = BTreeMap::new();
        for cfg in assoc_cfgs {
            if cfg.endpoints[0] == cfg.endpoints[1] {
                return err(format!("association {} endpoints must differ", cfg.id));
            }
            if cfg.buffer_capacity_blocks == 0 {
                return err(format!("association {} buffer capacity must be > 0", cfg.id));
            }
            let ends = [0, 1].map(|i| EndpointAssoc {
                node: cfg.endpoints[i].clone(),
                qkd_stream: VecDeque::new(),
                pki: PkiChannel::new(seed, &cfg.id, i),
                blocks: BTreeMap::new(),
                served: Vec::new(),
                served_pki_only: 0,
                creation_digest: 0xcbf2_9ce4_8422_2325,
            });
            if assocs
                .insert(
                    cfg.id.clone(),
                    AssociationState {
                        cfg,
                        ends,
                        next_block_id: 0,
                        cursors: [0, 0],
                        combined: 0,
                        minted: 0,
                        erased: 0,
                        stream_in: 0,
                    },
                )
                .is_some()
            {
                return err("duplicate association id".into());
            }
        }

        let mut sink_weights: BTreeMap<LinkId, Vec<(SinkKey, u32)>> = BTreeMap::new();
        for f in &feeds {
            let Some(link) = link_of(&f.link) else {
                return err(format!("feed references unknown link {}", f.link));
            };
            let Some(assoc) = assocs.get(&f.assoc) else {
                return err(format!("feed references unknown association {}", f.assoc));
            };
            let mut ends = assoc.cfg.endpoints.clone();
            ends.sort();
            let mut lends = link.endpoints.clone();
            lends.sort();
            if ends != lends {
                return err(format!(
                    "feed link {} does not connect the endpoints of {}",
                    f.link, f.assoc
                ));
            }
            if f.weight == 0 {
                return err(format!("feed weight for {} must be > 0", f.assoc));
            }
            sink_weights
                .entry(f.link.clone())
                .or_default()
                .push((SinkKey::Assoc(f.assoc.clone()), f.weight));
        }

        let mut routes = Vec::new();
        for (idx, cfg) in route_cfgs.into_iter().enumerate() {
            let Some(assoc) = assocs.get(&cfg.assoc) else {
                return err(format!("relay references unknown association {}", cfg.assoc));
            };
            let mut ends = assoc.cfg.endpoints.clone();
            ends.sort();
            let mut rends = [cfg.source.clone(), cfg.dest.clone()];
            rends.sort();
            if ends != rends {
                return err(format!(
                    "relay endpoints do not match association {}",
                    cfg.assoc
                ));
            }
            let hop_connects = |hop: &LinkId, a: &NodeId, b: &NodeId| {
                link_of(hop)
                    .map(|l| {
                        (l.endpoints[0] == *a && l.endpoints[1] == *b)
                            || (l.endpoints[0] == *b && l.endpoints[1] == *a)
                    })
                    .unwrap_or(false)
            };
            if !hop_connects(&cfg.hop1, &cfg.source, &cfg.via) {
                return err(format!("hop1 {} does not connect source and via", cfg.hop1));
            }
            if !hop_connects(&cfg.hop2, &cfg.via, &cfg.dest) {
                return err(format!("hop2 {} does not connect via and dest", cfg.hop2));
            }
            if cfg.weight_hop1 == 0 || cfg.weight_hop2 == 0 {
                return err("relay hop weights must be > 0".into());
            }
            sink_weights
                .entry(cfg.hop1.clone())
                .or_default()
                .push((SinkKey::RelayHop { route: idx, hop: 0 }, cfg.weight_hop1));
            sink_weights
                .entry(cfg.hop2.clone())
                .or_default()
                .push((SinkKey::RelayHop { route: idx, hop: 1 }, cfg.weight_hop2));
            let domain = format!("relay:{}:{}", cfg.assoc, cfg.via);
            routes.push(RelayRoute {
                cfg,
                payload_rng: stream_rng(seed, &domain),
                observed_at_via: Vec::new(),
                delivered: Vec::new(),
                sessions: 0,
            });
        }

        Ok(Self {
            links,
            feeds,
            pools,
            sink_taken: BTreeMap::new(),
            sink_weights,
            routes,
            assocs,
            ledger: Ledger::default(),
        })
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn pool(&self, node: &NodeId, link: &LinkId) -> Option<&LinkPool> {
        self.pools.get(&(node.clone(), link.clone()))
    }

    /// True when either endpoint pool of the link sits at its watermark;
    /// distillation for this link should pause.
    pub fn link_backpressured(&self, link: &LinkId) -> bool {
        self.links
            .iter()
            .find(|l| &l.id == link)
            .map(|l| {
                l.endpoints
                    .iter()
                    .any(|n| self.pools[&(n.clone(), link.clone())].above_capacity())
            })
            .unwrap_or(false)
    }

    /// Appends one endpoint's copy of exported round bits to its pool.
    pub fn push_link_key(&mut self, node: &NodeId, link: &LinkId, secret: &BitsSlice) -> PoolStatus {
        let pool = self
            .pools
            .get_mut(&(node.clone(), link.clone()))
            .expect("push to unknown pool");
        pool.push(secret)
    }

    /// Engine entry point: records the round in the ledger, pushes both
    /// endpoint copies, and settles allocation, relay and combination.
    #[allow(clippy::too_many_arguments)]
    pub fn export_round(
        &mut self,
        link: &LinkId,
        round: u64,
        alice: &BitsSlice,
        bob: &BitsSlice,
        produced_bits: u64,
        replenished_bits: u64,
        now: f64,
    ) -> PoolStatus {
        assert_eq!(alice.len(), bob.len());
        self.ledger.record(
            now,
            LedgerEvent::SecretProduced {
                link: link.clone(),
                round,
                bits: produced_bits,
            },
        );
        if replenished_bits > 0 {
            self.ledger.record(
                now,
                LedgerEvent::AuthReplenished {
                    link: link.clone(),
                    round,
                    bits: replenished_bits,
                },
            );
        }
        self.ledger.record(
            now,
            LedgerEvent::Exported {
                link: link.clone(),
                round,
                bits: alice.len() as u64,
            },
        );
        let wiring = self
            .links
            .iter()
            .find(|l| &l.id == link)
            .expect("export on unknown link")
            .clone();
        let s1 = self.push_link_key(&wiring.endpoints[0], link, alice);
        let s2 = self.push_link_key(&wiring.endpoints[1], link, bob);
        self.settle(now);
        if s1 == PoolStatus::AboveCapacity || s2 == PoolStatus::AboveCapacity {
            PoolStatus::AboveCapacity
        } else {
            PoolStatus::Ok
        }
    }

    fn quota_allows(&self, link: &LinkId, sink: &SinkKey, bits: u64) -> bool {
        let Some(weights) = self.sink_weights.get(link) else {
            return false;
        };
        let total: u64 = weights.iter().map(|(_, w)| *w as u64).sum();
        let weight = weights
            .iter()
            .find(|(s, _)| s == sink)
            .map(|(_, w)| *w as u64)
            .unwrap_or(0);
        if weight == 0 {
            return false;
        }
        let wiring = self.links.iter().find(|l| &l.id == link).unwrap();
        let pushed = self.pools[&(wiring.endpoints[0].clone(), link.clone())].pushed();
        let quota = pushed * weight / total;
        let taken = self
            .sink_taken
            .get(&(link.clone(), sink.clone()))
            .copied()
            .unwrap_or(0);
        taken + bits <= quota
    }

    fn note_taken(&mut self, link: &LinkId, sink: &SinkKey, bits: u64) {
        *self
            .sink_taken
            .entry((link.clone(), sink.clone()))
            .or_insert(0) += bits;
    }

    fn pool_pair_available(&self, link: &LinkId) -> u64 {
        let wiring = self.links.iter().find(|l| &l.id == link).unwrap();
        let a = self.pools[&(wiring.endpoints[0].clone(), link.clone())].available();
        let b = self.pools[&(wiring.endpoints[1].clone(), link.clone())].available();
        a.min(b)
    }

    /// Pops a 256-bit block from both endpoint copies of a link pool.
    /// Returns (copy at endpoint 0, copy at endpoint 1).
    fn take_pair(&mut self, link: &LinkId) -> (Bits, Bits) {
        let wiring = self.links.iter().find(|l| &l.id == link).unwrap().clone();
        let a = self
            .pools
            .get_mut(&(wiring.endpoints[0].clone(), link.clone()))
            .unwrap()
            .take(KEY_BLOCK_BITS);
        let b = self
            .pools
            .get_mut(&(wiring.endpoints[1].clone(), link.clone()))
            .unwrap()
            .take(KEY_BLOCK_BITS);
        (a, b)
    }

    /// Moves everything that can move: cut direct blocks, pump relays,
    /// combine into buffers. Direct cuts precede relay deliveries at equal
    /// timestamps, which is the aggregation tie-break.
    pub fn settle(&mut self, now: f64) {
        // Direct cuts, in feed declaration order.
        for f in self.feeds.clone() {
            let sink = SinkKey::Assoc(f.assoc.clone());
            let mut cut = 0u64;
            loop {
                let assoc = &self.assocs[&f.assoc];
                if !assoc.stream_has_room() {
                    break;
                }
                if self.pool_pair_available(&f.link) < KEY_BLOCK_BITS as u64 {
                    break;
                }
                if !self.quota_allows(&f.link, &sink, KEY_BLOCK_BITS as u64) {
                    break;
                }
                let (bits_a, bits_b) = self.take_pair(&f.link);
                self.note_taken(&f.link, &sink, KEY_BLOCK_BITS as u64);
                let wiring = self.links.iter().find(|l| l.id == f.link).unwrap().clone();
                let assoc = self.assocs.get_mut(&f.assoc).unwrap();
                for (node, bits) in wiring.endpoints.iter().zip([bits_a, bits_b]) {
                    let end = assoc
                        .ends
                        .iter_mut()
                        .find(|e| &e.node == node)
                        .expect("feed endpoints validated");
                    end.qkd_stream.push_back(StreamBlock {
                        bits,
                        provenance: KeyPath::DirectLink(f.link.clone()),
                    });
                }
                assoc.stream_in += 1;
                cut += 1;
            }
            if cut > 0 {
                self.ledger.record(
                    now,
                    LedgerEvent::BlockCut {
                        link: f.link.clone(),
                        assoc: f.assoc.clone(),
                        blocks: cut,
                    },
                );
            }
        }

        // Relay pump.
        for idx in 0..self.routes.len() {
            loop {
                let cfg = self.routes[idx].cfg.clone();
                let assoc = &self.assocs[&cfg.assoc];
                if !assoc.stream_has_room() {
                    break;
                }
                let sink1 = SinkKey::RelayHop { route: idx, hop: 0 };
                let sink2 = SinkKey::RelayHop { route: idx, hop: 1 };
                if self.pool_pair_available(&cfg.hop1) < KEY_BLOCK_BITS as u64
                    || self.pool_pair_available(&cfg.hop2) < KEY_BLOCK_BITS as u64
                    || !self.quota_allows(&cfg.hop1, &sink1, KEY_BLOCK_BITS as u64)
                    || !self.quota_allows(&cfg.hop2, &sink2, KEY_BLOCK_BITS as u64)
                {
                    break;
                }
                self.relay_once(idx, now);
            }
        }

        // Dual-key combination into buffers.
        let ids: Vec<AssociationId> = self.assocs.keys().cloned().collect();
        for id in ids {
            self.combine_ready(&id, now);
        }
    }

    /// One relay transfer: OTP-encrypt a fresh payload over hop1, decrypt and
    /// re-encrypt at the trusted intermediate, decrypt at the destination.
    /// All pool checks were done by the caller.
    fn relay_once(&mut self, idx: usize, now: f64) -> RelaySession {
        let cfg = self.routes[idx].cfg.clone();
        let payload = random_bits(&mut self.routes[idx].payload_rng, KEY_BLOCK_BITS);

        let (hop1_a, hop1_b) = self.take_pair(&cfg.hop1);
        let wiring1 = self.links.iter().find(|l| l.id == cfg.hop1).unwrap().clone();
        let (otp1_src, otp1_via) = if wiring1.endpoints[0] == cfg.source {
            (hop1_a, hop1_b)
        } else {
            (hop1_b, hop1_a)
        };
        let cipher1 = xor(&payload, &otp1_src);
        let at_via = xor(&cipher1, &otp1_via);
        assert_eq!(at_via, payload, "hop1 pools diverged");

        let (hop2_a, hop2_b) = self.take_pair(&cfg.hop2);
        let wiring2 = self.links.iter().find(|l| l.id == cfg.hop2).unwrap().clone();
        let (otp2_via, otp2_dst) = if wiring2.endpoints[0] == cfg.via {
            (hop2_a, hop2_b)
        } else {
            (hop2_b, hop2_a)
        };
        let cipher2 = xor(&at_via, &otp2_via);
        let at_dest = xor(&cipher2, &otp2_dst);
        assert_eq!(at_dest, payload, "hop2 pools diverged");

        self.note_taken(
            &cfg.hop1,
            &SinkKey::RelayHop { route: idx, hop: 0 },
            KEY_BLOCK_BITS as u64,
        );
        self.note_taken(
            &cfg.hop2,
            &SinkKey::RelayHop { route: idx, hop: 1 },
            KEY_BLOCK_BITS as u64,
        );

        let route = &mut self.routes[idx];
        route.observed_at_via.push(at_via.clone());
        route.delivered.push(at_dest.clone());
        route.sessions += 1;

        let assoc = self.assocs.get_mut(&cfg.assoc).unwrap();
        for end in assoc.ends.iter_mut() {
            let bits = if end.node == cfg.source {
                payload.clone()
            } else {
                at_dest.clone()
            };
            end.qkd_stream.push_back(StreamBlock {
                bits,
                provenance: KeyPath::Relay {
                    via: cfg.via.clone(),
                },
            });
        }
        assoc.stream_in += 1;

        for link in [&cfg.hop1, &cfg.hop2] {
            self.ledger.record(
                now,
                LedgerEvent::OtpConsumed {
                    link: link.clone(),
                    bits: KEY_BLOCK_BITS as u64,
                },
            );
        }
        self.ledger.record(
            now,
            LedgerEvent::RelayDelivered {
                assoc: cfg.assoc.clone(),
                blocks: 1,
            },
        );

        RelaySession {
            source: cfg.source.clone(),
            intermediate: cfg.via.clone(),
            destination: cfg.dest.clone(),
            hop_keys_consumed: 2 * KEY_BLOCK_BITS as u64,
            payload_key: payload,
        }
    }

    fn combine_ready(&mut self, id: &AssociationId, now: f64) {
        let assoc = self.assocs.get_mut(id).unwrap();
        let mut combined = 0u64;
        while assoc.has_room()
            && !assoc.ends[0].qkd_stream.is_empty()
            && !assoc.ends[1].qkd_stream.is_empty()
        {
            let block_id = assoc.next_block_id;
            assoc.next_block_id += 1;
            let s0 = assoc.ends[0].qkd_stream.pop_front().unwrap();
            let s1 = assoc.ends[1].qkd_stream.pop_front().unwrap();
            assert_eq!(s0.bits, s1.bits, "stream copies diverged");
            assert_eq!(s0.provenance, s1.provenance);
            let policy = assoc.cfg.policy;
            for (end, stream_block) in assoc.ends.iter_mut().zip([s0, s1]) {
                let pki = end.pki.next_block();
                let (bits, level) = dual_key_combine(Some(&stream_block.bits), &pki, policy)
                    .expect("qkd key present");
                let block = KeyBlock {
                    block_id,
                    bits,
                    security_level: level,
                    provenance: vec![stream_block.provenance.clone(), KeyPath::Pki],
                };
                end.creation_digest ^= block.digest();
                end.blocks.insert(block_id, block);
            }
            let [e0, e1] = &assoc.ends;
            assert_eq!(
                e0.blocks[&block_id].bits, e1.blocks[&block_id].bits,
                "combined copies diverged"
            );
            combined += 1;
        }
        assoc.combined += combined;
        if combined > 0 {
            self.ledger.record(
                now,
                LedgerEvent::Combined {
                    assoc: id.clone(),
                    blocks: combined,
                },
            );
        }
    }

    /// Serves the lowest unconsumed block to `requester`; blocks consumed by
    /// both endpoints are erased from both buffers.
    pub fn get_key(
        &mut self,
        assoc_id: &AssociationId,
        requester: &NodeId,
        now: f64,
    ) -> Result<KeyBlock, KeyError> {
        let Some(assoc) = self.assocs.get(assoc_id) else {
            return Err(KeyError::UnknownAssociation(assoc_id.clone()));
        };
        let Some(e) = assoc.end_index(requester) else {
            return Err(KeyError::NotAnEndpoint {
                assoc: assoc_id.clone(),
                node: requester.clone(),
            });
        };

        // Backfill from the streams in case consumption freed buffer room.
        self.combine_ready(assoc_id, now);

        let assoc = self.assocs.get_mut(assoc_id).unwrap();
        if assoc.cursors[e] == assoc.next_block_id {
            // Nothing unconsumed for this endpoint.
            if assoc.cfg.policy != DeliveryPolicy::DegradedAllowed {
                return Err(KeyError::KeyUnavailable(assoc_id.clone()));
            }
            let block_id = assoc.next_block_id;
            assoc.next_block_id += 1;
            assoc.minted += 1;
            for end in assoc.ends.iter_mut() {
                let pki = end.pki.next_block();
                let (bits, level) = dual_key_combine(None, &pki, DeliveryPolicy::DegradedAllowed)
                    .expect("degraded mint");
                let block = KeyBlock {
                    block_id,
                    bits,
                    security_level: level,
                    provenance: vec![KeyPath::Pki],
                };
                end.creation_digest ^= block.digest();
                end.blocks.insert(block_id, block);
            }
            self.ledger.record(
                now,
                LedgerEvent::DegradedMinted {
                    assoc: assoc_id.clone(),
                    blocks: 1,
                },
            );
        }

        let assoc = self.assocs.get_mut(assoc_id).unwrap();
        let id = assoc.cursors[e];
        let block = assoc.ends[e]
            .blocks
            .get(&id)
            .expect("cursor points at a retained block")
            .clone();
        assoc.cursors[e] += 1;
        assoc.ends[e].served.push(block.digest());
        if block.security_level == SecurityLevel::PkiOnly {
            assoc.ends[e].served_pki_only += 1;
        }
        self.ledger.record(
            now,
            LedgerEvent::Served {
                assoc: assoc_id.clone(),
                endpoint: requester.clone(),
                block_id: id,
                pki_only: block.security_level == SecurityLevel::PkiOnly,
            },
        );

        // Erase everything both endpoints have consumed.
        let horizon = assoc.cursors[0].min(assoc.cursors[1]);
        let mut erased = 0u64;
        for end in assoc.ends.iter_mut() {
            let keep = end.blocks.split_off(&horizon);
            erased += end.blocks.len() as u64;
            end.blocks = keep;
        }
        debug_assert_eq!(erased % 2, 0);
        let erased = erased / 2;
        assoc.erased += erased;
        if erased > 0 {
            self.ledger.record(
                now,
                LedgerEvent::Erased {
                    assoc: assoc_id.clone(),
                    blocks: erased,
                },
            );
        }
        // Refill the room the erasure opened.
        self.combine_ready(assoc_id, now);
        Ok(block)
    }

    /// Message-schema wrapper around [`Self::get_key`].
    pub fn request_key(&mut self, request: &KeyRequest, now: f64) -> KeyResponse {
        match self.get_key(&request.association_id, &request.requester, now) {
            Ok(block) => KeyResponse {
                status: DeliveryStatus::Ok,
                block: Some(block),
            },
            Err(KeyError::KeyUnavailable(_)) => KeyResponse {
                status: DeliveryStatus::KeyUnavailable,
                block: None,
            },
            Err(KeyError::UnknownAssociation(_)) => KeyResponse {
                status: DeliveryStatus::UnknownAssociation,
                block: None,
            },
            Err(_) => KeyResponse {
                status: DeliveryStatus::NotAnEndpoint,
                block: None,
            },
        }
    }

    /// Buffer fill of an association, blocks retained in the shared buffer.
    pub fn buffer_fill(&self, assoc: &AssociationId) -> Option<u64> {
        self.assocs.get(assoc).map(|a| a.in_buffer())
    }

    /// Blocks that ever entered the association buffer (combined + minted).
    pub fn blocks_created(&self, assoc: &AssociationId) -> Option<u64> {
        self.assocs.get(assoc).map(|a| a.combined + a.minted)
    }

    pub fn relay_sessions(&self, route: usize) -> u64 {
        self.routes[route].sessions
    }

    /// Full-fabric audit; every equation must balance to the bit.
    pub fn audit(&self) -> FabricAudit {
        let mut checks = Vec::new();
        let mut push = |name: String, lhs: u64, rhs: u64| {
            checks.push(AuditCheck { name, lhs, rhs });
        };

        for l in &self.links {
            let pa = &self.pools[&(l.endpoints[0].clone(), l.id.clone())];
            let pb = &self.pools[&(l.endpoints[1].clone(), l.id.clone())];
            push(format!("link {} mirrored pushes", l.id), pa.pushed(), pb.pushed());
            push(format!("link {} mirrored takes", l.id), pa.taken(), pb.taken());
            let taken_by_sinks: u64 = self
                .sink_taken
                .iter()
                .filter(|((link, _), _)| link == &l.id)
                .map(|(_, v)| *v)
                .sum();
            push(
                format!("link {} conservation", l.id),
                pa.pushed(),
                taken_by_sinks + pa.available(),
            );
        }

        for (id, a) in &self.assocs {
            let direct_blocks: u64 = self
                .sink_taken
                .iter()
                .filter(|((_, sink), _)| matches!(sink, SinkKey::Assoc(s) if s == id))
                .map(|(_, v)| *v / KEY_BLOCK_BITS as u64)
                .sum();
            let relayed: u64 = self
                .routes
                .iter()
                .filter(|r| &r.cfg.assoc == id)
                .map(|r| r.sessions)
                .sum();
            push(
                format!("association {id} stream conservation"),
                direct_blocks + relayed,
                a.stream_len() as u64 + a.combined,
            );
            push(
                format!("association {id} buffer conservation"),
                a.combined + a.minted,
                a.in_buffer() + a.erased,
            );
            push(
                format!("association {id} creation digests"),
                a.ends[0].creation_digest,
                a.ends[1].creation_digest,
            );
            // Exhaustive serve agreement over the common prefix.
            let common = a.ends[0].served.len().min(a.ends[1].served.len());
            let agree = a.ends[0].served[..common] == a.ends[1].served[..common];
            push(
                format!("association {id} served agreement"),
                agree as u64,
                1,
            );
        }

        let mut relay_exposure_ok = true;
        for r in &self.routes {
            relay_exposure_ok &= r.observed_at_via == r.delivered;
            relay_exposure_ok &= r.observed_at_via.len() as u64 == r.sessions;
        }

        FabricAudit {
            balanced: checks.iter().all(|c| c.lhs == c.rhs),
            relay_exposure_ok,
            checks,
        }
    }

    /// Per-association serve counters: (served, pki_only) per endpoint.
    pub fn serve_counts(&self, assoc: &AssociationId) -> Option<[(u64, u64); 2]> {
        self.assocs.get(assoc).map(|a| {
            [0, 1].map(|e| {
                (
                    a.ends[e].served.len() as u64,
                    a.ends[e].served_pki_only,
                )
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditCheck {
    pub name: String,
    pub lhs: u64,
    pub rhs: u64,
}

#[derive(Debug, Clone)]
pub struct FabricAudit {
    pub balanced: bool,
    pub relay_exposure_ok: bool,
    pub checks: Vec<AuditCheck>,
}
