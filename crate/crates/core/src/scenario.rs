//! Scenario files: the declarative description of a run.
//!
//! A scenario is a versioned TOML document naming the topology (or the
//! `swissquantum` preset), per-link physics overrides, distillation and key
//! management parameters, application associations with their consumers,
//! relay routes, the drift model, environment events, seed and duration.
//! Unknown fields are rejected. `docs/scenario-format.md` documents every
//! field; [`Scenario::parse_str`] + [`Scenario::validate`] are the only way
//! in.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::DistillConfig;
use crate::ids::{AssociationId, LinkId, NodeId};
use crate::keymgmt::DeliveryPolicy;
use crate::photonics::{DriftModel, LinkPhysics, TrackerConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// The document is not valid TOML or violates the schema.
    #[error("scenario parse error: {0}")]
    Parse(String),
    /// The document parsed but an invariant is violated.
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

/// Supported schema version.
pub const SCENARIO_VERSION: u32 = 1;

/// Default buffer-fill target of a raw exchange, detections.
pub const DEFAULT_BATCH_DETECTIONS: u64 = 5_000_000;
/// Default detection-stream thinning factor.
pub const DEFAULT_BATCH_SCALE: f64 = 0.01;
/// Default simulated duration of one distillation, seconds.
pub const DEFAULT_DISTILL_SECONDS: f64 = 60.0;

// ---------------------------------------------------------------------------
// Raw file schema (serde; unknown fields rejected everywhere)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSchema {
    version: u32,
    seed: u64,
    duration_days: f64,
    batch_scale: Option<f64>,
    batch_detections: Option<u64>,
    distill_seconds: Option<f64>,
    metric_cadence_s: Option<f64>,
    topology: TopologySchema,
    #[serde(default)]
    physics: std::collections::BTreeMap<String, PhysicsOverride>,
    #[serde(default)]
    distill: DistillSchema,
    #[serde(default)]
    drift: DriftSchema,
    #[serde(default)]
    keymgmt: KeymgmtSchema,
    #[serde(default)]
    associations: Vec<AssociationSchema>,
    #[serde(default)]
    relays: Vec<RelaySchema>,
    #[serde(default)]
    environment: EnvironmentSchema,
    #[serde(default)]
    events: Vec<EventSchema>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologySchema {
    preset: Option<String>,
    #[serde(default)]
    nodes: Vec<NodeSchema>,
    #[serde(default)]
    links: Vec<LinkSchema>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSchema {
    name: String,
    country: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkSchema {
    id: String,
    alice: String,
    bob: String,
    fibre_km: f64,
    loss_db: f64,
    mu: Option<f64>,
    eta: Option<f64>,
    p_dark: Option<f64>,
    gate_rate_hz: Option<f64>,
    visibility: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhysicsOverride {
    fibre_km: Option<f64>,
    loss_db: Option<f64>,
    mu: Option<f64>,
    eta: Option<f64>,
    p_dark: Option<f64>,
    gate_rate_hz: Option<f64>,
    visibility: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistillSchema {
    monitor_min_fraction: Option<f64>,
    initial_secret_bits: Option<u64>,
    auth_reserve_bits: Option<u64>,
    secret_margin_bits: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriftSchema {
    seasonal_amplitude_m: Option<f64>,
    diurnal_amplitude_m: Option<f64>,
    phase_lag_hours: Option<f64>,
    slew_ns_per_batch: Option<f64>,
    pulse_fwhm_ns: Option<f64>,
    gate_width_ns: Option<f64>,
    #[serde(default)]
    per_link: std::collections::BTreeMap<String, DriftOverride>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriftOverride {
    seasonal_amplitude_m: Option<f64>,
    diurnal_amplitude_m: Option<f64>,
    phase_lag_hours: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeymgmtSchema {
    /// 0 means unbounded.
    pool_capacity_bits: Option<u64>,
    buffer_capacity_blocks: Option<usize>,
    stream_depth_blocks: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssociationSchema {
    id: String,
    endpoints: [String; 2],
    label: String,
    policy: DeliveryPolicy,
    rekey_interval_s: Option<f64>,
    #[serde(default)]
    direct: Vec<FeedSchema>,
    buffer_capacity_blocks: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedSchema {
    link: String,
    weight: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelaySchema {
    association: String,
    source: String,
    via: String,
    dest: String,
    hop1: String,
    hop2: String,
    weight_hop1: Option<u32>,
    weight_hop2: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentSchema {
    rated_room_temp_c: Option<f64>,
    halt_room_temp_c: Option<f64>,
    cooling_pdark_per_deg: Option<f64>,
    alice_visibility_dip: Option<f64>,
}

impl Default for EnvironmentSchema {
    fn default() -> Self {
        Self {
            rated_room_temp_c: None,
            halt_room_temp_c: None,
            cooling_pdark_per_deg: None,
            alice_visibility_dip: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventSchema {
    kind: EventKindSchema,
    node: Option<String>,
    link: Option<String>,
    start_day: f64,
    duration_hours: f64,
    temperature_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EventKindSchema {
    PowerCut,
    CoolingFailure,
    SoftwareBugHalt,
    Maintenance,
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDecl {
    pub name: NodeId,
    pub country: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDecl {
    pub id: LinkId,
    /// Reflector side of the plug & play pair.
    pub alice: NodeId,
    /// Detector side.
    pub bob: NodeId,
    pub physics: LinkPhysics,
    pub drift: DriftModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationDecl {
    pub id: AssociationId,
    pub endpoints: [NodeId; 2],
    pub label: String,
    pub policy: DeliveryPolicy,
    pub rekey_interval_s: f64,
    pub direct: Vec<(LinkId, u32)>,
    pub buffer_capacity_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayDecl {
    pub association: AssociationId,
    pub source: NodeId,
    pub via: NodeId,
    pub dest: NodeId,
    pub hop1: LinkId,
    pub hop2: LinkId,
    pub weight_hop1: u32,
    pub weight_hop2: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvEventKind {
    PowerCut,
    CoolingFailure,
    SoftwareBugHalt,
    Maintenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventTarget {
    Node(NodeId),
    Link(LinkId),
}

/// A field-environment event, day-resolution schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentEvent {
    pub kind: EnvEventKind,
    pub target: EventTarget,
    pub start_s: f64,
    pub duration_s: f64,
    /// Room temperature during a cooling failure.
    pub temperature_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentParams {
    pub rated_room_temp_c: f64,
    pub halt_room_temp_c: f64,
    pub cooling_pdark_per_deg: f64,
    pub alice_visibility_dip: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            rated_room_temp_c: 30.0,
            halt_room_temp_c: 42.0,
            cooling_pdark_per_deg: 0.5,
            alice_visibility_dip: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeymgmtParams {
    pub pool_capacity_bits: Option<u64>,
    pub buffer_capacity_blocks: usize,
    pub stream_depth_blocks: usize,
}

impl Default for KeymgmtParams {
    fn default() -> Self {
        Self {
            pool_capacity_bits: None,
            buffer_capacity_blocks: 256,
            stream_depth_blocks: 512,
        }
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    /// Thins the simulated detection stream: a batch simulates
    /// `batch_detections * batch_scale` clicks at `gate_rate * batch_scale`
    /// effective gate rate, so durations, probabilities and QBER are
    /// unaffected while key volumes scale with the factor.
    pub batch_scale: f64,
    pub batch_detections: u64,
    pub distill_seconds: f64,
    pub metric_cadence_s: f64,
    pub nodes: Vec<NodeDecl>,
    pub links: Vec<LinkDecl>,
    pub distill: DistillConfig,
    pub tracker: TrackerConfig,
    pub gate_width_ns: f64,
    pub keymgmt: KeymgmtParams,
    pub associations: Vec<AssociationDecl>,
    pub relays: Vec<RelayDecl>,
    pub environment: EnvironmentParams,
    pub events: Vec<EnvironmentEvent>,
    /// Engine-level switch (CLI flag, not a file field): parallelize the
    /// per-round block work. Must not change any output.
    pub parallel: bool,
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn parse_str(text: &str) -> Result<Self, ScenarioError> {
        let file: FileSchema =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::resolve(file)
    }

    fn resolve(file: FileSchema) -> Result<Self, ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if file.version != SCENARIO_VERSION {
            return invalid(format!(
                "version {} unsupported (expected {SCENARIO_VERSION})",
                file.version
            ));
        }

        // Topology: preset, explicit, or preset + overrides.
        let mut nodes;
        let mut links;
        let mut associations;
        let mut relays;
        match file.topology.preset.as_deref() {
            Some("swissquantum") => {
                let preset = swissquantum_preset();
                nodes = preset.nodes;
                links = preset.links;
                associations = preset.associations;
                relays = preset.relays;
                if !file.topology.nodes.is_empty() || !file.topology.links.is_empty() {
                    return invalid("preset and explicit topology are mutually exclusive".into());
                }
            }
            Some(other) => return invalid(format!("unknown preset {other:?}")),
            None => {
                nodes = file
                    .topology
                    .nodes
                    .iter()
                    .map(|n| NodeDecl {
                        name: NodeId::new(&n.name),
                        country: n.country.clone(),
                    })
                    .collect::<Vec<_>>();
                links = file
                    .topology
                    .links
                    .iter()
                    .map(|l| LinkDecl {
                        id: LinkId::new(&l.id),
                        alice: NodeId::new(&l.alice),
                        bob: NodeId::new(&l.bob),
                        physics: LinkPhysics {
                            fibre_length_km: l.fibre_km,
                            loss_db: l.loss_db.abs(),
                            mu: l.mu.unwrap_or(DEFAULT_MU),
                            eta: l.eta.unwrap_or(DEFAULT_ETA),
                            p_dark: l.p_dark.unwrap_or(DEFAULT_P_DARK),
                            gate_rate_hz: l.gate_rate_hz.unwrap_or(DEFAULT_GATE_RATE_HZ),
                            visibility: l.visibility.unwrap_or(DEFAULT_VISIBILITY),
                        },
                        drift: DriftModel::default(),
                    })
                    .collect::<Vec<_>>();
                associations = Vec::new();
                relays = Vec::new();
            }
        }

        // Per-link physics overrides.
        for (link_name, ov) in &file.physics {
            let Some(link) = links.iter_mut().find(|l| l.id.as_str() == link_name) else {
                return invalid(format!("physics override for unknown link {link_name}"));
            };
            let p = &mut link.physics;
            if let Some(v) = ov.fibre_km {
                p.fibre_length_km = v;
            }
            if let Some(v) = ov.loss_db {
                p.loss_db = v.abs();
            }
            if let Some(v) = ov.mu {
                p.mu = v;
            }
            if let Some(v) = ov.eta {
                p.eta = v;
            }
            if let Some(v) = ov.p_dark {
                p.p_dark = v;
            }
            if let Some(v) = ov.gate_rate_hz {
                p.gate_rate_hz = v;
            }
            if let Some(v) = ov.visibility {
                p.visibility = v;
            }
        }

        // Drift model: global fields then per-link overrides.
        let global_drift = DriftModel {
            seasonal_amplitude_m: file
                .drift
                .seasonal_amplitude_m
                .unwrap_or(DriftModel::default().seasonal_amplitude_m),
            diurnal_amplitude_m: file
                .drift
                .diurnal_amplitude_m
                .unwrap_or(DriftModel::default().diurnal_amplitude_m),
            phase_lag_hours: file
                .drift
                .phase_lag_hours
                .unwrap_or(DriftModel::default().phase_lag_hours),
        };
        if file.drift.seasonal_amplitude_m.is_some()
            || file.drift.diurnal_amplitude_m.is_some()
            || file.drift.phase_lag_hours.is_some()
        {
            for l in links.iter_mut() {
                l.drift = global_drift;
            }
        }
        for (link_name, ov) in &file.drift.per_link {
            let Some(link) = links.iter_mut().find(|l| l.id.as_str() == link_name) else {
                return invalid(format!("drift override for unknown link {link_name}"));
            };
            if let Some(v) = ov.seasonal_amplitude_m {
                link.drift.seasonal_amplitude_m = v;
            }
            if let Some(v) = ov.diurnal_amplitude_m {
                link.drift.diurnal_amplitude_m = v;
            }
            if let Some(v) = ov.phase_lag_hours {
                link.drift.phase_lag_hours = v;
            }
        }

        // Explicit associations/relays replace the preset's when present.
        if !file.associations.is_empty() {
            associations = Vec::new();
            for a in &file.associations {
                associations.push(AssociationDecl {
                    id: AssociationId::new(&a.id),
                    endpoints: [NodeId::new(&a.endpoints[0]), NodeId::new(&a.endpoints[1])],
                    label: a.label.clone(),
                    policy: a.policy,
                    rekey_interval_s: a.rekey_interval_s.unwrap_or(60.0),
                    direct: a
                        .direct
                        .iter()
                        .map(|f| (LinkId::new(&f.link), f.weight.unwrap_or(1)))
                        .collect(),
                    buffer_capacity_blocks: a.buffer_capacity_blocks.unwrap_or(0),
                });
            }
        }
        if !file.relays.is_empty() {
            relays = file
                .relays
                .iter()
                .map(|r| RelayDecl {
                    association: AssociationId::new(&r.association),
                    source: NodeId::new(&r.source),
                    via: NodeId::new(&r.via),
                    dest: NodeId::new(&r.dest),
                    hop1: LinkId::new(&r.hop1),
                    hop2: LinkId::new(&r.hop2),
                    weight_hop1: r.weight_hop1.unwrap_or(1),
                    weight_hop2: r.weight_hop2.unwrap_or(1),
                })
                .collect();
        }

        let defaults = DistillConfig::default();
        let distill = DistillConfig {
            monitor_min_fraction: file
                .distill
                .monitor_min_fraction
                .unwrap_or(defaults.monitor_min_fraction),
            initial_secret_bits: file
                .distill
                .initial_secret_bits
                .unwrap_or(defaults.initial_secret_bits),
            auth_reserve_bits: file
                .distill
                .auth_reserve_bits
                .unwrap_or(defaults.auth_reserve_bits),
            secret_margin_bits: file
                .distill
                .secret_margin_bits
                .unwrap_or(defaults.secret_margin_bits),
        };

        let tracker = TrackerConfig {
            slew_ns_per_batch: file
                .drift
                .slew_ns_per_batch
                .unwrap_or(TrackerConfig::default().slew_ns_per_batch),
            pulse_fwhm_ns: file
                .drift
                .pulse_fwhm_ns
                .unwrap_or(TrackerConfig::default().pulse_fwhm_ns),
        };
        let gate_width_ns = file.drift.gate_width_ns.unwrap_or(1.8);

        let km_defaults = KeymgmtParams::default();
        let keymgmt = KeymgmtParams {
            pool_capacity_bits: match file.keymgmt.pool_capacity_bits {
                None | Some(0) => None,
                Some(v) => Some(v),
            },
            buffer_capacity_blocks: file
                .keymgmt
                .buffer_capacity_blocks
                .unwrap_or(km_defaults.buffer_capacity_blocks),
            stream_depth_blocks: file
                .keymgmt
                .stream_depth_blocks
                .unwrap_or(km_defaults.stream_depth_blocks),
        };
        // Apply the default buffer capacity to associations that left it 0.
        for a in associations.iter_mut() {
            if a.buffer_capacity_blocks == 0 {
                a.buffer_capacity_blocks = keymgmt.buffer_capacity_blocks;
            }
        }

        let env_defaults = EnvironmentParams::default();
        let environment = EnvironmentParams {
            rated_room_temp_c: file
                .environment
                .rated_room_temp_c
                .unwrap_or(env_defaults.rated_room_temp_c),
            halt_room_temp_c: file
                .environment
                .halt_room_temp_c
                .unwrap_or(env_defaults.halt_room_temp_c),
            cooling_pdark_per_deg: file
                .environment
                .cooling_pdark_per_deg
                .unwrap_or(env_defaults.cooling_pdark_per_deg),
            alice_visibility_dip: file
                .environment
                .alice_visibility_dip
                .unwrap_or(env_defaults.alice_visibility_dip),
        };

        let mut events = Vec::new();
        for e in &file.events {
            let kind = match e.kind {
                EventKindSchema::PowerCut => EnvEventKind::PowerCut,
                EventKindSchema::CoolingFailure => EnvEventKind::CoolingFailure,
                EventKindSchema::SoftwareBugHalt => EnvEventKind::SoftwareBugHalt,
                EventKindSchema::Maintenance => EnvEventKind::Maintenance,
            };
            let target = match (&e.node, &e.link) {
                (Some(n), None) => EventTarget::Node(NodeId::new(n)),
                (None, Some(l)) => EventTarget::Link(LinkId::new(l)),
                _ => return invalid("event must name exactly one of node or link".into()),
            };
            events.push(EnvironmentEvent {
                kind,
                target,
                start_s: e.start_day * 86_400.0,
                duration_s: e.duration_hours * 3_600.0,
                temperature_c: e.temperature_c,
            });
        }

        let scenario = Scenario {
            seed: file.seed,
            duration_s: file.duration_days * 86_400.0,
            batch_scale: file.batch_scale.unwrap_or(DEFAULT_BATCH_SCALE),
            batch_detections: file.batch_detections.unwrap_or(DEFAULT_BATCH_DETECTIONS),
            distill_seconds: file.distill_seconds.unwrap_or(DEFAULT_DISTILL_SECONDS),
            metric_cadence_s: file.metric_cadence_s.unwrap_or(3_600.0),
            nodes,
            links,
            distill,
            tracker,
            gate_width_ns,
            keymgmt,
            associations,
            relays,
            environment,
            events,
            parallel: false,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Full invariant check over the resolved scenario.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.duration_s < 0.0 || !self.duration_s.is_finite() {
            return invalid("duration must be >= 0".into());
        }
        if !(self.batch_scale > 0.0 && self.batch_scale <= 1.0) {
            return invalid("batch_scale must be in (0, 1]".into());
        }
        if self.batch_detections == 0 {
            return invalid("batch_detections must be > 0".into());
        }
        if self.distill_seconds < 0.0 {
            return invalid("distill_seconds must be >= 0".into());
        }
        if self.metric_cadence_s <= 0.0 {
            return invalid("metric_cadence_s must be > 0".into());
        }
        if !(self.gate_width_ns > 0.0 && self.gate_width_ns < 2.0) {
            return invalid("gate_width_ns must be in (0, 2)".into());
        }
        if self.nodes.is_empty() {
            return invalid("topology has no nodes".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(&n.name) {
                return invalid(format!("duplicate node {}", n.name));
            }
        }
        let node_exists = |n: &NodeId| self.nodes.iter().any(|d| &d.name == n);
        let mut link_ids = std::collections::BTreeSet::new();
        for l in &self.links {
            if !link_ids.insert(&l.id) {
                return invalid(format!("duplicate link {}", l.id));
            }
            if !node_exists(&l.alice) || !node_exists(&l.bob) {
                return invalid(format!("link {} references unknown node", l.id));
            }
            if l.alice == l.bob {
                return invalid(format!("link {} connects a node to itself", l.id));
            }
            l.physics
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("link {}: {e}", l.id)))?;
        }
        let link_exists = |l: &LinkId| self.links.iter().any(|d| &d.id == l);
        let mut assoc_ids = std::collections::BTreeSet::new();
        for a in &self.associations {
            if !assoc_ids.insert(&a.id) {
                return invalid(format!("duplicate association {}", a.id));
            }
            for n in &a.endpoints {
                if !node_exists(n) {
                    return invalid(format!("association {} references unknown node {n}", a.id));
                }
            }
            if a.endpoints[0] == a.endpoints[1] {
                return invalid(format!("association {} endpoints must differ", a.id));
            }
            if a.rekey_interval_s <= 0.0 {
                return invalid(format!("association {}: rekey interval must be > 0", a.id));
            }
            for (l, w) in &a.direct {
                if !link_exists(l) {
                    return invalid(format!("association {} feeds from unknown link {l}", a.id));
                }
                if *w == 0 {
                    return invalid(format!("association {}: feed weight must be > 0", a.id));
                }
            }
        }
        for r in &self.relays {
            if !assoc_ids.contains(&r.association) {
                return invalid(format!("relay references unknown association {}", r.association));
            }
            for n in [&r.source, &r.via, &r.dest] {
                if !node_exists(n) {
                    return invalid(format!("relay references unknown node {n}"));
                }
            }
            for l in [&r.hop1, &r.hop2] {
                if !link_exists(l) {
                    return invalid(format!("relay references unknown link {l}"));
                }
            }
            if r.weight_hop1 == 0 || r.weight_hop2 == 0 {
                return invalid("relay hop weights must be > 0".into());
            }
        }
        for e in &self.events {
            match &e.target {
                EventTarget::Node(n) if !node_exists(n) => {
                    return invalid(format!("event targets unknown node {n}"));
                }
                EventTarget::Link(l) if !link_exists(l) => {
                    return invalid(format!("event targets unknown link {l}"));
                }
                _ => {}
            }
            if e.duration_s < 0.0 || e.start_s < 0.0 {
                return invalid("event times must be >= 0".into());
            }
        }
        Ok(())
    }

    /// Effective per-batch click target after thinning.
    pub fn effective_batch_target(&self) -> u64 {
        ((self.batch_detections as f64 * self.batch_scale).round() as u64).max(1)
    }
}

// Preset physics defaults shared by explicit topologies.
pub const DEFAULT_MU: f64 = 0.25;
pub const DEFAULT_ETA: f64 = 0.10;
pub const DEFAULT_P_DARK: f64 = 1e-4;
pub const DEFAULT_GATE_RATE_HZ: f64 = 5e6;
pub const DEFAULT_VISIBILITY: f64 = 0.98;

pub struct Preset {
    pub nodes: Vec<NodeDecl>,
    pub links: Vec<LinkDecl>,
    pub associations: Vec<AssociationDecl>,
    pub relays: Vec<RelayDecl>,
}

/// Three nodes, three links (lengths/losses of the deployed network), three
/// encryptor associations, and the relay that backs the privileged
/// CERN-Unige association through hepia.
pub fn swissquantum_preset() -> Preset {
    let cern = NodeId::new("CERN");
    let unige = NodeId::new("Unige");
    let hepia = NodeId::new("hepia");
    let physics = |fibre_km: f64, loss_db: f64| LinkPhysics {
        fibre_length_km: fibre_km,
        loss_db,
        mu: DEFAULT_MU,
        eta: DEFAULT_ETA,
        p_dark: DEFAULT_P_DARK,
        gate_rate_hz: DEFAULT_GATE_RATE_HZ,
        visibility: DEFAULT_VISIBILITY,
    };
    // Drift amplitude scales with fibre length; 6 m on the longest link.
    let drift = |fibre_km: f64| DriftModel {
        seasonal_amplitude_m: 6.0 * fibre_km / 17.1,
        diurnal_amplitude_m: 0.5 * fibre_km / 17.1,
        phase_lag_hours: 3.0,
    };
    let nodes = vec![
        NodeDecl {
            name: cern.clone(),
            country: "FR".into(),
        },
        NodeDecl {
            name: unige.clone(),
            country: "CH".into(),
        },
        NodeDecl {
            name: hepia.clone(),
            country: "CH".into(),
        },
    ];
    let links = vec![
        LinkDecl {
            id: LinkId::new("SQ1"),
            alice: cern.clone(),
            bob: unige.clone(),
            physics: physics(14.4, 4.6),
            drift: drift(14.4),
        },
        LinkDecl {
            id: LinkId::new("SQ2"),
            alice: cern.clone(),
            bob: hepia.clone(),
            physics: physics(17.1, 5.3),
            drift: drift(17.1),
        },
        LinkDecl {
            id: LinkId::new("SQ3"),
            alice: hepia.clone(),
            bob: unige.clone(),
            physics: physics(3.7, 2.5),
            drift: drift(3.7),
        },
    ];
    let associations = vec![
        AssociationDecl {
            id: AssociationId::new("cern-unige-10g"),
            endpoints: [cern.clone(), unige.clone()],
            label: "10GbE-L2".into(),
            policy: DeliveryPolicy::DegradedAllowed,
            rekey_interval_s: 60.0,
            direct: vec![(LinkId::new("SQ1"), 1)],
            buffer_capacity_blocks: 0,
        },
        AssociationDecl {
            id: AssociationId::new("unige-hepia-fc"),
            endpoints: [unige.clone(), hepia.clone()],
            label: "FC-2G".into(),
            policy: DeliveryPolicy::Strict,
            rekey_interval_s: 60.0,
            direct: vec![(LinkId::new("SQ3"), 1)],
            buffer_capacity_blocks: 0,
        },
        AssociationDecl {
            id: AssociationId::new("unige-hepia-ipsec"),
            endpoints: [unige.clone(), hepia.clone()],
            label: "IPsec-L3".into(),
            policy: DeliveryPolicy::DegradedAllowed,
            rekey_interval_s: 60.0,
            direct: vec![(LinkId::new("SQ3"), 1)],
            buffer_capacity_blocks: 0,
        },
    ];
    let relays = vec![RelayDecl {
        association: AssociationId::new("cern-unige-10g"),
        source: cern,
        via: hepia,
        dest: unige,
        hop1: LinkId::new("SQ2"),
        hop2: LinkId::new("SQ3"),
        weight_hop1: 1,
        weight_hop2: 2,
    }];
    Preset {
        nodes,
        links,
        associations,
        relays,
    }
}

/// Minimal preset scenario text, handy for tests and as a starting point.
pub fn preset_scenario_toml(seed: u64, duration_days: f64) -> String {
    format!(
        "version = 1\nseed = {seed}\nduration_days = {duration_days}\n\n[topology]\npreset = \"swissquantum\"\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parses_with_table_one_values() {
        let s = Scenario::parse_str(&preset_scenario_toml(1, 10.0)).unwrap();
        assert_eq!(s.links.len(), 3);
        assert_eq!(s.nodes.len(), 3);
        let sq1 = &s.links[0];
        assert_eq!(sq1.id.as_str(), "SQ1");
        assert_eq!(sq1.physics.fibre_length_km, 14.4);
        assert_eq!(sq1.physics.loss_db, 4.6);
        let sq2 = &s.links[1];
        assert_eq!(sq2.physics.fibre_length_km, 17.1);
        assert_eq!(sq2.physics.loss_db, 5.3);
        let sq3 = &s.links[2];
        assert_eq!(sq3.physics.fibre_length_km, 3.7);
        assert_eq!(sq3.physics.loss_db, 2.5);
        assert_eq!(s.associations.len(), 3);
        assert_eq!(s.relays.len(), 1);
        assert_eq!(s.duration_s, 10.0 * 86_400.0);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = "version = 1\nseed = 1\nduration_days = 1.0\nbogus = 3\n[topology]\npreset = \"swissquantum\"\n";
        assert!(matches!(
            Scenario::parse_str(text),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn negative_loss_normalized_to_magnitude() {
        let text = r#"
version = 1
seed = 1
duration_days = 1.0

[topology]
[[topology.nodes]]
name = "A"
country = "CH"
[[topology.nodes]]
name = "B"
country = "CH"
[[topology.links]]
id = "L1"
alice = "A"
bob = "B"
fibre_km = 14.4
loss_db = -4.6
"#;
        let s = Scenario::parse_str(text).unwrap();
        assert_eq!(s.links[0].physics.loss_db, 4.6);
    }

    #[test]
    fn negative_fibre_length_is_invalid() {
        let text = r#"
version = 1
seed = 1
duration_days = 1.0

[topology]
[[topology.nodes]]
name = "A"
country = "CH"
[[topology.nodes]]
name = "B"
country = "CH"
[[topology.links]]
id = "L1"
alice = "A"
bob = "B"
fibre_km = -1.0
loss_db = 4.6
"#;
        assert!(matches!(
            Scenario::parse_str(text),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn physics_override_applies() {
        let text = "version = 1\nseed = 1\nduration_days = 1.0\n\n[topology]\npreset = \"swissquantum\"\n\n[physics.SQ1]\neta = 0.12\n";
        let s = Scenario::parse_str(text).unwrap();
        assert_eq!(s.links[0].physics.eta, 0.12);
        assert_eq!(s.links[1].physics.eta, DEFAULT_ETA);
    }

    #[test]
    fn event_requires_exactly_one_target() {
        let both = "version = 1\nseed = 1\nduration_days = 1.0\n\n[topology]\npreset = \"swissquantum\"\n\n[[events]]\nkind = \"power_cut\"\nnode = \"CERN\"\nlink = \"SQ1\"\nstart_day = 0.5\nduration_hours = 8.0\n";
        assert!(Scenario::parse_str(both).is_err());
        let ok = "version = 1\nseed = 1\nduration_days = 1.0\n\n[topology]\npreset = \"swissquantum\"\n\n[[events]]\nkind = \"power_cut\"\nnode = \"CERN\"\nstart_day = 0.5\nduration_hours = 8.0\n";
        let s = Scenario::parse_str(ok).unwrap();
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.events[0].start_s, 0.5 * 86_400.0);
        assert_eq!(s.events[0].duration_s, 8.0 * 3_600.0);
    }

    #[test]
    fn unknown_event_target_rejected() {
        let text = "version = 1\nseed = 1\nduration_days = 1.0\n\n[topology]\npreset = \"swissquantum\"\n\n[[events]]\nkind = \"power_cut\"\nnode = \"Nowhere\"\nstart_day = 0.5\nduration_hours = 8.0\n";
        assert!(matches!(
            Scenario::parse_str(text),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn batch_scale_bounds() {
        let text = "version = 1\nseed = 1\nduration_days = 1.0\nbatch_scale = 0.0\n\n[topology]\npreset = \"swissquantum\"\n";
        assert!(Scenario::parse_str(text).is_err());
        let s = Scenario::parse_str(&preset_scenario_toml(1, 1.0)).unwrap();
        assert_eq!(s.effective_batch_target(), 50_000);
    }
}
