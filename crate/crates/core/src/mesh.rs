//! PoP-rooted backhaul planning.
//!
//! Nodes within `max_link_km` of each other whose predicted SNR clears the
//! PHY floor may link. The plan is the shortest-path tree (by distance) from
//! the PoP over those candidate links; the tree's links are then given
//! channels by the coexistence allocator and scored with the link budget.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityEngine;
use crate::coexist::{
    allocate, AllocationReport, Assignment, CoexistError, LinkRequest, DEFAULT_INTERFERENCE_RADIUS_KM,
};
use crate::paws::UseRecord;
use crate::spectrum::{
    haversine_km, link_throughput_mbps, noise_floor_dbm, GeoPoint, PhyProfile, Propagation, RegulatoryConfig,
    SpectrumError,
};

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("plan needs exactly one PoP, found {0}")]
    PopCount(usize),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}`: {1}")]
    InvalidNode(String, String),
    #[error("invalid planner parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Coexist(#[from] CoexistError),
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("cannot write report: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Pop,
    BaseStation,
    Client,
}

impl NodeRole {
    pub fn default_height_m(self) -> f64 {
        match self {
            NodeRole::Pop | NodeRole::BaseStation => 30.0,
            NodeRole::Client => 5.0,
        }
    }

    /// The PoP radio is omnidirectional; everything else uses 8 dBi panels.
    pub fn default_gain_dbi(self) -> f64 {
        match self {
            NodeRole::Pop => 0.0,
            NodeRole::BaseStation | NodeRole::Client => 8.0,
        }
    }
}

pub const DEFAULT_TX_POWER_DBM: f64 = 27.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub role: NodeRole,
    pub location: GeoPoint,
    pub antenna_height_m: f64,
    pub antenna_gain_dbi: f64,
    pub tx_power_dbm: f64,
    /// Bandwidth of this node's link toward the PoP; plan default if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_mhz: Option<f64>,
}

impl NodeSpec {
    pub fn new(node_id: impl Into<String>, role: NodeRole, location: GeoPoint) -> Self {
        Self {
            node_id: node_id.into(),
            role,
            location,
            antenna_height_m: role.default_height_m(),
            antenna_gain_dbi: role.default_gain_dbi(),
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            bandwidth_mhz: None,
        }
    }

    pub fn with_bandwidth(mut self, mhz: f64) -> Self {
        self.bandwidth_mhz = Some(mhz);
        self
    }
}

/// Node entry as written in a scenario file; omitted radio fields fall back
/// to role defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeInput {
    pub node_id: String,
    pub role: NodeRole,
    pub location: GeoPoint,
    #[serde(default)]
    pub antenna_height_m: Option<f64>,
    #[serde(default)]
    pub antenna_gain_dbi: Option<f64>,
    #[serde(default)]
    pub tx_power_dbm: Option<f64>,
    #[serde(default)]
    pub bandwidth_mhz: Option<f64>,
}

impl From<NodeInput> for NodeSpec {
    fn from(n: NodeInput) -> Self {
        let mut s = NodeSpec::new(n.node_id, n.role, n.location);
        s.antenna_height_m = n.antenna_height_m.unwrap_or(s.antenna_height_m);
        s.antenna_gain_dbi = n.antenna_gain_dbi.unwrap_or(s.antenna_gain_dbi);
        s.tx_power_dbm = n.tx_power_dbm.unwrap_or(s.tx_power_dbm);
        s.bandwidth_mhz = n.bandwidth_mhz;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub max_link_km: f64,
    pub bandwidth_mhz: f64,
    /// Carrier used to judge candidate links before channels are assigned.
    pub planning_frequency_mhz: f64,
    pub interference_radius_km: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            max_link_km: 10.0,
            bandwidth_mhz: 5.0,
            planning_frequency_mhz: 500.0,
            interference_radius_km: DEFAULT_INTERFERENCE_RADIUS_KM,
        }
    }
}

impl PlannerParams {
    fn validate(&self) -> Result<(), MeshError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.max_link_km)
            || !ok(self.bandwidth_mhz)
            || !ok(self.planning_frequency_mhz)
            || !ok(self.interference_radius_km)
        {
            return Err(MeshError::Parameter("distances, bandwidth and frequency must be positive".into()));
        }
        Ok(())
    }
}

/// Scenario file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default = "default_model")]
    pub propagation: String,
    #[serde(default)]
    pub params: PlannerParams,
    pub nodes: Vec<NodeInput>,
}

fn default_profile() -> String {
    "802.11af".into()
}

fn default_model() -> String {
    crate::spectrum::DEFAULT_MODEL.into()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn node_specs(&self) -> Vec<NodeSpec> {
        self.nodes.iter().cloned().map(NodeSpec::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub distance_km: f64,
    pub loss_db: f64,
    pub snr_db: f64,
    pub throughput_mbps: f64,
}

/// Link budget between two nodes: the weaker transmitter plus both antenna
/// gains, minus path loss (taller mast as base station) and the noise floor.
pub fn predict_link(
    a: &NodeSpec,
    b: &NodeSpec,
    bandwidth_mhz: f64,
    f_mhz: f64,
    prop: &Propagation,
    profile: &PhyProfile,
) -> Result<LinkPrediction, SpectrumError> {
    let distance_km = haversine_km(a.location, b.location);
    let (hb, hm) = if a.antenna_height_m >= b.antenna_height_m {
        (a.antenna_height_m, b.antenna_height_m)
    } else {
        (b.antenna_height_m, a.antenna_height_m)
    };
    let loss_db = prop.loss_between(distance_km, f_mhz, hb, hm)?.loss_db;
    let tx = a.tx_power_dbm.min(b.tx_power_dbm);
    let snr_db = tx + a.antenna_gain_dbi + b.antenna_gain_dbi - loss_db - noise_floor_dbm(bandwidth_mhz);
    Ok(LinkPrediction {
        distance_km,
        loss_db,
        snr_db,
        throughput_mbps: link_throughput_mbps(snr_db, bandwidth_mhz, profile),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPlan {
    pub link_id: String,
    pub from: String,
    pub to: String,
    pub distance_km: f64,
    pub bandwidth_mhz: f64,
    pub hop_depth: u32,
    pub channels: Vec<u8>,
    pub eirp_dbm: Option<f64>,
    pub predicted_snr_db: f64,
    pub predicted_throughput_mbps: f64,
    pub unassigned_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unreachable {
    pub node_id: String,
    pub reason: String,
}

/// Shortest-path tree rooted at the PoP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub pop: String,
    pub nodes: Vec<NodeSpec>,
    /// Parent-to-child links, ordered by hop depth then child id.
    pub links: Vec<LinkPlan>,
    pub unreachable: Vec<Unreachable>,
}

impl Topology {
    fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    /// Link requests for the allocator, one per tree link.
    pub fn link_requests(&self) -> Vec<LinkRequest> {
        self.links
            .iter()
            .map(|l| LinkRequest {
                link_id: l.link_id.clone(),
                endpoint_a: self.node(&l.from).expect("tree endpoint").location,
                endpoint_b: self.node(&l.to).expect("tree endpoint").location,
                requested_bandwidth_mhz: l.bandwidth_mhz,
                operator_id: self.pop.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry<'a> {
    dist: f64,
    node: &'a str,
}

impl Eq for QueueEntry<'_> {}

impl Ord for QueueEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, node id)
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(self.node))
    }
}

impl PartialOrd for QueueEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_nodes(nodes: &[NodeSpec]) -> Result<usize, MeshError> {
    let pops: Vec<usize> = nodes.iter().enumerate().filter(|(_, n)| n.role == NodeRole::Pop).map(|(i, _)| i).collect();
    if pops.len() != 1 {
        return Err(MeshError::PopCount(pops.len()));
    }
    let mut seen = HashMap::new();
    for n in nodes {
        if seen.insert(n.node_id.as_str(), ()).is_some() {
            return Err(MeshError::DuplicateNode(n.node_id.clone()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(n.antenna_height_m) {
            return Err(MeshError::InvalidNode(n.node_id.clone(), "antenna height must be positive".into()));
        }
        if !n.antenna_gain_dbi.is_finite() || !n.tx_power_dbm.is_finite() {
            return Err(MeshError::InvalidNode(n.node_id.clone(), "non-finite radio parameter".into()));
        }
        if let Some(bw) = n.bandwidth_mhz {
            if !positive(bw) {
                return Err(MeshError::InvalidNode(n.node_id.clone(), "bandwidth must be positive".into()));
            }
        }
    }
    Ok(pops[0])
}

/// Shortest-path tree over the candidate-link graph. Equal-distance paths
/// prefer the parent with the smaller node id.
pub fn build_topology(
    nodes: &[NodeSpec],
    params: &PlannerParams,
    prop: &Propagation,
    profile: &PhyProfile,
) -> Result<Topology, MeshError> {
    params.validate()?;
    let pop = check_nodes(nodes)?;
    let n = nodes.len();

    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine_km(nodes[i].location, nodes[j].location);
            if d > params.max_link_km {
                continue;
            }
            let p =
                predict_link(&nodes[i], &nodes[j], params.bandwidth_mhz, params.planning_frequency_mhz, prop, profile)?;
            if p.snr_db >= profile.min_snr_db {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let idx: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.node_id.as_str(), i)).collect();
    let mut heap = BinaryHeap::new();
    dist[pop] = 0.0;
    heap.push(QueueEntry { dist: 0.0, node: &nodes[pop].node_id });
    while let Some(QueueEntry { dist: d, node }) = heap.pop() {
        let u = idx[node];
        if done[u] || d > dist[u] {
            continue;
        }
        done[u] = true;
        for &(v, w) in &adj[u] {
            if done[v] {
                continue;
            }
            let cand = d + w;
            let better =
                cand < dist[v] || (cand == dist[v] && parent[v].is_some_and(|p| nodes[u].node_id < nodes[p].node_id));
            if better {
                dist[v] = cand;
                parent[v] = Some(u);
                heap.push(QueueEntry { dist: cand, node: &nodes[v].node_id });
            }
        }
    }

    let depth_of = |mut v: usize| {
        let mut depth = 0u32;
        while let Some(p) = parent[v] {
            depth += 1;
            v = p;
        }
        depth
    };

    let mut links = Vec::new();
    let mut unreachable = Vec::new();
    for (v, node) in nodes.iter().enumerate() {
        if v == pop {
            continue;
        }
        match parent[v] {
            Some(p) => links.push(LinkPlan {
                link_id: format!("{}-{}", nodes[p].node_id, node.node_id),
                from: nodes[p].node_id.clone(),
                to: node.node_id.clone(),
                distance_km: haversine_km(nodes[p].location, node.location),
                bandwidth_mhz: node.bandwidth_mhz.unwrap_or(params.bandwidth_mhz),
                hop_depth: depth_of(v),
                channels: Vec::new(),
                eirp_dbm: None,
                predicted_snr_db: 0.0,
                predicted_throughput_mbps: 0.0,
                unassigned_reason: None,
            }),
            None => unreachable.push(Unreachable {
                node_id: node.node_id.clone(),
                reason: if adj[v].is_empty() {
                    format!("no node within {} km closes a link", params.max_link_km)
                } else {
                    "no chain of feasible links reaches the PoP".into()
                },
            }),
        }
    }
    links.sort_by(|a, b| a.hop_depth.cmp(&b.hop_depth).then_with(|| a.to.cmp(&b.to)));
    Ok(Topology { pop: nodes[pop].node_id.clone(), nodes: nodes.to_vec(), links, unreachable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node_id: String,
    pub role: NodeRole,
    pub reachable: bool,
    pub hop_depth: u32,
    /// Node ids from this node up to the PoP.
    pub path_to_pop: Vec<String>,
    /// Smallest link throughput along the path; `None` for the PoP itself
    /// and unreachable nodes.
    pub bottleneck_mbps: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PlanReport {
    pub name: String,
    pub profile: String,
    pub propagation: String,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkPlan>,
    pub node_summaries: Vec<NodeSummary>,
    pub unreachable: Vec<Unreachable>,
    pub allocation: Option<AllocationReport>,
}

/// Scores each tree link on its assigned channel block and derives the
/// per-node bottleneck toward the PoP.
pub fn evaluate_plan(
    topology: &Topology,
    assignment: &Assignment,
    cfg: &RegulatoryConfig,
    prop: &Propagation,
    profile: &PhyProfile,
) -> Result<Vec<LinkPlan>, MeshError> {
    let mut out = Vec::with_capacity(topology.links.len());
    for link in &topology.links {
        let a = topology.node(&link.from).expect("tree endpoint");
        let b = topology.node(&link.to).expect("tree endpoint");
        let mut l = link.clone();
        match assignment.assigned.get(&link.link_id) {
            Some(grant) => {
                let first = cfg.channel(*grant.channels.first().expect("non-empty block"))?;
                let last = cfg.channel(*grant.channels.last().expect("non-empty block"))?;
                let f = 0.5 * (first.low_mhz + last.high_mhz);
                let p = predict_link(a, b, link.bandwidth_mhz, f, prop, profile)?;
                l.channels = grant.channels.clone();
                l.eirp_dbm = Some(grant.eirp_dbm);
                l.predicted_snr_db = p.snr_db;
                l.predicted_throughput_mbps = p.throughput_mbps;
                l.unassigned_reason = None;
            }
            None => {
                let p = predict_link(a, b, link.bandwidth_mhz, first_center(cfg), prop, profile)?;
                l.channels.clear();
                l.eirp_dbm = None;
                l.predicted_snr_db = p.snr_db;
                l.predicted_throughput_mbps = 0.0;
                l.unassigned_reason =
                    Some(assignment.unassigned.get(&link.link_id).cloned().unwrap_or_else(|| "not assigned".into()));
            }
        }
        out.push(l);
    }
    Ok(out)
}

fn first_center(cfg: &RegulatoryConfig) -> f64 {
    cfg.channel(1).map(|c| c.center_mhz()).unwrap_or(500.0)
}

/// Per-node summaries over scored tree links.
pub fn summarize_nodes(topology: &Topology, links: &[LinkPlan]) -> Vec<NodeSummary> {
    let up: HashMap<&str, &LinkPlan> = links.iter().map(|l| (l.to.as_str(), l)).collect();
    topology
        .nodes
        .iter()
        .map(|n| {
            let mut path = vec![n.node_id.clone()];
            let mut flags = Vec::new();
            let mut bottleneck: Option<f64> = None;
            let mut cur = n.node_id.as_str();
            while let Some(l) = up.get(cur) {
                bottleneck =
                    Some(bottleneck.map_or(l.predicted_throughput_mbps, |b| b.min(l.predicted_throughput_mbps)));
                if let Some(r) = &l.unassigned_reason {
                    flags.push(format!("link {} unassigned: {r}", l.link_id));
                } else if l.predicted_throughput_mbps == 0.0 {
                    flags.push(format!("link {} below minimum SNR", l.link_id));
                }
                cur = l.from.as_str();
                path.push(cur.to_string());
            }
            let reachable = n.node_id == topology.pop || up.contains_key(n.node_id.as_str());
            if !reachable {
                flags.push("unreachable".into());
                path.clear();
            }
            NodeSummary {
                node_id: n.node_id.clone(),
                role: n.role,
                reachable,
                hop_depth: up.get(n.node_id.as_str()).map_or(0, |l| l.hop_depth),
                path_to_pop: path,
                bottleneck_mbps: if reachable { bottleneck } else { None },
                flags,
            }
        })
        .collect()
}

/// Runs the whole pipeline for a scenario against an availability engine.
pub fn plan(
    scenario: &Scenario,
    engine: &AvailabilityEngine,
    active_uses: &[UseRecord],
    profile: &PhyProfile,
    prop: &Propagation,
) -> Result<PlanReport, MeshError> {
    let nodes = scenario.node_specs();
    let cap = engine.config().max_secondary_eirp_dbm;
    if let Some(n) = nodes.iter().find(|n| n.tx_power_dbm > cap) {
        return Err(MeshError::InvalidNode(n.node_id.clone(), format!("tx power above the {cap} dBm cap")));
    }
    let topology = build_topology(&nodes, &scenario.params, prop, profile)?;
    let (_, allocation) =
        allocate(&topology.link_requests(), engine, active_uses, scenario.params.interference_radius_km)?;
    let links = evaluate_plan(&topology, &allocation.assignment, engine.config(), prop, profile)?;
    let node_summaries = summarize_nodes(&topology, &links);
    Ok(PlanReport {
        name: scenario.name.clone(),
        profile: profile.name.clone(),
        propagation: prop.name().to_string(),
        nodes,
        links,
        node_summaries,
        unreachable: topology.unreachable,
        allocation: Some(allocation),
    })
}

/// Serializes a plan report in one output format.
pub trait ReportEmitter: Send + Sync {
    fn name(&self) -> &'static str;
    fn emit(&self, report: &PlanReport, out: &mut dyn Write) -> io::Result<()>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct JsonEmitter;

impl ReportEmitter for JsonEmitter {
    fn name(&self) -> &'static str {
        "json"
    }

    fn emit(&self, report: &PlanReport, out: &mut dyn Write) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut *out, report).map_err(io::Error::other)?;
        out.write_all(b"\n")
    }
}

/// One row per planned link.
#[derive(Debug, Default, Clone, Copy)]
pub struct CsvEmitter;

impl ReportEmitter for CsvEmitter {
    fn name(&self) -> &'static str {
        "csv"
    }

    fn emit(&self, report: &PlanReport, out: &mut dyn Write) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "link_id",
            "from",
            "to",
            "distance_km",
            "hop_depth",
            "bandwidth_mhz",
            "channels",
            "eirp_dbm",
            "predicted_snr_db",
            "predicted_throughput_mbps",
            "status",
        ])?;
        for l in &report.links {
            let mut channels = String::new();
            for (i, c) in l.channels.iter().enumerate() {
                let _ = write!(channels, "{}{c}", if i > 0 { ";" } else { "" });
            }
            w.write_record([
                l.link_id.clone(),
                l.from.clone(),
                l.to.clone(),
                format!("{:.4}", l.distance_km),
                l.hop_depth.to_string(),
                format!("{}", l.bandwidth_mhz),
                channels,
                l.eirp_dbm.map(|e| format!("{e}")).unwrap_or_default(),
                format!("{:.3}", l.predicted_snr_db),
                format!("{:.3}", l.predicted_throughput_mbps),
                l.unassigned_reason.clone().unwrap_or_else(|| "assigned".into()),
            ])?;
        }
        w.flush()
    }
}

#[derive(Clone)]
pub struct EmitterRegistry {
    emitters: BTreeMap<&'static str, Arc<dyn ReportEmitter>>,
}

impl Default for EmitterRegistry {
    fn default() -> Self {
        let mut r = Self { emitters: BTreeMap::new() };
        r.register(Arc::new(JsonEmitter));
        r.register(Arc::new(CsvEmitter));
        r
    }
}

impl EmitterRegistry {
    pub fn register(&mut self, emitter: Arc<dyn ReportEmitter>) {
        self.emitters.insert(emitter.name(), emitter);
    }

    pub fn get(&self, format: &str) -> Result<Arc<dyn ReportEmitter>, MeshError> {
        self.emitters.get(format).cloned().ok_or_else(|| MeshError::UnknownFormat(format.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.emitters.keys().copied()
    }
}

pub fn emit_report_bytes(report: &PlanReport, format: &str) -> Result<Vec<u8>, MeshError> {
    let emitter = EmitterRegistry::default().get(format)?;
    let mut buf = Vec::new();
    emitter.emit(report, &mut buf)?;
    Ok(buf)
}

pub fn emit_report(report: &PlanReport, format: &str, path: &Path) -> Result<(), MeshError> {
    let bytes = emit_report_bytes(report, format)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
