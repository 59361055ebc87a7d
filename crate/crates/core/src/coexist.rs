//! Channel allocation among secondary links.
//!
//! Links whose endpoints come within the interference radius of each other
//! conflict. Channels are handed out greedily, highest conflict degree
//! first, each link taking the lowest block of contiguous channels that is
//! available at both of its endpoints and unused by any conflicting link
//! already served.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityEngine, AvailabilityError};
use crate::paws::UseRecord;
use crate::spectrum::{channels_spanned, haversine_km, GeoPoint, RegulatoryConfig};

pub const DEFAULT_INTERFERENCE_RADIUS_KM: f64 = 10.0;
pub const ALLOWED_BANDWIDTHS_MHZ: [f64; 4] = [5.0, 8.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoexistError {
    #[error("link `{0}`: endpoints coincide")]
    SameEndpoints(String),
    #[error("link `{0}`: bandwidth {1} MHz not one of 5, 8, 10, 20")]
    Bandwidth(String, f64),
    #[error("duplicate link id `{0}`")]
    DuplicateLink(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("self-conflict on `{0}`")]
    SelfEdge(String),
    #[error("interference radius must be positive")]
    Radius,
    #[error(transparent)]
    Availability(#[from] AvailabilityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRequest {
    pub link_id: String,
    pub endpoint_a: GeoPoint,
    pub endpoint_b: GeoPoint,
    pub requested_bandwidth_mhz: f64,
    #[serde(default)]
    pub operator_id: String,
}

impl LinkRequest {
    pub fn validate(&self) -> Result<(), CoexistError> {
        if self.endpoint_a == self.endpoint_b {
            return Err(CoexistError::SameEndpoints(self.link_id.clone()));
        }
        if !ALLOWED_BANDWIDTHS_MHZ.contains(&self.requested_bandwidth_mhz) {
            return Err(CoexistError::Bandwidth(self.link_id.clone(), self.requested_bandwidth_mhz));
        }
        Ok(())
    }

    pub fn channels_needed(&self) -> usize {
        channels_spanned(self.requested_bandwidth_mhz)
    }

    fn endpoints(&self) -> [GeoPoint; 2] {
        [self.endpoint_a, self.endpoint_b]
    }

    /// Smallest distance between any endpoint of `self` and any of `other`.
    pub fn min_endpoint_distance_km(&self, other: &LinkRequest) -> f64 {
        self.endpoints()
            .iter()
            .flat_map(|a| other.endpoints().map(|b| haversine_km(*a, b)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Undirected conflict graph over link ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConflictGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl ConflictGraph {
    pub fn new<I, S>(vertices: I) -> Result<Self, CoexistError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut adjacency = BTreeMap::new();
        for v in vertices {
            let v = v.into();
            if adjacency.insert(v.clone(), BTreeSet::new()).is_some() {
                return Err(CoexistError::DuplicateLink(v));
            }
        }
        Ok(Self { adjacency })
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<(), CoexistError> {
        if a == b {
            return Err(CoexistError::SelfEdge(a.to_string()));
        }
        for v in [a, b] {
            if !self.adjacency.contains_key(v) {
                return Err(CoexistError::UnknownLink(v.to_string()));
            }
        }
        self.adjacency.get_mut(a).expect("checked").insert(b.to_string());
        self.adjacency.get_mut(b).expect("checked").insert(a.to_string());
        Ok(())
    }

    pub fn vertices(&self) -> impl Iterator<Item = &str> + '_ {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, v: &str) -> impl Iterator<Item = &str> + '_ {
        self.adjacency.get(v).into_iter().flatten().map(String::as_str)
    }

    pub fn degree(&self, v: &str) -> usize {
        self.adjacency.get(v).map_or(0, BTreeSet::len)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }

    /// Each edge once, as `(smaller, larger)` id pairs in sorted order.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.adjacency
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (a.as_str(), b.as_str())))
            .collect()
    }
}

/// Edge between two links iff some pair of their endpoints is closer than
/// `interference_radius_km`.
pub fn build_conflict_graph(
    requests: &[LinkRequest],
    interference_radius_km: f64,
) -> Result<ConflictGraph, CoexistError> {
    if !interference_radius_km.is_finite() || interference_radius_km <= 0.0 {
        return Err(CoexistError::Radius);
    }
    for r in requests {
        r.validate()?;
    }
    let mut g = ConflictGraph::new(requests.iter().map(|r| r.link_id.clone()))?;
    for (i, a) in requests.iter().enumerate() {
        for b in &requests[i + 1..] {
            if a.min_endpoint_distance_km(b) < interference_radius_km {
                g.add_edge(&a.link_id, &b.link_id)?;
            }
        }
    }
    Ok(g)
}

/// What one link may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkOptions {
    pub available: BTreeSet<u8>,
    pub channels_needed: usize,
}

impl LinkOptions {
    pub fn single(available: impl IntoIterator<Item = u8>) -> Self {
        Self { available: available.into_iter().collect(), channels_needed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGrant {
    /// Contiguous channel indices, lowest first.
    pub channels: Vec<u8>,
    pub eirp_dbm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub assigned: BTreeMap<String, LinkGrant>,
    pub unassigned: BTreeMap<String, String>,
}

impl Assignment {
    /// No conflicting pair shares a channel.
    pub fn is_proper(&self, g: &ConflictGraph) -> bool {
        g.edges().iter().all(|(a, b)| match (self.assigned.get(*a), self.assigned.get(*b)) {
            (Some(x), Some(y)) => x.channels.iter().all(|c| !y.channels.contains(c)),
            _ => true,
        })
    }

    pub fn channels_used(&self) -> BTreeSet<u8> {
        self.assigned.values().flat_map(|g| g.channels.iter().copied()).collect()
    }
}

/// Greedy assignment: links in decreasing conflict degree (ties by id),
/// each taking the lowest contiguous block available to it and free of
/// already-served neighbours. Links with no options are left out with a
/// reason.
pub fn assign_channels(
    g: &ConflictGraph,
    options: &BTreeMap<String, LinkOptions>,
    cfg: &RegulatoryConfig,
) -> Assignment {
    let mut order: Vec<&str> = g.vertices().collect();
    order.sort_by(|a, b| g.degree(b).cmp(&g.degree(a)).then_with(|| a.cmp(b)));

    let mut out = Assignment::default();
    for link in order {
        let Some(opt) = options.get(link) else {
            out.unassigned.insert(link.to_string(), "no availability supplied".into());
            continue;
        };
        let k = opt.channels_needed.max(1);
        let taken: BTreeSet<u8> = g
            .neighbors(link)
            .filter_map(|n| out.assigned.get(n))
            .flat_map(|grant| grant.channels.iter().copied())
            .collect();
        let block_ok = |start: u8, exclude: &BTreeSet<u8>| {
            (0..k).all(|o| {
                let c = start as usize + o;
                c <= usize::from(u8::MAX) && opt.available.contains(&(c as u8)) && !exclude.contains(&(c as u8))
            })
        };
        match opt.available.iter().copied().find(|&s| block_ok(s, &taken)) {
            Some(start) => {
                let channels = (0..k).map(|o| start + o as u8).collect();
                out.assigned.insert(link.to_string(), LinkGrant { channels, eirp_dbm: cfg.max_secondary_eirp_dbm });
            }
            None => {
                let reason = if !opt.available.iter().any(|&s| block_ok(s, &BTreeSet::new())) {
                    format!("no block of {k} contiguous channel(s) available at both endpoints")
                } else {
                    let blockers: Vec<&str> = g.neighbors(link).filter(|n| out.assigned.contains_key(*n)).collect();
                    format!("usable channels all taken by conflicting links: {}", blockers.join(", "))
                };
                out.unassigned.insert(link.to_string(), reason);
            }
        }
    }
    out
}

/// Channels usable by `req`: available at both endpoints and not in active
/// use by a device within `radius_km` of either endpoint.
pub fn link_options(
    req: &LinkRequest,
    engine: &AvailabilityEngine,
    active_uses: &[UseRecord],
    radius_km: f64,
) -> Result<LinkOptions, CoexistError> {
    let a: BTreeSet<u8> = engine.available_channels(req.endpoint_a)?.available_indices().into_iter().collect();
    let b: BTreeSet<u8> = engine.available_channels(req.endpoint_b)?.available_indices().into_iter().collect();
    let mut available: BTreeSet<u8> = a.intersection(&b).copied().collect();
    for u in active_uses {
        let near = req.endpoints().iter().any(|e| haversine_km(*e, u.location) < radius_km);
        if near {
            available.remove(&u.channel_index);
        }
    }
    Ok(LinkOptions { available, channels_needed: req.channels_needed() })
}

#[derive(Debug, Clone, Serialize)]
pub struct AllocationReport {
    pub interference_radius_km: f64,
    pub links: Vec<String>,
    pub conflicts: Vec<(String, String)>,
    pub assignment: Assignment,
}

impl AllocationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

/// Full pipeline: conflict graph, per-link options, greedy assignment.
pub fn allocate(
    requests: &[LinkRequest],
    engine: &AvailabilityEngine,
    active_uses: &[UseRecord],
    interference_radius_km: f64,
) -> Result<(ConflictGraph, AllocationReport), CoexistError> {
    let g = build_conflict_graph(requests, interference_radius_km)?;
    let mut options = BTreeMap::new();
    for r in requests {
        options.insert(r.link_id.clone(), link_options(r, engine, active_uses, interference_radius_km)?);
    }
    let assignment = assign_channels(&g, &options, engine.config());
    let report = AllocationReport {
        interference_radius_km,
        links: requests.iter().map(|r| r.link_id.clone()).collect(),
        conflicts: g.edges().into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        assignment,
    };
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn req(id: &str, a: GeoPoint, b: GeoPoint, bw: f64) -> LinkRequest {
        LinkRequest {
            link_id: id.into(),
            endpoint_a: a,
            endpoint_b: b,
            requested_bandwidth_mhz: bw,
            operator_id: "op".into(),
        }
    }

    fn uniform(g: &ConflictGraph, chans: std::ops::RangeInclusive<u8>) -> BTreeMap<String, LinkOptions> {
        g.vertices().map(|v| (v.to_string(), LinkOptions::single(chans.clone()))).collect()
    }

    fn complete(n: usize) -> ConflictGraph {
        let ids: Vec<String> = (0..n).map(|i| format!("l{i}")).collect();
        let mut g = ConflictGraph::new(ids.clone()).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                g.add_edge(&ids[i], &ids[j]).unwrap();
            }
        }
        g
    }

    #[test]
    fn single_link_has_no_edges_and_gets_channel_one() {
        let pop = pt(19.69, 72.77);
        let reqs = [req("a", pop, pop.destination(10.0, 3.0), 5.0)];
        let g = build_conflict_graph(&reqs, 10.0).unwrap();
        assert!(g.edges().is_empty());
        let a = assign_channels(&g, &uniform(&g, 1..=15), &RegulatoryConfig::default());
        assert_eq!(a.assigned["a"].channels, vec![1]);
        assert_eq!(a.assigned["a"].eirp_dbm, 30.0);
    }

    #[test]
    fn shared_hub_gives_complete_graph() {
        let pop = pt(19.69, 72.77);
        let reqs: Vec<_> = [("maswan", 20.0), ("haloli", 110.0), ("ganje", 200.0), ("pargaon", 290.0)]
            .iter()
            .map(|(id, brg)| req(id, pop, pop.destination(*brg, 6.7), 5.0))
            .collect();
        let g = build_conflict_graph(&reqs, 10.0).unwrap();
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.max_degree(), 3);
        let a = assign_channels(&g, &uniform(&g, 1..=15), &RegulatoryConfig::default());
        assert!(a.is_proper(&g));
        assert_eq!(a.channels_used(), BTreeSet::from([1, 2, 3, 4]));
    }

    #[test]
    fn distant_links_do_not_conflict() {
        let a0 = pt(19.0, 73.0);
        let b0 = pt(19.0 + 50.0 / 111.19, 73.0);
        let reqs = [req("a", a0, a0.destination(0.0, 2.0), 8.0), req("b", b0, b0.destination(0.0, 2.0), 8.0)];
        // nearest endpoints are 48 km apart
        assert!(build_conflict_graph(&reqs, 10.0).unwrap().edges().is_empty());
    }

    #[test]
    fn triangle_with_two_channels_leaves_one_out() {
        let g = complete(3);
        let a = assign_channels(&g, &uniform(&g, 1..=2), &RegulatoryConfig::default());
        assert_eq!(a.assigned.len(), 2);
        assert_eq!(a.unassigned.len(), 1);
        // equal degrees: l0, l1 served first
        assert!(a.unassigned.contains_key("l2"));
        assert!(a.unassigned["l2"].contains("taken by conflicting links"));
        assert!(a.is_proper(&g));
    }

    #[test]
    fn wide_links_take_contiguous_blocks() {
        let g = complete(2);
        let mut opts = uniform(&g, 1..=15);
        opts.get_mut("l0").unwrap().channels_needed = 3;
        let a = assign_channels(&g, &opts, &RegulatoryConfig::default());
        assert_eq!(a.assigned["l0"].channels, vec![1, 2, 3]);
        assert_eq!(a.assigned["l1"].channels, vec![4]);
    }

    #[test]
    fn wide_link_without_contiguous_block() {
        let g = complete(1);
        let mut opts = BTreeMap::new();
        opts.insert("l0".to_string(), LinkOptions { available: BTreeSet::from([1, 3, 5]), channels_needed: 2 });
        let a = assign_channels(&g, &opts, &RegulatoryConfig::default());
        assert!(a.unassigned["l0"].contains("contiguous"));
    }

    #[test]
    fn graph_rejects_self_edges_and_unknown_vertices() {
        let mut g = complete(2);
        assert!(matches!(g.add_edge("l0", "l0"), Err(CoexistError::SelfEdge(_))));
        assert!(matches!(g.add_edge("l0", "zz"), Err(CoexistError::UnknownLink(_))));
        assert!(g.has_edge("l1", "l0"));
    }

    #[test]
    fn request_validation() {
        let p = pt(19.0, 73.0);
        assert!(req("a", p, p, 5.0).validate().is_err());
        assert!(req("a", p, p.destination(0.0, 1.0), 6.0).validate().is_err());
        assert!(build_conflict_graph(&[req("a", p, p.destination(0.0, 1.0), 5.0)], 0.0).is_err());
    }
}
