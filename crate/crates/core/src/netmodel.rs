//! Directed road network with AVI flags, full-sensing verification,
//! sensing-subnetwork extraction and closed traffic zones.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{NodeId, SegmentKey, Turn};

pub const DEFAULT_MAX_HOPS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node '{0}'")]
    UnknownNode(NodeId),
    #[error("invalid node id '{0}'")]
    InvalidNodeId(String),
    #[error("segment {key}: {reason}")]
    InvalidSegment { key: SegmentKey, reason: String },
    #[error("duplicate segment {0}")]
    DuplicateSegment(SegmentKey),
    #[error("turn from {from} to {to} does not share a junction")]
    InvalidTurn { from: SegmentKey, to: SegmentKey },
    #[error("path query needs distinct endpoints, got '{0}' twice")]
    SameEndpoints(NodeId),
    #[error("max_hops must be at least 1")]
    ZeroHops,
    #[error("no AVI-equipped nodes: a full-sensing network cannot be formed")]
    NoAviNodes,
    #[error("cannot resolve ambiguity between {from} and {to}: no removable non-AVI node on the competing paths")]
    Obstruction { from: NodeId, to: NodeId },
    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub avi: bool,
    /// Longitude/latitude, when known.
    pub coord: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length_m: f64,
    pub lanes: u32,
    /// Allowed movements into downstream segments. An empty list places no
    /// restriction on the downstream movement.
    pub turns: Vec<(Turn, SegmentKey)>,
    pub geom: Option<String>,
}

/// Index-based adjacency cached for path searches.
#[derive(Clone, Debug, Default, PartialEq)]
struct Topology {
    index: BTreeMap<NodeId, usize>,
    names: Vec<NodeId>,
    avi: Vec<bool>,
    succ: Vec<Vec<usize>>,
    allowed: HashMap<(usize, usize), Vec<usize>>,
}

#[derive(Clone, Debug, Default)]
pub struct RoadNetwork {
    nodes: BTreeMap<NodeId, Node>,
    segments: BTreeMap<SegmentKey, Segment>,
    topo: Topology,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.segments == other.segments
    }
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<NodeId>, avi: bool) -> Result<(), NetError> {
        self.add_node_at(id, avi, None)
    }

    pub fn add_node_at(
        &mut self,
        id: impl Into<NodeId>,
        avi: bool,
        coord: Option<(f64, f64)>,
    ) -> Result<(), NetError> {
        let id = id.into();
        if !id.is_valid() {
            return Err(NetError::InvalidNodeId(id.0));
        }
        self.nodes.insert(id, Node { avi, coord });
        self.rebuild();
        Ok(())
    }

    pub fn add_segment(
        &mut self,
        from: impl Into<NodeId>,
        to: impl Into<NodeId>,
        length_m: f64,
        lanes: u32,
    ) -> Result<SegmentKey, NetError> {
        let key = SegmentKey::new(from, to);
        self.insert_segment(
            key.clone(),
            Segment {
                length_m,
                lanes,
                turns: Vec::new(),
                geom: None,
            },
        )?;
        Ok(key)
    }

    pub fn insert_segment(&mut self, key: SegmentKey, seg: Segment) -> Result<(), NetError> {
        for n in [&key.from, &key.to] {
            if !self.nodes.contains_key(n) {
                return Err(NetError::UnknownNode(n.clone()));
            }
        }
        if key.from == key.to {
            return Err(NetError::InvalidSegment {
                key,
                reason: "self-loop".into(),
            });
        }
        if !(seg.length_m > 0.0) || !seg.length_m.is_finite() {
            return Err(NetError::InvalidSegment {
                key,
                reason: format!("length {} must be positive", seg.length_m),
            });
        }
        if seg.lanes < 1 {
            return Err(NetError::InvalidSegment {
                key,
                reason: "lane count must be at least 1".into(),
            });
        }
        if self.segments.contains_key(&key) {
            return Err(NetError::DuplicateSegment(key));
        }
        for (_, dn) in &seg.turns {
            if dn.from != key.to {
                return Err(NetError::InvalidTurn {
                    from: key.clone(),
                    to: dn.clone(),
                });
            }
        }
        self.segments.insert(key, seg);
        self.rebuild();
        Ok(())
    }

    /// Registers an allowed movement from `from` into `to`.
    pub fn add_turn(&mut self, from: &SegmentKey, turn: Turn, to: &SegmentKey) -> Result<(), NetError> {
        if from.to != to.from {
            return Err(NetError::InvalidTurn {
                from: from.clone(),
                to: to.clone(),
            });
        }
        if !self.segments.contains_key(to) {
            return Err(NetError::InvalidSegment {
                key: to.clone(),
                reason: "unknown downstream segment".into(),
            });
        }
        let seg = self
            .segments
            .get_mut(from)
            .ok_or_else(|| NetError::InvalidSegment {
                key: from.clone(),
                reason: "unknown segment".into(),
            })?;
        seg.turns.push((turn, to.clone()));
        self.rebuild();
        Ok(())
    }

    /// Checks turn lists only reference existing downstream segments.
    pub fn validate(&self) -> Result<(), NetError> {
        for (key, seg) in &self.segments {
            for (_, dn) in &seg.turns {
                if dn.from != key.to || !self.segments.contains_key(dn) {
                    return Err(NetError::InvalidTurn {
                        from: key.clone(),
                        to: dn.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn set_avi(&mut self, id: &NodeId, avi: bool) -> Result<(), NetError> {
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| NetError::UnknownNode(id.clone()))?;
        node.avi = avi;
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        let names: Vec<NodeId> = self.nodes.keys().cloned().collect();
        let index: BTreeMap<NodeId, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let avi = self.nodes.values().map(|n| n.avi).collect();
        let mut succ = vec![Vec::new(); names.len()];
        let mut allowed = HashMap::new();
        for (key, seg) in &self.segments {
            let (a, b) = (index[&key.from], index[&key.to]);
            succ[a].push(b);
            if !seg.turns.is_empty() {
                let mut next: Vec<usize> = seg
                    .turns
                    .iter()
                    .filter_map(|(_, dn)| index.get(&dn.to).copied())
                    .collect();
                next.sort_unstable();
                next.dedup();
                allowed.insert((a, b), next);
            }
        }
        for s in &mut succ {
            s.sort_unstable();
        }
        self.topo = Topology {
            index,
            names,
            avi,
            succ,
            allowed,
        };
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Node> {
        &self.nodes
    }

    pub fn segments(&self) -> &BTreeMap<SegmentKey, Segment> {
        &self.segments
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn segment(&self, key: &SegmentKey) -> Option<&Segment> {
        self.segments.get(key)
    }

    pub fn segment_between(&self, from: &NodeId, to: &NodeId) -> Option<&Segment> {
        self.segments.get(&SegmentKey::new(from.clone(), to.clone()))
    }

    pub fn is_avi(&self, id: &NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.avi)
    }

    pub fn avi_nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter().filter(|(_, n)| n.avi).map(|(id, _)| id)
    }

    /// Sum of segment lengths along a node path, `None` if a link is missing.
    pub fn path_length(&self, path: &[NodeId]) -> Option<f64> {
        path.windows(2)
            .map(|w| self.segment_between(&w[0], &w[1]).map(|s| s.length_m))
            .sum()
    }

    /// Movement label for `a -> b -> c`, from the turn table of segment `a_b`.
    pub fn turn_between(&self, a: &NodeId, b: &NodeId, c: &NodeId) -> Option<Turn> {
        let seg = self.segment_between(a, b)?;
        seg.turns
            .iter()
            .find(|(_, dn)| &dn.from == b && &dn.to == c)
            .map(|(t, _)| *t)
    }

    fn idx(&self, id: &NodeId) -> Result<usize, NetError> {
        self.topo
            .index
            .get(id)
            .copied()
            .ok_or_else(|| NetError::UnknownNode(id.clone()))
    }

    /// Depth-first walk over simple paths leaving `src`. `on_arrival` is
    /// invoked for every path ending at a node where `stop(node)` holds;
    /// the walk never continues past such nodes. Other nodes are passed
    /// through only if `pass(node)` holds.
    fn walk(
        &self,
        src: usize,
        max_hops: usize,
        stop: &dyn Fn(usize) -> bool,
        pass: &dyn Fn(usize) -> bool,
        on_arrival: &mut dyn FnMut(&[usize]),
    ) {
        let n = self.topo.names.len();
        let mut on_path = vec![false; n];
        let mut path = vec![src];
        on_path[src] = true;
        self.walk_rec(&mut path, &mut on_path, max_hops, stop, pass, on_arrival);
    }

    fn walk_rec(
        &self,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        max_hops: usize,
        stop: &dyn Fn(usize) -> bool,
        pass: &dyn Fn(usize) -> bool,
        on_arrival: &mut dyn FnMut(&[usize]),
    ) {
        if path.len() > max_hops {
            return;
        }
        let cur = *path.last().unwrap();
        let restricted = if path.len() >= 2 {
            self.topo.allowed.get(&(path[path.len() - 2], cur))
        } else {
            None
        };
        for &next in &self.topo.succ[cur] {
            if on_path[next] {
                continue;
            }
            if let Some(allowed) = restricted {
                if allowed.binary_search(&next).is_err() {
                    continue;
                }
            }
            path.push(next);
            if stop(next) {
                on_arrival(path);
            } else if pass(next) {
                on_path[next] = true;
                self.walk_rec(path, on_path, max_hops, stop, pass, on_arrival);
                on_path[next] = false;
            }
            path.pop();
        }
    }

    fn names_of(&self, p: &[usize]) -> Vec<NodeId> {
        p.iter().map(|&i| self.topo.names[i].clone()).collect()
    }

    /// Every simple path from `i` to `j` of at most `max_hops` segments whose
    /// interior nodes are all non-AVI, in lexicographic node-ID order.
    pub fn enumerate_paths(
        &self,
        i: &NodeId,
        j: &NodeId,
        max_hops: usize,
    ) -> Result<Vec<Vec<NodeId>>, NetError> {
        self.paths_between(i, j, max_hops, false)
    }

    /// Like [`enumerate_paths`](Self::enumerate_paths) but also allows AVI
    /// nodes in the interior, as happens when a camera misses a passage.
    pub fn enumerate_paths_any(
        &self,
        i: &NodeId,
        j: &NodeId,
        max_hops: usize,
    ) -> Result<Vec<Vec<NodeId>>, NetError> {
        self.paths_between(i, j, max_hops, true)
    }

    fn paths_between(
        &self,
        i: &NodeId,
        j: &NodeId,
        max_hops: usize,
        through_avi: bool,
    ) -> Result<Vec<Vec<NodeId>>, NetError> {
        let (a, b) = (self.idx(i)?, self.idx(j)?);
        if a == b {
            return Err(NetError::SameEndpoints(i.clone()));
        }
        if max_hops == 0 {
            return Err(NetError::ZeroHops);
        }
        let avi = &self.topo.avi;
        let mut out = Vec::new();
        self.walk(
            a,
            max_hops,
            &|n| n == b,
            &|n| through_avi || !avi[n],
            &mut |p| out.push(p.to_vec()),
        );
        out.sort();
        Ok(out.iter().map(|p| self.names_of(p)).collect())
    }

    /// Number of AVI-free paths from `src` to every AVI node reachable.
    fn path_counts_from(&self, src: usize, max_hops: usize) -> BTreeMap<usize, usize> {
        let avi = &self.topo.avi;
        let mut counts = BTreeMap::new();
        self.walk(
            src,
            max_hops,
            &|n| avi[n],
            &|_| true,
            &mut |p| *counts.entry(*p.last().unwrap()).or_insert(0) += 1,
        );
        counts
    }

    pub fn verify_full_sensing(&self, max_hops: usize) -> Result<FullSensingReport, NetError> {
        if max_hops == 0 {
            return Err(NetError::ZeroHops);
        }
        let sources: Vec<usize> = (0..self.topo.names.len())
            .filter(|&i| self.topo.avi[i])
            .collect();
        let per_source: Vec<Vec<Violation>> = sources
            .par_iter()
            .map(|&s| {
                self.path_counts_from(s, max_hops)
                    .into_iter()
                    .filter(|&(_, c)| c >= 2)
                    .map(|(t, c)| Violation {
                        from: self.topo.names[s].clone(),
                        to: self.topo.names[t].clone(),
                        path_count: c,
                    })
                    .collect()
            })
            .collect();
        let violations: Vec<Violation> = per_source.into_iter().flatten().collect();
        Ok(FullSensingReport {
            is_fsrn: violations.is_empty(),
            violations,
        })
    }

    /// Product over consecutive record pairs of the AVI-free path count.
    /// Saturates at `u64::MAX`.
    pub fn candidate_path_count(&self, records: &[NodeId], max_hops: usize) -> Result<u64, NetError> {
        let mut product: u64 = 1;
        for w in records.windows(2) {
            let n = self.enumerate_paths(&w[0], &w[1], max_hops)?.len() as u64;
            product = product.saturating_mul(n);
        }
        Ok(product)
    }

    /// Subnetwork without the given nodes and every segment touching them.
    pub fn without_nodes(&self, removed: &BTreeSet<NodeId>) -> RoadNetwork {
        let mut net = RoadNetwork {
            nodes: self
                .nodes
                .iter()
                .filter(|(id, _)| !removed.contains(*id))
                .map(|(id, n)| (id.clone(), n.clone()))
                .collect(),
            segments: BTreeMap::new(),
            topo: Topology::default(),
        };
        for (key, seg) in &self.segments {
            if removed.contains(&key.from) || removed.contains(&key.to) {
                continue;
            }
            let mut seg = seg.clone();
            seg.turns.retain(|(_, dn)| !removed.contains(&dn.to));
            net.segments.insert(key.clone(), seg);
        }
        net.rebuild();
        net
    }

    /// Greedy extraction of a full-sensing subnetwork.
    ///
    /// While ambiguity remains, the non-AVI node lying on the most competing
    /// paths is removed (ties go to the smallest node ID). Removed nodes,
    /// grouped into connected components, become closed traffic zones.
    /// This is a heuristic and does not minimize zone area.
    pub fn extract_fsrn(&self, max_hops: usize) -> Result<(RoadNetwork, Vec<TrafficZone>), NetError> {
        if self.avi_nodes().next().is_none() {
            return Err(NetError::NoAviNodes);
        }
        let mut removed = BTreeSet::new();
        let fsrn = loop {
            let current = self.without_nodes(&removed);
            let report = current.verify_full_sensing(max_hops)?;
            if report.is_fsrn {
                break current;
            }
            let mut participation: BTreeMap<NodeId, usize> = BTreeMap::new();
            for v in &report.violations {
                for path in current.enumerate_paths(&v.from, &v.to, max_hops)? {
                    for n in &path[1..path.len() - 1] {
                        *participation.entry(n.clone()).or_insert(0) += 1;
                    }
                }
            }
            // max_by_key keeps the last maximum; iterate in reverse so ties
            // resolve to the smallest ID.
            let pick = participation
                .iter()
                .rev()
                .max_by_key(|(_, &c)| c)
                .map(|(n, _)| n.clone());
            match pick {
                Some(n) => {
                    removed.insert(n);
                }
                None => {
                    let v = &report.violations[0];
                    return Err(NetError::Obstruction {
                        from: v.from.clone(),
                        to: v.to.clone(),
                    });
                }
            }
        };
        let zones = self.form_zones(&fsrn, &removed);
        Ok((fsrn, zones))
    }

    fn form_zones(&self, fsrn: &RoadNetwork, removed: &BTreeSet<NodeId>) -> Vec<TrafficZone> {
        let mut assigned: BTreeSet<NodeId> = BTreeSet::new();
        let mut zones = Vec::new();
        for seed in removed {
            if assigned.contains(seed) {
                continue;
            }
            let mut component = BTreeSet::new();
            let mut stack = vec![seed.clone()];
            while let Some(n) = stack.pop() {
                if !component.insert(n.clone()) {
                    continue;
                }
                for key in self.segments.keys().filter(|k| k.touches(&n)) {
                    for m in [&key.from, &key.to] {
                        if removed.contains(m) && !component.contains(m) {
                            stack.push(m.clone());
                        }
                    }
                }
            }
            assigned.extend(component.iter().cloned());
            let interior_segments: BTreeSet<SegmentKey> = self
                .segments
                .keys()
                .filter(|k| component.contains(&k.from) || component.contains(&k.to))
                .cloned()
                .collect();
            let boundary_nodes: BTreeSet<&NodeId> = interior_segments
                .iter()
                .flat_map(|k| [&k.from, &k.to])
                .filter(|n| !component.contains(*n))
                .collect();
            let boundary_segments = fsrn
                .segments
                .keys()
                .filter(|k| boundary_nodes.contains(&k.from) || boundary_nodes.contains(&k.to))
                .cloned()
                .collect();
            zones.push(TrafficZone {
                zone_id: format!("Z{}", zones.len() + 1),
                boundary_segments,
                interior_segments,
                interior_nodes: component,
            });
        }
        zones
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub from: NodeId,
    pub to: NodeId,
    pub path_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FullSensingReport {
    pub is_fsrn: bool,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficZone {
    pub zone_id: String,
    pub boundary_segments: BTreeSet<SegmentKey>,
    pub interior_segments: BTreeSet<SegmentKey>,
    pub interior_nodes: BTreeSet<NodeId>,
}

impl TrafficZone {
    /// Every segment physically adjacent to an interior segment is either
    /// interior or a boundary segment.
    pub fn is_closed(&self, prn: &RoadNetwork) -> bool {
        self.interior_segments.iter().all(|s| {
            prn.segments()
                .keys()
                .filter(|o| *o != s && (o.touches(&s.from) || o.touches(&s.to)))
                .all(|o| self.interior_segments.contains(o) || self.boundary_segments.contains(o))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PathPart {
    OnFsrn(Vec<NodeId>),
    InnerZone {
        zone_id: String,
        nodes: Vec<NodeId>,
        entry: NodeId,
        /// `None` when the path ends inside the zone.
        exit: Option<NodeId>,
    },
}

impl PathPart {
    pub fn nodes(&self) -> &[NodeId] {
        match self {
            PathPart::OnFsrn(n) => n,
            PathPart::InnerZone { nodes, .. } => nodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PathDecomposition {
    pub parts: Vec<PathPart>,
}

impl PathDecomposition {
    /// Concatenation of the parts, sharing junction nodes once.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::new();
        for part in &self.parts {
            let nodes = part.nodes();
            let skip = usize::from(!out.is_empty());
            out.extend(nodes.iter().skip(skip).cloned());
        }
        out
    }
}

/// Splits a physical path into on-network parts and inner-zone activity.
pub fn decompose_trip(
    fsrn: &RoadNetwork,
    zones: &[TrafficZone],
    path: &[NodeId],
) -> Result<PathDecomposition, NetError> {
    #[derive(PartialEq)]
    enum Class<'a> {
        On,
        Zone(&'a TrafficZone),
    }
    if path.len() < 2 {
        return Ok(PathDecomposition {
            parts: vec![PathPart::OnFsrn(path.to_vec())],
        });
    }
    let mut parts = Vec::new();
    let mut current: Option<(Class, Vec<NodeId>)> = None;
    for w in path.windows(2) {
        let key = SegmentKey::new(w[0].clone(), w[1].clone());
        let class = if fsrn.segment(&key).is_some() {
            Class::On
        } else if let Some(z) = zones.iter().find(|z| z.interior_segments.contains(&key)) {
            Class::Zone(z)
        } else {
            return Err(NetError::ModelInconsistency(format!(
                "segment {key} is neither on the sensing network nor inside a zone"
            )));
        };
        match &mut current {
            Some((c, nodes)) if *c == class => nodes.push(w[1].clone()),
            _ => {
                if let Some(done) = current.take() {
                    parts.push(done);
                }
                current = Some((class, vec![w[0].clone(), w[1].clone()]));
            }
        }
    }
    parts.extend(current);
    let parts = parts
        .into_iter()
        .map(|(class, nodes)| match class {
            Class::On => PathPart::OnFsrn(nodes),
            Class::Zone(z) => {
                let last = nodes.last().unwrap();
                let exit = (!z.interior_nodes.contains(last)).then(|| last.clone());
                PathPart::InnerZone {
                    zone_id: z.zone_id.clone(),
                    entry: nodes[0].clone(),
                    exit,
                    nodes,
                }
            }
        })
        .collect();
    Ok(PathDecomposition { parts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn net(nodes: &[(&str, bool)], edges: &[(&str, &str)]) -> RoadNetwork {
        let mut net = RoadNetwork::new();
        for (id, avi) in nodes {
            net.add_node(*id, *avi).unwrap();
        }
        for (a, b) in edges {
            net.add_segment(*a, *b, 100.0, 1).unwrap();
        }
        net
    }

    /// B and D linked through the unequipped node E; the unequipped J/K
    /// cluster competes with the direct B->F link.
    pub(crate) fn demo_network() -> RoadNetwork {
        net(
            &[
                ("A", true),
                ("B", true),
                ("C", true),
                ("D", true),
                ("E", false),
                ("F", true),
                ("I", true),
                ("J", false),
                ("K", false),
            ],
            &[
                ("A", "B"),
                ("B", "A"),
                ("B", "C"),
                ("C", "D"),
                ("B", "E"),
                ("E", "D"),
                ("B", "F"),
                ("B", "J"),
                ("J", "K"),
                ("K", "F"),
                ("B", "K"),
                ("J", "F"),
                ("F", "I"),
                ("I", "F"),
            ],
        )
    }

    #[test]
    fn single_edge_is_the_only_path() {
        let g = net(&[("i", true), ("j", true)], &[("i", "j")]);
        assert_eq!(g.enumerate_paths(&n("i"), &n("j"), 12).unwrap(), vec![vec![n("i"), n("j")]]);
    }

    #[test]
    fn diamond_has_two_paths() {
        let g = net(
            &[("i", true), ("a", false), ("b", false), ("j", true)],
            &[("i", "a"), ("a", "j"), ("i", "b"), ("b", "j")],
        );
        let paths = g.enumerate_paths(&n("i"), &n("j"), 12).unwrap();
        assert_eq!(paths, vec![vec![n("i"), n("a"), n("j")], vec![n("i"), n("b"), n("j")]]);
        let report = g.verify_full_sensing(12).unwrap();
        assert!(!report.is_fsrn);
        assert_eq!(
            report.violations,
            vec![Violation {
                from: n("i"),
                to: n("j"),
                path_count: 2
            }]
        );
    }

    #[test]
    fn demo_path_through_unequipped_node() {
        let g = demo_network();
        assert_eq!(
            g.enumerate_paths(&n("B"), &n("D"), 12).unwrap(),
            vec![vec![n("B"), n("E"), n("D")]]
        );
    }

    #[test]
    fn unknown_node_and_same_endpoints_are_errors() {
        let g = demo_network();
        assert_eq!(
            g.enumerate_paths(&n("B"), &n("Q"), 12),
            Err(NetError::UnknownNode(n("Q")))
        );
        assert!(matches!(
            g.enumerate_paths(&n("B"), &n("B"), 12),
            Err(NetError::SameEndpoints(_))
        ));
    }

    #[test]
    fn max_hops_bounds_the_search() {
        let g = net(
            &[("i", true), ("a", false), ("b", false), ("j", true)],
            &[("i", "a"), ("a", "b"), ("b", "j")],
        );
        assert!(g.enumerate_paths(&n("i"), &n("j"), 2).unwrap().is_empty());
        assert_eq!(g.enumerate_paths(&n("i"), &n("j"), 3).unwrap().len(), 1);
    }

    #[test]
    fn turn_restrictions_prune_paths() {
        let mut g = net(
            &[("i", true), ("a", false), ("b", false), ("j", true)],
            &[("i", "a"), ("a", "j"), ("a", "b"), ("b", "j")],
        );
        let ia = SegmentKey::new("i", "a");
        g.add_turn(&ia, Turn::Straight, &SegmentKey::new("a", "j")).unwrap();
        assert_eq!(g.enumerate_paths(&n("i"), &n("j"), 12).unwrap().len(), 1);
        assert!(g
            .add_turn(&ia, Turn::Left, &SegmentKey::new("b", "j"))
            .is_err());
    }

    #[test]
    fn all_avi_is_full_sensing() {
        let g = net(
            &[("a", true), ("b", true), ("c", true)],
            &[("a", "b"), ("b", "a"), ("b", "c"), ("a", "c"), ("c", "a")],
        );
        assert!(g.verify_full_sensing(12).unwrap().is_fsrn);
    }

    #[test]
    fn candidate_count_products() {
        let g = net(
            &[("i", true), ("j", true), ("k", true), ("a", false), ("b", false), ("x", true)],
            &[("i", "j"), ("j", "a"), ("a", "k"), ("j", "b"), ("b", "k")],
        );
        assert_eq!(g.candidate_path_count(&[n("i"), n("j")], 12).unwrap(), 1);
        assert_eq!(g.candidate_path_count(&[n("i"), n("j"), n("k")], 12).unwrap(), 2);
        assert_eq!(g.candidate_path_count(&[n("i"), n("x")], 12).unwrap(), 0);
    }

    #[test]
    fn extraction_leaves_full_sensing_net_untouched() {
        let g = net(&[("a", true), ("b", true)], &[("a", "b"), ("b", "a")]);
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        assert_eq!(fsrn, g);
        assert!(zones.is_empty());
    }

    #[test]
    fn extraction_without_avi_nodes_fails() {
        let g = net(&[("a", false), ("b", false)], &[("a", "b")]);
        assert_eq!(g.extract_fsrn(12), Err(NetError::NoAviNodes));
    }

    #[test]
    fn demo_cluster_becomes_a_zone() {
        let g = demo_network();
        assert!(!g.verify_full_sensing(12).unwrap().is_fsrn);
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        assert!(fsrn.verify_full_sensing(12).unwrap().is_fsrn);
        assert_eq!(zones.len(), 1);
        let z = &zones[0];
        assert_eq!(z.interior_nodes, [n("J"), n("K")].into_iter().collect());
        for key in ["B_J", "J_K", "K_F", "B_K", "J_F"] {
            assert!(z.interior_segments.contains(&key.parse().unwrap()), "{key}");
        }
        assert!(z.is_closed(&g));
        // E carries the only B->D route and stays on the sensing network.
        assert!(fsrn.node(&n("E")).is_some());
    }

    #[test]
    fn demo_trip_decomposition() {
        let g = demo_network();
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        let path: Vec<NodeId> = ["A", "B", "J", "K", "F", "I"].iter().map(|s| n(s)).collect();
        let d = decompose_trip(&fsrn, &zones, &path).unwrap();
        assert_eq!(
            d.parts,
            vec![
                PathPart::OnFsrn(vec![n("A"), n("B")]),
                PathPart::InnerZone {
                    zone_id: "Z1".into(),
                    nodes: vec![n("B"), n("J"), n("K"), n("F")],
                    entry: n("B"),
                    exit: Some(n("F")),
                },
                PathPart::OnFsrn(vec![n("F"), n("I")]),
            ]
        );
        assert_eq!(d.nodes(), path);
    }

    #[test]
    fn trip_ending_inside_zone_has_no_exit() {
        let g = demo_network();
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        let path = vec![n("A"), n("B"), n("J"), n("K")];
        let d = decompose_trip(&fsrn, &zones, &path).unwrap();
        assert_eq!(d.parts.len(), 2);
        match &d.parts[1] {
            PathPart::InnerZone { entry, exit, .. } => {
                assert_eq!(entry, &n("B"));
                assert_eq!(exit, &None);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(d.nodes(), path);
    }

    #[test]
    fn trip_on_unknown_segment_is_inconsistent() {
        let g = demo_network();
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        let err = decompose_trip(&fsrn, &zones, &[n("C"), n("A")]).unwrap_err();
        assert!(matches!(err, NetError::ModelInconsistency(_)));
    }

    #[test]
    fn whole_trip_on_fsrn_is_one_part() {
        let g = demo_network();
        let (fsrn, zones) = g.extract_fsrn(12).unwrap();
        let path = vec![n("A"), n("B"), n("E"), n("D")];
        let d = decompose_trip(&fsrn, &zones, &path).unwrap();
        assert_eq!(d.parts, vec![PathPart::OnFsrn(path)]);
    }

    #[test]
    fn invalid_segments_rejected() {
        let mut g = net(&[("a", true), ("b", true)], &[]);
        assert!(g.add_segment("a", "b", 0.0, 1).is_err());
        assert!(g.add_segment("a", "b", 10.0, 0).is_err());
        assert!(g.add_segment("a", "z", 10.0, 1).is_err());
        g.add_segment("a", "b", 10.0, 1).unwrap();
        assert!(matches!(
            g.add_segment("a", "b", 10.0, 1),
            Err(NetError::DuplicateSegment(_))
        ));
        assert!(g.add_node("a_b", true).is_err());
    }
}
