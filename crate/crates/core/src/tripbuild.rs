//! Trip building: splitting per-vehicle plate records into trips, resolving
//! node paths and inferring passing times at intersections without cameras.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LprRow;
use crate::netmodel::{NetError, RoadNetwork, DEFAULT_MAX_HOPS};
use crate::signal::{GreenWindow, MovementKey, SignalPlans};
use crate::types::{NodeId, Turn, VehicleId, VehicleType, TIME_RESOLUTION};

/// 5 km/h.
pub const DEFAULT_V_MIN: f64 = 5.0 / 3.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TripError {
    #[error("record at {t_j} precedes record at {t_i}")]
    NegativeElapsed { t_i: f64, t_j: f64 },
    #[error("segment length must be positive, got {0}")]
    BadLength(f64),
    #[error("minimal speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("no signal plan for movement {approach}->{node} ({turn})")]
    MissingPlan {
        node: NodeId,
        approach: NodeId,
        turn: Turn,
    },
    #[error("path {0:?} is not a chain of network segments")]
    InvalidPath(Vec<NodeId>),
    #[error("passing graph is empty")]
    EmptyGraph,
    #[error("cannot place increasing passing times on chosen phases")]
    NonMonotone,
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Passing of one vehicle at one camera node.
#[derive(Clone, Debug, PartialEq)]
pub struct LprRecord {
    pub vehicle_id: VehicleId,
    pub node: NodeId,
    pub t: f64,
    /// Chainage from the first observed node of the trip; set during path resolution.
    pub x: f64,
}

/// A green interval of one movement at one node. Observed endpoints are
/// represented as zero-length phases with no approach.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenPhase {
    pub node: NodeId,
    pub approach: Option<NodeId>,
    pub turn: Turn,
    pub start: f64,
    pub end: f64,
}

impl GreenPhase {
    pub fn instant(node: NodeId, t: f64) -> Self {
        GreenPhase {
            node,
            approach: None,
            turn: Turn::Unknown,
            start: t,
            end: t,
        }
    }

    pub fn window(&self) -> GreenWindow {
        GreenWindow::new(self.start, self.end)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Layered graph of candidate phases along a path. `edges[k]` links
/// `layers[k]` to `layers[k + 1]` by index.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PassingGraph {
    pub path: Vec<NodeId>,
    pub layers: Vec<Vec<GreenPhase>>,
    pub edges: Vec<BTreeSet<(usize, usize)>>,
    /// True once trimmed to complete chains.
    pub proved: bool,
}

impl PassingGraph {
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Vec::is_empty)
    }

    /// `(start, end)` of every phase per layer.
    pub fn layer_windows(&self) -> Vec<Vec<(f64, f64)>> {
        self.layers
            .iter()
            .map(|l| l.iter().map(|p| (p.start, p.end)).collect())
            .collect()
    }

    /// Edges per layer gap as pairs of `(start, end)` windows.
    pub fn edge_windows(&self) -> Vec<Vec<((f64, f64), (f64, f64))>> {
        self.edges
            .iter()
            .enumerate()
            .map(|(k, es)| {
                es.iter()
                    .map(|&(a, b)| {
                        let (pa, pb) = (&self.layers[k][a], &self.layers[k + 1][b]);
                        ((pa.start, pa.end), (pb.start, pb.end))
                    })
                    .collect()
            })
            .collect()
    }

    /// Number of complete chains from the first to the last layer.
    pub fn chain_count(&self) -> u64 {
        if self.is_empty() {
            return 0;
        }
        let mut ways = vec![1u64; self.layers[0].len()];
        for (k, es) in self.edges.iter().enumerate() {
            let mut next = vec![0u64; self.layers[k + 1].len()];
            for &(a, b) in es {
                next[b] = next[b].saturating_add(ways[a]);
            }
            ways = next;
        }
        ways.iter().fold(0u64, |s, w| s.saturating_add(*w))
    }
}

/// How the observed endpoints of a leg enter the passing graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EndpointMode {
    /// A zero-length phase at the observed time.
    #[default]
    Observed,
    /// The green phase of the traversed movement containing the observed
    /// time, falling back to the observed instant when no plan applies.
    SignalPhase,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripConfig {
    pub v_min: f64,
    /// When set, consecutive phases must also leave room for travel at this
    /// speed, up to the record time resolution: `next.end - prev.start >= length / v_max`.
    pub v_max: Option<f64>,
    pub max_hops: usize,
    /// Hop limit when searching across a camera that missed a passage.
    pub recovery_hops: usize,
    pub endpoints: EndpointMode,
}

impl Default for TripConfig {
    fn default() -> Self {
        TripConfig {
            v_min: DEFAULT_V_MIN,
            v_max: None,
            max_hops: DEFAULT_MAX_HOPS,
            recovery_hops: 6,
            endpoints: EndpointMode::Observed,
        }
    }
}

/// Same-trip test between two passings `length` meters apart.
pub fn accessibility(length: f64, t_i: f64, t_j: f64, v_min: f64) -> Result<bool, TripError> {
    if !(length > 0.0) {
        return Err(TripError::BadLength(length));
    }
    if !(v_min > 0.0) {
        return Err(TripError::BadSpeed(v_min));
    }
    if t_j < t_i {
        return Err(TripError::NegativeElapsed { t_i, t_j });
    }
    Ok(length / v_min > t_j - t_i)
}

/// Whether a vehicle discharged in `from` can plausibly reach the next
/// node within phase `to`.
pub fn phase_accessibility(from: &GreenPhase, to: &GreenPhase, length: f64, v_min: f64) -> bool {
    length / v_min > to.start - from.end
}

fn edge_ok(from: &GreenPhase, to: &GreenPhase, length: f64, cfg: &TripConfig) -> bool {
    phase_accessibility(from, to, length, cfg.v_min)
        && cfg.v_max.is_none_or(|v| to.end - from.start >= length / v - TIME_RESOLUTION)
}

fn movement(net: &RoadNetwork, prev: &NodeId, node: &NodeId, next: Option<&NodeId>) -> Turn {
    next.and_then(|n| net.turn_between(prev, node, n))
        .unwrap_or(Turn::Straight)
}

fn segment_lengths(net: &RoadNetwork, path: &[NodeId]) -> Result<Vec<f64>, TripError> {
    path.windows(2)
        .map(|w| {
            net.segment_between(&w[0], &w[1])
                .map(|s| s.length_m)
                .ok_or_else(|| TripError::InvalidPath(path.to_vec()))
        })
        .collect()
}

/// Context for the endpoint phases of a leg: the node before the first
/// node and the node after the last, when known.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LegContext {
    pub before: Option<NodeId>,
    pub after: Option<NodeId>,
}

fn endpoint_layer(
    net: &RoadNetwork,
    plans: &SignalPlans,
    cfg: &TripConfig,
    node: &NodeId,
    approach: Option<&NodeId>,
    next: Option<&NodeId>,
    t: f64,
) -> Vec<GreenPhase> {
    if cfg.endpoints == EndpointMode::SignalPhase {
        if let Some(a) = approach {
            let turn = movement(net, a, node, next);
            let key = MovementKey::new(node.clone(), a.clone(), turn);
            let hits: Vec<GreenPhase> = plans
                .overlapping(&key, t, t)
                .into_iter()
                .map(|w| GreenPhase {
                    node: node.clone(),
                    approach: Some(a.clone()),
                    turn,
                    start: w.start,
                    end: w.end,
                })
                .collect();
            if !hits.is_empty() {
                return hits;
            }
        }
    }
    vec![GreenPhase::instant(node.clone(), t)]
}

/// Builds the trimmed passing graph for a leg between two observed passings.
pub fn infer_passing_times(
    net: &RoadNetwork,
    path: &[NodeId],
    t_i: f64,
    t_j: f64,
    plans: &SignalPlans,
    ctx: &LegContext,
    cfg: &TripConfig,
) -> Result<PassingGraph, TripError> {
    if path.len() < 2 {
        return Err(TripError::InvalidPath(path.to_vec()));
    }
    if t_j < t_i {
        return Err(TripError::NegativeElapsed { t_i, t_j });
    }
    let lengths = segment_lengths(net, path)?;
    let n = path.len();
    let first = endpoint_layer(net, plans, cfg, &path[0], ctx.before.as_ref(), Some(&path[1]), t_i);
    let last = endpoint_layer(
        net,
        plans,
        cfg,
        &path[n - 1],
        Some(&path[n - 2]),
        ctx.after.as_ref(),
        t_j,
    );
    let mut graph = PassingGraph {
        path: path.to_vec(),
        layers: Vec::with_capacity(n),
        edges: Vec::with_capacity(n - 1),
        proved: true,
    };

    if n == 2 {
        if accessibility(lengths[0], t_i, t_j, cfg.v_min)? {
            graph.layers = vec![first, last];
            let edges = (0..graph.layers[0].len())
                .flat_map(|a| (0..graph.layers[1].len()).map(move |b| (a, b)))
                .collect();
            graph.edges = vec![edges];
        } else {
            graph.layers = vec![Vec::new(), Vec::new()];
            graph.edges = vec![BTreeSet::new()];
        }
        return Ok(graph);
    }

    let mut candidates: Vec<Vec<GreenPhase>> = Vec::with_capacity(n);
    candidates.push(first);
    for k in 1..n - 1 {
        let turn = movement(net, &path[k - 1], &path[k], Some(&path[k + 1]));
        let key = MovementKey::new(path[k].clone(), path[k - 1].clone(), turn);
        let windows = plans.windows(&key).ok_or_else(|| TripError::MissingPlan {
            node: path[k].clone(),
            approach: path[k - 1].clone(),
            turn,
        })?;
        candidates.push(
            windows
                .iter()
                .map(|w| GreenPhase {
                    node: path[k].clone(),
                    approach: Some(path[k - 1].clone()),
                    turn,
                    start: w.start,
                    end: w.end,
                })
                .collect(),
        );
    }
    candidates.push(last);

    // Necessary conditions for lying on any chain, applied layer by layer
    // so whole-day plans stay cheap: a phase must end late enough to reach
    // the earliest start downstream, and start early enough to be reached
    // from the latest end upstream.
    for k in (1..n - 1).rev() {
        let floor = candidates[k + 1]
            .iter()
            .map(|p| p.start)
            .fold(f64::INFINITY, f64::min)
            - lengths[k] / cfg.v_min;
        candidates[k].retain(|p| p.end > floor);
    }
    for k in 1..n - 1 {
        let ceiling = candidates[k - 1]
            .iter()
            .map(|p| p.end)
            .fold(f64::NEG_INFINITY, f64::max)
            + lengths[k - 1] / cfg.v_min;
        candidates[k].retain(|p| p.start < ceiling);
    }

    // Forward sweep.
    let mut reached: Vec<Vec<bool>> = vec![vec![true; candidates[0].len()]];
    let mut edges: Vec<BTreeSet<(usize, usize)>> = Vec::with_capacity(n - 1);
    for k in 1..n {
        let mut hit = vec![false; candidates[k].len()];
        let mut es = BTreeSet::new();
        for (a, pa) in candidates[k - 1].iter().enumerate() {
            if !reached[k - 1][a] {
                continue;
            }
            for (b, pb) in candidates[k].iter().enumerate() {
                if edge_ok(pa, pb, lengths[k - 1], cfg) {
                    hit[b] = true;
                    es.insert((a, b));
                }
            }
        }
        reached.push(hit);
        edges.push(es);
    }

    // Backward trim from phases containing the destination time.
    let mut proved: Vec<Vec<bool>> = reached.clone();
    for (b, p) in candidates[n - 1].iter().enumerate() {
        proved[n - 1][b] = reached[n - 1][b] && p.contains(t_j);
    }
    for k in (0..n - 1).rev() {
        let keep: BTreeSet<(usize, usize)> = edges[k]
            .iter()
            .copied()
            .filter(|&(_, b)| proved[k + 1][b])
            .collect();
        for (a, flag) in proved[k].iter_mut().enumerate() {
            *flag = *flag && keep.iter().any(|&(x, _)| x == a);
        }
        edges[k] = keep;
    }

    // Reindex to retained phases only.
    let mut remap: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(n);
    for (k, layer) in candidates.into_iter().enumerate() {
        let mut m = BTreeMap::new();
        let mut kept = Vec::new();
        for (i, p) in layer.into_iter().enumerate() {
            if proved[k][i] {
                m.insert(i, kept.len());
                kept.push(p);
            }
        }
        remap.push(m);
        graph.layers.push(kept);
    }
    for (k, es) in edges.into_iter().enumerate() {
        graph.edges.push(
            es.into_iter()
                .filter_map(|(a, b)| Some((*remap[k].get(&a)?, *remap[k + 1].get(&b)?)))
                .collect(),
        );
    }
    Ok(graph)
}

/// Point passing times along the graph's path. `chainage` gives each
/// node's distance from the first.
pub fn resolve_passing_schedule(
    graph: &PassingGraph,
    t_i: f64,
    t_j: f64,
    chainage: &[f64],
) -> Result<Vec<(f64, GreenPhase)>, TripError> {
    if graph.is_empty() || graph.layers.iter().any(Vec::is_empty) {
        return Err(TripError::EmptyGraph);
    }
    let n = graph.layers.len();
    let by_start = |layer: &[GreenPhase], idx: &mut dyn Iterator<Item = usize>| {
        idx.min_by(|&a, &b| {
            layer[a]
                .start
                .total_cmp(&layer[b].start)
                .then(layer[a].end.total_cmp(&layer[b].end))
        })
    };
    let mut chosen = vec![by_start(&graph.layers[0], &mut (0..graph.layers[0].len())).unwrap()];
    for k in 1..n {
        let prev = chosen[k - 1];
        let mut next = graph.edges[k - 1]
            .iter()
            .filter(|&&(a, _)| a == prev)
            .map(|&(_, b)| b);
        let pick = by_start(&graph.layers[k], &mut next).ok_or(TripError::EmptyGraph)?;
        chosen.push(pick);
    }
    let total = chainage[n - 1] - chainage[0];
    let mut out: Vec<(f64, GreenPhase)> = Vec::with_capacity(n);
    for k in 0..n {
        let phase = graph.layers[k][chosen[k]].clone();
        let t = if k == 0 {
            t_i
        } else if k == n - 1 {
            t_j
        } else {
            let share = if total > 0.0 {
                (chainage[k] - chainage[0]) / total
            } else {
                0.0
            };
            let mut t = (t_i + (t_j - t_i) * share).clamp(phase.start, phase.end);
            let floor = out[k - 1].0;
            if t <= floor {
                t = next_after(floor).max(phase.start);
            }
            t
        };
        if k > 0 && t <= out[k - 1].0 {
            return Err(TripError::NonMonotone);
        }
        if k > 0 && k < n - 1 && t > phase.end {
            return Err(TripError::NonMonotone);
        }
        out.push((t, phase));
    }
    Ok(out)
}

fn next_after(t: f64) -> f64 {
    t + 1e-3
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassingSource {
    Observed,
    Inferred,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passing {
    pub node: NodeId,
    pub time: f64,
    /// Candidate window for inferred passings.
    pub window: Option<GreenWindow>,
    pub source: PassingSource,
    /// Chainage from the first node of the trip.
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub vehicle_id: VehicleId,
    pub vehicle_type: VehicleType,
    pub passings: Vec<Passing>,
    /// Split from the previous trip because its records could not be joined.
    pub disconnected_before: bool,
    /// Split from the next trip because its records could not be joined.
    pub disconnected_after: bool,
    /// Some leg kept more than one complete phase chain.
    pub multi_chain: bool,
}

impl Trip {
    pub fn nodes(&self) -> Vec<NodeId> {
        self.passings.iter().map(|p| p.node.clone()).collect()
    }

    pub fn inferred_count(&self) -> usize {
        self.passings
            .iter()
            .filter(|p| p.source == PassingSource::Inferred)
            .count()
    }

    pub fn start_time(&self) -> f64 {
        self.passings.first().map_or(f64::NAN, |p| p.time)
    }

    pub fn end_time(&self) -> f64 {
        self.passings.last().map_or(f64::NAN, |p| p.time)
    }

    pub fn is_disconnected(&self) -> bool {
        self.disconnected_before || self.disconnected_after
    }
}

/// Consecutive observed records of one trip and the node path between each pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TripStub {
    pub records: Vec<LprRecord>,
    pub legs: Vec<Vec<NodeId>>,
    pub disconnected_before: bool,
    pub disconnected_after: bool,
}

/// Diagnostic for a pair of records that could not be joined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disconnection {
    pub vehicle_id: VehicleId,
    pub from: NodeId,
    pub to: NodeId,
    pub t_from: f64,
    pub t_to: f64,
    pub reason: DisconnectReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisconnectReason {
    NoPath,
    AmbiguousPath,
    NoPhaseChain,
}

/// Unpacks consecutive-pair rows into per-node passing records at each
/// road's downstream node, sorted by vehicle then time, duplicates removed.
pub fn records_from_lpr(rows: &[LprRow]) -> Vec<LprRecord> {
    let mut out: Vec<LprRecord> = rows
        .iter()
        .flat_map(|r| {
            [(&r.froad, r.ftime), (&r.troad, r.ttime)].map(|(road, t)| LprRecord {
                vehicle_id: VehicleId(r.vid.clone()),
                node: road.to.clone(),
                t: t.secs(),
                x: 0.0,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.vehicle_id
            .cmp(&b.vehicle_id)
            .then(a.t.total_cmp(&b.t))
            .then(a.node.cmp(&b.node))
    });
    out.dedup_by(|b, a| a.vehicle_id == b.vehicle_id && a.node == b.node && a.t == b.t);
    out
}

fn leg_path(
    net: &RoadNetwork,
    a: &NodeId,
    b: &NodeId,
    cfg: &TripConfig,
) -> Result<Vec<NodeId>, DisconnectReason> {
    if a == b {
        return Err(DisconnectReason::NoPath);
    }
    let paths = net
        .enumerate_paths(a, b, cfg.max_hops)
        .map_err(|_| DisconnectReason::NoPath)?;
    match paths.len() {
        1 => Ok(paths.into_iter().next().unwrap()),
        0 => {
            let any = net
                .enumerate_paths_any(a, b, cfg.recovery_hops)
                .map_err(|_| DisconnectReason::NoPath)?;
            match any.len() {
                1 => Ok(any.into_iter().next().unwrap()),
                0 => Err(DisconnectReason::NoPath),
                _ => Err(DisconnectReason::AmbiguousPath),
            }
        }
        _ => Err(DisconnectReason::AmbiguousPath),
    }
}

/// Splits one vehicle's time-sorted records into trip stubs.
pub fn split_into_trips(
    records: &[LprRecord],
    net: &RoadNetwork,
    cfg: &TripConfig,
) -> Result<(Vec<TripStub>, Vec<Disconnection>), TripError> {
    let mut stubs = Vec::new();
    let mut cuts = Vec::new();
    let Some(first) = records.first() else {
        return Ok((stubs, cuts));
    };
    let mut cur = TripStub {
        records: vec![first.clone()],
        legs: Vec::new(),
        disconnected_before: false,
        disconnected_after: false,
    };
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t < a.t {
            return Err(TripError::NegativeElapsed { t_i: a.t, t_j: b.t });
        }
        match leg_path(net, &a.node, &b.node, cfg) {
            Ok(path) => {
                let len = net
                    .path_length(&path)
                    .ok_or_else(|| TripError::InvalidPath(path.clone()))?;
                if accessibility(len, a.t, b.t, cfg.v_min)? {
                    cur.records.push(b.clone());
                    cur.legs.push(path);
                    continue;
                }
                stubs.push(std::mem::replace(
                    &mut cur,
                    TripStub {
                        records: vec![b.clone()],
                        legs: Vec::new(),
                        disconnected_before: false,
                        disconnected_after: false,
                    },
                ));
            }
            Err(reason) => {
                cuts.push(Disconnection {
                    vehicle_id: a.vehicle_id.clone(),
                    from: a.node.clone(),
                    to: b.node.clone(),
                    t_from: a.t,
                    t_to: b.t,
                    reason,
                });
                cur.disconnected_after = true;
                stubs.push(std::mem::replace(
                    &mut cur,
                    TripStub {
                        records: vec![b.clone()],
                        legs: Vec::new(),
                        disconnected_before: true,
                        disconnected_after: false,
                    },
                ));
            }
        }
    }
    stubs.push(cur);
    Ok((stubs, cuts))
}

fn assign_chainage(net: &RoadNetwork, trip: &mut Trip) {
    let mut x = 0.0;
    for k in 0..trip.passings.len() {
        if k > 0 {
            x += net
                .segment_between(&trip.passings[k - 1].node, &trip.passings[k].node)
                .map_or(0.0, |s| s.length_m);
        }
        trip.passings[k].x = x;
    }
}

/// Resolves every leg of a stub, splitting further where no phase chain exists.
pub fn complete_trip(
    stub: &TripStub,
    net: &RoadNetwork,
    plans: &SignalPlans,
    cfg: &TripConfig,
    vehicle_type: VehicleType,
) -> Result<(Vec<Trip>, Vec<Disconnection>), TripError> {
    let vid = stub.records[0].vehicle_id.clone();
    let observed = |r: &LprRecord| Passing {
        node: r.node.clone(),
        time: r.t,
        window: None,
        source: PassingSource::Observed,
        x: 0.0,
    };
    let fresh = |before: bool, r: &LprRecord| Trip {
        vehicle_id: vid.clone(),
        vehicle_type,
        passings: vec![observed(r)],
        disconnected_before: before,
        disconnected_after: false,
        multi_chain: false,
    };
    let mut trips = Vec::new();
    let mut cuts = Vec::new();
    let mut cur = fresh(stub.disconnected_before, &stub.records[0]);
    for (m, path) in stub.legs.iter().enumerate() {
        let (a, b) = (&stub.records[m], &stub.records[m + 1]);
        if path.len() == 2 {
            cur.passings.push(observed(b));
            continue;
        }
        let ctx = LegContext {
            before: cur
                .passings
                .len()
                .checked_sub(2)
                .map(|i| cur.passings[i].node.clone()),
            after: stub.legs.get(m + 1).map(|p| p[1].clone()),
        };
        let graph = infer_passing_times(net, path, a.t, b.t, plans, &ctx, cfg)?;
        if graph.layers.iter().any(Vec::is_empty) {
            cuts.push(Disconnection {
                vehicle_id: vid.clone(),
                from: a.node.clone(),
                to: b.node.clone(),
                t_from: a.t,
                t_to: b.t,
                reason: DisconnectReason::NoPhaseChain,
            });
            cur.disconnected_after = true;
            let done = std::mem::replace(&mut cur, fresh(true, b));
            trips.push(done);
            continue;
        }
        if graph.chain_count() > 1 {
            cur.multi_chain = true;
        }
        let mut chainage = vec![0.0];
        for w in path.windows(2) {
            let l = net.segment_between(&w[0], &w[1]).map_or(0.0, |s| s.length_m);
            chainage.push(chainage.last().unwrap() + l);
        }
        let schedule = resolve_passing_schedule(&graph, a.t, b.t, &chainage)?;
        for (k, (t, phase)) in schedule.into_iter().enumerate().skip(1) {
            if k == path.len() - 1 {
                cur.passings.push(observed(b));
            } else {
                cur.passings.push(Passing {
                    node: path[k].clone(),
                    time: t,
                    window: Some(phase.window()),
                    source: PassingSource::Inferred,
                    x: 0.0,
                });
            }
        }
    }
    cur.disconnected_after = cur.disconnected_after || stub.disconnected_after;
    trips.push(cur);
    for t in &mut trips {
        assign_chainage(net, t);
    }
    Ok((trips, cuts))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TripSet {
    pub trips: Vec<Trip>,
    pub disconnections: Vec<Disconnection>,
}

/// Builds trips for all vehicles. Output is sorted by vehicle, then start time.
pub fn build_trips(
    records: &[LprRecord],
    net: &RoadNetwork,
    plans: &SignalPlans,
    cfg: &TripConfig,
    vehicle_types: &BTreeMap<VehicleId, VehicleType>,
) -> Result<TripSet, TripError> {
    let mut by_vehicle: BTreeMap<&VehicleId, Vec<LprRecord>> = BTreeMap::new();
    for r in records {
        by_vehicle.entry(&r.vehicle_id).or_default().push(r.clone());
    }
    let per_vehicle: Vec<Result<TripSet, TripError>> = by_vehicle
        .into_par_iter()
        .map(|(vid, mut recs)| {
            recs.sort_by(|a, b| a.t.total_cmp(&b.t));
            let vtype = vehicle_types.get(vid).copied().unwrap_or_default();
            let (stubs, mut cuts) = split_into_trips(&recs, net, cfg)?;
            let mut trips = Vec::new();
            for stub in &stubs {
                let (t, c) = complete_trip(stub, net, plans, cfg, vtype)?;
                trips.extend(t);
                cuts.extend(c);
            }
            Ok(TripSet {
                trips,
                disconnections: cuts,
            })
        })
        .collect();
    let mut out = TripSet::default();
    for r in per_vehicle {
        let r = r?;
        out.trips.extend(r.trips);
        out.disconnections.extend(r.disconnections);
    }
    out.trips.sort_by(|a, b| {
        a.vehicle_id
            .cmp(&b.vehicle_id)
            .then(a.start_time().total_cmp(&b.start_time()))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(lengths: &[f64], avi: &[bool]) -> RoadNetwork {
        let mut net = RoadNetwork::new();
        for (i, a) in avi.iter().enumerate() {
            net.add_node(format!("N{i}").as_str(), *a).unwrap();
        }
        for (i, l) in lengths.iter().enumerate() {
            net.add_segment(format!("N{i}").as_str(), format!("N{}", i + 1).as_str(), *l, 1)
                .unwrap();
        }
        net
    }

    fn n(i: usize) -> NodeId {
        NodeId::new(format!("N{i}"))
    }

    fn rec(node: usize, t: f64) -> LprRecord {
        LprRecord {
            vehicle_id: VehicleId::from("v"),
            node: n(node),
            t,
            x: 0.0,
        }
    }

    #[test]
    fn accessibility_examples() {
        assert!(accessibility(1000.0, 0.0, 300.0, 1.389).unwrap());
        assert!(!accessibility(1000.0, 0.0, 800.0, 1.389).unwrap());
        assert!(!accessibility(1000.0, 0.0, 1000.0 / 1.389, 1.389).unwrap());
        assert!(accessibility(1000.0, 10.0, 5.0, 1.389).is_err());
    }

    #[test]
    fn phase_accessibility_examples() {
        let p = |s: f64, e: f64| GreenPhase::instant(n(0), 0.0).with(s, e);
        assert!(phase_accessibility(&p(0.0, 30.0), &p(20.0, 50.0), 100.0, 1.389));
        assert!(!phase_accessibility(&p(0.0, 30.0), &p(7230.0, 7260.0), 500.0, 1.389));
        assert!(!phase_accessibility(&p(0.0, 30.0), &p(130.0, 160.0), 100.0, 1.0));
    }

    impl GreenPhase {
        fn with(mut self, s: f64, e: f64) -> Self {
            self.start = s;
            self.end = e;
            self
        }
    }

    #[test]
    fn split_examples() {
        let net = corridor(&[1000.0], &[true, true]);
        let cfg = TripConfig::default();
        let (one, _) = split_into_trips(&[rec(0, 0.0)], &net, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        let (same, _) = split_into_trips(&[rec(0, 0.0), rec(1, 200.0)], &net, &cfg).unwrap();
        assert_eq!(same.len(), 1);
        let (two, cuts) = split_into_trips(&[rec(0, 0.0), rec(1, 7200.0)], &net, &cfg).unwrap();
        assert_eq!(two.len(), 2);
        assert!(cuts.is_empty());
        assert!(!two[0].disconnected_after);
    }

    #[test]
    fn no_path_flags_both_halves() {
        let mut net = corridor(&[100.0], &[true, true]);
        net.add_node("X", true).unwrap();
        let x = LprRecord {
            node: NodeId::new("X"),
            ..rec(0, 50.0)
        };
        let (stubs, cuts) =
            split_into_trips(&[rec(0, 0.0), x], &net, &TripConfig::default()).unwrap();
        assert_eq!(stubs.len(), 2);
        assert!(stubs[0].disconnected_after && stubs[1].disconnected_before);
        assert_eq!(cuts[0].reason, DisconnectReason::NoPath);
    }

    fn plans_for(node: usize, approach: usize, windows: &[(f64, f64)]) -> SignalPlans {
        let mut p = SignalPlans::new();
        for &(s, e) in windows {
            p.push(
                MovementKey::new(n(node), n(approach), Turn::Straight),
                GreenWindow::new(s, e),
            );
        }
        p
    }

    #[test]
    fn direct_segment_single_edge() {
        let net = corridor(&[300.0], &[true, true]);
        let g = infer_passing_times(
            &net,
            &[n(0), n(1)],
            0.0,
            40.0,
            &SignalPlans::new(),
            &LegContext::default(),
            &TripConfig::default(),
        )
        .unwrap();
        assert_eq!(g.layers.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1]);
        assert_eq!(g.edges[0].len(), 1);
    }

    #[test]
    fn single_surviving_phase() {
        let net = corridor(&[300.0, 300.0], &[true, false, true]);
        let plans = plans_for(1, 0, &[(0.0, 10.0), (25.0, 35.0), (90.0, 120.0)]);
        let cfg = TripConfig {
            v_min: 10.0,
            ..TripConfig::default()
        };
        // Forward reach from t=0 rules out the last phase; reaching the end
        // at t=60 rules out the first.
        let g = infer_passing_times(
            &net,
            &[n(0), n(1), n(2)],
            0.0,
            60.0,
            &plans,
            &LegContext::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(g.layer_windows()[1], vec![(25.0, 35.0)]);
        assert_eq!(g.chain_count(), 1);
    }

    #[test]
    fn no_chain_is_empty_graph() {
        let net = corridor(&[300.0, 300.0], &[true, false, true]);
        let plans = plans_for(1, 0, &[(500.0, 530.0)]);
        let g = infer_passing_times(
            &net,
            &[n(0), n(1), n(2)],
            0.0,
            100.0,
            &plans,
            &LegContext::default(),
            &TripConfig::default(),
        )
        .unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn missing_plan_is_config_error() {
        let net = corridor(&[300.0, 300.0], &[true, false, true]);
        let err = infer_passing_times(
            &net,
            &[n(0), n(1), n(2)],
            0.0,
            100.0,
            &SignalPlans::new(),
            &LegContext::default(),
            &TripConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TripError::MissingPlan { .. }));
    }

    #[test]
    fn earliest_chain_and_clipping() {
        let net = corridor(&[300.0, 300.0], &[true, false, true]);
        let plans = plans_for(1, 0, &[(60.0, 70.0), (80.0, 90.0)]);
        let g = infer_passing_times(
            &net,
            &[n(0), n(1), n(2)],
            0.0,
            100.0,
            &plans,
            &LegContext::default(),
            &TripConfig::default(),
        )
        .unwrap();
        assert_eq!(g.chain_count(), 2);
        let s = resolve_passing_schedule(&g, 0.0, 100.0, &[0.0, 300.0, 600.0]).unwrap();
        // Interpolation gives 50, clipped up to the earlier phase's start.
        assert_eq!(s[1].0, 60.0);
        assert_eq!((s[1].1.start, s[1].1.end), (60.0, 70.0));
        assert!(resolve_passing_schedule(&PassingGraph::default(), 0.0, 1.0, &[]).is_err());
    }

    #[test]
    fn records_unpack_downstream_nodes() {
        let rows = vec![LprRow {
            vid: "v".into(),
            froad: "A_B".parse().unwrap(),
            troad: "B_C".parse().unwrap(),
            ftime: crate::Timestamp(10.0),
            ttime: crate::Timestamp(40.0),
        }];
        let r = records_from_lpr(&rows);
        assert_eq!(r.iter().map(|r| r.node.as_str()).collect::<Vec<_>>(), ["B", "C"]);
    }

    #[test]
    fn missed_camera_is_inferred() {
        let net = corridor(&[300.0, 300.0], &[true, true, true]);
        let plans = plans_for(1, 0, &[(10.0, 40.0), (100.0, 130.0)]);
        let cfg = TripConfig::default();
        let (stubs, cuts) = split_into_trips(&[rec(0, 0.0), rec(2, 60.0)], &net, &cfg).unwrap();
        assert!(cuts.is_empty());
        let (trips, _) =
            complete_trip(&stubs[0], &net, &plans, &cfg, VehicleType::Regular).unwrap();
        assert_eq!(trips.len(), 1);
        let t = &trips[0];
        assert_eq!(t.inferred_count(), 1);
        assert_eq!(t.passings[1].window, Some(GreenWindow::new(10.0, 40.0)));
        assert_eq!(t.passings[2].x, 600.0);
    }
}
