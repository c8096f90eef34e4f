#![allow(dead_code)]

pub mod rows;

use std::collections::BTreeSet;

use holo_core::netmodel::RoadNetwork;
use holo_core::signal::{GreenWindow, MovementKey, SignalPlans};
use holo_core::types::TIME_RESOLUTION;
use holo_core::{NodeId, Turn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Window = (f64, f64);

/// Retained phases per layer and edges per gap, as ordered sets of bit patterns.
#[derive(Debug, PartialEq, Eq, Default)]
pub struct ChainSets {
    pub layers: Vec<BTreeSet<(u64, u64)>>,
    pub edges: Vec<BTreeSet<((u64, u64), (u64, u64))>>,
}

fn bits(w: Window) -> (u64, u64) {
    (w.0.to_bits(), w.1.to_bits())
}

pub fn sets_from_graph(layers: &[Vec<Window>], edges: &[Vec<(Window, Window)>]) -> ChainSets {
    ChainSets {
        layers: layers
            .iter()
            .map(|l| l.iter().map(|w| bits(*w)).collect())
            .collect(),
        edges: edges
            .iter()
            .map(|es| es.iter().map(|(a, b)| (bits(*a), bits(*b))).collect())
            .collect(),
    }
}

/// Enumerates every phase sequence, one candidate per layer, and keeps the
/// union of those where each hop is feasible and the last phase holds `t_j`.
pub fn brute_force_chains(
    candidates: &[Vec<Window>],
    lengths: &[f64],
    t_j: f64,
    v_min: f64,
    v_max: Option<f64>,
) -> ChainSets {
    let n = candidates.len();
    let mut out = ChainSets {
        layers: vec![BTreeSet::new(); n],
        edges: vec![BTreeSet::new(); n - 1],
    };
    let hop = |a: Window, b: Window, l: f64| {
        let reachable = b.0 - a.1 < l / v_min;
        let causal = match v_max {
            Some(v) => b.1 - a.0 >= l / v - TIME_RESOLUTION,
            None => true,
        };
        reachable && causal
    };
    let mut idx = vec![0usize; n];
    if candidates.iter().any(Vec::is_empty) {
        return out;
    }
    loop {
        let seq: Vec<Window> = (0..n).map(|k| candidates[k][idx[k]]).collect();
        let last = seq[n - 1];
        let ok = last.0 <= t_j
            && t_j <= last.1
            && (0..n - 1).all(|k| hop(seq[k], seq[k + 1], lengths[k]));
        if ok {
            for k in 0..n {
                out.layers[k].insert(bits(seq[k]));
            }
            for k in 0..n - 1 {
                out.edges[k].insert((bits(seq[k]), bits(seq[k + 1])));
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < candidates[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

pub fn node(i: usize) -> NodeId {
    NodeId::new(format!("N{i}"))
}

/// A straight corridor `N0 -> N1 -> ...` with the given AVI flags.
pub fn corridor(lengths: &[f64], avi: &[bool]) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    for (i, a) in avi.iter().enumerate() {
        net.add_node(node(i), *a).unwrap();
    }
    for (i, l) in lengths.iter().enumerate() {
        net.add_segment(node(i), node(i + 1), *l, 1).unwrap();
    }
    net
}

/// A random passing-inference case on a corridor of `nodes` nodes.
pub struct PhaseCase {
    pub net: RoadNetwork,
    pub path: Vec<NodeId>,
    pub lengths: Vec<f64>,
    pub plans: SignalPlans,
    /// Plan windows of each interior node, by layer.
    pub windows: Vec<Vec<Window>>,
    pub t_i: f64,
    pub t_j: f64,
    pub v_min: f64,
}

pub fn random_phase_case(rng: &mut ChaCha8Rng, nodes: usize, max_phases: usize) -> PhaseCase {
    let lengths: Vec<f64> = (0..nodes - 1)
        .map(|_| f64::from(rng.random_range(50u32..600)))
        .collect();
    let mut avi = vec![false; nodes];
    avi[0] = true;
    avi[nodes - 1] = true;
    let net = corridor(&lengths, &avi);
    let path: Vec<NodeId> = (0..nodes).map(node).collect();
    let mut plans = SignalPlans::new();
    let mut windows = vec![Vec::new(); nodes];
    for k in 1..nodes - 1 {
        let count = rng.random_range(1..=max_phases);
        let mut t = f64::from(rng.random_range(0u32..60)) - 60.0;
        for _ in 0..count {
            let start = t + f64::from(rng.random_range(1u32..60));
            let end = start + f64::from(rng.random_range(5u32..60));
            t = end;
            windows[k].push((start, end));
            plans.push(
                MovementKey::new(node(k), node(k - 1), Turn::Straight),
                GreenWindow::new(start, end),
            );
        }
    }
    let t_i = f64::from(rng.random_range(0u32..40));
    let t_j = t_i + f64::from(rng.random_range(0u32..500)) + 0.5;
    let v_min = [1.389, 3.0, 6.0][rng.random_range(0..3)];
    PhaseCase {
        net,
        path,
        lengths,
        plans,
        windows,
        t_i,
        t_j,
        v_min,
    }
}

/// A random directed graph with `n` nodes `G0..`, adjacency as a bitmask per node.
pub struct RandomGraph {
    pub net: RoadNetwork,
    pub adj: Vec<u32>,
    pub avi: Vec<bool>,
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, edge_p: f64, avi_p: f64) -> RandomGraph {
    let mut net = RoadNetwork::new();
    let avi: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < avi_p).collect();
    for (i, a) in avi.iter().enumerate() {
        net.add_node(format!("G{i}"), *a).unwrap();
    }
    let mut adj = vec![0u32; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < edge_p {
                adj[i] |= 1 << j;
                net.add_segment(format!("G{i}"), format!("G{j}"), 100.0, 1)
                    .unwrap();
            }
        }
    }
    RandomGraph { net, adj, avi }
}

/// Counts simple paths `from -> to` with non-AVI interiors and at most
/// `max_hops` segments by extending visited-set bitmasks.
pub fn count_paths_exhaustive(g: &RandomGraph, from: usize, to: usize, max_hops: usize) -> usize {
    let mut frontier = vec![(from, 1u32 << from)];
    let mut count = 0;
    for _ in 0..max_hops {
        let mut next = Vec::new();
        for (at, seen) in frontier {
            for j in 0..g.adj.len() {
                if g.adj[at] & (1 << j) == 0 || seen & (1 << j) != 0 {
                    continue;
                }
                if j == to {
                    count += 1;
                } else if !g.avi[j] {
                    next.push((j, seen | (1 << j)));
                }
            }
        }
        frontier = next;
    }
    count
}
