//! Signal timing: green windows per movement at a node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{NodeId, Turn};

/// A movement controlled at `node`, entered from the segment `approach -> node`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MovementKey {
    pub node: NodeId,
    pub approach: NodeId,
    pub turn: Turn,
}

impl MovementKey {
    pub fn new(node: impl Into<NodeId>, approach: impl Into<NodeId>, turn: Turn) -> Self {
        MovementKey {
            node: node.into(),
            approach: approach.into(),
            turn,
        }
    }
}

/// Closed interval `[start, end]` in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenWindow {
    pub start: f64,
    pub end: f64,
}

impl GreenWindow {
    pub fn new(start: f64, end: f64) -> Self {
        GreenWindow { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalPlans {
    plans: BTreeMap<MovementKey, Vec<GreenWindow>>,
}

impl SignalPlans {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a window, keeping the movement's windows sorted by start.
    pub fn push(&mut self, key: MovementKey, window: GreenWindow) {
        let list = self.plans.entry(key).or_default();
        let at = list.partition_point(|w| w.start <= window.start);
        list.insert(at, window);
    }

    /// Adds windows `[offset + k*cycle, offset + k*cycle + green]` covering `[from, to]`.
    pub fn add_fixed_time(
        &mut self,
        key: MovementKey,
        offset: f64,
        cycle: f64,
        green: f64,
        from: f64,
        to: f64,
    ) {
        assert!(cycle > 0.0 && green > 0.0 && green < cycle);
        let mut k = ((from - offset) / cycle).floor() - 1.0;
        loop {
            let start = offset + k * cycle;
            if start > to {
                break;
            }
            if start + green >= from {
                self.push(key.clone(), GreenWindow::new(start, start + green));
            }
            k += 1.0;
        }
    }

    pub fn windows(&self, key: &MovementKey) -> Option<&[GreenWindow]> {
        self.plans.get(key).map(Vec::as_slice)
    }

    pub fn contains_key(&self, key: &MovementKey) -> bool {
        self.plans.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MovementKey, &[GreenWindow])> {
        self.plans.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    /// Windows of `key` intersecting `[from, to]`.
    pub fn overlapping(&self, key: &MovementKey, from: f64, to: f64) -> Vec<GreenWindow> {
        self.plans
            .get(key)
            .map(|ws| {
                ws.iter()
                    .filter(|w| w.end >= from && w.start <= to)
                    .copied()
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Index of the first window of `key` whose end is at or after `t`.
    pub fn first_ending_after(&self, key: &MovementKey, t: f64) -> Option<usize> {
        let ws = self.plans.get(key)?;
        let i = ws.partition_point(|w| w.end < t);
        (i < ws.len()).then_some(i)
    }
}
