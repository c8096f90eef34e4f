//! Kinematic-wave simulator for signalized corridors: ground-truth
//! trajectories, node passings and plate-recognition records.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ingest::LprRow;
use crate::netmodel::{NetError, RoadNetwork};
use crate::reconstruct::{ReconError, StreamParams, Trajectory};
use crate::signal::{GreenWindow, MovementKey, SignalPlans};
use crate::types::{NodeId, SegmentKey, Timestamp, Turn, VehicleId, VehicleType};

/// 2020-09-15 07:00:00 UTC.
pub const DEFAULT_START: f64 = 1_600_153_200.0;

/// Upstream node name used as the origin road of a vehicle's first passing.
pub const ORIGIN: &str = "ORIG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("queue on {segment} exceeds its length at t={t}")]
    Spillback { segment: SegmentKey, t: f64 },
    #[error("queue on {segment} does not clear within one green at t={t}")]
    Oversaturated { segment: SegmentKey, t: f64 },
    #[error(transparent)]
    Params(#[from] ReconError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Fixed-time control of the movements leaving a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedTime {
    pub offset: f64,
    pub cycle: f64,
    pub green: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorridorSegment {
    pub length: f64,
    pub lanes: u32,
    /// Control at the downstream node; `None` leaves it uncontrolled.
    pub signal: Option<FixedTime>,
    /// Share of vehicles turning right into a side exit at the downstream node.
    pub right_share: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub segments: Vec<CorridorSegment>,
    /// Length of each side exit.
    pub side_length: f64,
    /// Arrivals per second at the corridor entry.
    pub arrival_rate: f64,
    /// Seconds after `start` during which vehicles may arrive.
    pub horizon: f64,
    /// Optional cap on the number of generated vehicles.
    pub max_vehicles: Option<usize>,
    pub large_share: f64,
    pub params: StreamParams,
    pub recognition_miss_rate: f64,
    pub start: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Three signalized segments followed by an uncontrolled exit segment.
    /// Demand of `vehicles` spread over `cycles` cycles of 90 s with 50 s greens.
    pub fn test_corridor(vehicles: usize, cycles: usize, seed: u64) -> Self {
        let timing = |offset| {
            Some(FixedTime {
                offset,
                cycle: 90.0,
                green: 50.0,
            })
        };
        let seg = |length, signal| CorridorSegment {
            length,
            lanes: 1,
            signal,
            right_share: 0.0,
        };
        ScenarioConfig {
            segments: vec![
                seg(400.0, timing(0.0)),
                seg(300.0, timing(25.0)),
                seg(500.0, timing(55.0)),
                seg(200.0, None),
            ],
            side_length: 200.0,
            arrival_rate: vehicles as f64 / (cycles as f64 * 90.0),
            horizon: 4.0 * cycles as f64 * 90.0,
            max_vehicles: Some(vehicles),
            large_share: 0.1,
            params: StreamParams::new(0.36, 0.06, 0.19, 15.0),
            recognition_miss_rate: 0.0,
            start: DEFAULT_START,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        self.params.validate()?;
        if self.segments.is_empty() {
            return bad("corridor has no segments".into());
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive".into());
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate < self.params.q_m) {
            return bad(format!(
                "arrival rate {} must lie in [0, capacity {})",
                self.arrival_rate, self.params.q_m
            ));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length > 0.0) || s.lanes == 0 {
                return bad(format!("segment {i} needs positive length and lanes"));
            }
            if !(0.0..=1.0).contains(&s.right_share) {
                return bad(format!("segment {i} right share outside [0, 1]"));
            }
            if let Some(f) = s.signal {
                if !(f.cycle > 0.0 && f.green > 0.0 && f.green < f.cycle) {
                    return bad(format!("segment {i} needs 0 < green < cycle"));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.recognition_miss_rate)
            || !(0.0..=1.0).contains(&self.large_share)
        {
            return bad("shares must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn corridor_node(i: usize) -> NodeId {
        NodeId::new(format!("N{i}"))
    }

    pub fn side_node(i: usize) -> NodeId {
        NodeId::new(format!("S{i}"))
    }

    /// All nodes carry cameras. Coordinates are laid out eastward from a
    /// fixed origin at roughly 1e-5 degrees per meter.
    pub fn network(&self) -> Result<RoadNetwork, SimError> {
        let mut net = RoadNetwork::new();
        let (lon0, lat0) = (118.75, 30.95);
        let mut x = 0.0;
        net.add_node_at(Self::corridor_node(0), true, Some((lon0, lat0)))?;
        for (i, s) in self.segments.iter().enumerate() {
            x += s.length;
            let node = Self::corridor_node(i + 1);
            net.add_node_at(node.clone(), true, Some((lon0 + x * 1e-5, lat0)))?;
            net.add_segment(Self::corridor_node(i), node, s.length, s.lanes)?;
            if s.right_share > 0.0 {
                let side = Self::side_node(i + 1);
                net.add_node_at(side.clone(), true, Some((lon0 + x * 1e-5, lat0 - self.side_length * 1e-5)))?;
                net.add_segment(Self::corridor_node(i + 1), side, self.side_length, 1)?;
            }
        }
        for i in 0..self.segments.len() {
            let here = SegmentKey::new(Self::corridor_node(i), Self::corridor_node(i + 1));
            if i + 1 < self.segments.len() {
                let next = SegmentKey::new(Self::corridor_node(i + 1), Self::corridor_node(i + 2));
                net.add_turn(&here, Turn::Straight, &next)?;
            }
            if self.segments[i].right_share > 0.0 {
                let side = SegmentKey::new(Self::corridor_node(i + 1), Self::side_node(i + 1));
                net.add_turn(&here, Turn::Right, &side)?;
            }
        }
        Ok(net)
    }

    /// Green windows covering the demand horizon plus room for the last
    /// vehicles to clear.
    pub fn signal_plans(&self) -> SignalPlans {
        let mut plans = SignalPlans::new();
        let travel: f64 = self.segments.iter().map(|s| s.length).sum::<f64>() / self.params.v_min;
        let (from, to) = (self.start - 3600.0, self.start + self.horizon + travel + 3600.0);
        for (i, s) in self.segments.iter().enumerate() {
            let Some(f) = s.signal else { continue };
            let node = Self::corridor_node(i + 1);
            let approach = Self::corridor_node(i);
            let mut turns = Vec::new();
            if i + 1 < self.segments.len() {
                turns.push(Turn::Straight);
            }
            if s.right_share > 0.0 {
                turns.push(Turn::Right);
            }
            for t in turns {
                plans.add_fixed_time(
                    MovementKey::new(node.clone(), approach.clone(), t),
                    self.start + f.offset,
                    f.cycle,
                    f.green,
                    from,
                    to,
                );
            }
        }
        plans
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arrival {
    pub vehicle_id: VehicleId,
    pub vehicle_type: VehicleType,
    pub entry: f64,
    /// Corridor node index at which the vehicle turns off, if any.
    pub turn_off: Option<usize>,
}

/// Entry arrivals with exponential gaps above the capacity headway, so the
/// mean rate is the configured one and no two vehicles enter closer than
/// the stop line could discharge them.
pub fn generate_demand(cfg: &ScenarioConfig) -> Result<Vec<Arrival>, SimError> {
    cfg.validate()?;
    let mut out = Vec::new();
    if cfg.arrival_rate == 0.0 || cfg.max_vehicles == Some(0) {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let min_gap = cfg.params.headway();
    let mean_gap = 1.0 / cfg.arrival_rate;
    let extra = Exp::new(1.0 / (mean_gap - min_gap)).map_err(|e| SimError::Config(e.to_string()))?;
    let mut t = cfg.start + extra.sample(&mut rng);
    while t <= cfg.start + cfg.horizon {
        if cfg.max_vehicles.is_some_and(|m| out.len() >= m) {
            break;
        }
        let vehicle_type = if rng.random::<f64>() < cfg.large_share {
            VehicleType::Large
        } else {
            VehicleType::Regular
        };
        let mut turn_off = None;
        for (i, s) in cfg.segments.iter().enumerate() {
            if s.right_share > 0.0 && rng.random::<f64>() < s.right_share {
                turn_off = Some(i + 1);
                break;
            }
        }
        out.push(Arrival {
            vehicle_id: VehicleId(format!("V{:05}", out.len() + 1)),
            vehicle_type,
            entry: t,
            turn_off,
        });
        t += min_gap + extra.sample(&mut rng);
    }
    Ok(out)
}

/// Ground truth for one vehicle on one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct TruePassage {
    pub trajectory: Trajectory,
    /// Index of the green window (in the movement's plan) used to exit.
    pub cycle: Option<usize>,
    /// Position in the unbroken discharge chain starting at green onset.
    pub chain_index: Option<usize>,
    pub stopped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrueVehicle {
    pub vehicle_id: VehicleId,
    pub vehicle_type: VehicleType,
    /// `(node, time, road entering the node)`.
    pub passings: Vec<(NodeId, f64, SegmentKey)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub network: RoadNetwork,
    pub plans: SignalPlans,
    pub vehicles: Vec<TrueVehicle>,
    pub passages: Vec<TruePassage>,
}

struct StreamState {
    last_exit: f64,
    last_cycle: Option<usize>,
    chain: usize,
    chain_open: bool,
}

impl StreamState {
    fn new() -> Self {
        StreamState {
            last_exit: f64::NEG_INFINITY,
            last_cycle: None,
            chain: 0,
            chain_open: false,
        }
    }
}

pub fn simulate_ground_truth(cfg: &ScenarioConfig, demand: &[Arrival]) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let network = cfg.network()?;
    let plans = cfg.signal_plans();
    let p = &cfg.params;
    let v_f = p.v_f;
    let v_m = p.q_m / p.k_m;
    let wave = p.q_m / (p.k_j - p.k_m);
    let headway = 1.0 / p.q_m;

    let mut vehicles: Vec<TrueVehicle> = demand
        .iter()
        .map(|a| TrueVehicle {
            vehicle_id: a.vehicle_id.clone(),
            vehicle_type: a.vehicle_type,
            passings: vec![(
                ScenarioConfig::corridor_node(0),
                a.entry,
                SegmentKey::new(ORIGIN, ScenarioConfig::corridor_node(0)),
            )],
        })
        .collect();
    let mut passages = Vec::new();
    // Vehicles present at the upstream node of the current segment, by entry time.
    let mut active: Vec<(usize, f64)> = demand.iter().enumerate().map(|(i, a)| (i, a.entry)).collect();

    for (k, seg) in cfg.segments.iter().enumerate() {
        let from = ScenarioConfig::corridor_node(k);
        let to = ScenarioConfig::corridor_node(k + 1);
        let key = SegmentKey::new(from.clone(), to.clone());
        active.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut straight = StreamState::new();
        let mut right = StreamState::new();
        let mut next_active = Vec::new();
        for &(i, entry) in &active {
            let turning = demand[i].turn_off == Some(k + 1);
            let last = k + 1 == cfg.segments.len();
            let turn = if turning {
                Turn::Right
            } else if last {
                Turn::Unknown
            } else {
                Turn::Straight
            };
            let windows = seg
                .signal
                .and_then(|_| plans.windows(&MovementKey::new(to.clone(), from.clone(), turn)));
            let state = if turning { &mut right } else { &mut straight };
            let passage = traverse(
                &key, seg.length, entry, windows, state, v_f, v_m, wave, headway, p.k_j,
            )?;
            let mut passage = passage;
            passage.trajectory.vehicle_id = demand[i].vehicle_id.clone();
            passage.trajectory.vehicle_type = demand[i].vehicle_type;
            passage.trajectory.turn = turn;
            let exit = passage.trajectory.exit_time();
            vehicles[i].passings.push((to.clone(), exit, key.clone()));
            passages.push(passage);
            if turning {
                let side = ScenarioConfig::side_node(k + 1);
                let side_key = SegmentKey::new(to.clone(), side.clone());
                let d = exit + cfg.side_length / v_f;
                passages.push(TruePassage {
                    trajectory: Trajectory {
                        vehicle_id: demand[i].vehicle_id.clone(),
                        vehicle_type: demand[i].vehicle_type,
                        segment: side_key.clone(),
                        turn: Turn::Unknown,
                        points: vec![(exit, 0.0), (d, cfg.side_length)],
                        queued: false,
                        stop_position: None,
                    },
                    cycle: None,
                    chain_index: None,
                    stopped: false,
                });
                vehicles[i].passings.push((side, d, side_key));
            } else if !last {
                next_active.push((i, exit));
            }
        }
        active = next_active;
    }
    Ok(GroundTruth {
        network,
        plans,
        vehicles,
        passages,
    })
}

#[allow(clippy::too_many_arguments)]
fn traverse(
    key: &SegmentKey,
    length: f64,
    entry: f64,
    windows: Option<&[GreenWindow]>,
    state: &mut StreamState,
    v_f: f64,
    v_m: f64,
    wave: f64,
    headway: f64,
    k_j: f64,
) -> Result<TruePassage, SimError> {
    let arrival = entry + length / v_f;
    let blank = |points: Vec<(f64, f64)>, stop: Option<f64>| Trajectory {
        vehicle_id: VehicleId(String::new()),
        vehicle_type: VehicleType::Regular,
        segment: key.clone(),
        turn: Turn::Unknown,
        points,
        queued: stop.is_some(),
        stop_position: stop,
    };
    let Some(windows) = windows else {
        state.last_exit = arrival;
        return Ok(TruePassage {
            trajectory: blank(vec![(entry, 0.0), (arrival, length)], None),
            cycle: None,
            chain_index: None,
            stopped: false,
        });
    };

    let earliest = arrival.max(state.last_exit + headway);
    let cycle = windows.partition_point(|w| w.end < earliest);
    let natural = windows.partition_point(|w| w.end < arrival);
    let green = *windows.get(cycle).ok_or_else(|| SimError::Config(format!("signal plan on {key} too short")))?;
    if cycle != natural {
        return Err(SimError::Oversaturated {
            segment: key.clone(),
            t: arrival,
        });
    }
    let exit = earliest.max(green.start);

    if state.last_cycle != Some(cycle) {
        state.chain = 0;
        state.chain_open = true;
    }
    let in_chain = state.chain_open
        && if state.chain == 0 {
            exit == green.start
        } else {
            exit == state.last_exit + headway
        };
    if in_chain {
        state.chain += 1;
    } else {
        state.chain_open = false;
    }
    state.last_exit = exit;
    state.last_cycle = Some(cycle);

    if exit == arrival && !in_chain {
        return Ok(TruePassage {
            trajectory: blank(vec![(entry, 0.0), (exit, length)], None),
            cycle: Some(cycle),
            chain_index: None,
            stopped: false,
        });
    }

    if in_chain {
        let order = state.chain;
        let stop = (order - 1) as f64 / k_j;
        if stop >= length {
            return Err(SimError::Spillback {
                segment: key.clone(),
                t: exit,
            });
        }
        let x_stop = length - stop;
        let t_stop = entry + x_stop / v_f;
        let t_go = green.start + stop / wave;
        if t_stop < t_go {
            let mut points = vec![(entry, 0.0), (t_stop, x_stop), (t_go, x_stop)];
            if exit > t_go {
                points.push((exit, length));
            }
            return Ok(TruePassage {
                trajectory: blank(points, Some(stop)),
                cycle: Some(cycle),
                chain_index: Some(order),
                stopped: true,
            });
        }
    }

    // Catches up with the discharge line ending at the exit and follows it.
    let t_join = (length - v_m * exit + v_f * entry) / (v_f - v_m);
    let x_join = v_f * (t_join - entry);
    let points = if t_join > entry && t_join < exit && x_join > 0.0 && x_join < length {
        vec![(entry, 0.0), (t_join, x_join), (exit, length)]
    } else {
        vec![(entry, 0.0), (exit, length)]
    };
    Ok(TruePassage {
        trajectory: blank(points, None),
        cycle: Some(cycle),
        chain_index: in_chain.then_some(state.chain),
        stopped: false,
    })
}

/// Keeps passings at camera nodes, drops each with probability `miss_rate`,
/// and pairs consecutive survivors of each vehicle into rows.
pub fn emit_lpr(
    vehicles: &[TrueVehicle],
    avi: &BTreeSet<NodeId>,
    miss_rate: f64,
    seed: u64,
) -> Vec<LprRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted: Vec<&TrueVehicle> = vehicles.iter().collect();
    sorted.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
    let mut rows = Vec::new();
    for v in sorted {
        let mut kept: Vec<&(NodeId, f64, SegmentKey)> = Vec::new();
        for ev in &v.passings {
            if !avi.contains(&ev.0) {
                continue;
            }
            if rng.random::<f64>() < miss_rate {
                continue;
            }
            kept.push(ev);
        }
        for w in kept.windows(2) {
            rows.push(LprRow {
                vid: v.vehicle_id.0.clone(),
                froad: w[0].2.clone(),
                troad: w[1].2.clone(),
                ftime: Timestamp(w[0].1),
                ttime: Timestamp(w[1].1),
            });
        }
    }
    rows
}

/// Runs demand, simulation and plate emission with the scenario's own miss rate.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(GroundTruth, Vec<LprRow>), SimError> {
    let demand = generate_demand(cfg)?;
    let truth = simulate_ground_truth(cfg, &demand)?;
    let avi: BTreeSet<NodeId> = truth.network.avi_nodes().cloned().collect();
    let rows = emit_lpr(
        &truth.vehicles,
        &avi,
        cfg.recognition_miss_rate,
        crate::reconstruct::derive_seed(cfg.seed, "lpr"),
    );
    Ok((truth, rows))
}
