//! Backward, cycle-by-cycle reconstruction of piecewise-linear trajectories
//! for each turning stream on a segment.
//!
//! Positions are local to the segment: `x = 0` at the upstream node and
//! `x = length` at the downstream stop line.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netmodel::RoadNetwork;
use crate::signal::{GreenWindow, MovementKey, SignalPlans};
use crate::tripbuild::{PassingSource, Trip};
use crate::types::{SegmentKey, Turn, VehicleId, VehicleType, TIME_RESOLUTION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("invalid stream parameters: {0}")]
    Params(String),
    #[error("density {0} outside [0, jam density]")]
    DensityOutOfRange(f64),
    #[error("zero time span over {distance} m for vehicle {vehicle}")]
    ZeroSpan { vehicle: String, distance: f64 },
    #[error("queue spillback on {segment} in cycle {cycle}: stop position {position} m on a {length} m segment")]
    Spillback {
        segment: SegmentKey,
        cycle: usize,
        position: f64,
        length: f64,
    },
    #[error("exit order on {segment} is not first-in-first-out at vehicle {vehicle}")]
    FifoViolation { segment: SegmentKey, vehicle: String },
    #[error("vehicle {vehicle} on {segment} travels faster than free flow")]
    AboveFreeFlow { segment: SegmentKey, vehicle: String },
    #[error("vehicle {vehicle} on {segment} has no usable passing time")]
    Underdetermined { segment: SegmentKey, vehicle: String },
    #[error("signal plan for {segment} ends before exit at {t}")]
    PlanCoverage { segment: SegmentKey, t: f64 },
}

/// Kinematic parameters of a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamParams {
    /// Capacity, veh/s.
    pub q_m: f64,
    /// Density at capacity, veh/m.
    pub k_m: f64,
    /// Jam density, veh/m.
    pub k_j: f64,
    /// Free-flow speed, m/s.
    pub v_f: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Lower bound for speeds drawn from the speed-density model, m/s.
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    /// Referring speeds below this mark a vehicle as queued.
    /// Defaults to half the model speed at capacity density.
    #[serde(default)]
    pub v_queue_threshold: Option<f64>,
    /// Divide stop positions by the lane count.
    #[serde(default)]
    pub lane_aware: bool,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.05
}

fn default_v_min() -> f64 {
    crate::tripbuild::DEFAULT_V_MIN
}

impl StreamParams {
    pub fn new(q_m: f64, k_m: f64, k_j: f64, v_f: f64) -> Self {
        StreamParams {
            q_m,
            k_m,
            k_j,
            v_f,
            alpha: default_alpha(),
            beta: default_beta(),
            v_min: default_v_min(),
            v_queue_threshold: None,
            lane_aware: false,
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        let bad = |m: &str| Err(ReconError::Params(m.into()));
        if !(self.q_m > 0.0) {
            return bad("capacity must be positive");
        }
        if !(self.k_m > 0.0 && self.k_m < self.k_j) {
            return bad("need 0 < density at capacity < jam density");
        }
        if !(self.v_f > 0.0) {
            return bad("free-flow speed must be positive");
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("speed-density exponents must be positive");
        }
        if !(self.v_min > 0.0 && self.v_min <= self.v_f) {
            return bad("need 0 < minimal speed <= free-flow speed");
        }
        if !(self.discharge_speed() < self.v_f) {
            return bad("discharge speed q_m/k_m must be below free-flow speed");
        }
        Ok(())
    }

    pub fn queue_threshold(&self) -> f64 {
        self.v_queue_threshold
            .unwrap_or_else(|| 0.5 * speed_from_density(self.k_m, self).unwrap_or(0.0))
    }

    /// Speed of vehicles leaving a discharging queue, `q_m / k_m`.
    pub fn discharge_speed(&self) -> f64 {
        self.q_m / self.k_m
    }

    /// Minimum exit headway of a discharging queue.
    pub fn headway(&self) -> f64 {
        1.0 / self.q_m
    }
}

/// Speed of the queue-discharge wave; negative (travels upstream).
pub fn wave_speed(p: &StreamParams) -> Result<f64, ReconError> {
    if !(p.k_j > p.k_m) {
        return Err(ReconError::Params("jam density must exceed density at capacity".into()));
    }
    Ok(-p.q_m / (p.k_j - p.k_m))
}

pub fn speed_from_density(k: f64, p: &StreamParams) -> Result<f64, ReconError> {
    if !(0.0..=p.k_j).contains(&k) {
        return Err(ReconError::DensityOutOfRange(k));
    }
    Ok(p.v_f * (1.0 - (k / p.k_j).powf(p.beta)).powf(p.alpha))
}

/// Distance upstream of the stop line where the `order`-th queued vehicle stops.
pub fn stop_position(order: usize, p: &StreamParams) -> f64 {
    assert!(order >= 1, "queue order starts at 1");
    (order - 1) as f64 / p.k_j
}

fn stop_position_lanes(order: usize, lanes: u32, p: &StreamParams) -> f64 {
    if p.lane_aware && lanes > 1 {
        stop_position(order, p) / f64::from(lanes)
    } else {
        stop_position(order, p)
    }
}

/// Information available for judging whether a vehicle queued.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReferringCase {
    /// Exact entry and exit times.
    Observed { entry: f64, exit: f64 },
    /// Exact entry, exit not yet known: the referring point is where the
    /// stop wave starting at `red_start` meets the stop position.
    Carried {
        entry: f64,
        stop_position: f64,
        red_start: f64,
    },
    /// Only an entry phase is known: its end serves as the entry time.
    WindowEntry { window_end: f64, exit: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrimination {
    pub queued: bool,
    pub referring_speed: f64,
}

pub fn discriminate_queuing(
    case: ReferringCase,
    length: f64,
    p: &StreamParams,
) -> Result<Discrimination, ReconError> {
    let (distance, span) = match case {
        ReferringCase::Observed { entry, exit } => (length, exit - entry),
        ReferringCase::Carried {
            entry,
            stop_position,
            red_start,
        } => {
            let t_f = red_start + stop_position / wave_speed(p)?.abs();
            (length - stop_position, t_f - entry)
        }
        ReferringCase::WindowEntry { window_end, exit } => (length, exit - window_end),
    };
    if span <= 0.0 {
        if distance > 0.0 {
            return Err(ReconError::ZeroSpan {
                vehicle: String::new(),
                distance,
            });
        }
        return Ok(Discrimination {
            queued: true,
            referring_speed: 0.0,
        });
    }
    let speed = distance / span;
    Ok(Discrimination {
        queued: speed < p.queue_threshold(),
        referring_speed: speed,
    })
}

/// At most one stop wave per cycle: everything up to the last queued
/// vehicle is queued, nothing after it.
pub fn enforce_one_wave(flags: &[bool]) -> Vec<bool> {
    let last = flags.iter().rposition(|&q| q);
    (0..flags.len())
        .map(|i| last.is_some_and(|l| i <= l))
        .collect()
}

/// A passing time at one end of a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Endpoint {
    Exact(f64),
    /// Known only to lie in a green window; `estimate` is a point guess inside it.
    Window { start: f64, end: f64, estimate: f64 },
    Unknown,
}

impl Endpoint {
    pub fn exact(&self) -> Option<f64> {
        match self {
            Endpoint::Exact(t) => Some(*t),
            _ => None,
        }
    }

    pub fn estimate(&self) -> Option<f64> {
        match self {
            Endpoint::Exact(t) => Some(*t),
            Endpoint::Window { estimate, .. } => Some(*estimate),
            Endpoint::Unknown => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamVehicle {
    pub vehicle_id: VehicleId,
    pub vehicle_type: VehicleType,
    pub entry: Endpoint,
    pub exit: Endpoint,
}

/// Vehicles of one turning stream on one segment, in exit order.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamObservation {
    pub segment: SegmentKey,
    pub turn: Turn,
    pub length: f64,
    pub lanes: u32,
    pub vehicles: Vec<StreamVehicle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: VehicleId,
    pub vehicle_type: VehicleType,
    pub segment: SegmentKey,
    pub turn: Turn,
    /// `(t, x)` with `t` strictly increasing.
    pub points: Vec<(f64, f64)>,
    pub queued: bool,
    /// Meters upstream of the stop line where the vehicle stood, if it stopped.
    pub stop_position: Option<f64>,
}

impl Trajectory {
    pub fn entry_time(&self) -> f64 {
        self.points[0].0
    }

    pub fn exit_time(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    pub fn length(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    pub fn position_at(&self, t: f64) -> Option<f64> {
        let (first, last) = (self.points[0], self.points[self.points.len() - 1]);
        if t < first.0 || t > last.0 {
            return None;
        }
        let i = self.points.partition_point(|p| p.0 <= t);
        if i == 0 {
            return Some(first.1);
        }
        if i >= self.points.len() {
            return Some(last.1);
        }
        let (a, b) = (self.points[i - 1], self.points[i]);
        Some(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0))
    }

    /// Speed on the piece containing `t` (right-continuous).
    pub fn speed_at(&self, t: f64) -> Option<f64> {
        let n = self.points.len();
        if t < self.points[0].0 || t > self.points[n - 1].0 {
            return None;
        }
        let i = self.points.partition_point(|p| p.0 <= t).clamp(1, n - 1);
        let (a, b) = (self.points[i - 1], self.points[i]);
        Some((b.1 - a.1) / (b.0 - a.0))
    }

    /// Checks time order, monotone position, speed bounds and endpoints.
    pub fn check_invariants(&self, v_f: f64) -> Result<(), String> {
        if self.points.len() < 2 {
            return Err(format!("{}: fewer than two points", self.vehicle_id));
        }
        if self.points[0].1 != 0.0 {
            return Err(format!("{}: does not start at x = 0", self.vehicle_id));
        }
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b.0 > a.0) {
                return Err(format!("{}: time not increasing at {}", self.vehicle_id, a.0));
            }
            if b.1 < a.1 {
                return Err(format!("{}: reverses at {}", self.vehicle_id, a.0));
            }
            let v = (b.1 - a.1) / (b.0 - a.0);
            if b.1 - a.1 > v_f * (b.0 - a.0 + TIME_RESOLUTION) {
                return Err(format!("{}: speed {v} above free flow at {}", self.vehicle_id, a.0));
            }
        }
        Ok(())
    }
}

/// Bookkeeping for one backward iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    /// Index into the green windows.
    pub cycle: usize,
    pub passing: Vec<VehicleId>,
    pub remained: Vec<VehicleId>,
    pub completed: Vec<VehicleId>,
    pub carried: Vec<VehicleId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamResult {
    pub trajectories: Vec<Trajectory>,
    pub iterations: Vec<IterationTrace>,
}

/// Queued-vehicle trajectory: free flow to the stop position, standing until
/// the discharge wave arrives, discharge at `q_m / k_m` to the stop line.
/// When the vehicle reaches its slot after the wave passed, it joins the
/// discharge line without stopping. Returns the points and whether it stopped.
pub fn stop_pattern(
    entry: f64,
    exit: f64,
    length: f64,
    stop_pos: f64,
    p: &StreamParams,
) -> (Vec<(f64, f64)>, bool) {
    let v_m = p.discharge_speed();
    let x_stop = length - stop_pos;
    let t1 = entry + x_stop / p.v_f;
    let t2 = exit - stop_pos / v_m;
    if t1 < t2 && x_stop > 0.0 {
        let mut pts = vec![(entry, 0.0), (t1, x_stop), (t2, x_stop)];
        if exit > t2 {
            pts.push((exit, length));
        }
        return (pts, true);
    }
    let t_m = (length - v_m * exit + p.v_f * entry) / (p.v_f - v_m);
    if t_m > entry && t_m < exit {
        let x_m = p.v_f * (t_m - entry);
        if x_m > 0.0 && x_m < length {
            return (vec![(entry, 0.0), (t_m, x_m), (exit, length)], false);
        }
    }
    (vec![(entry, 0.0), (exit, length)], false)
}

/// Deterministic seed for a labelled sub-stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct Built {
    entry: f64,
    exit: f64,
}

/// Reconstructs every vehicle of one stream. `windows` is the green plan of
/// the stream's movement at the downstream node; `None` means uncontrolled.
pub fn reconstruct_stream(
    obs: &StreamObservation,
    windows: Option<&[GreenWindow]>,
    p: &StreamParams,
    seed: u64,
) -> Result<StreamResult, ReconError> {
    p.validate()?;
    let length = obs.length;
    let n = obs.vehicles.len();
    let seg = || obs.segment.clone();
    let vid = |i: usize| obs.vehicles[i].vehicle_id.0.clone();

    let mut last_exit = f64::NEG_INFINITY;
    for (i, v) in obs.vehicles.iter().enumerate() {
        if let Some(d) = v.exit.exact() {
            if d < last_exit {
                return Err(ReconError::FifoViolation {
                    segment: seg(),
                    vehicle: vid(i),
                });
            }
            last_exit = d;
        }
        if v.entry.estimate().is_none() && v.exit.estimate().is_none() {
            return Err(ReconError::Underdetermined {
                segment: seg(),
                vehicle: vid(i),
            });
        }
    }

    let windows = match windows {
        Some(w) if !w.is_empty() => w,
        _ => return reconstruct_uncontrolled(obs, p, seed),
    };

    // Exit cycle of every vehicle, non-decreasing in stream order.
    let mut cycle = vec![0usize; n];
    let mut floor_cycle = 0usize;
    let mut floor_time = f64::NEG_INFINITY;
    for (i, v) in obs.vehicles.iter().enumerate() {
        let t = match v.exit {
            Endpoint::Exact(d) => d,
            Endpoint::Window { start, end, .. } => 0.5 * (start + end),
            Endpoint::Unknown => {
                let e = v.entry.estimate().expect("checked above");
                (e + length / p.v_f).max(floor_time)
            }
        };
        let c = windows.partition_point(|w| w.end < t);
        if c >= windows.len() {
            return Err(ReconError::PlanCoverage { segment: seg(), t });
        }
        cycle[i] = c.max(floor_cycle);
        floor_cycle = cycle[i];
        floor_time = floor_time.max(t);
    }

    let wave = wave_speed(p)?.abs();
    let mut built: Vec<Option<Built>> = (0..n).map(|_| None).collect();
    let mut trajectories: Vec<Option<Trajectory>> = (0..n).map(|_| None).collect();
    let mut by_cycle: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in cycle.iter().enumerate() {
        by_cycle.entry(*c).or_default().push(i);
    }

    for (&c, members) in by_cycle.iter().rev() {
        let green = windows[c];
        let red_start = if c > 0 {
            windows[c - 1].end
        } else {
            green.start - (windows.get(1).map_or(green.duration(), |w| w.start - green.end))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{}:{}:{c}", obs.segment, obs.turn)));

        let mut flags = Vec::with_capacity(members.len());
        let mut tentative = 0usize;
        for &i in members {
            let v = &obs.vehicles[i];
            let case = match (v.entry, v.exit) {
                (Endpoint::Exact(e), Endpoint::Exact(d)) => Some(ReferringCase::Observed { entry: e, exit: d }),
                (Endpoint::Window { end, .. }, Endpoint::Exact(d)) if d > end => {
                    Some(ReferringCase::WindowEntry { window_end: end, exit: d })
                }
                (Endpoint::Exact(e), _) | (Endpoint::Window { end: e, .. }, _)
                    if v.exit.exact().is_none() =>
                {
                    Some(ReferringCase::Carried {
                        entry: e,
                        stop_position: stop_position_lanes(tentative + 1, obs.lanes, p),
                        red_start,
                    })
                }
                _ => None,
            };
            let queued = match case {
                Some(ReferringCase::Carried { entry, stop_position, red_start })
                    if red_start + stop_position / wave <= entry =>
                {
                    false
                }
                Some(case) => discriminate_queuing(case, length, p)
                    .map_err(|e| match e {
                        ReconError::ZeroSpan { distance, .. } => ReconError::ZeroSpan {
                            vehicle: vid(i),
                            distance,
                        },
                        other => other,
                    })?
                    .queued,
                None => false,
            };
            if queued {
                tentative += 1;
            }
            flags.push(queued);
        }
        let flags = enforce_one_wave(&flags);

        let mut slot = 0usize;
        let mut prev_exit = f64::NEG_INFINITY;
        let mut prev_entry = f64::NEG_INFINITY;
        for (m, &i) in members.iter().enumerate() {
            let v = &obs.vehicles[i];
            let (points, stopped, stop_pos) = if flags[m] {
                slot += 1;
                let pos = stop_position_lanes(slot, obs.lanes, p);
                if pos >= length {
                    return Err(ReconError::Spillback {
                        segment: seg(),
                        cycle: c,
                        position: pos,
                        length,
                    });
                }
                let d = match v.exit {
                    Endpoint::Exact(d) => d,
                    _ => (green.start + (slot - 1) as f64 * p.headway())
                        .max(prev_exit + p.headway())
                        .min(green.end),
                };
                let e = match v.entry {
                    Endpoint::Exact(e) => e,
                    Endpoint::Window { start, end, estimate } => {
                        estimate.clamp(start, end).min(d - length / p.v_f).max(prev_entry)
                    }
                    Endpoint::Unknown => {
                        let speed = local_speed(obs, &built, d, length, p);
                        (d - length / speed).max(prev_entry)
                    }
                };
                if d - e < length / p.v_f - TIME_RESOLUTION {
                    return Err(ReconError::AboveFreeFlow {
                        segment: seg(),
                        vehicle: vid(i),
                    });
                }
                let (pts, stopped) = stop_pattern(e, d, length, pos, p);
                (pts, stopped, stopped.then_some(pos))
            } else {
                let (e, d) = non_queued_endpoints(
                    obs, &built, i, prev_entry, prev_exit, Some(green), p, &mut rng,
                )?;
                (vec![(e, 0.0), (d, length)], false, None)
            };
            let (e, d) = (points[0].0, points[points.len() - 1].0);
            prev_entry = e;
            prev_exit = d;
            built[i] = Some(Built { entry: e, exit: d });
            trajectories[i] = Some(Trajectory {
                vehicle_id: v.vehicle_id.clone(),
                vehicle_type: v.vehicle_type,
                segment: obs.segment.clone(),
                turn: obs.turn,
                points,
                queued: flags[m],
                stop_position: stop_pos,
            });
            let _ = stopped;
        }
    }

    let trajectories: Vec<Trajectory> = trajectories.into_iter().map(|t| t.expect("built")).collect();
    let iterations = iteration_traces(&trajectories, &cycle, windows);
    Ok(StreamResult {
        trajectories,
        iterations,
    })
}

fn iteration_traces(trajs: &[Trajectory], cycle: &[usize], windows: &[GreenWindow]) -> Vec<IterationTrace> {
    if trajs.is_empty() {
        return Vec::new();
    }
    let entry_cycle: Vec<usize> = trajs
        .iter()
        .map(|t| {
            let e = t.entry_time();
            // Window c spans (end of green c-1, end of green c].
            windows.partition_point(|w| w.end < e)
        })
        .collect();
    let top = *cycle.iter().max().unwrap();
    let bottom = entry_cycle
        .iter()
        .zip(cycle)
        .map(|(e, c)| (*e).min(*c))
        .min()
        .unwrap();
    let mut carried: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for c in (bottom..=top).rev() {
        let passing: Vec<usize> = (0..trajs.len()).filter(|&i| cycle[i] == c).collect();
        let remained = std::mem::take(&mut carried);
        let mut completed = Vec::new();
        for &i in remained.iter().chain(&passing) {
            if entry_cycle[i] >= c {
                completed.push(i);
            } else {
                carried.push(i);
            }
        }
        completed.sort_unstable();
        carried.sort_unstable();
        let ids = |v: &[usize]| v.iter().map(|&i| trajs[i].vehicle_id.clone()).collect();
        out.push(IterationTrace {
            cycle: c,
            passing: ids(&passing),
            remained: ids(&remained),
            completed: ids(&completed),
            carried: ids(&carried),
        });
    }
    out
}

/// Speed from the speed-density model at the density of vehicles present
/// around time `t`, bounded to `[v_min, v_f]`.
fn local_speed(obs: &StreamObservation, built: &[Option<Built>], t: f64, length: f64, p: &StreamParams) -> f64 {
    let present = obs
        .vehicles
        .iter()
        .enumerate()
        .filter(|(i, v)| match &built[*i] {
            Some(b) => b.entry <= t && t <= b.exit,
            None => match (v.entry.estimate(), v.exit.estimate()) {
                (Some(e), Some(d)) => e <= t && t <= d,
                _ => false,
            },
        })
        .count();
    let k = (present as f64 / length).min(p.k_j);
    speed_from_density(k, p)
        .unwrap_or(p.v_min)
        .clamp(p.v_min, p.v_f)
}

#[allow(clippy::too_many_arguments)]
fn non_queued_endpoints(
    obs: &StreamObservation,
    built: &[Option<Built>],
    i: usize,
    prev_entry: f64,
    prev_exit: f64,
    green: Option<GreenWindow>,
    p: &StreamParams,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), ReconError> {
    let v = &obs.vehicles[i];
    let length = obs.length;
    let min_travel = length / p.v_f;
    let fast = || ReconError::AboveFreeFlow {
        segment: obs.segment.clone(),
        vehicle: v.vehicle_id.0.clone(),
    };
    let clamp_exit = |d: f64| match (v.exit, green) {
        (Endpoint::Window { start, end, .. }, _) => d.clamp(start, end),
        (_, Some(g)) => d.clamp(g.start, g.end),
        _ => d,
    };
    match (v.entry, v.exit) {
        (Endpoint::Exact(e), Endpoint::Exact(d)) => {
            if d - e < min_travel - TIME_RESOLUTION {
                return Err(fast());
            }
            Ok((e, d))
        }
        (entry, Endpoint::Exact(d)) => {
            let e = match entry {
                Endpoint::Window { start, end, estimate } => estimate.clamp(start, end),
                _ => d - length / local_speed(obs, built, d, length, p),
            };
            let e = e.min(d - min_travel).max(prev_entry.min(d - min_travel));
            Ok((e, d))
        }
        (Endpoint::Exact(e), exit) => {
            let d = match exit {
                Endpoint::Window { estimate, .. } => estimate,
                _ => e + length / local_speed(obs, built, e, length, p),
            };
            let d = clamp_exit(d.max(prev_exit)).max(e + min_travel);
            Ok((e, d))
        }
        (Endpoint::Window { start, end, estimate }, exit) => {
            let lo = start.max(prev_entry).min(end);
            let hi = end;
            let e = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let speed = local_speed(obs, built, estimate, length, p);
            let mut d = e + length / speed;
            if let Endpoint::Window { start, end, .. } = exit {
                d = d.clamp(start, end);
            }
            let d = d.max(prev_exit).max(e + min_travel);
            Ok((e, d))
        }
        (Endpoint::Unknown, Endpoint::Window { start, end, .. }) => {
            let lo = start.max(prev_exit).min(end);
            let d = if end > lo { rng.random_range(lo..=end) } else { lo };
            let speed = local_speed(obs, built, d, length, p);
            let e = (d - length / speed).max(prev_entry.min(d - min_travel));
            Ok((e.min(d - min_travel), d))
        }
        (Endpoint::Unknown, Endpoint::Unknown) => Err(ReconError::Underdetermined {
            segment: obs.segment.clone(),
            vehicle: v.vehicle_id.0.clone(),
        }),
    }
}

fn reconstruct_uncontrolled(
    obs: &StreamObservation,
    p: &StreamParams,
    seed: u64,
) -> Result<StreamResult, ReconError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{}:{}", obs.segment, obs.turn)));
    let mut built: Vec<Option<Built>> = (0..obs.vehicles.len()).map(|_| None).collect();
    let mut out = Vec::with_capacity(obs.vehicles.len());
    let (mut prev_entry, mut prev_exit) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..obs.vehicles.len() {
        let (e, d) = non_queued_endpoints(obs, &built, i, prev_entry, prev_exit, None, p, &mut rng)?;
        prev_entry = e;
        prev_exit = d;
        built[i] = Some(Built { entry: e, exit: d });
        let v = &obs.vehicles[i];
        out.push(Trajectory {
            vehicle_id: v.vehicle_id.clone(),
            vehicle_type: v.vehicle_type,
            segment: obs.segment.clone(),
            turn: obs.turn,
            points: vec![(e, 0.0), (d, obs.length)],
            queued: false,
            stop_position: None,
        });
    }
    Ok(StreamResult {
        trajectories: out,
        iterations: Vec::new(),
    })
}

/// Movement used to look up the plan for a stream. Streams without an
/// observed next node fall back to the approach's only planned movement,
/// or straight ahead.
pub fn stream_movement(plans: &SignalPlans, segment: &SegmentKey, turn: Turn) -> MovementKey {
    let key = MovementKey::new(segment.to.clone(), segment.from.clone(), turn);
    if turn != Turn::Unknown || plans.contains_key(&key) {
        return key;
    }
    let planned: Vec<&MovementKey> = plans
        .iter()
        .map(|(k, _)| k)
        .filter(|k| k.node == segment.to && k.approach == segment.from)
        .collect();
    match planned.as_slice() {
        [only] => (*only).clone(),
        _ => MovementKey::new(segment.to.clone(), segment.from.clone(), Turn::Straight),
    }
}

fn endpoint_of(p: &crate::tripbuild::Passing) -> Endpoint {
    match (p.source, p.window) {
        (PassingSource::Observed, _) => Endpoint::Exact(p.time),
        (PassingSource::Inferred, Some(w)) => Endpoint::Window {
            start: w.start,
            end: w.end,
            estimate: p.time,
        },
        (PassingSource::Inferred, None) => Endpoint::Unknown,
    }
}

/// Groups trip legs into streams keyed by segment and downstream movement.
pub fn streams_from_trips(trips: &[Trip], net: &RoadNetwork) -> Vec<StreamObservation> {
    let mut streams: BTreeMap<(SegmentKey, Turn), Vec<(f64, f64, StreamVehicle)>> = BTreeMap::new();
    for trip in trips {
        for k in 1..trip.passings.len() {
            let (a, b) = (&trip.passings[k - 1], &trip.passings[k]);
            let turn = trip
                .passings
                .get(k + 1)
                .and_then(|c| net.turn_between(&a.node, &b.node, &c.node))
                .unwrap_or(Turn::Unknown);
            let key = SegmentKey::new(a.node.clone(), b.node.clone());
            streams.entry((key, turn)).or_default().push((
                b.time,
                a.time,
                StreamVehicle {
                    vehicle_id: trip.vehicle_id.clone(),
                    vehicle_type: trip.vehicle_type,
                    entry: endpoint_of(a),
                    exit: endpoint_of(b),
                },
            ));
        }
    }
    streams
        .into_iter()
        .filter_map(|((segment, turn), mut vs)| {
            let seg = net.segment(&segment)?;
            vs.sort_by(|x, y| {
                x.0.total_cmp(&y.0)
                    .then(x.1.total_cmp(&y.1))
                    .then(x.2.vehicle_id.cmp(&y.2.vehicle_id))
            });
            Some(StreamObservation {
                length: seg.length_m,
                lanes: seg.lanes,
                segment,
                turn,
                vehicles: vs.into_iter().map(|(_, _, v)| v).collect(),
            })
        })
        .collect()
}

/// Reconstructs all streams in parallel. Output is ordered by segment,
/// turn, then stream order.
pub fn reconstruct_streams(
    streams: &[StreamObservation],
    plans: &SignalPlans,
    p: &StreamParams,
    seed: u64,
) -> Result<Vec<StreamResult>, ReconError> {
    p.validate()?;
    streams
        .par_iter()
        .map(|s| {
            let key = stream_movement(plans, &s.segment, s.turn);
            reconstruct_stream(s, plans.windows(&key), p, seed)
        })
        .collect()
}
