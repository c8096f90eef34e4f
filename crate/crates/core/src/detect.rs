//! Virtual detectors over reconstructed trajectories: loops, segment probes
//! and floating-car sampling.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{FcdRow, LoopRow};
use crate::netmodel::RoadNetwork;
use crate::reconstruct::Trajectory;
use crate::types::{SegmentKey, Timestamp, Turn, VehicleId, VehicleType};

pub const DEFAULT_LOOP_LENGTH: f64 = 2.0;
pub const DEFAULT_VEHICLE_LENGTH: f64 = 4.5;
pub const DEFAULT_PENETRATION: f64 = 0.05;
pub const DEFAULT_FCD_PERIOD: f64 = 10.0;

const MS_TO_KMH: f64 = 3.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("segment {0} not in network")]
    UnknownSegment(SegmentKey),
    #[error("no geometry for segment {0}")]
    NoGeometry(SegmentKey),
    #[error("malformed geometry on {segment}: {geom}")]
    BadGeometry { segment: SegmentKey, geom: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopDetectorConfig {
    pub loop_id: String,
    pub segment: SegmentKey,
    /// Meters from the downstream end of the segment.
    pub position: f64,
    /// Aggregation interval in whole seconds.
    pub interval: u32,
    pub missing_rate: f64,
    pub loop_length: f64,
    pub vehicle_length: f64,
    pub seed: u64,
}

impl LoopDetectorConfig {
    pub fn new(loop_id: impl Into<String>, segment: SegmentKey, position: f64, interval: u32) -> Self {
        LoopDetectorConfig {
            loop_id: loop_id.into(),
            segment,
            position,
            interval,
            missing_rate: 0.0,
            loop_length: DEFAULT_LOOP_LENGTH,
            vehicle_length: DEFAULT_VEHICLE_LENGTH,
            seed: 0,
        }
    }

    pub fn validate(&self, segment_length: f64) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::Config(format!("{}: {m}", self.loop_id)));
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return bad(format!("missing rate {} outside [0, 1]", self.missing_rate));
        }
        if !(0.0..=segment_length).contains(&self.position) {
            return bad(format!("position {} outside [0, {segment_length}]", self.position));
        }
        if self.interval == 0 {
            return bad("interval must be positive".into());
        }
        if !(self.loop_length > 0.0) || !(self.vehicle_length >= 0.0) {
            return bad("loop length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub vehicle_id: VehicleId,
    pub detector: String,
    pub time: f64,
    /// m/s on the piece that reaches the line.
    pub speed: f64,
    pub vehicle_type: VehicleType,
    pub turn: Turn,
    /// Seconds between the front reaching the line and the rear leaving the loop.
    pub dwell: f64,
}

/// Time at which `traj` first reaches `x`, with the speed of the piece
/// doing so. `None` if it starts beyond `x` or never reaches it.
fn first_reach(traj: &Trajectory, x: f64) -> Option<(f64, f64)> {
    let pts = &traj.points;
    if pts[0].1 == x {
        let speed = pts.get(1).map_or(0.0, |b| (b.1 - pts[0].1) / (b.0 - pts[0].0));
        return Some((pts[0].0, speed));
    }
    pts.windows(2).find(|w| w[0].1 < x && x <= w[1].1).map(|w| {
        let (a, b) = (w[0], w[1]);
        let t = a.0 + (x - a.1) / (b.1 - a.1) * (b.0 - a.0);
        (t, (b.1 - a.1) / (b.0 - a.0))
    })
}

/// Time to reach `x`, extrapolating past the last point at the final speed.
fn reach_extended(traj: &Trajectory, x: f64) -> Option<f64> {
    if x <= traj.length() {
        return first_reach(traj, x).map(|r| r.0);
    }
    let n = traj.points.len();
    let (a, b) = (traj.points[n - 2], traj.points[n - 1]);
    let v = (b.1 - a.1) / (b.0 - a.0);
    (v > 0.0).then(|| b.0 + (x - b.1) / v)
}

pub fn detect_crossings(trajectories: &[Trajectory], cfg: &LoopDetectorConfig, segment_length: f64) -> Vec<CrossingEvent> {
    let line = segment_length - cfg.position;
    let mut out: Vec<CrossingEvent> = trajectories
        .iter()
        .filter(|t| t.segment == cfg.segment && t.points.len() >= 2)
        .filter_map(|t| {
            let (time, speed) = first_reach(t, line)?;
            let clear = reach_extended(t, line + cfg.loop_length + cfg.vehicle_length);
            let dwell = match clear {
                Some(c) => c - time,
                None if speed > 0.0 => (cfg.loop_length + cfg.vehicle_length) / speed,
                None => t.exit_time() - time,
            };
            Some(CrossingEvent {
                vehicle_id: t.vehicle_id.clone(),
                detector: cfg.loop_id.clone(),
                time,
                speed,
                vehicle_type: t.vehicle_type,
                turn: t.turn,
                dwell,
            })
        })
        .collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vehicle_id.cmp(&b.vehicle_id)));
    out
}

/// Keeps each event with probability `1 - missing_rate`.
pub fn apply_missing(events: &[CrossingEvent], missing_rate: f64, seed: u64) -> Vec<CrossingEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    events
        .iter()
        .filter(|_| rng.random::<f64>() >= missing_rate)
        .cloned()
        .collect()
}

fn interval_index(t: f64, from: f64, interval: f64) -> Option<usize> {
    let k = ((t - from) / interval).floor();
    (k >= 0.0).then_some(k as usize)
}

/// One row per interval `[from + k*INT, from + (k+1)*INT)` covering
/// `[from, to)`. Events of all movements count when `turn` is
/// [`Turn::Unknown`]; otherwise only those of that movement. Empty
/// intervals are emitted with zero counts and speeds.
pub fn aggregate_loop(events: &[CrossingEvent], cfg: &LoopDetectorConfig, turn: Turn, from: f64, to: f64) -> Vec<LoopRow> {
    let int = f64::from(cfg.interval);
    let n = ((to - from) / int).ceil().max(0.0) as usize;
    let mut speeds: Vec<Vec<(f64, VehicleType)>> = vec![Vec::new(); n];
    for e in events {
        if turn != Turn::Unknown && e.turn != turn {
            continue;
        }
        if let Some(k) = interval_index(e.time, from, int).filter(|&k| k < n) {
            speeds[k].push((e.speed, e.vehicle_type));
        }
    }
    speeds
        .into_iter()
        .enumerate()
        .map(|(k, vs)| {
            let start = Timestamp::from_millis(Timestamp(from + k as f64 * int).to_millis());
            let count = vs.len() as u32;
            let lar = vs.iter().filter(|v| v.1 == VehicleType::Large).count() as u32;
            let (arth, harm) = if vs.is_empty() {
                (0.0, 0.0)
            } else {
                let kmh: Vec<f64> = vs.iter().map(|v| v.0 * MS_TO_KMH).collect();
                let arth = kmh.iter().sum::<f64>() / kmh.len() as f64;
                let harm = if kmh.iter().any(|&v| v <= 0.0) {
                    0.0
                } else {
                    kmh.len() as f64 / kmh.iter().map(|v| 1.0 / v).sum::<f64>()
                };
                (arth, harm.min(arth))
            };
            LoopRow {
                road_id: cfg.segment.clone(),
                ftime: start,
                ttime: Timestamp::from_millis(start.to_millis() + i64::from(cfg.interval) * 1000),
                interval: cfg.interval,
                count,
                reg_count: count - lar,
                lar_count: lar,
                arth_spd: arth,
                harm_spd: harm,
                turn,
            }
        })
        .collect()
}

/// Crossing detection, seeded missing model and aggregation in one pass.
pub fn loop_rows(
    trajectories: &[Trajectory],
    cfg: &LoopDetectorConfig,
    segment_length: f64,
    turn: Turn,
    from: f64,
    to: f64,
) -> Result<Vec<LoopRow>, DetectError> {
    cfg.validate(segment_length)?;
    let events = detect_crossings(trajectories, cfg, segment_length);
    let kept = apply_missing(&events, cfg.missing_rate, cfg.seed);
    Ok(aggregate_loop(&kept, cfg, turn, from, to))
}

/// Occupied fraction of each interval, from event dwell times.
pub fn occupancy(events: &[CrossingEvent], cfg: &LoopDetectorConfig, from: f64, to: f64) -> Vec<f64> {
    let int = f64::from(cfg.interval);
    let n = ((to - from) / int).ceil().max(0.0) as usize;
    let mut busy = vec![0.0; n];
    for e in events {
        if let Some(k) = interval_index(e.time, from, int).filter(|&k| k < n) {
            busy[k] += e.dwell;
        }
    }
    busy.into_iter().map(|b| (b / int).clamp(0.0, 1.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentMeasure {
    /// Vehicles per meter present at the start of the window.
    pub density: f64,
    /// Distance over time spent on the segment within the window; `None`
    /// when no vehicle spent time there.
    pub space_mean_speed: Option<f64>,
}

pub fn measure_segment(
    trajectories: &[Trajectory],
    segment: &SegmentKey,
    segment_length: f64,
    t: f64,
    window: f64,
) -> Result<SegmentMeasure, DetectError> {
    if !(window > 0.0) || !(segment_length > 0.0) {
        return Err(DetectError::Config("window and segment length must be positive".into()));
    }
    let on: Vec<&Trajectory> = trajectories.iter().filter(|tr| &tr.segment == segment).collect();
    let present = on.iter().filter(|tr| tr.entry_time() <= t && t < tr.exit_time()).count();
    let (mut dist, mut time) = (0.0, 0.0);
    let end = t + window;
    for tr in &on {
        let (a, b) = (tr.entry_time().max(t), tr.exit_time().min(end));
        if b <= a {
            continue;
        }
        dist += tr.position_at(b).unwrap_or(0.0) - tr.position_at(a).unwrap_or(0.0);
        time += b - a;
    }
    Ok(SegmentMeasure {
        density: present as f64 / segment_length,
        space_mean_speed: (time > 0.0).then(|| dist / time),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbeSelection {
    Ids(BTreeSet<VehicleId>),
    Penetration(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcdConfig {
    pub sample_period: f64,
    pub probes: ProbeSelection,
    pub hash_salt: String,
    pub seed: u64,
}

impl Default for FcdConfig {
    fn default() -> Self {
        FcdConfig {
            sample_period: DEFAULT_FCD_PERIOD,
            probes: ProbeSelection::Penetration(DEFAULT_PENETRATION),
            hash_salt: String::new(),
            seed: 0,
        }
    }
}

impl FcdConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.sample_period > 0.0) {
            return Err(DetectError::Config("sample period must be positive".into()));
        }
        if let ProbeSelection::Penetration(p) = self.probes {
            if !(p > 0.0 && p <= 1.0) {
                return Err(DetectError::Config(format!("penetration {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Salted SHA-256 of the plate, truncated to 16 hex characters.
pub fn anonymize(salt: &str, id: &VehicleId) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(id.0.as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

/// Vehicles chosen as probes, drawn per distinct ID in sorted order.
pub fn select_probes(trajectories: &[Trajectory], cfg: &FcdConfig) -> BTreeSet<VehicleId> {
    let ids: BTreeSet<&VehicleId> = trajectories.iter().map(|t| &t.vehicle_id).collect();
    match &cfg.probes {
        ProbeSelection::Ids(set) => ids.into_iter().filter(|id| set.contains(*id)).cloned().collect(),
        ProbeSelection::Penetration(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            ids.into_iter().filter(|_| rng.random::<f64>() < *p).cloned().collect()
        }
    }
}

fn parse_linestring(segment: &SegmentKey, geom: &str) -> Result<Vec<(f64, f64)>, DetectError> {
    let bad = || DetectError::BadGeometry {
        segment: segment.clone(),
        geom: geom.to_string(),
    };
    let body = geom
        .trim()
        .strip_prefix("LINESTRING")
        .map(str::trim)
        .and_then(|s| s.strip_prefix('('))
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(bad)?;
    let pts = body
        .split(',')
        .map(|p| {
            let mut it = p.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok((x, y)),
                _ => Err(bad()),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if pts.len() < 2 {
        return Err(bad());
    }
    Ok(pts)
}

fn segment_polyline(net: &RoadNetwork, key: &SegmentKey) -> Result<Vec<(f64, f64)>, DetectError> {
    let seg = net.segment(key).ok_or_else(|| DetectError::UnknownSegment(key.clone()))?;
    if let Some(g) = &seg.geom {
        return parse_linestring(key, g);
    }
    let coord = |id| net.node(id).and_then(|n| n.coord);
    match (coord(&key.from), coord(&key.to)) {
        (Some(a), Some(b)) => Ok(vec![a, b]),
        _ => Err(DetectError::NoGeometry(key.clone())),
    }
}

/// Point at fraction `f` of the polyline's planar length.
fn along(poly: &[(f64, f64)], f: f64) -> (f64, f64) {
    let lens: Vec<f64> = poly.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).collect();
    let total: f64 = lens.iter().sum();
    if total == 0.0 {
        return poly[0];
    }
    let mut left = f.clamp(0.0, 1.0) * total;
    for (w, l) in poly.windows(2).zip(&lens) {
        if left <= *l && *l > 0.0 {
            let r = left / l;
            return (w[0].0 + r * (w[1].0 - w[0].0), w[0].1 + r * (w[1].1 - w[0].1));
        }
        left -= l;
    }
    poly[poly.len() - 1]
}

/// Rows at every multiple of the sample period while a probe is on a
/// segment. A tick on a segment boundary is reported once, on the segment
/// being left.
pub fn sample_fcd(trajectories: &[Trajectory], cfg: &FcdConfig, net: &RoadNetwork) -> Result<Vec<FcdRow>, DetectError> {
    cfg.validate()?;
    let probes = select_probes(trajectories, cfg);
    let mut by_vehicle: BTreeMap<&VehicleId, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories.iter().filter(|t| probes.contains(&t.vehicle_id) && t.points.len() >= 2) {
        by_vehicle.entry(&t.vehicle_id).or_default().push(t);
    }
    let mut polylines: BTreeMap<SegmentKey, Vec<(f64, f64)>> = BTreeMap::new();
    let mut rows = Vec::new();
    for (vid, mut trajs) in by_vehicle {
        trajs.sort_by(|a, b| a.entry_time().total_cmp(&b.entry_time()));
        let hashed = anonymize(&cfg.hash_salt, vid);
        let mut last_tick = f64::NEG_INFINITY;
        for tr in trajs {
            if !polylines.contains_key(&tr.segment) {
                polylines.insert(tr.segment.clone(), segment_polyline(net, &tr.segment)?);
            }
            let poly = &polylines[&tr.segment];
            let length = net.segment(&tr.segment).map_or(tr.length(), |s| s.length_m);
            let mut k = (tr.entry_time() / cfg.sample_period).ceil();
            loop {
                let t = k * cfg.sample_period;
                if t > tr.exit_time() {
                    break;
                }
                k += 1.0;
                if t <= last_tick {
                    continue;
                }
                last_tick = t;
                let x = tr.position_at(t).unwrap_or(0.0);
                let (lon, lat) = along(poly, x / length);
                rows.push(FcdRow {
                    vid: hashed.clone(),
                    vtype: tr.vehicle_type,
                    time: Timestamp::from_millis(Timestamp(t).to_millis()),
                    lon,
                    lat,
                    spd: tr.speed_at(t).unwrap_or(0.0) * MS_TO_KMH,
                    turn: tr.turn,
                    dis: (length - x).max(0.0),
                    road_id: tr.segment.clone(),
                });
            }
        }
    }
    rows.sort_by(|a, b| a.time.0.total_cmp(&b.time.0).then_with(|| a.vid.cmp(&b.vid)));
    Ok(rows)
}
