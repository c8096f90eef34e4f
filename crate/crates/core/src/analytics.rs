//! Validation metrics: fundamental-diagram fitting, departure-time
//! sections, origin-destination zones, traveler classes and Lorenz curves.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LoopRow;
use crate::netmodel::{RoadNetwork, TrafficZone};
use crate::tripbuild::Trip;
use crate::types::{SegmentKey, VehicleId};

pub const MINUTES_PER_DAY: f64 = 1440.0;
pub const UNKNOWN_ZONE: &str = "unknown";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("samples span a single density")]
    Degenerate,
    #[error("invalid model shape: alpha and beta must be positive")]
    Shape,
    #[error("all distances are zero")]
    ZeroDistance,
    #[error("negative or non-finite distance {0}")]
    BadDistance(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdFit {
    pub q_m_hat: f64,
    pub k_j_hat: f64,
    pub v_f_hat: f64,
    /// Root of the summed squared speed residuals.
    pub residual: f64,
}

pub const MIN_FD_SAMPLES: usize = 10;

fn shape(k: f64, k_j: f64, alpha: f64, beta: f64) -> f64 {
    if k <= 0.0 {
        return 1.0;
    }
    if k >= k_j {
        return 0.0;
    }
    (1.0 - (k / k_j).powf(beta)).powf(alpha)
}

/// Free-flow speed minimizing the residual for a given jam density, and
/// the resulting squared error.
fn best_free_speed(samples: &[(f64, f64)], k_j: f64, alpha: f64, beta: f64) -> (f64, f64) {
    let (mut gv, mut gg) = (0.0, 0.0);
    for &(k, v) in samples {
        let g = shape(k, k_j, alpha, beta);
        gv += g * v;
        gg += g * g;
    }
    let v_f = if gg > 0.0 { gv / gg } else { 0.0 };
    let sse = samples
        .iter()
        .map(|&(k, v)| (v - v_f * shape(k, k_j, alpha, beta)).powi(2))
        .sum();
    (v_f, sse)
}

fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Maximum of `k * v(k)` over `(0, k_j)`.
pub fn fd_capacity(k_j: f64, v_f: f64, alpha: f64, beta: f64) -> f64 {
    let k = golden_min(0.0, k_j, |k| -k * shape(k, k_j, alpha, beta));
    k * v_f * shape(k, k_j, alpha, beta)
}

/// Least-squares fit of `v = v_f (1 - (k/k_j)^beta)^alpha` over `k_j` and
/// `v_f` with the exponents held fixed. Samples are `(density veh/m, speed m/s)`.
pub fn fit_fundamental_diagram(samples: &[(f64, f64)], alpha: f64, beta: f64) -> Result<FdFit, AnalyticsError> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(AnalyticsError::Shape);
    }
    if samples.len() < MIN_FD_SAMPLES {
        return Err(AnalyticsError::TooFewSamples {
            needed: MIN_FD_SAMPLES,
            got: samples.len(),
        });
    }
    let k_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let k_max = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if !(k_max > k_min) || !(k_max > 0.0) {
        return Err(AnalyticsError::Degenerate);
    }
    let sse = |k_j: f64| best_free_speed(samples, k_j, alpha, beta).1;
    // Coarse log-spaced scan, then golden refinement around the best cell.
    let lo = k_max.max(f64::MIN_POSITIVE) * 1e-3;
    let hi = k_max * 1e3;
    let n = 600;
    let grid: Vec<f64> = (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect();
    let best = (0..=n)
        .min_by(|&a, &b| sse(grid[a]).total_cmp(&sse(grid[b])))
        .unwrap_or(0);
    let (a, b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let k_j = golden_min(a, b, sse);
    let (v_f, err) = best_free_speed(samples, k_j, alpha, beta);
    Ok(FdFit {
        q_m_hat: fd_capacity(k_j, v_f, alpha, beta),
        k_j_hat: k_j,
        v_f_hat: v_f,
        residual: err.sqrt(),
    })
}

/// `(density, speed)` per lane from loop rows with at least one vehicle,
/// using flow over harmonic-mean speed.
pub fn samples_from_loop_rows(rows: &[LoopRow], lanes: u32) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.count > 0 && r.harm_spd > 0.0 && r.interval > 0)
        .map(|r| {
            let q = f64::from(r.count) / f64::from(r.interval) / f64::from(lanes.max(1));
            let v = r.harm_spd / 3.6;
            (q / v, v)
        })
        .collect()
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(MINUTES_PER_DAY);
    d.min(MINUTES_PER_DAY - d)
}

/// Density-based clustering of day-minutes on the circle. Returns a cluster
/// label per point, `None` for noise.
pub fn section_labels(minutes: &[f64], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = minutes.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| circular_gap(minutes[i], minutes[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// Number of departure-time sections; noise points do not count.
pub fn departure_time_sections(minutes: &[f64], eps: f64, min_pts: usize) -> usize {
    section_labels(minutes, eps, min_pts)
        .into_iter()
        .flatten()
        .collect::<BTreeSet<_>>()
        .len()
}

/// Circular mean of the members of each section, in day-minutes.
pub fn section_centers(minutes: &[f64], labels: &[Option<usize>]) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for (m, l) in minutes.iter().zip(labels) {
        if let Some(l) = l {
            let a = m / MINUTES_PER_DAY * std::f64::consts::TAU;
            let e = acc.entry(*l).or_default();
            e.0 += a.sin();
            e.1 += a.cos();
        }
    }
    acc.into_iter()
        .map(|(l, (s, c))| (l, (s.atan2(c) / std::f64::consts::TAU * MINUTES_PER_DAY).rem_euclid(MINUTES_PER_DAY)))
        .collect()
}

/// The `pct`-th percentile by nearest rank: the `ceil(pct * n / 100)`-th
/// smallest value.
pub fn nearest_rank(values: &[u32], pct: u32) -> Option<u32> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = (pct as usize * v.len()).div_ceil(100).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    /// Seconds since the Unix epoch.
    pub departure: f64,
    pub origin_zone: Option<String>,
    pub destination_zone: Option<String>,
    pub distance_km: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneCount {
    pub zones: usize,
    /// Trip endpoints without a zone, counted together as one extra zone.
    pub unmapped_endpoints: usize,
}

pub fn od_zone_count(trips: &[TripSummary]) -> ZoneCount {
    let mut zones = BTreeSet::new();
    let mut unmapped = 0;
    for t in trips {
        for z in [&t.origin_zone, &t.destination_zone] {
            match z {
                Some(z) => {
                    zones.insert(z.as_str());
                }
                None => {
                    unmapped += 1;
                    zones.insert(UNKNOWN_ZONE);
                }
            }
        }
    }
    ZoneCount {
        zones: zones.len(),
        unmapped_endpoints: unmapped,
    }
}

/// Zone bordered by `segment`, in either direction. A segment bordering
/// no zone is its own zone.
pub fn zone_of_segment(zones: &[TrafficZone], segment: &SegmentKey) -> String {
    let reverse = SegmentKey::new(segment.to.clone(), segment.from.clone());
    zones
        .iter()
        .find(|z| z.boundary_segments.contains(segment) || z.boundary_segments.contains(&reverse))
        .map_or_else(|| format!("seg:{segment}"), |z| z.zone_id.clone())
}

/// Per-vehicle trip summaries: origin from the first traversed segment,
/// destination from the last, distance from chainage.
pub fn trip_summaries(trips: &[Trip], net: &RoadNetwork, zones: &[TrafficZone]) -> BTreeMap<VehicleId, Vec<TripSummary>> {
    let mut out: BTreeMap<VehicleId, Vec<TripSummary>> = BTreeMap::new();
    for t in trips {
        let p = &t.passings;
        let seg = |a: usize, b: usize| {
            let key = SegmentKey::new(p[a].node.clone(), p[b].node.clone());
            net.segment(&key).map(|_| zone_of_segment(zones, &key))
        };
        let (origin, destination) = if p.len() >= 2 {
            (seg(0, 1), seg(p.len() - 2, p.len() - 1))
        } else {
            (None, None)
        };
        out.entry(t.vehicle_id.clone()).or_default().push(TripSummary {
            departure: t.start_time(),
            origin_zone: origin,
            destination_zone: destination,
            distance_km: p.last().map_or(0.0, |x| x.x / 1000.0),
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassThresholds {
    /// Clustering radius in minutes.
    pub eps_minutes: f64,
    pub min_pts: usize,
    pub percentile: u32,
    pub min_active_days: usize,
    /// Offset of local time from UTC, in seconds.
    pub utc_offset: i64,
    pub morning: (f64, f64),
    pub evening: (f64, f64),
    pub temporal_dts: Vec<u32>,
    pub spatial_odz_below: u32,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds {
            eps_minutes: 45.0,
            min_pts: 3,
            percentile: 85,
            min_active_days: 7,
            utc_offset: 8 * 3600,
            morning: (390.0, 570.0),
            evening: (990.0, 1170.0),
            temporal_dts: vec![2, 3, 4],
            spatial_odz_below: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelerActivity {
    pub traveler: VehicleId,
    pub trips: Vec<TripSummary>,
    pub commercial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelerProfile {
    pub traveler: VehicleId,
    pub monthly_trips: usize,
    pub active_days: usize,
    pub dts_85: u32,
    pub odz_85: u32,
    pub total_distance_km: f64,
    pub classifiable: bool,
    pub commuter: bool,
    pub commercial: bool,
    pub temporally_concentrated: bool,
    pub spatially_concentrated: bool,
    pub regular: bool,
}

fn local_day_minute(t: f64, utc_offset: i64) -> (i64, f64) {
    let local = t + utc_offset as f64;
    let day = (local / 86_400.0).floor();
    (day as i64, (local - day * 86_400.0) / 60.0)
}

fn in_window(m: f64, w: (f64, f64)) -> bool {
    m >= w.0 && m <= w.1
}

/// Sections come from clustering the whole month; each day's DTS is the
/// number of sections its departures fall into, and its ODZ the number of
/// distinct endpoint zones.
pub fn profile_traveler(a: &TravelerActivity, th: &ClassThresholds) -> TravelerProfile {
    let stamps: Vec<(i64, f64)> = a.trips.iter().map(|t| local_day_minute(t.departure, th.utc_offset)).collect();
    let minutes: Vec<f64> = stamps.iter().map(|s| s.1).collect();
    let labels = section_labels(&minutes, th.eps_minutes, th.min_pts);
    let mut days: BTreeMap<i64, (BTreeSet<usize>, Vec<TripSummary>)> = BTreeMap::new();
    for ((s, l), t) in stamps.iter().zip(&labels).zip(&a.trips) {
        let d = days.entry(s.0).or_default();
        d.0.extend(*l);
        d.1.push(t.clone());
    }
    let dts: Vec<u32> = days.values().map(|d| d.0.len() as u32).collect();
    let odz: Vec<u32> = days.values().map(|d| od_zone_count(&d.1).zones as u32).collect();
    let dts_85 = nearest_rank(&dts, th.percentile).unwrap_or(0);
    let odz_85 = nearest_rank(&odz, th.percentile).unwrap_or(0);
    let classifiable = days.len() >= th.min_active_days;
    let centers = section_centers(&minutes, &labels);
    let commute_peaks = centers.values().any(|&c| in_window(c, th.morning))
        && centers.values().any(|&c| in_window(c, th.evening));
    let commuter = classifiable && dts_85 == 2 && commute_peaks;
    let commercial = classifiable && a.commercial;
    let temporally = classifiable && th.temporal_dts.contains(&dts_85);
    let spatially = classifiable && odz_85 < th.spatial_odz_below;
    TravelerProfile {
        traveler: a.traveler.clone(),
        monthly_trips: a.trips.len(),
        active_days: days.len(),
        dts_85,
        odz_85,
        total_distance_km: a.trips.iter().map(|t| t.distance_km).sum(),
        classifiable,
        commuter,
        commercial,
        temporally_concentrated: temporally,
        spatially_concentrated: spatially,
        regular: commuter || commercial || temporally || spatially,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub population: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassShares {
    pub commuter: ClassShare,
    pub commercial: ClassShare,
    pub temporally_concentrated: ClassShare,
    pub spatially_concentrated: ClassShare,
    pub regular: ClassShare,
    pub unclassifiable: usize,
}

pub fn concentration_and_classes(acts: &[TravelerActivity], th: &ClassThresholds) -> (Vec<TravelerProfile>, ClassShares) {
    let profiles: Vec<TravelerProfile> = acts.iter().map(|a| profile_traveler(a, th)).collect();
    let n = profiles.len() as f64;
    let total: f64 = profiles.iter().map(|p| p.total_distance_km).sum();
    let share = |f: fn(&TravelerProfile) -> bool| {
        let members: Vec<&TravelerProfile> = profiles.iter().filter(|p| f(p)).collect();
        ClassShare {
            population: if n > 0.0 { members.len() as f64 / n } else { 0.0 },
            distance: if total > 0.0 {
                members.iter().fold(0.0, |acc, p| acc + p.total_distance_km) / total
            } else {
                0.0
            },
        }
    };
    let shares = ClassShares {
        commuter: share(|p| p.commuter),
        commercial: share(|p| p.commercial),
        temporally_concentrated: share(|p| p.temporally_concentrated),
        spatially_concentrated: share(|p| p.spatially_concentrated),
        regular: share(|p| p.regular),
        unclassifiable: profiles.iter().filter(|p| !p.classifiable).count(),
    };
    (profiles, shares)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzCurve {
    /// `(population share, distance share)` from `(0, 0)` to `(1, 1)`,
    /// travelers taken in descending order of distance.
    pub points: Vec<(f64, f64)>,
    pub top_1_percent_share: f64,
}

impl LorenzCurve {
    /// Distance share of the top `ceil(pct * n / 100)` travelers.
    pub fn top_share(&self, pct: u32) -> f64 {
        let n = self.points.len() - 1;
        let k = (pct as usize * n).div_ceil(100).clamp(1, n);
        self.points[k].1
    }
}

pub fn lorenz_curve(distances: &[f64]) -> Result<LorenzCurve, AnalyticsError> {
    if let Some(&d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(AnalyticsError::BadDistance(d));
    }
    let mut d = distances.to_vec();
    d.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = d.iter().sum();
    if !(total > 0.0) {
        return Err(AnalyticsError::ZeroDistance);
    }
    let n = d.len();
    let mut points = Vec::with_capacity(n + 1);
    points.push((0.0, 0.0));
    let mut acc = 0.0;
    for (i, x) in d.iter().enumerate() {
        acc += x;
        points.push(((i + 1) as f64 / n as f64, (acc / total).min(1.0)));
    }
    points[n] = (1.0, 1.0);
    let mut curve = LorenzCurve {
        points,
        top_1_percent_share: 0.0,
    };
    curve.top_1_percent_share = curve.top_share(1);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(k: f64) -> f64 {
        15.0 * shape(k, 0.19, 1.0, 0.05)
    }

    #[test]
    fn noiseless_fit_recovers_generator() {
        let samples: Vec<(f64, f64)> = (1..40).map(|i| {
            let k = i as f64 * 0.0045;
            (k, model(k))
        }).collect();
        let fit = fit_fundamental_diagram(&samples, 1.0, 0.05).unwrap();
        assert!((fit.k_j_hat / 0.19 - 1.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.v_f_hat / 15.0 - 1.0).abs() < 1e-6, "{fit:?}");
        let k_star = 0.19 * 1.05f64.powf(-20.0);
        assert!((fit.q_m_hat - k_star * model(k_star)).abs() < 1e-6);
    }

    #[test]
    fn fit_rejects_degenerate_data() {
        let same = vec![(0.05, 3.0); 12];
        assert_eq!(fit_fundamental_diagram(&same, 1.0, 0.05), Err(AnalyticsError::Degenerate));
        assert!(matches!(
            fit_fundamental_diagram(&same[..3], 1.0, 0.05),
            Err(AnalyticsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn sections_examples() {
        let mut pts: Vec<f64> = (0..20).map(|i| 480.0 - 5.0 + i as f64 * 0.5).collect();
        pts.extend((0..20).map(|i| 1080.0 - 5.0 + i as f64 * 0.5));
        assert_eq!(departure_time_sections(&pts, 30.0, 4), 2);
        assert_eq!(departure_time_sections(&[600.0; 10], 45.0, 3), 1);
        assert_eq!(departure_time_sections(&[100.0, 500.0, 900.0], 30.0, 4), 0);
        assert_eq!(departure_time_sections(&[], 45.0, 3), 0);
    }

    #[test]
    fn sections_wrap_at_midnight() {
        assert_eq!(departure_time_sections(&[1430.0, 1435.0, 5.0, 10.0], 10.0, 3), 1);
        let l = section_labels(&[1430.0, 1435.0, 5.0], 20.0, 3);
        let c = section_centers(&[1430.0, 1435.0, 5.0], &l);
        assert!(circular_gap(c[&0], 1436.666_666) < 1e-3);
    }

    #[test]
    fn nearest_rank_is_order_statistic() {
        let v: Vec<u32> = (1..=20).rev().collect();
        assert_eq!(nearest_rank(&v, 85), Some(17));
        assert_eq!(nearest_rank(&[], 85), None);
        assert_eq!(nearest_rank(&[4], 85), Some(4));
    }

    fn summary(o: &str, d: &str) -> TripSummary {
        TripSummary {
            departure: 0.0,
            origin_zone: Some(o.into()),
            destination_zone: Some(d.into()),
            distance_km: 1.0,
        }
    }

    #[test]
    fn zone_counts() {
        assert_eq!(od_zone_count(&[summary("z1", "z2"), summary("z2", "z1")]).zones, 2);
        assert!(od_zone_count(&[summary("z1", "z3")]).zones <= 2);
        let mut t = summary("z1", "z1");
        t.destination_zone = None;
        assert_eq!(od_zone_count(&[t]), ZoneCount { zones: 2, unmapped_endpoints: 1 });
    }

    fn activity(days: usize, times: &[f64], zones: &[(&str, &str)]) -> TravelerActivity {
        let mut trips = Vec::new();
        for d in 0..days {
            for (m, z) in times.iter().zip(zones) {
                let mut s = summary(z.0, z.1);
                // Local midnight of 2020-09-14 in UTC+8.
                s.departure = 1_600_041_600.0 - 28_800.0 + d as f64 * 86_400.0 + m * 60.0;
                trips.push(s);
            }
        }
        TravelerActivity {
            traveler: VehicleId::from("x"),
            trips,
            commercial: false,
        }
    }

    #[test]
    fn commuter_and_concentration_flags() {
        let th = ClassThresholds::default();
        let p = profile_traveler(&activity(20, &[480.0, 1080.0], &[("h", "w"), ("w", "h")]), &th);
        assert_eq!((p.dts_85, p.odz_85, p.active_days), (2, 2, 20));
        assert!(p.temporally_concentrated && p.spatially_concentrated && p.commuter && p.regular);

        let z = [("a", "b"), ("c", "d"), ("e", "f")];
        let p = profile_traveler(&activity(10, &[300.0, 700.0, 1300.0], &z), &th);
        assert_eq!((p.dts_85, p.odz_85), (3, 6));
        assert!(!p.spatially_concentrated && !p.commuter && p.temporally_concentrated);

        let p = profile_traveler(&activity(5, &[480.0, 1080.0], &[("h", "w"), ("w", "h")]), &th);
        assert!(!p.classifiable && !p.regular);
    }

    #[test]
    fn lorenz_examples() {
        let eq = lorenz_curve(&[2.0; 4]).unwrap();
        assert_eq!(eq.points, vec![(0.0, 0.0), (0.25, 0.25), (0.5, 0.5), (0.75, 0.75), (1.0, 1.0)]);
        let one = lorenz_curve(&[0.0, 5.0, 0.0]).unwrap();
        assert_eq!(one.points[1].1, 1.0);
        assert_eq!(lorenz_curve(&[0.0, 0.0]), Err(AnalyticsError::ZeroDistance));
    }
}
