use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use holo_core::analytics::{
    concentration_and_classes, fit_fundamental_diagram, lorenz_curve, samples_from_loop_rows, trip_summaries,
    ClassThresholds, TravelerActivity,
};
use holo_core::ingest::{fmt6, network_to_rows, plans_to_rows, LoopRow};
use holo_core::reconstruct::{reconstruct_streams, streams_from_trips, StreamParams, Trajectory};
use holo_core::simcore::{run_scenario, ScenarioConfig};
use holo_core::tripbuild::{build_trips, records_from_lpr, TripConfig, TripSet};
use holo_core::netmodel::DEFAULT_MAX_HOPS;
use holo_core::VehicleId;
use serde::Serialize;

use crate::error::{Failure, Result};
use crate::store;

pub struct Shared {
    pub seed: u64,
    pub params: StreamParams,
    pub v_min: Option<f64>,
}

pub fn verify_net(dir: &Path, max_hops: usize, report: Option<&Path>) -> Result<()> {
    let net = store::read_network(dir)?;
    let r = net.verify_full_sensing(max_hops)?;
    println!("is_fsrn: {}", r.is_fsrn);
    for v in &r.violations {
        println!("violation: {} -> {} ({} paths)", v.from, v.to, v.path_count);
    }
    if let Some(path) = report {
        fs::write(path, store::json_bytes(&r)).map_err(|e| Failure::io(path, e))?;
    }
    Ok(())
}

pub fn build(dir: &Path, lpr: Option<&Path>, out: Option<&Path>, v_max: Option<f64>, max_hops: usize, shared: &Shared) -> Result<()> {
    let net = store::read_network(dir)?;
    let plans = store::read_plans(dir)?;
    let rows = store::read_lpr(&lpr.map_or_else(|| dir.join(store::LPR), Path::to_path_buf))?;
    let cfg = TripConfig {
        v_min: shared.v_min.unwrap_or(shared.params.v_min),
        v_max,
        max_hops,
        ..TripConfig::default()
    };
    let set = build_trips(&records_from_lpr(&rows), &net, &plans, &cfg, &BTreeMap::new())?;
    let out = out.map_or_else(|| dir.join(store::TRIPS), Path::to_path_buf);
    fs::write(&out, store::json_bytes(&set)).map_err(|e| Failure::io(&out, e))?;
    println!("trips: {}", set.trips.len());
    println!("disconnections: {}", set.disconnections.len());
    Ok(())
}

pub fn reconstruct(dir: &Path, trips: Option<&Path>, out: Option<&Path>, shared: &Shared) -> Result<()> {
    let net = store::read_network(dir)?;
    let plans = store::read_plans(dir)?;
    let set = store::read_trips(&trips.map_or_else(|| dir.join(store::TRIPS), Path::to_path_buf))?;
    let streams = streams_from_trips(&set.trips, &net);
    let results = reconstruct_streams(&streams, &plans, &shared.params, shared.seed)?;
    let trajectories: Vec<Trajectory> = results.into_iter().flat_map(|r| r.trajectories).collect();
    let out = out.map_or_else(|| dir.join(store::RECONSTRUCTED), Path::to_path_buf);
    fs::write(&out, store::json_bytes(&trajectories)).map_err(|e| Failure::io(&out, e))?;
    println!("streams: {}", streams.len());
    println!("trajectories: {}", trajectories.len());
    Ok(())
}

#[derive(Serialize)]
struct SimManifest {
    seed: u64,
    vehicles: usize,
    cycles: usize,
    miss_rate: f64,
    simulated_vehicles: usize,
    lpr_rows: usize,
}

pub fn simulate(out: &Path, vehicles: usize, cycles: usize, miss_rate: f64, shared: &Shared) -> Result<()> {
    let mut cfg = ScenarioConfig::test_corridor(vehicles, cycles, shared.seed);
    cfg.params = shared.params.clone();
    cfg.recognition_miss_rate = miss_rate;
    let (truth, lpr) = run_scenario(&cfg)?;
    let (nodes, roads) = network_to_rows(&truth.network);
    let trajectories: Vec<&Trajectory> = truth.passages.iter().map(|p| &p.trajectory).collect();
    let manifest = SimManifest {
        seed: shared.seed,
        vehicles,
        cycles,
        miss_rate,
        simulated_vehicles: truth.vehicles.len(),
        lpr_rows: lpr.len(),
    };
    let files = vec![
        (store::NODES.to_string(), store::csv_bytes(&nodes)?),
        (store::ROADS.to_string(), store::csv_bytes(&roads)?),
        (store::PLANS.to_string(), store::csv_bytes(&plans_to_rows(&truth.plans))?),
        (store::LPR.to_string(), store::csv_bytes(&lpr)?),
        (store::TRAJECTORIES.to_string(), store::json_bytes(&trajectories)),
        (store::MANIFEST.to_string(), store::json_bytes(&manifest)),
    ];
    store::write_all(out, &files)?;
    println!("vehicles: {}", truth.vehicles.len());
    println!("lpr rows: {}", lpr.len());
    Ok(())
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(short, long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub trips: Option<PathBuf>,
    /// Per-traveler distances, one per line, instead of trips.
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Write the Lorenz curve of traveled distance.
    #[arg(long)]
    pub lorenz: Option<PathBuf>,
    /// Write traveler profiles and class shares as JSON.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Commercial vehicle IDs, one per line.
    #[arg(long)]
    pub commercial: Option<PathBuf>,
    /// Class thresholds as TOML.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Fit the fundamental diagram to a loop detector table.
    #[arg(long)]
    pub fd: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub lanes: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_HOPS)]
    pub max_hops: usize,
}

fn read_distances(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse()
                .map_err(|_| Failure::data(format!("{}:{}: not a number: '{l}'", path.display(), i + 1)))
        })
        .collect()
}

fn read_ids(path: &Path) -> Result<BTreeSet<VehicleId>> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(VehicleId::from)
        .collect())
}

fn read_thresholds(path: Option<&Path>) -> Result<ClassThresholds> {
    let Some(path) = path else {
        return Ok(ClassThresholds::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ClassReport {
    shares: holo_core::analytics::ClassShares,
    profiles: Vec<holo_core::analytics::TravelerProfile>,
}

pub fn analyze(a: &AnalyzeArgs, shared: &Shared) -> Result<()> {
    if a.lorenz.is_none() && a.classes.is_none() && a.fd.is_none() {
        return Err(Failure::config("analyze needs at least one of --lorenz, --classes, --fd"));
    }
    let trip_data = |a: &AnalyzeArgs| -> Result<(holo_core::RoadNetwork, TripSet)> {
        let dir = a
            .data_dir
            .as_deref()
            .ok_or_else(|| Failure::config("trip analytics need --data-dir"))?;
        let net = store::read_network(dir)?;
        let trips = store::read_trips(&a.trips.clone().unwrap_or_else(|| dir.join(store::TRIPS)))?;
        Ok((net, trips))
    };

    if let Some(out) = &a.lorenz {
        let distances = match &a.distances {
            Some(p) => read_distances(p)?,
            None => {
                let (net, set) = trip_data(a)?;
                trip_summaries(&set.trips, &net, &[])
                    .values()
                    .map(|ts| ts.iter().map(|t| t.distance_km).sum())
                    .collect()
            }
        };
        let curve = lorenz_curve(&distances)?;
        let mut text = String::from("POPULATION_SHARE,DISTANCE_SHARE\n");
        for (x, y) in &curve.points {
            text.push_str(&format!("{},{}\n", fmt6(*x), fmt6(*y)));
        }
        fs::write(out, text).map_err(|e| Failure::io(out, e))?;
        println!("travelers: {}", distances.len());
        println!("top_1_percent_share: {}", fmt6(curve.top_1_percent_share));
    }

    if let Some(out) = &a.classes {
        let (net, set) = trip_data(a)?;
        let (_, zones) = net.extract_fsrn(a.max_hops)?;
        let commercial = match &a.commercial {
            Some(p) => read_ids(p)?,
            None => BTreeSet::new(),
        };
        let acts: Vec<TravelerActivity> = trip_summaries(&set.trips, &net, &zones)
            .into_iter()
            .map(|(traveler, trips)| TravelerActivity {
                commercial: commercial.contains(&traveler),
                traveler,
                trips,
            })
            .collect();
        let (profiles, shares) = concentration_and_classes(&acts, &read_thresholds(a.thresholds.as_deref())?);
        fs::write(out, store::json_bytes(&ClassReport { shares, profiles })).map_err(|e| Failure::io(out, e))?;
        println!("travelers: {}", acts.len());
    }

    if let Some(path) = &a.fd {
        let rows: Vec<LoopRow> = store::read_csv(path)?;
        let fit = fit_fundamental_diagram(
            &samples_from_loop_rows(&rows, a.lanes),
            shared.params.alpha,
            shared.params.beta,
        )?;
        print!("{}", String::from_utf8(store::json_bytes(&fit)).expect("utf-8 json"));
    }
    Ok(())
}
