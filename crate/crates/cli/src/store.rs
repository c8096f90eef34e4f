//! Files of a data directory. The trajectory store is plain JSON; an
//! encrypted store would plug in behind [`read_trajectories`].

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use holo_core::ingest::{
    network_from_rows, plans_from_rows, read_table, write_table_bytes, LprRow, NodeRow, RoadNetworkRow, Schema,
    SignalPlanRow,
};
use holo_core::reconstruct::{StreamParams, Trajectory};
use holo_core::tripbuild::TripSet;
use holo_core::{RoadNetwork, SignalPlans};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Failure, Result};

pub const NODES: &str = "nodes.csv";
pub const ROADS: &str = "roads.csv";
pub const PLANS: &str = "signal_plans.csv";
pub const LPR: &str = "lpr.csv";
pub const TRAJECTORIES: &str = "trajectories.json";
pub const TRIPS: &str = "trips.json";
pub const RECONSTRUCTED: &str = "reconstructed.json";
pub const MANIFEST: &str = "manifest.json";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::io(path, e))
}

pub fn read_csv<T: Schema>(path: &Path) -> Result<Vec<T>> {
    read_table(open(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn csv_bytes<T: Schema>(rows: &[T]) -> Result<Vec<u8>> {
    Ok(write_table_bytes(rows)?)
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn read_network(dir: &Path) -> Result<RoadNetwork> {
    let nodes: Vec<NodeRow> = read_csv(&dir.join(NODES))?;
    let roads: Vec<RoadNetworkRow> = read_csv(&dir.join(ROADS))?;
    Ok(network_from_rows(&nodes, &roads)?)
}

pub fn read_plans(dir: &Path) -> Result<SignalPlans> {
    let rows: Vec<SignalPlanRow> = read_csv(&dir.join(PLANS))?;
    Ok(plans_from_rows(&rows))
}

pub fn read_lpr(path: &Path) -> Result<Vec<LprRow>> {
    read_csv(path)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_json(path)
}

pub fn read_trips(path: &Path) -> Result<TripSet> {
    read_json(path)
}

pub fn read_params(path: Option<&Path>) -> Result<StreamParams> {
    let Some(path) = path else {
        return Ok(default_params());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let p: StreamParams =
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    p.validate()?;
    Ok(p)
}

pub fn default_params() -> StreamParams {
    StreamParams::new(0.36, 0.06, 0.19, 15.0)
}

/// Writes all files in order, removing the ones already written if any fails.
pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            remove_all(&written);
            let _ = fs::remove_file(&path);
            return Err(Failure::io(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}
