use std::fs;
use std::path::{Path, PathBuf};

use holo_core::detect::{loop_rows, sample_fcd, DetectError, FcdConfig, LoopDetectorConfig, ProbeSelection, DEFAULT_PENETRATION};
use holo_core::reconstruct::{derive_seed, Trajectory};
use holo_core::{RoadNetwork, Turn};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Failure, Result};
use crate::properties::{LoopGroup, MeasurementProperties};
use crate::store;

pub const FCD_FILE: &str = "fcd.csv";

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: String,
    seed: u64,
    f_time: String,
    t_time: String,
    outputs: Vec<&'a str>,
}

fn loop_file(
    g: &LoopGroup,
    trajectories: &[Trajectory],
    net: &RoadNetwork,
    props: &MeasurementProperties,
    seed: u64,
) -> Result<(String, Vec<u8>)> {
    let segment = net
        .segment(&g.ft_node)
        .ok_or_else(|| DetectError::UnknownSegment(g.ft_node.clone()))?;
    let cfg = LoopDetectorConfig {
        missing_rate: g.missing_rate,
        seed: derive_seed(seed, &format!("loop:{}", g.loop_id)),
        ..LoopDetectorConfig::new(g.loop_id.clone(), g.ft_node.clone(), g.position, g.interval)
    };
    let on_segment: Vec<Trajectory> = trajectories.iter().filter(|t| t.segment == g.ft_node).cloned().collect();
    let rows = loop_rows(
        &on_segment,
        &cfg,
        segment.length_m,
        Turn::Unknown,
        props.f_time.secs(),
        props.t_time.secs(),
    )?;
    Ok((format!("{}.csv", g.loop_id), store::csv_bytes(&rows)?))
}

fn fcd_file(trajectories: &[Trajectory], net: &RoadNetwork, props: &MeasurementProperties, seed: u64) -> Result<Vec<u8>> {
    let cfg = FcdConfig {
        sample_period: props.fcd_sampling_sec,
        probes: ProbeSelection::Penetration(DEFAULT_PENETRATION),
        hash_salt: format!("{:016x}", derive_seed(seed, "salt")),
        seed: derive_seed(seed, "fcd"),
    };
    let (from, to) = (props.f_time.secs(), props.t_time.secs());
    let rows: Vec<_> = sample_fcd(trajectories, &cfg, net)?
        .into_iter()
        .filter(|r| r.time.secs() >= from && r.time.secs() < to)
        .collect();
    store::csv_bytes(&rows)
}

/// Runs the virtual detectors over the trajectory store and returns the
/// written files, manifest last.
pub fn run_measure(data_dir: &Path, properties: &Path, seed_override: Option<u64>) -> Result<Vec<PathBuf>> {
    let text = fs::read(properties).map_err(|e| Failure::config(format!("{}: {e}", properties.display())))?;
    let props = MeasurementProperties::parse(
        std::str::from_utf8(&text).map_err(|_| Failure::config("properties file is not UTF-8"))?,
    )?;
    let seed = seed_override.or(props.seed).unwrap_or(0);
    let out_dir = props.output_dir.clone().unwrap_or_else(|| data_dir.join("measurement"));

    let net = store::read_network(data_dir)?;
    let trajectories = store::read_trajectories(&data_dir.join(store::TRAJECTORIES))?;

    let mut files: Vec<(String, Vec<u8>)> = props
        .loops
        .par_iter()
        .map(|g| loop_file(g, &trajectories, &net, &props, seed))
        .collect::<Result<_>>()?;
    if props.need_fcd {
        files.push((FCD_FILE.to_string(), fcd_file(&trajectories, &net, &props, seed)?));
    }
    let manifest = Manifest {
        config_sha256: hex::encode(Sha256::digest(&text)),
        seed,
        f_time: props.f_time.render(),
        t_time: props.t_time.render(),
        outputs: files.iter().map(|f| f.0.as_str()).collect(),
    };
    let manifest = store::json_bytes(&manifest);
    files.push((store::MANIFEST.to_string(), manifest));
    store::write_all(&out_dir, &files)
}
