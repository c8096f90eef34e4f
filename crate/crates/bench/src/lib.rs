//! Fixtures shared by the benchmarks.

use holo_core::reconstruct::{streams_from_trips, StreamObservation};
use holo_core::simcore::{run_scenario, GroundTruth, ScenarioConfig};
use holo_core::tripbuild::{build_trips, records_from_lpr, LprRecord, TripConfig, TripSet};
use holo_core::RoadNetwork;

/// `n` by `n` grid of bidirectional 200 m segments; every `avi_every`-th
/// node carries a camera.
pub fn grid(n: usize, avi_every: usize) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    let id = |r: usize, c: usize| format!("G{r}-{c}");
    for r in 0..n {
        for c in 0..n {
            net.add_node(id(r, c), (r * n + c) % avi_every == 0).unwrap();
        }
    }
    for r in 0..n {
        for c in 0..n {
            for (rr, cc) in [(r + 1, c), (r, c + 1)] {
                if rr < n && cc < n {
                    net.add_segment(id(r, c), id(rr, cc), 200.0, 1).unwrap();
                    net.add_segment(id(rr, cc), id(r, c), 200.0, 1).unwrap();
                }
            }
        }
    }
    net
}

pub struct Corridor {
    pub truth: GroundTruth,
    pub records: Vec<LprRecord>,
    pub trips: TripSet,
    pub streams: Vec<StreamObservation>,
    pub config: ScenarioConfig,
}

pub fn corridor(vehicles: usize, cycles: usize, seed: u64) -> Corridor {
    let config = ScenarioConfig::test_corridor(vehicles, cycles, seed);
    let (truth, lpr) = run_scenario(&config).unwrap();
    let records = records_from_lpr(&lpr);
    let trips = build_trips(
        &records,
        &truth.network,
        &truth.plans,
        &TripConfig::default(),
        &Default::default(),
    )
    .unwrap();
    let streams = streams_from_trips(&trips.trips, &truth.network);
    Corridor {
        truth,
        records,
        trips,
        streams,
        config,
    }
}
