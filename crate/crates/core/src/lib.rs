//! Reconstruction of vehicle trajectories from plate-recognition records on
//! signalized road networks, plus virtual detection over the result.

pub mod analytics;
pub mod detect;
pub mod ingest;
pub mod netmodel;
pub mod reconstruct;
pub mod signal;
pub mod simcore;
pub mod tripbuild;
pub mod types;

pub use netmodel::{
    decompose_trip, FullSensingReport, NetError, PathDecomposition, PathPart, RoadNetwork,
    TrafficZone,
};
pub use signal::{GreenWindow, MovementKey, SignalPlans};
pub use types::{NodeId, SegmentKey, Timestamp, Turn, VehicleId, VehicleType};
