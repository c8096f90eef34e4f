use std::fmt;
use std::path::Path;

use holo_core::analytics::AnalyticsError;
use holo_core::detect::DetectError;
use holo_core::ingest::IngestError;
use holo_core::reconstruct::ReconError;
use holo_core::simcore::SimError;
use holo_core::tripbuild::TripError;
use holo_core::NetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Model,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn model(message: impl Into<String>) -> Self {
        Failure {
            kind: Kind::Model,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Model => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure::data(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::ZeroHops => Failure::config(e.to_string()),
            NetError::Obstruction { .. } | NetError::ModelInconsistency(_) => Failure::model(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<TripError> for Failure {
    fn from(e: TripError) -> Self {
        match e {
            TripError::BadSpeed(_) => Failure::config(e.to_string()),
            TripError::Net(n) => n.into(),
            TripError::MissingPlan { .. } | TripError::InvalidPath(_) => Failure::data(e.to_string()),
            _ => Failure::model(e.to_string()),
        }
    }
}

impl From<ReconError> for Failure {
    fn from(e: ReconError) -> Self {
        match e {
            ReconError::Params(_) => Failure::config(e.to_string()),
            _ => Failure::model(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::config(e.to_string()),
            SimError::Params(r) => r.into(),
            SimError::Net(n) => n.into(),
            _ => Failure::model(e.to_string()),
        }
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Config(_) | DetectError::UnknownSegment(_) => Failure::config(e.to_string()),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Shape => Failure::config(e.to_string()),
            AnalyticsError::BadDistance(_) => Failure::data(e.to_string()),
            _ => Failure::model(e.to_string()),
        }
    }
}
