//! Identifiers and small value types shared by every module.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Intersection identifier. Must be non-empty and must not contain `_`,
/// which joins node IDs inside a road ID.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Letters, digits, `-` and `.` only; `_` is reserved as the road-id joiner.
    pub fn is_valid(&self) -> bool {
        !self.0.is_empty()
            && self
                .0
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'.')
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Directed road segment, keyed by its upstream and downstream node.
/// Rendered as the `ROADID` convention `<upstream>_<downstream>`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentKey {
    pub from: NodeId,
    pub to: NodeId,
}

impl SegmentKey {
    pub fn new(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        SegmentKey {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn touches(&self, node: &NodeId) -> bool {
        &self.from == node || &self.to == node
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.from, self.to)
    }
}

impl FromStr for SegmentKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('_');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                Ok(SegmentKey::new(a, b))
            }
            _ => Err(format!("road id '{s}' is not '<upstream>_<downstream>'")),
        }
    }
}

/// Turning movement at the downstream end of a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Turn {
    #[serde(rename = "S")]
    Straight,
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "U")]
    UTurn,
    /// No downstream movement observed.
    Unknown,
}

impl Turn {
    pub fn code(self) -> &'static str {
        match self {
            Turn::Straight => "S",
            Turn::Left => "L",
            Turn::Right => "R",
            Turn::UTurn => "U",
            Turn::Unknown => "Unknown",
        }
    }

    /// Parses one of `S`, `L`, `R`, `U`, `Unknown`.
    pub fn parse(s: &str) -> Option<Turn> {
        Some(match s {
            "S" => Turn::Straight,
            "L" => Turn::Left,
            "R" => Turn::Right,
            "U" => Turn::UTurn,
            "Unknown" => Turn::Unknown,
            _ => return None,
        })
    }
}

impl fmt::Display for Turn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub String);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VehicleId {
    fn from(s: &str) -> Self {
        VehicleId(s.to_string())
    }
}

/// Vehicle class as coded in the published tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub enum VehicleType {
    Large,
    #[default]
    Regular,
}

impl VehicleType {
    pub fn code(self) -> u8 {
        match self {
            VehicleType::Large => 1,
            VehicleType::Regular => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(VehicleType::Large),
            2 => Some(VehicleType::Regular),
            _ => None,
        }
    }
}

/// Resolution of rendered timestamps, in seconds.
pub const TIME_RESOLUTION: f64 = 1e-3;

/// Seconds since the Unix epoch (UTC).
///
/// Files render timestamps as `YYYY-MM-DD hh:mm:ss`, with a `.mmm`
/// millisecond suffix only when the value is not on a whole second.
/// Values built with [`Timestamp::from_millis`] survive a text round trip
/// bit-exactly.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Timestamp(pub f64);

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms as f64 / 1000.0)
    }

    pub fn secs(self) -> f64 {
        self.0
    }

    pub fn to_millis(self) -> i64 {
        (self.0 * 1000.0).round() as i64
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (s, None),
        };
        let dt = NaiveDateTime::parse_from_str(whole, TIMESTAMP_FORMAT).ok()?;
        let mut ms = dt.and_utc().timestamp().checked_mul(1000)?;
        if let Some(f) = frac {
            if f.len() != 3 || !f.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            ms += f.parse::<i64>().ok()?;
        }
        Some(Timestamp::from_millis(ms))
    }

    pub fn render(self) -> String {
        let ms = self.to_millis();
        let secs = ms.div_euclid(1000);
        let rem = ms.rem_euclid(1000);
        let dt = DateTime::from_timestamp(secs, 0)
            .map(|d| d.naive_utc())
            .unwrap_or_default();
        if rem == 0 {
            dt.format(TIMESTAMP_FORMAT).to_string()
        } else {
            format!("{}.{rem:03}", dt.format(TIMESTAMP_FORMAT))
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn road_id_round_trip() {
        let k: SegmentKey = "N1_N2".parse().unwrap();
        assert_eq!(k, SegmentKey::new("N1", "N2"));
        assert_eq!(k.to_string(), "N1_N2");
        assert!("N1N2".parse::<SegmentKey>().is_err());
        assert!("a_b_c".parse::<SegmentKey>().is_err());
        assert!("_b".parse::<SegmentKey>().is_err());
    }

    #[test]
    fn timestamp_rendering() {
        let t = Timestamp::parse("2020-09-15 07:00:00").unwrap();
        assert_eq!(t.secs(), 1_600_153_200.0);
        assert_eq!(t.render(), "2020-09-15 07:00:00");
        let t = Timestamp::parse("2020-09-15 07:00:00.250").unwrap();
        assert_eq!(t.render(), "2020-09-15 07:00:00.250");
        assert!(Timestamp::parse("2020-09-15 07:00").is_none());
        assert!(Timestamp::parse("2020-09-15 07:00:00.5").is_none());
    }
}
