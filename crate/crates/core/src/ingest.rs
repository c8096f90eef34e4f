//! Readers and writers for the published table layouts (road network,
//! loop, floating car, plate recognition), the signal-plan table and the
//! node side file.
//!
//! All tables are comma-separated UTF-8 with a header row. Readers accept
//! columns in any order; writers use the fixed column order below.
//! Timestamps render as `YYYY-MM-DD hh:mm:ss`, measurements with three
//! decimals and coordinates with six.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io::{Read, Write};

use thiserror::Error;

use crate::netmodel::{NetError, RoadNetwork, Segment};
use crate::signal::{GreenWindow, MovementKey, SignalPlans};
use crate::types::{NodeId, SegmentKey, Timestamp, Turn, VehicleType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("{schema}: header: {message}")]
    Header { schema: &'static str, message: String },
    #[error("{schema}: row {row}, column {column}: {message}")]
    Field {
        schema: &'static str,
        row: usize,
        column: String,
        message: String,
    },
    #[error("{schema}: {message}")]
    Io { schema: &'static str, message: String },
}

/// A failed field check, before the row number is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub column: &'static str,
    pub message: String,
}

impl FieldError {
    pub fn new(column: &'static str, message: impl Into<String>) -> Self {
        FieldError {
            column,
            message: message.into(),
        }
    }
}

/// Field access by column name for one record.
pub struct Fields<'a> {
    record: &'a csv::StringRecord,
    positions: &'a [usize],
    columns: &'static [&'static str],
}

impl Fields<'_> {
    pub fn get(&self, column: &'static str) -> &str {
        let i = self
            .columns
            .iter()
            .position(|c| *c == column)
            .expect("column belongs to schema");
        self.record.get(self.positions[i]).unwrap_or("")
    }

    fn text(&self, column: &'static str) -> Result<String, FieldError> {
        let v = self.get(column);
        if v.is_empty() {
            return Err(FieldError::new(column, "empty value"));
        }
        Ok(v.to_string())
    }

    fn float(&self, column: &'static str) -> Result<f64, FieldError> {
        let v = self.get(column);
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| FieldError::new(column, format!("'{v}' is not a number")))
    }

    fn uint(&self, column: &'static str) -> Result<u32, FieldError> {
        let v = self.get(column);
        v.parse::<u32>()
            .map_err(|_| FieldError::new(column, format!("'{v}' is not a non-negative integer")))
    }

    fn time(&self, column: &'static str) -> Result<Timestamp, FieldError> {
        let v = self.get(column);
        Timestamp::parse(v)
            .ok_or_else(|| FieldError::new(column, format!("'{v}' is not YYYY-MM-DD hh:mm:ss")))
    }

    fn road(&self, column: &'static str) -> Result<SegmentKey, FieldError> {
        parse_road(self.get(column)).map_err(|m| FieldError::new(column, m))
    }

    fn node(&self, column: &'static str) -> Result<NodeId, FieldError> {
        let id = NodeId::new(self.get(column));
        if !id.is_valid() {
            return Err(FieldError::new(column, format!("'{id}' is not a node id")));
        }
        Ok(id)
    }

    fn turn(&self, column: &'static str, allow_unknown: bool) -> Result<Turn, FieldError> {
        let v = self.get(column);
        match Turn::parse(v) {
            Some(Turn::Unknown) if !allow_unknown => {
                Err(FieldError::new(column, "'Unknown' is not a movement here"))
            }
            Some(t) => Ok(t),
            None => Err(FieldError::new(column, format!("'{v}' is not a turn code"))),
        }
    }
}

fn parse_road(s: &str) -> Result<SegmentKey, String> {
    let key: SegmentKey = s.parse()?;
    if !key.from.is_valid() || !key.to.is_valid() {
        return Err(format!("'{s}' is not a road id"));
    }
    Ok(key)
}

pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

pub trait Schema: Sized + Clone + PartialEq + Debug {
    const NAME: &'static str;
    const COLUMNS: &'static [&'static str];

    fn parse(fields: &Fields) -> Result<Self, FieldError>;
    fn render(&self) -> Vec<String>;

    /// Row-level invariants.
    fn check(&self) -> Result<(), FieldError> {
        Ok(())
    }

    /// Invariants spanning rows. Errors carry the 1-based row number.
    fn check_table(_rows: &[Self]) -> Result<(), IngestError> {
        Ok(())
    }
}

pub fn read_table<T: Schema, R: Read>(source: R) -> Result<Vec<T>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Header {
            schema: T::NAME,
            message: e.to_string(),
        })?
        .clone();
    let mut positions = Vec::with_capacity(T::COLUMNS.len());
    for col in T::COLUMNS {
        let matches: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h == col)
            .map(|(i, _)| i)
            .collect();
        match matches.as_slice() {
            [i] => positions.push(*i),
            [] => {
                return Err(IngestError::Header {
                    schema: T::NAME,
                    message: format!("missing column {col}"),
                })
            }
            _ => {
                return Err(IngestError::Header {
                    schema: T::NAME,
                    message: format!("duplicate column {col}"),
                })
            }
        }
    }
    if let Some(extra) = header.iter().find(|h| !T::COLUMNS.contains(h)) {
        return Err(IngestError::Header {
            schema: T::NAME,
            message: format!("unexpected column {extra}"),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::Io {
            schema: T::NAME,
            message: format!("row {row}: {e}"),
        })?;
        let fields = Fields {
            record: &record,
            positions: &positions,
            columns: T::COLUMNS,
        };
        let parsed = T::parse(&fields)
            .and_then(|r| r.check().map(|_| r))
            .map_err(|e| IngestError::Field {
                schema: T::NAME,
                row,
                column: e.column.to_string(),
                message: e.message,
            })?;
        rows.push(parsed);
    }
    T::check_table(&rows)?;
    Ok(rows)
}

pub fn write_table<T: Schema, W: Write>(sink: W, rows: &[T]) -> Result<(), IngestError> {
    for (i, r) in rows.iter().enumerate() {
        r.check().map_err(|e| IngestError::Field {
            schema: T::NAME,
            row: i + 1,
            column: e.column.to_string(),
            message: e.message,
        })?;
    }
    T::check_table(rows)?;
    let io = |e: csv::Error| IngestError::Io {
        schema: T::NAME,
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    w.write_record(T::COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record(r.render()).map_err(io)?;
    }
    w.flush().map_err(|e| IngestError::Io {
        schema: T::NAME,
        message: e.to_string(),
    })
}

pub fn write_table_bytes<T: Schema>(rows: &[T]) -> Result<Vec<u8>, IngestError> {
    let mut buf = Vec::new();
    write_table(&mut buf, rows)?;
    Ok(buf)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("#")
}

fn split_list(s: &str) -> Vec<&str> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split('#').collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetworkRow {
    pub road_id: SegmentKey,
    pub lane_num: u32,
    pub turn: Vec<Turn>,
    pub dn_road: Vec<SegmentKey>,
    pub geom: String,
    pub len: f64,
}

impl Schema for RoadNetworkRow {
    const NAME: &'static str = "road network";
    const COLUMNS: &'static [&'static str] = &["ROADID", "LANENUM", "TURN", "DN_ROAD", "GEOM", "LEN"];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        let turn = split_list(f.get("TURN"))
            .into_iter()
            .map(|t| match Turn::parse(t) {
                Some(Turn::Unknown) | None => {
                    Err(FieldError::new("TURN", format!("'{t}' is not one of S, L, R, U")))
                }
                Some(t) => Ok(t),
            })
            .collect::<Result<_, _>>()?;
        let dn_road = split_list(f.get("DN_ROAD"))
            .into_iter()
            .map(|r| parse_road(r).map_err(|m| FieldError::new("DN_ROAD", m)))
            .collect::<Result<_, _>>()?;
        Ok(RoadNetworkRow {
            road_id: f.road("ROADID")?,
            lane_num: f.uint("LANENUM")?,
            turn,
            dn_road,
            geom: f.text("GEOM")?,
            len: f.float("LEN")?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.road_id.to_string(),
            self.lane_num.to_string(),
            join(&self.turn),
            join(&self.dn_road),
            self.geom.clone(),
            fmt3(self.len),
        ]
    }

    fn check(&self) -> Result<(), FieldError> {
        if self.turn.len() != self.dn_road.len() {
            return Err(FieldError::new(
                "DN_ROAD",
                format!(
                    "token count mismatch: TURN has {}, DN_ROAD has {}",
                    self.turn.len(),
                    self.dn_road.len()
                ),
            ));
        }
        if let Some(bad) = self.dn_road.iter().find(|d| d.from != self.road_id.to) {
            return Err(FieldError::new(
                "DN_ROAD",
                format!("{bad} does not start at {}", self.road_id.to),
            ));
        }
        if !(self.len > 0.0) {
            return Err(FieldError::new("LEN", "length must be positive"));
        }
        if self.lane_num < 1 {
            return Err(FieldError::new("LANENUM", "at least one lane"));
        }
        if self.geom.is_empty() {
            return Err(FieldError::new("GEOM", "empty geometry"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopRow {
    pub road_id: SegmentKey,
    pub ftime: Timestamp,
    pub ttime: Timestamp,
    /// Aggregation interval in seconds.
    pub interval: u32,
    pub count: u32,
    pub reg_count: u32,
    pub lar_count: u32,
    /// km/h
    pub arth_spd: f64,
    /// km/h
    pub harm_spd: f64,
    pub turn: Turn,
}

impl Schema for LoopRow {
    const NAME: &'static str = "loop";
    const COLUMNS: &'static [&'static str] = &[
        "ROAD_ID", "FTIME", "TTIME", "INT", "COUNT", "REG_COUNT", "LAR_COUNT", "ARTH_SPD",
        "HARM_SPD", "TURN",
    ];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        Ok(LoopRow {
            road_id: f.road("ROAD_ID")?,
            ftime: f.time("FTIME")?,
            ttime: f.time("TTIME")?,
            interval: f.uint("INT")?,
            count: f.uint("COUNT")?,
            reg_count: f.uint("REG_COUNT")?,
            lar_count: f.uint("LAR_COUNT")?,
            arth_spd: f.float("ARTH_SPD")?,
            harm_spd: f.float("HARM_SPD")?,
            turn: f.turn("TURN", true)?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.road_id.to_string(),
            self.ftime.render(),
            self.ttime.render(),
            self.interval.to_string(),
            self.count.to_string(),
            self.reg_count.to_string(),
            self.lar_count.to_string(),
            fmt3(self.arth_spd),
            fmt3(self.harm_spd),
            self.turn.to_string(),
        ]
    }

    fn check(&self) -> Result<(), FieldError> {
        if self.count != self.reg_count + self.lar_count {
            return Err(FieldError::new(
                "COUNT",
                format!(
                    "COUNT {} != REG_COUNT {} + LAR_COUNT {}",
                    self.count, self.reg_count, self.lar_count
                ),
            ));
        }
        if self.ttime.to_millis() - self.ftime.to_millis() != i64::from(self.interval) * 1000 {
            return Err(FieldError::new("INT", "TTIME - FTIME differs from INT"));
        }
        if self.interval == 0 {
            return Err(FieldError::new("INT", "interval must be positive"));
        }
        if self.arth_spd < 0.0 || self.harm_spd < 0.0 {
            return Err(FieldError::new("ARTH_SPD", "negative speed"));
        }
        if self.count >= 1 && self.harm_spd > self.arth_spd {
            return Err(FieldError::new("HARM_SPD", "harmonic mean exceeds arithmetic mean"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcdRow {
    pub vid: String,
    pub vtype: VehicleType,
    pub time: Timestamp,
    pub lon: f64,
    pub lat: f64,
    /// km/h
    pub spd: f64,
    pub turn: Turn,
    /// Meters to the downstream end of the segment.
    pub dis: f64,
    pub road_id: SegmentKey,
}

impl Schema for FcdRow {
    const NAME: &'static str = "floating car";
    const COLUMNS: &'static [&'static str] =
        &["VID", "TYPE", "TIME", "LON", "LAT", "SPD", "TURN", "DIS", "ROADID"];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        let code = f.uint("TYPE")?;
        let vtype = u8::try_from(code)
            .ok()
            .and_then(VehicleType::from_code)
            .ok_or_else(|| FieldError::new("TYPE", format!("'{code}' is not 1 or 2")))?;
        Ok(FcdRow {
            vid: f.text("VID")?,
            vtype,
            time: f.time("TIME")?,
            lon: f.float("LON")?,
            lat: f.float("LAT")?,
            spd: f.float("SPD")?,
            turn: f.turn("TURN", true)?,
            dis: f.float("DIS")?,
            road_id: f.road("ROADID")?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.vid.clone(),
            self.vtype.code().to_string(),
            self.time.render(),
            fmt6(self.lon),
            fmt6(self.lat),
            fmt3(self.spd),
            self.turn.to_string(),
            fmt3(self.dis),
            self.road_id.to_string(),
        ]
    }

    fn check(&self) -> Result<(), FieldError> {
        if self.vid.is_empty() {
            return Err(FieldError::new("VID", "empty value"));
        }
        if self.spd < 0.0 {
            return Err(FieldError::new("SPD", "negative speed"));
        }
        if self.dis < 0.0 {
            return Err(FieldError::new("DIS", "negative distance"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LprRow {
    pub vid: String,
    pub froad: SegmentKey,
    pub troad: SegmentKey,
    pub ftime: Timestamp,
    pub ttime: Timestamp,
}

impl Schema for LprRow {
    const NAME: &'static str = "plate recognition";
    const COLUMNS: &'static [&'static str] = &["VID", "FROAD", "TROAD", "FTIME", "TTIME"];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        Ok(LprRow {
            vid: f.text("VID")?,
            froad: f.road("FROAD")?,
            troad: f.road("TROAD")?,
            ftime: f.time("FTIME")?,
            ttime: f.time("TTIME")?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.vid.clone(),
            self.froad.to_string(),
            self.troad.to_string(),
            self.ftime.render(),
            self.ttime.render(),
        ]
    }

    fn check(&self) -> Result<(), FieldError> {
        if self.vid.is_empty() {
            return Err(FieldError::new("VID", "empty value"));
        }
        if self.ftime.secs() > self.ttime.secs() {
            return Err(FieldError::new("TTIME", "TTIME precedes FTIME"));
        }
        Ok(())
    }
}

/// One green-phase instance for a movement at a node.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalPlanRow {
    pub node_id: NodeId,
    /// Upstream node of the approach segment.
    pub approach: NodeId,
    pub turn: Turn,
    pub green_start: Timestamp,
    pub green_end: Timestamp,
}

impl Schema for SignalPlanRow {
    const NAME: &'static str = "signal plan";
    const COLUMNS: &'static [&'static str] =
        &["NODEID", "APPROACH", "TURN", "GREEN_START", "GREEN_END"];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        Ok(SignalPlanRow {
            node_id: f.node("NODEID")?,
            approach: f.node("APPROACH")?,
            turn: f.turn("TURN", false)?,
            green_start: f.time("GREEN_START")?,
            green_end: f.time("GREEN_END")?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.node_id.to_string(),
            self.approach.to_string(),
            self.turn.to_string(),
            self.green_start.render(),
            self.green_end.render(),
        ]
    }

    fn check(&self) -> Result<(), FieldError> {
        if !(self.green_start.secs() < self.green_end.secs()) {
            return Err(FieldError::new("GREEN_END", "green must end after it starts"));
        }
        Ok(())
    }

    fn check_table(rows: &[Self]) -> Result<(), IngestError> {
        let mut last: BTreeMap<(&NodeId, &NodeId, Turn), f64> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            let key = (&r.node_id, &r.approach, r.turn);
            if let Some(&end) = last.get(&key) {
                if r.green_start.secs() < end {
                    return Err(IngestError::Field {
                        schema: Self::NAME,
                        row: i + 1,
                        column: "GREEN_START".into(),
                        message: "phases for a movement must be time-sorted and non-overlapping"
                            .into(),
                    });
                }
            }
            last.insert(key, r.green_end.secs());
        }
        Ok(())
    }
}

/// Node side file: AVI equipment and coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRow {
    pub node_id: NodeId,
    pub avi: bool,
    pub lon: f64,
    pub lat: f64,
}

impl Schema for NodeRow {
    const NAME: &'static str = "node";
    const COLUMNS: &'static [&'static str] = &["NODEID", "AVI", "LON", "LAT"];

    fn parse(f: &Fields) -> Result<Self, FieldError> {
        let avi = match f.get("AVI") {
            "1" => true,
            "0" => false,
            other => return Err(FieldError::new("AVI", format!("'{other}' is not 0 or 1"))),
        };
        Ok(NodeRow {
            node_id: f.node("NODEID")?,
            avi,
            lon: f.float("LON")?,
            lat: f.float("LAT")?,
        })
    }

    fn render(&self) -> Vec<String> {
        vec![
            self.node_id.to_string(),
            if self.avi { "1" } else { "0" }.into(),
            fmt6(self.lon),
            fmt6(self.lat),
        ]
    }
}

/// Assembles a network from the node side file and road-network rows.
pub fn network_from_rows(nodes: &[NodeRow], roads: &[RoadNetworkRow]) -> Result<RoadNetwork, NetError> {
    let mut net = RoadNetwork::new();
    for n in nodes {
        net.add_node_at(n.node_id.clone(), n.avi, Some((n.lon, n.lat)))?;
    }
    for r in roads {
        net.insert_segment(
            r.road_id.clone(),
            Segment {
                length_m: r.len,
                lanes: r.lane_num,
                turns: Vec::new(),
                geom: Some(r.geom.clone()),
            },
        )?;
    }
    for r in roads {
        for (t, dn) in r.turn.iter().zip(&r.dn_road) {
            net.add_turn(&r.road_id, *t, dn)?;
        }
    }
    Ok(net)
}

/// Inverse of [`network_from_rows`]. Segments without geometry get a
/// straight `LINESTRING` between node coordinates.
pub fn network_to_rows(net: &RoadNetwork) -> (Vec<NodeRow>, Vec<RoadNetworkRow>) {
    let nodes = net
        .nodes()
        .iter()
        .map(|(id, n)| {
            let (lon, lat) = n.coord.unwrap_or((0.0, 0.0));
            NodeRow {
                node_id: id.clone(),
                avi: n.avi,
                lon,
                lat,
            }
        })
        .collect();
    let roads = net
        .segments()
        .iter()
        .map(|(key, seg)| {
            let geom = seg.geom.clone().unwrap_or_else(|| {
                let c = |id: &NodeId| net.node(id).and_then(|n| n.coord).unwrap_or((0.0, 0.0));
                let (a, b) = (c(&key.from), c(&key.to));
                format!(
                    "LINESTRING({} {}, {} {})",
                    fmt6(a.0),
                    fmt6(a.1),
                    fmt6(b.0),
                    fmt6(b.1)
                )
            });
            RoadNetworkRow {
                road_id: key.clone(),
                lane_num: seg.lanes,
                turn: seg.turns.iter().map(|(t, _)| *t).collect(),
                dn_road: seg.turns.iter().map(|(_, d)| d.clone()).collect(),
                geom,
                len: seg.length_m,
            }
        })
        .collect();
    (nodes, roads)
}

pub fn plans_from_rows(rows: &[SignalPlanRow]) -> SignalPlans {
    let mut plans = SignalPlans::default();
    for r in rows {
        plans.push(
            MovementKey {
                node: r.node_id.clone(),
                approach: r.approach.clone(),
                turn: r.turn,
            },
            GreenWindow {
                start: r.green_start.secs(),
                end: r.green_end.secs(),
            },
        );
    }
    plans
}

pub fn plans_to_rows(plans: &SignalPlans) -> Vec<SignalPlanRow> {
    plans
        .iter()
        .flat_map(|(k, windows)| {
            windows.iter().map(move |w| SignalPlanRow {
                node_id: k.node.clone(),
                approach: k.approach.clone(),
                turn: k.turn,
                green_start: Timestamp(w.start),
                green_end: Timestamp(w.end),
            })
        })
        .collect()
}
