//! Strategies producing valid row sets for every schema.

use holo_core::ingest::{FcdRow, LoopRow, LprRow, NodeRow, RoadNetworkRow, SignalPlanRow};
use holo_core::{NodeId, SegmentKey, Timestamp, Turn, VehicleType};
use proptest::prelude::*;

pub fn node() -> impl Strategy<Value = NodeId> {
    "[A-Z][0-9]{0,2}".prop_map(NodeId::new)
}

pub fn road() -> impl Strategy<Value = SegmentKey> {
    (node(), node()).prop_map(|(a, b)| SegmentKey { from: a, to: b })
}

pub fn milli(max: u64) -> impl Strategy<Value = f64> {
    (0..max).prop_map(|n| n as f64 / 1000.0)
}

pub fn micro_deg(max: i64) -> impl Strategy<Value = f64> {
    (-max..max).prop_map(|n| n as f64 / 1_000_000.0)
}

pub fn time() -> impl Strategy<Value = Timestamp> {
    (1_500_000_000_000i64..1_700_000_000_000).prop_map(Timestamp::from_millis)
}

pub fn move_turn() -> impl Strategy<Value = Turn> {
    prop_oneof![
        Just(Turn::Straight),
        Just(Turn::Left),
        Just(Turn::Right),
        Just(Turn::UTurn)
    ]
}

pub fn any_turn() -> impl Strategy<Value = Turn> {
    prop_oneof![move_turn(), Just(Turn::Unknown)]
}

pub fn road_rows() -> impl Strategy<Value = Vec<RoadNetworkRow>> {
    let row = (
        road(),
        1u32..6,
        prop::collection::vec((move_turn(), node()), 1..4),
        "[A-Z0-9 (),.]{1,30}",
        1u64..5_000_000,
    )
        .prop_map(|(road_id, lane_num, dns, geom, len)| RoadNetworkRow {
            turn: dns.iter().map(|(t, _)| *t).collect(),
            dn_road: dns
                .iter()
                .map(|(_, n)| SegmentKey {
                    from: road_id.to.clone(),
                    to: n.clone(),
                })
                .collect(),
            road_id,
            lane_num,
            geom,
            len: len as f64 / 1000.0,
        });
    prop::collection::vec(row, 1..8)
}

pub fn loop_rows() -> impl Strategy<Value = Vec<LoopRow>> {
    let row = (
        road(),
        time(),
        1u32..3600,
        0u32..50,
        0u32..50,
        milli(200_000),
        milli(200_000),
        any_turn(),
    )
        .prop_map(|(road_id, ftime, interval, reg, lar, a, b, turn)| {
            let count = reg + lar;
            let (arth, harm) = if a >= b { (a, b) } else { (b, a) };
            LoopRow {
                road_id,
                ftime,
                ttime: Timestamp::from_millis(ftime.to_millis() + i64::from(interval) * 1000),
                interval,
                count,
                reg_count: reg,
                lar_count: lar,
                arth_spd: arth,
                harm_spd: harm,
                turn,
            }
        });
    prop::collection::vec(row, 1..8)
}

pub fn fcd_rows() -> impl Strategy<Value = Vec<FcdRow>> {
    let row = (
        "[0-9a-f]{16}",
        prop::bool::ANY,
        time(),
        micro_deg(180_000_000),
        micro_deg(90_000_000),
        milli(200_000),
        any_turn(),
        milli(3_000_000),
        road(),
    )
        .prop_map(
            |(vid, large, time, lon, lat, spd, turn, dis, road_id)| FcdRow {
                vid,
                vtype: if large {
                    VehicleType::Large
                } else {
                    VehicleType::Regular
                },
                time,
                lon,
                lat,
                spd,
                turn,
                dis,
                road_id,
            },
        );
    prop::collection::vec(row, 1..8)
}

pub fn lpr_rows() -> impl Strategy<Value = Vec<LprRow>> {
    let row = (
        "[A-Za-z0-9]{1,10}",
        road(),
        road(),
        time(),
        0i64..10_000_000,
    )
        .prop_map(|(vid, froad, troad, ftime, dt)| LprRow {
            vid,
            froad,
            troad,
            ftime,
            ttime: Timestamp::from_millis(ftime.to_millis() + dt),
        });
    prop::collection::vec(row, 1..8)
}

pub fn plan_rows() -> impl Strategy<Value = Vec<SignalPlanRow>> {
    (
        node(),
        node(),
        move_turn(),
        time(),
        prop::collection::vec((1i64..100_000, 1i64..100_000), 1..8),
    )
        .prop_map(|(n, a, turn, t0, gaps)| {
            let mut t = t0.to_millis();
            gaps.into_iter()
                .map(|(gap, green)| {
                    let start = t + gap;
                    t = start + green;
                    SignalPlanRow {
                        node_id: n.clone(),
                        approach: a.clone(),
                        turn,
                        green_start: Timestamp::from_millis(start),
                        green_end: Timestamp::from_millis(t),
                    }
                })
                .collect()
        })
}

pub fn node_rows() -> impl Strategy<Value = Vec<NodeRow>> {
    let row = (
        node(),
        prop::bool::ANY,
        micro_deg(180_000_000),
        micro_deg(90_000_000),
    )
        .prop_map(|(node_id, avi, lon, lat)| NodeRow {
            node_id,
            avi,
            lon,
            lat,
        });
    prop::collection::vec(row, 1..8)
}
