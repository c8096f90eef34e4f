//! `key=value` measurement properties with `loop.<n>.<key>` groups.

use std::collections::BTreeMap;
use std::path::PathBuf;

use holo_core::{SegmentKey, Timestamp};

use crate::error::{Failure, Result};

const GLOBAL_KEYS: &[&str] = &["fTime", "tTime", "needFCD", "fcdSamplingSec", "seed", "outputDir"];
const LOOP_KEYS: &[&str] = &["loopId", "ftNode", "position", "missingRate", "interval"];

#[derive(Clone, Debug, PartialEq)]
pub struct LoopGroup {
    pub loop_id: String,
    pub ft_node: SegmentKey,
    /// Meters from the downstream end of the segment.
    pub position: f64,
    pub missing_rate: f64,
    pub interval: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementProperties {
    pub f_time: Timestamp,
    pub t_time: Timestamp,
    pub need_fcd: bool,
    pub fcd_sampling_sec: f64,
    pub loops: Vec<LoopGroup>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn value<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Failure::config(format!("missing property '{key}'")))
}

fn parsed<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Failure::config(format!("property '{key}': cannot parse '{v}'")))
}

fn timestamp(key: &str, v: &str) -> Result<Timestamp> {
    Timestamp::parse(v).ok_or_else(|| Failure::config(format!("property '{key}': bad timestamp '{v}'")))
}

fn loop_key(key: &str) -> Option<(u32, &str)> {
    let rest = key.strip_prefix("loop.")?;
    let (n, field) = rest.split_once('.')?;
    if n.is_empty() || !n.bytes().all(|b| b.is_ascii_digit()) || !LOOP_KEYS.contains(&field) {
        return None;
    }
    Some((n.parse().ok()?, field))
}

impl MeasurementProperties {
    pub fn parse(text: &str) -> Result<Self> {
        let mut global = BTreeMap::new();
        let mut groups: BTreeMap<u32, BTreeMap<String, String>> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::config(format!("line {}: expected key=value", no + 1)));
            };
            let (k, v) = (k.trim(), v.trim().to_string());
            let slot = if GLOBAL_KEYS.contains(&k) {
                global.entry(k.to_string())
            } else if let Some((n, field)) = loop_key(k) {
                groups.entry(n).or_default().entry(field.to_string())
            } else {
                return Err(Failure::config(format!("unknown property key '{k}'")));
            };
            match slot {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(v);
                }
                std::collections::btree_map::Entry::Occupied(_) => {
                    return Err(Failure::config(format!("duplicate property key '{k}'")));
                }
            }
        }

        let f_time = timestamp("fTime", value(&global, "fTime")?)?;
        let t_time = timestamp("tTime", value(&global, "tTime")?)?;
        if f_time.secs() >= t_time.secs() {
            return Err(Failure::config("fTime must precede tTime"));
        }
        let need_fcd = match global.get("needFCD").map(String::as_str) {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => return Err(Failure::config(format!("property 'needFCD': expected true or false, got '{v}'"))),
        };
        let fcd_sampling_sec = match global.get("fcdSamplingSec") {
            Some(v) => parsed::<f64>("fcdSamplingSec", v)?,
            None => holo_core::detect::DEFAULT_FCD_PERIOD,
        };
        if !(fcd_sampling_sec > 0.0) {
            return Err(Failure::config("property 'fcdSamplingSec' must be positive"));
        }
        let seed = global.get("seed").map(|v| parsed("seed", v)).transpose()?;

        let mut loops = Vec::new();
        for (n, g) in &groups {
            let key = |field: &str| format!("loop.{n}.{field}");
            let get = |field: &str| {
                g.get(field)
                    .map(String::as_str)
                    .ok_or_else(|| Failure::config(format!("missing property '{}'", key(field))))
            };
            let ft_node: SegmentKey = get("ftNode")?
                .parse()
                .map_err(|e: String| Failure::config(format!("property '{}': {e}", key("ftNode"))))?;
            loops.push(LoopGroup {
                loop_id: get("loopId")?.to_string(),
                ft_node,
                position: parsed(&key("position"), get("position")?)?,
                missing_rate: parsed(&key("missingRate"), get("missingRate")?)?,
                interval: parsed(&key("interval"), get("interval")?)?,
            });
        }
        for (i, l) in loops.iter().enumerate() {
            if l.loop_id.is_empty() || l.loop_id.contains(['/', '\\']) || l.loop_id.starts_with('.') {
                return Err(Failure::config(format!("loop id '{}' is not a file name", l.loop_id)));
            }
            if loops[..i].iter().any(|m| m.loop_id == l.loop_id) {
                return Err(Failure::config(format!("duplicate loop id '{}'", l.loop_id)));
            }
        }

        Ok(MeasurementProperties {
            f_time,
            t_time,
            need_fcd,
            fcd_sampling_sec,
            loops,
            seed,
            output_dir: global.get("outputDir").map(PathBuf::from),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Kind;

    const BASE: &str = "fTime=2020-09-15 07:00:00\ntTime=2020-09-15 08:00:00\n";

    #[test]
    fn parses_groups() {
        let text = format!(
            "{BASE}needFCD=true\nfcdSamplingSec=5\n# comment\nloop.2.loopId=B\nloop.2.ftNode=N1_N2\n\
             loop.2.position=30\nloop.2.missingRate=0.1\nloop.2.interval=300\n\
             loop.1.loopId=A\nloop.1.ftNode=N0_N1\nloop.1.position=0\nloop.1.missingRate=0\nloop.1.interval=60\n"
        );
        let p = MeasurementProperties::parse(&text).unwrap();
        assert!(p.need_fcd);
        assert_eq!(p.fcd_sampling_sec, 5.0);
        assert_eq!(p.loops.len(), 2);
        assert_eq!(p.loops[0].loop_id, "A");
        assert_eq!(p.loops[1].ft_node, SegmentKey::new("N1", "N2"));
        assert_eq!(p.loops[1].interval, 300);
        assert_eq!(p.seed, None);
    }

    #[test]
    fn unknown_and_miscased_keys_name_the_key() {
        for bad in ["needfcd=true", "loop.1.LoopId=A", "loop.x.loopId=A", "color=red"] {
            let e = MeasurementProperties::parse(&format!("{BASE}{bad}\n")).unwrap_err();
            assert_eq!(e.kind, Kind::Config);
            let key = bad.split('=').next().unwrap();
            assert!(e.message.contains(key), "{}", e.message);
        }
    }

    #[test]
    fn incomplete_group_and_bad_window() {
        let e = MeasurementProperties::parse(&format!("{BASE}loop.1.loopId=A\n")).unwrap_err();
        assert!(e.message.contains("loop.1.ftNode"));
        let e = MeasurementProperties::parse("fTime=2020-09-15 08:00:00\ntTime=2020-09-15 07:00:00\n").unwrap_err();
        assert_eq!(e.kind, Kind::Config);
        assert!(MeasurementProperties::parse(&format!("{BASE}tTime=2020-09-15 09:00:00\n")).is_err());
    }
}
