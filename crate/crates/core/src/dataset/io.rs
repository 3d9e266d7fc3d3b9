//! Tracks CSV and map JSON readers/writers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{TrackId, TrafficLog, VehicleState, VehicleTrack};
use crate::error::{Error, Result};
use crate::geometry::{Point2, ReferencePath, DEFAULT_MAX_SPACING};

const COLUMNS: [&str; 10] = [
    "track_id",
    "frame_id",
    "timestamp_ms",
    "x",
    "y",
    "vx",
    "vy",
    "psi_rad",
    "length",
    "width",
];

pub fn load_log(tracks_file: &Path, map_file: &Path) -> Result<TrafficLog> {
    let (tracks, period_ms) = read_tracks_csv(tracks_file)?;
    let (curbs, paths) = load_map(map_file)?;
    TrafficLog::new(tracks, period_ms, curbs, paths)
}

pub fn write_log(log: &TrafficLog, tracks_file: &Path, map_file: &Path) -> Result<()> {
    write_tracks_csv(log, tracks_file)?;
    write_map_json(log, map_file)
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads the tracks CSV; returns the tracks and the shared frame period in ms.
pub fn read_tracks_csv(path: &Path) -> Result<(BTreeMap<TrackId, VehicleTrack>, i64)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; COLUMNS.len()];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Validation(format!("{}: missing column '{name}'", path.display()))
        })?;
    }
    for h in headers.iter().filter(|h| !COLUMNS.contains(h)) {
        log::warn!("{}: ignoring unknown column '{h}'", path.display());
    }

    struct Row {
        frame_id: i64,
        state: VehicleState,
        length: f64,
        width: f64,
        line: usize,
    }
    let mut rows: BTreeMap<TrackId, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<&str> {
            rec.get(idx[k])
                .ok_or_else(|| parse_err(path, line, format!("missing value for '{}'", COLUMNS[k])))
        };
        let int = |k: usize| -> Result<i64> {
            field(k)?.parse::<i64>().map_err(|e| {
                parse_err(path, line, format!("bad integer in '{}': {e}", COLUMNS[k]))
            })
        };
        let real = |k: usize| -> Result<f64> {
            let v = field(k)?.parse::<f64>().map_err(|e| {
                parse_err(path, line, format!("bad number in '{}': {e}", COLUMNS[k]))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("non-finite '{}'", COLUMNS[k])))
            }
        };
        let track_id = u32::try_from(int(0)?)
            .map_err(|_| parse_err(path, line, "track_id must be a non-negative 32-bit integer"))?;
        let row = Row {
            frame_id: int(1)?,
            state: VehicleState {
                t_ms: int(2)?,
                pos: Point2::new(real(3)?, real(4)?),
                vel: Point2::new(real(5)?, real(6)?),
                heading: real(7)?,
            },
            length: real(8)?,
            width: real(9)?,
            line,
        };
        rows.entry(track_id).or_default().push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("{}: no tracks", path.display())));
    }

    let mut period_ms: Option<i64> = None;
    let mut tracks = BTreeMap::new();
    for (id, rs) in rows {
        for w in rs.windows(2) {
            if w[1].frame_id != w[0].frame_id + 1 {
                return Err(Error::Validation(format!(
                    "track {id}: frame_id {} follows {} (line {})",
                    w[1].frame_id, w[0].frame_id, w[1].line
                )));
            }
            if w[1].state.t_ms <= w[0].state.t_ms {
                return Err(Error::Validation(format!(
                    "track {id}: timestamps not increasing at line {}",
                    w[1].line
                )));
            }
            let gap = w[1].state.t_ms - w[0].state.t_ms;
            match period_ms {
                None => period_ms = Some(gap),
                Some(p) if p != gap => {
                    return Err(Error::Validation(format!(
                        "track {id}: frame gap {gap} ms at line {} differs from {p} ms",
                        w[1].line
                    )))
                }
                _ => {}
            }
        }
        let (length, width) = (rs[0].length, rs[0].width);
        tracks.insert(
            id,
            VehicleTrack {
                id,
                states: rs.into_iter().map(|r| r.state).collect(),
                length,
                width,
            },
        );
    }
    let period_ms = period_ms
        .ok_or_else(|| Error::Validation(format!("{}: every track has a single frame", path.display())))?;
    Ok((tracks, period_ms))
}

pub fn write_tracks_csv(log: &TrafficLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    let period = log.frame_period_ms();
    for tr in log.tracks().values() {
        for s in &tr.states {
            w.write_record(&[
                tr.id.to_string(),
                (s.t_ms / period).to_string(),
                s.t_ms.to_string(),
                s.pos.x.to_string(),
                s.pos.y.to_string(),
                s.vel.x.to_string(),
                s.vel.y.to_string(),
                s.heading.to_string(),
                tr.length.to_string(),
                tr.width.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the map JSON into curb polylines and reference paths.
pub fn load_map(path: &Path) -> Result<(Vec<Vec<Point2>>, Vec<ReferencePath>)> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let root: Value = serde_json::from_str(&text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Validation(format!("{}: map must be a JSON object", path.display())))?;
    for k in obj.keys().filter(|k| *k != "curbs" && *k != "reference_paths") {
        log::warn!("{}: ignoring unknown key '{k}'", path.display());
    }
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let points = |v: &Value, what: &str| -> Result<Vec<Point2>> {
        let arr = v.as_array().ok_or_else(|| bad(format!("{what} must be a list of [x, y]")))?;
        arr.iter()
            .map(|p| {
                let xy: [f64; 2] = serde_json::from_value(p.clone())
                    .map_err(|e| bad(format!("{what}: bad point {p}: {e}")))?;
                Ok(Point2::from(xy))
            })
            .collect()
    };
    let curbs = match obj.get("curbs") {
        None => Vec::new(),
        Some(v) => v
            .as_array()
            .ok_or_else(|| bad("curbs must be a list".into()))?
            .iter()
            .enumerate()
            .map(|(i, c)| points(c, &format!("curb {i}")))
            .collect::<Result<_>>()?,
    };
    let mut paths = Vec::new();
    let list = obj
        .get("reference_paths")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing reference_paths list".into()))?;
    for (i, rp) in list.iter().enumerate() {
        let o = rp
            .as_object()
            .ok_or_else(|| bad(format!("reference path {i} must be an object")))?;
        for k in o.keys().filter(|k| *k != "id" && *k != "points") {
            log::warn!("{}: reference path {i}: ignoring unknown key '{k}'", path.display());
        }
        let id = match o.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(bad(format!("reference path {i} needs a string or numeric id"))),
        };
        let pts = points(
            o.get("points").ok_or_else(|| bad(format!("reference path {i} has no points")))?,
            &format!("reference path {id}"),
        )?;
        paths.push(ReferencePath::new(id, pts, DEFAULT_MAX_SPACING)?);
    }
    Ok((curbs, paths))
}

#[derive(Serialize)]
struct MapPath<'a> {
    id: &'a str,
    points: &'a [Point2],
}

#[derive(Serialize)]
struct MapFile<'a> {
    curbs: &'a [Vec<Point2>],
    reference_paths: Vec<MapPath<'a>>,
}

pub fn write_map_json(log: &TrafficLog, path: &Path) -> Result<()> {
    let map = MapFile {
        curbs: log.curbs(),
        reference_paths: log
            .reference_paths()
            .iter()
            .map(|p| MapPath {
                id: p.id(),
                points: p.points(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &map)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
