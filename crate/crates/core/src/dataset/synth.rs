//! Synthetic scenario generator used as a stand-in for recorded traffic.
//!
//! Reference paths come from geometric templates smoothed with Chaikin corner
//! cutting. Curbs trace the boundary of the union of lane corridors around
//! the paths. Vehicles follow paths with curvature-limited speed profiles and
//! are scheduled by shifting entry times until no footprint overlaps any
//! previously accepted vehicle at any frame.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrackId, TrafficLog, VehicleState, VehicleTrack};
use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, OrientedBox, Point2, ReferencePath};

const FRAME_MS: i64 = 100;
const PATH_SPACING: f64 = 0.5;
/// Half width of the drivable corridor around each lane centerline.
pub const CORRIDOR_HALF_WIDTH: f64 = 3.0;
const LANE_OFFSET: f64 = 2.0;
const SCHEDULE_MARGIN: f64 = 0.75;
const LATERAL_ACCEL: f64 = 2.0;
const ACCEL: f64 = 1.0;
const DECEL: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Roundabout,
    Intersection,
    Merging,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Roundabout => "roundabout",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::Merging => "merging",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roundabout" => Ok(ScenarioKind::Roundabout),
            "intersection" => Ok(ScenarioKind::Intersection),
            "merging" => Ok(ScenarioKind::Merging),
            other => Err(Error::Validation(format!(
                "unknown scenario kind '{other}' (expected roundabout, intersection or merging)"
            ))),
        }
    }
}

struct Template {
    routes: Vec<(String, Vec<Point2>)>,
    speed_range: (f64, f64),
}

/// Deterministic per seed.
pub fn make_synthetic_scenario(kind: ScenarioKind, n_vehicles: usize, seed: u64) -> Result<TrafficLog> {
    if n_vehicles == 0 {
        return Err(Error::Validation("need at least one vehicle".into()));
    }
    let template = match kind {
        ScenarioKind::Roundabout => roundabout(),
        ScenarioKind::Intersection => intersection(),
        ScenarioKind::Merging => merging(),
    };
    let paths = template
        .routes
        .iter()
        .map(|(id, ctrl)| ReferencePath::new(id.clone(), resample(&chaikin(ctrl, 8), PATH_SPACING), 0.6))
        .collect::<Result<Vec<_>>>()?;
    let curbs = corridor_curbs(&paths, CORRIDOR_HALF_WIDTH);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe_f00d_u64);
    let spawn_window = n_vehicles as f64 * 2.5;
    let mut accepted: Vec<VehicleTrack> = Vec::with_capacity(n_vehicles);
    for id in 0..n_vehicles as TrackId {
        'attempt: for _ in 0..8 {
            let route = rng.gen_range(0..paths.len());
            let cruise = rng.gen_range(template.speed_range.0..template.speed_range.1);
            let wobble = Wobble {
                amp: rng.gen_range(0.0..0.3),
                period: rng.gen_range(6.0..12.0),
                phase: rng.gen_range(0.0..2.0 * PI),
            };
            let length = rng.gen_range(4.2..5.0);
            let width = rng.gen_range(1.8..2.0);
            let entry_frame = (rng.gen_range(0.0..spawn_window) / (FRAME_MS as f64 / 1000.0)) as i64;
            let states = drive_path(&paths[route], cruise, wobble);
            for shift in 0..120 {
                let start = entry_frame + shift * 5;
                let track = VehicleTrack {
                    id,
                    states: states
                        .iter()
                        .map(|s| VehicleState {
                            t_ms: s.t_ms + start * FRAME_MS,
                            ..*s
                        })
                        .collect(),
                    length,
                    width,
                };
                if accepted.iter().all(|other| !tracks_conflict(&track, other)) {
                    accepted.push(track);
                    break 'attempt;
                }
            }
        }
    }
    if accepted.is_empty() {
        return Err(Error::Validation("could not schedule any vehicle".into()));
    }
    let tracks: BTreeMap<_, _> = accepted.into_iter().map(|t| (t.id, t)).collect();
    TrafficLog::new(tracks, FRAME_MS, curbs, paths)
}

#[derive(Clone, Copy)]
struct Wobble {
    amp: f64,
    period: f64,
    phase: f64,
}

/// Logged states along a path starting at t = 0.
fn drive_path(path: &ReferencePath, cruise: f64, wobble: Wobble) -> Vec<VehicleState> {
    let s_pts = path.cum_s();
    let n = s_pts.len();
    let mut v: Vec<f64> = path
        .curvatures()
        .iter()
        .map(|k| cruise.min((LATERAL_ACCEL / k.abs().max(1e-6)).sqrt()))
        .collect();
    for i in 1..n {
        let ds = s_pts[i] - s_pts[i - 1];
        v[i] = v[i].min((v[i - 1] * v[i - 1] + 2.0 * ACCEL * ds).sqrt());
    }
    for i in (0..n - 1).rev() {
        let ds = s_pts[i + 1] - s_pts[i];
        v[i] = v[i].min((v[i + 1] * v[i + 1] + 2.0 * DECEL * ds).sqrt());
    }
    let speed_at = |s: f64| {
        let i = s_pts.partition_point(|&c| c <= s).clamp(1, n - 1);
        let u = ((s - s_pts[i - 1]) / (s_pts[i] - s_pts[i - 1])).clamp(0.0, 1.0);
        v[i - 1] + (v[i] - v[i - 1]) * u
    };

    let dt = FRAME_MS as f64 / 1000.0;
    let len = path.length();
    let mut positions = Vec::new();
    let mut s = 0.0;
    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        let sample = path.eval_clamped(s);
        let taper = (s / 10.0).min((len - s) / 10.0).clamp(0.0, 1.0);
        let lat = wobble.amp * taper * (2.0 * PI * t / wobble.period + wobble.phase).sin();
        positions.push(sample.pos + Point2::from_angle(sample.heading).perp() * lat);
        if s >= len {
            break;
        }
        s = (s + speed_at(s).max(0.5) * dt).min(len);
        k += 1;
    }
    let m = positions.len();
    (0..m)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(m - 1));
            let vel = (positions[b] - positions[a]) * (1.0 / ((b - a) as f64 * dt));
            VehicleState {
                t_ms: i as i64 * FRAME_MS,
                pos: positions[i],
                vel,
                heading: vel.angle(),
            }
        })
        .collect()
}

fn tracks_conflict(a: &VehicleTrack, b: &VehicleTrack) -> bool {
    let lo = a.states[0].t_ms.max(b.states[0].t_ms);
    let hi = a.states.last().unwrap().t_ms.min(b.states.last().unwrap().t_ms);
    if lo > hi {
        return false;
    }
    let ia = ((lo - a.states[0].t_ms) / FRAME_MS) as usize;
    let ib = ((lo - b.states[0].t_ms) / FRAME_MS) as usize;
    let frames = ((hi - lo) / FRAME_MS) as usize + 1;
    (0..frames).any(|k| {
        let (sa, sb) = (&a.states[ia + k], &b.states[ib + k]);
        let ba = OrientedBox {
            center: sa.pos,
            heading: sa.heading,
            length: a.length,
            width: a.width,
        }
        .inflated(SCHEDULE_MARGIN);
        let bb = OrientedBox {
            center: sb.pos,
            heading: sb.heading,
            length: b.length,
            width: b.width,
        }
        .inflated(SCHEDULE_MARGIN);
        boxes_overlap(&ba, &bb)
    })
}

/// Chaikin corner cutting on an open polyline; endpoints are kept.
pub(crate) fn chaikin(points: &[Point2], iterations: usize) -> Vec<Point2> {
    let mut pts = points.to_vec();
    for _ in 0..iterations {
        if pts.len() < 3 {
            break;
        }
        let mut next = Vec::with_capacity(2 * pts.len());
        next.push(pts[0]);
        for w in pts.windows(2) {
            next.push(w[0].lerp(w[1], 0.25));
            next.push(w[0].lerp(w[1], 0.75));
        }
        next.push(*pts.last().unwrap());
        // the first and last cut points sit on the end segments; drop the
        // duplicates they would form with the kept endpoints
        next.dedup();
        pts = next;
    }
    pts
}

/// Uniform arc-length resampling; the last point is always kept.
pub(crate) fn resample(points: &[Point2], spacing: f64) -> Vec<Point2> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + w[0].distance(w[1]));
    }
    let total = *cum.last().unwrap();
    let n = (total / spacing).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let s = total * k as f64 / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(points[seg].lerp(points[seg + 1], u));
    }
    out
}

/// Boundary of the union of corridors of half width `w` around the paths.
fn corridor_curbs(paths: &[ReferencePath], w: f64) -> Vec<Vec<Point2>> {
    const TOL: f64 = 0.05;
    const CELL: f64 = 0.5;
    let mut emitted: HashSet<(i64, i64)> = HashSet::new();
    let key = |p: Point2| ((p.x / CELL).floor() as i64, (p.y / CELL).floor() as i64);
    let near_emitted = |emitted: &HashSet<(i64, i64)>, p: Point2| {
        let (cx, cy) = key(p);
        (-1..=1).any(|dx| (-1..=1).any(|dy| emitted.contains(&(cx + dx, cy + dy))))
    };
    let mut curbs = Vec::new();
    for (pi, path) in paths.iter().enumerate() {
        for side in [1.0, -1.0] {
            let side_start = curbs.len();
            let mut run: Vec<Point2> = Vec::new();
            let flush = |run: &mut Vec<Point2>, curbs: &mut Vec<Vec<Point2>>| {
                if run.len() >= 2 {
                    curbs.push(std::mem::take(run));
                } else {
                    run.clear();
                }
            };
            for &s in path.cum_s() {
                let smp = path.eval_clamped(s);
                let q = smp.pos + Point2::from_angle(smp.heading).perp() * (side * w);
                let inside_other = paths
                    .iter()
                    .enumerate()
                    .any(|(pj, other)| pj != pi && other.project(q).lateral_offset.abs() < w - TOL);
                let inside_self = path.project(q).lateral_offset.abs() < w - TOL;
                if inside_other || inside_self || near_emitted(&emitted, q) {
                    flush(&mut run, &mut curbs);
                    continue;
                }
                if let Some(last) = run.last() {
                    if last.distance(q) > 2.0 {
                        flush(&mut run, &mut curbs);
                    }
                }
                run.push(q);
            }
            flush(&mut run, &mut curbs);
            // mark only after the side is done so a run never blocks itself
            for c in &curbs[side_start..] {
                for &p in c {
                    emitted.insert(key(p));
                }
            }
        }
    }
    curbs
}

fn arm_dir(i: usize) -> Point2 {
    Point2::from_angle(i as f64 * PI / 2.0)
}

fn roundabout() -> Template {
    const R: f64 = 25.0;
    const ARM: f64 = 45.0;
    let mut routes = Vec::new();
    for i in 0..4 {
        for turns in 1..4 {
            let j = (i + turns) % 4;
            let (ui, ni) = (arm_dir(i), arm_dir(i).perp());
            let (uj, nj) = (arm_dir(j), arm_dir(j).perp());
            let mut ctrl = Vec::new();
            let mut r = R + ARM;
            while r > R + 12.0 {
                ctrl.push(ui * r + ni * LANE_OFFSET);
                r -= 15.0;
            }
            ctrl.push(ui * (R + 12.0) + ni * LANE_OFFSET);
            let start_deg = i as f64 * 90.0 + 30.0;
            let end_deg = (i + turns) as f64 * 90.0 - 30.0;
            let mut deg = start_deg;
            while deg <= end_deg + 1e-9 {
                ctrl.push(Point2::from_angle(deg.to_radians()) * R);
                deg += 15.0;
            }
            let mut r = R + 12.0;
            while r < R + ARM {
                ctrl.push(uj * r - nj * LANE_OFFSET);
                r += 15.0;
            }
            ctrl.push(uj * (R + ARM) - nj * LANE_OFFSET);
            routes.push((format!("roundabout-{i}-{j}"), ctrl));
        }
    }
    Template {
        routes,
        speed_range: (6.0, 9.0),
    }
}

fn intersection() -> Template {
    const B: f64 = 12.0;
    const ARM: f64 = 50.0;
    let mut routes = Vec::new();
    for i in 0..4 {
        for turns in 1..4 {
            let j = (i + turns) % 4;
            let (ui, ni) = (arm_dir(i), arm_dir(i).perp());
            let (uj, nj) = (arm_dir(j), arm_dir(j).perp());
            let mut ctrl = Vec::new();
            let mut r = B + ARM;
            while r > B {
                ctrl.push(ui * r + ni * LANE_OFFSET);
                r -= 15.0;
            }
            ctrl.push(ui * B + ni * LANE_OFFSET);
            if turns != 2 {
                // corner where the entry and exit lane lines cross
                let a = ni * LANE_OFFSET;
                let b = -nj * LANE_OFFSET;
                ctrl.push(a + b);
            }
            ctrl.push(uj * B - nj * LANE_OFFSET);
            let mut r = B + 15.0;
            while r < B + ARM {
                ctrl.push(uj * r - nj * LANE_OFFSET);
                r += 15.0;
            }
            ctrl.push(uj * (B + ARM) - nj * LANE_OFFSET);
            routes.push((format!("intersection-{i}-{j}"), ctrl));
        }
    }
    Template {
        routes,
        speed_range: (6.0, 9.0),
    }
}

fn merging() -> Template {
    let main = vec![
        Point2::new(-120.0, 0.0),
        Point2::new(-60.0, 0.0),
        Point2::new(0.0, 0.0),
        Point2::new(60.0, 0.0),
        Point2::new(100.0, 0.0),
    ];
    let ramp = vec![
        Point2::new(-120.0, -24.0),
        Point2::new(-75.0, -20.0),
        Point2::new(-40.0, -10.0),
        Point2::new(-15.0, -2.0),
        Point2::new(10.0, 0.0),
        Point2::new(60.0, 0.0),
        Point2::new(100.0, 0.0),
    ];
    Template {
        routes: vec![("merging-main".into(), main), ("merging-ramp".into(), ramp)],
        speed_range: (7.0, 10.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chaikin_keeps_endpoints() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(10.0, 10.0)];
        let out = chaikin(&pts, 4);
        assert_eq!(out[0], pts[0]);
        assert_eq!(*out.last().unwrap(), pts[2]);
        assert!(out.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn resample_spacing_uniform() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(10.0, 3.0)];
        let out = resample(&pts, 0.5);
        assert_eq!(out.len(), 27);
        assert_eq!(*out.last().unwrap(), pts[2]);
    }

    #[test]
    fn scenario_kinds_parse() {
        assert_eq!("merging".parse::<ScenarioKind>().unwrap(), ScenarioKind::Merging);
        assert!("spiral".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic_scenario(ScenarioKind::Merging, 6, 3).unwrap();
        let b = make_synthetic_scenario(ScenarioKind::Merging, 6, 3).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_scenario(ScenarioKind::Merging, 6, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn templates_produce_curbs_and_paths() {
        for kind in [ScenarioKind::Roundabout, ScenarioKind::Intersection, ScenarioKind::Merging] {
            let log = make_synthetic_scenario(kind, 3, 1).unwrap();
            assert!(!log.curbs().is_empty(), "{kind}");
            for p in log.reference_paths() {
                assert!(p.cum_s().windows(2).all(|w| w[1] - w[0] <= 0.6 + 1e-9));
                // curbs never cut through a lane centerline
                for c in log.curbs() {
                    for &q in c {
                        assert!(p.project(q).lateral_offset.abs() > CORRIDOR_HALF_WIDTH - 0.1);
                    }
                }
            }
        }
    }
}
