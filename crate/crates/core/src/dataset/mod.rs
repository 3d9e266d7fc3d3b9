//! Recorded traffic: vehicle tracks, map geometry and episode enumeration.
//!
//! Logged vehicles are non-reactive. Their state at any time inside the
//! recorded interval is a pure function of that time, which is what lets the
//! planner query the future.

mod io;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, OrientedBox, Point2, ReferencePath};

pub use io::{load_log, load_map, read_tracks_csv, write_log, write_map_json, write_tracks_csv};
pub use synth::{make_synthetic_scenario, ScenarioKind};

pub type TrackId = u32;

/// One logged row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub t_ms: i64,
    pub pos: Point2,
    pub vel: Point2,
    pub heading: f64,
}

impl VehicleState {
    #[inline]
    pub fn t(&self) -> f64 {
        self.t_ms as f64 / 1000.0
    }

    #[inline]
    pub fn speed(&self) -> f64 {
        self.vel.norm()
    }
}

/// Interpolated state of a logged vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayState {
    pub pos: Point2,
    pub vel: Point2,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub id: TrackId,
    pub states: Vec<VehicleState>,
    pub length: f64,
    pub width: f64,
}

impl VehicleTrack {
    pub fn first_t(&self) -> f64 {
        self.states[0].t()
    }

    pub fn last_t(&self) -> f64 {
        self.states.last().unwrap().t()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Linear interpolation between bracketing frames; heading is
    /// interpolated along the shorter arc. `None` outside the recorded interval.
    pub fn state_at(&self, t: f64) -> Option<ReplayState> {
        let first = self.states.first()?;
        let last = self.states.last()?;
        const EPS: f64 = 1e-9;
        if t < first.t() - EPS || t > last.t() + EPS {
            return None;
        }
        let i = self.states.partition_point(|s| s.t() <= t + EPS);
        let exact = |s: &VehicleState| ReplayState {
            pos: s.pos,
            vel: s.vel,
            speed: s.speed(),
            heading: s.heading,
        };
        if i == 0 {
            return Some(exact(first));
        }
        let a = &self.states[i - 1];
        if (t - a.t()).abs() <= EPS || i == self.states.len() {
            return Some(exact(a));
        }
        let b = &self.states[i];
        let u = (t - a.t()) / (b.t() - a.t());
        let (sa, sb) = (a.speed(), b.speed());
        Some(ReplayState {
            pos: a.pos.lerp(b.pos, u),
            vel: a.vel.lerp(b.vel, u),
            speed: sa + (sb - sa) * u,
            heading: wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * u),
        })
    }

    pub fn footprint(&self, st: &ReplayState) -> OrientedBox {
        OrientedBox {
            center: st.pos,
            heading: wrap_angle(st.heading),
            length: self.length,
            width: self.width,
        }
    }

    pub fn mean_speed(&self) -> f64 {
        self.states.iter().map(VehicleState::speed).sum::<f64>() / self.states.len() as f64
    }
}

/// A validated traffic log: tracks, curbs and reference paths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficLog {
    tracks: BTreeMap<TrackId, VehicleTrack>,
    frame_period_ms: i64,
    curbs: Vec<Vec<Point2>>,
    reference_paths: Vec<ReferencePath>,
    routes: BTreeMap<TrackId, usize>,
}

impl TrafficLog {
    pub fn new(
        tracks: BTreeMap<TrackId, VehicleTrack>,
        frame_period_ms: i64,
        curbs: Vec<Vec<Point2>>,
        reference_paths: Vec<ReferencePath>,
    ) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::Validation("no tracks".into()));
        }
        if frame_period_ms <= 0 {
            return Err(Error::Validation(format!(
                "frame period must be positive, got {frame_period_ms} ms"
            )));
        }
        if reference_paths.is_empty() {
            return Err(Error::Validation("no reference paths".into()));
        }
        for (i, c) in curbs.iter().enumerate() {
            if c.len() < 2 {
                return Err(Error::Validation(format!(
                    "curb {i} has {} points, need at least 2",
                    c.len()
                )));
            }
        }
        for (&id, tr) in &tracks {
            if tr.id != id {
                return Err(Error::Validation(format!("track key {id} holds track {}", tr.id)));
            }
            validate_track(tr, frame_period_ms)?;
        }
        let routes = tracks
            .values()
            .map(|tr| (tr.id, nearest_route(tr, &reference_paths)))
            .collect();
        Ok(Self {
            tracks,
            frame_period_ms,
            curbs,
            reference_paths,
            routes,
        })
    }

    pub fn tracks(&self) -> &BTreeMap<TrackId, VehicleTrack> {
        &self.tracks
    }

    pub fn track(&self, id: TrackId) -> Option<&VehicleTrack> {
        self.tracks.get(&id)
    }

    pub fn frame_period(&self) -> f64 {
        self.frame_period_ms as f64 / 1000.0
    }

    pub fn frame_period_ms(&self) -> i64 {
        self.frame_period_ms
    }

    pub fn curbs(&self) -> &[Vec<Point2>] {
        &self.curbs
    }

    pub fn reference_paths(&self) -> &[ReferencePath] {
        &self.reference_paths
    }

    /// Reference path a track follows: the path with the smallest mean
    /// projection distance over the whole track, ties broken by path id.
    pub fn route_of(&self, id: TrackId) -> Option<&ReferencePath> {
        self.routes.get(&id).map(|&i| &self.reference_paths[i])
    }

    pub fn route_index(&self, id: TrackId) -> Option<usize> {
        self.routes.get(&id).copied()
    }

    /// Footprints of every logged vehicle present at `t`, ascending track id.
    pub fn vehicles_at(
        &self,
        t: f64,
        exclude: Option<TrackId>,
    ) -> impl Iterator<Item = (&VehicleTrack, ReplayState)> + '_ {
        self.tracks
            .values()
            .filter(move |tr| Some(tr.id) != exclude)
            .filter_map(move |tr| tr.state_at(t).map(|st| (tr, st)))
    }

    pub fn time_span(&self) -> (f64, f64) {
        let lo = self.tracks.values().map(|t| t.first_t()).fold(f64::INFINITY, f64::min);
        let hi = self.tracks.values().map(|t| t.last_t()).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn validate_track(tr: &VehicleTrack, period_ms: i64) -> Result<()> {
    if tr.states.len() < 2 {
        return Err(Error::Validation(format!(
            "track {} has {} states, need at least 2",
            tr.id,
            tr.states.len()
        )));
    }
    if !(tr.length > 0.0 && tr.width > 0.0) {
        return Err(Error::Validation(format!(
            "track {} has non-positive footprint {} x {}",
            tr.id, tr.length, tr.width
        )));
    }
    for w in tr.states.windows(2) {
        if w[1].t_ms <= w[0].t_ms {
            return Err(Error::Validation(format!(
                "track {}: timestamps not increasing ({} ms then {} ms)",
                tr.id, w[0].t_ms, w[1].t_ms
            )));
        }
        if w[1].t_ms - w[0].t_ms != period_ms {
            return Err(Error::Validation(format!(
                "track {}: frame gap {} ms differs from frame period {} ms",
                tr.id,
                w[1].t_ms - w[0].t_ms,
                period_ms
            )));
        }
    }
    if let Some(s) = tr
        .states
        .iter()
        .find(|s| !(s.pos.is_finite() && s.vel.is_finite() && s.heading.is_finite()))
    {
        return Err(Error::Validation(format!(
            "track {} has a non-finite state at {} ms",
            tr.id, s.t_ms
        )));
    }
    Ok(())
}

fn nearest_route(tr: &VehicleTrack, paths: &[ReferencePath]) -> usize {
    let step = (tr.states.len() / 40).max(1);
    let mut best = (f64::INFINITY, 0usize);
    for (i, p) in paths.iter().enumerate() {
        let (sum, n) = tr
            .states
            .iter()
            .step_by(step)
            .fold((0.0, 0usize), |(s, n), st| (s + p.project(st.pos).lateral_offset.abs(), n + 1));
        let mean = sum / n as f64;
        let better = mean < best.0
            || (mean == best.0 && p.id() < paths[best.1].id());
        if better {
            best = (mean, i);
        }
    }
    best.1
}

/// One simulation case: a logged vehicle handed to the policy at a start frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub ego_track_id: TrackId,
    /// Index into the ego track's states.
    pub start_frame: usize,
    pub horizon_frames: usize,
}

impl EpisodeSpec {
    pub fn validate(&self, log: &TrafficLog) -> Result<()> {
        let tr = log.track(self.ego_track_id).ok_or_else(|| {
            Error::Validation(format!("episode ego track {} not in log", self.ego_track_id))
        })?;
        if self.start_frame >= tr.len() {
            return Err(Error::Validation(format!(
                "start frame {} beyond track {} ({} frames)",
                self.start_frame,
                tr.id,
                tr.len()
            )));
        }
        if self.horizon_frames == 0 {
            return Err(Error::Validation("episode horizon must be at least 1 frame".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeOptions {
    pub stride_frames: usize,
    pub min_remaining: usize,
    /// Horizon as a multiple of the ego's remaining logged frames.
    pub horizon_scale: f64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            stride_frames: 10,
            min_remaining: 40,
            horizon_scale: 1.5,
        }
    }
}

/// Episodes for every (track, start frame) pair on the stride grid that has
/// at least `min_remaining` logged future frames, ordered by track then frame.
pub fn enumerate_episodes(log: &TrafficLog, stride_frames: usize, min_remaining: usize) -> Vec<EpisodeSpec> {
    enumerate_episodes_with(
        log,
        &EpisodeOptions {
            stride_frames,
            min_remaining,
            ..EpisodeOptions::default()
        },
    )
}

pub fn enumerate_episodes_with(log: &TrafficLog, opts: &EpisodeOptions) -> Vec<EpisodeSpec> {
    let stride = opts.stride_frames.max(1);
    let mut out = Vec::new();
    for tr in log.tracks().values() {
        for start in (0..tr.len()).step_by(stride) {
            let future = tr.len() - 1 - start;
            if future < opts.min_remaining || future == 0 {
                continue;
            }
            out.push(EpisodeSpec {
                ego_track_id: tr.id,
                start_frame: start,
                horizon_frames: ((future as f64) * opts.horizon_scale).ceil().max(1.0) as usize,
            });
        }
    }
    out
}
