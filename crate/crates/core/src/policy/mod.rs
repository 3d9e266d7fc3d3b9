//! Observations, the waypoint-policy interface, imitation losses, and a
//! nearest-neighbour behavioural-cloning baseline.

mod data;
mod knn;
mod loss;
mod raster;

pub use data::{Dataset, LabeledSample, SampleContext, Source};
pub use knn::{knn_bc_fit, KnnBcPolicy};
pub use loss::{heatmap, loss_curb, loss_pred, loss_total, loss_veh, sample_losses, LossBreakdown, LossConfig};
pub use raster::{rasterize, vehicle_mask, write_grid, Grid, RasterConfig, CHANNELS};

use serde::{Deserialize, Serialize};

use crate::dataset::{TrackId, TrafficLog};
use crate::error::{Error, Result};
use crate::geometry::{ray_segment_distance, wrap_angle, EgoFrame, Point2, ReferencePath};
use crate::simulator::{EgoState, Trajectory, Waypoint};

/// What the ego drives through: the log, its route, and its own footprint.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub log: &'a TrafficLog,
    pub path: &'a ReferencePath,
    /// Logged track the ego replaces; it is hidden from the replay.
    pub ego_track: Option<TrackId>,
    pub ego_length: f64,
    pub ego_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserveConfig {
    /// Neighbour slots in the feature vector.
    pub neighbors: usize,
    pub sensing_range: f64,
    pub curb_range: f64,
}

impl Default for ObserveConfig {
    fn default() -> Self {
        Self {
            neighbors: 4,
            sensing_range: 60.0,
            curb_range: 60.0,
        }
    }
}

/// A replay vehicle as seen from the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: TrackId,
    pub distance: f64,
    pub rel_pos: Point2,
    pub rel_vel: Point2,
    pub heading_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// World pose the ego frame is anchored to.
    pub ego: EgoState,
    pub lateral_offset: f64,
    pub heading_error: f64,
    pub curvature: f64,
    /// Vehicles within sensing range, nearest first.
    pub neighbors: Vec<Neighbor>,
    pub slots: usize,
    pub sensing_range: f64,
    /// Free distance along the ego heading before a curb.
    pub curb_distance: f64,
    pub grid: Option<Grid>,
}

pub const FEATURES_PER_NEIGHBOR: usize = 5;

/// Length of [`featurize`]'s output for `slots` neighbour slots.
pub fn feature_len(slots: usize) -> usize {
    5 + FEATURES_PER_NEIGHBOR * slots
}

fn curb_ray(log: &TrafficLog, origin: Point2, heading: f64, range: f64) -> f64 {
    let dir = Point2::from_angle(heading);
    let mut best = range;
    for curb in log.curbs() {
        for w in curb.windows(2) {
            // segments entirely out of reach cannot shorten the ray
            if crate::geometry::point_segment_distance(origin, w[0], w[1]) >= best {
                continue;
            }
            if let Some(t) = ray_segment_distance(origin, dir, w[0], w[1]) {
                best = best.min(t);
            }
        }
    }
    best
}

/// Structured observation without the raster grid.
pub fn observe(scene: &Scene<'_>, ego: &EgoState, cfg: &ObserveConfig) -> Observation {
    let frame = EgoFrame::new(ego.pos, ego.heading);
    let proj = scene.path.project(ego.pos);
    let ps = scene.path.eval_clamped(proj.s);
    let ego_vel = Point2::from_angle(ego.heading) * ego.speed;
    let mut neighbors: Vec<Neighbor> = scene
        .log
        .vehicles_at(ego.t, scene.ego_track)
        .filter_map(|(tr, st)| {
            let distance = st.pos.distance(ego.pos);
            (distance <= cfg.sensing_range).then(|| Neighbor {
                id: tr.id,
                distance,
                rel_pos: frame.to_local(st.pos),
                rel_vel: frame.vec_to_local(st.vel - ego_vel),
                heading_diff: wrap_angle(st.heading - ego.heading),
            })
        })
        .collect();
    neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    Observation {
        ego: *ego,
        lateral_offset: proj.lateral_offset,
        heading_error: wrap_angle(ego.heading - ps.heading),
        curvature: ps.curvature,
        neighbors,
        slots: cfg.neighbors,
        sensing_range: cfg.sensing_range,
        curb_distance: curb_ray(scene.log, ego.pos, ego.heading, cfg.curb_range),
        grid: None,
    }
}

/// Structured observation plus the birdeye grid.
pub fn observe_with_grid(
    scene: &Scene<'_>,
    ego: &EgoState,
    cfg: &ObserveConfig,
    raster: &RasterConfig,
) -> Observation {
    let mut obs = observe(scene, ego, cfg);
    obs.grid = Some(rasterize(scene.log, ego, scene.path, scene.ego_track, raster));
    obs
}

/// Fixed-length feature vector. Missing neighbours are filled with a
/// stationary placeholder at the edge of sensing range straight ahead.
pub fn featurize(obs: &Observation) -> Vec<f64> {
    let mut f = Vec::with_capacity(feature_len(obs.slots));
    f.extend([obs.ego.speed, obs.lateral_offset, obs.heading_error, obs.curvature]);
    for i in 0..obs.slots {
        match obs.neighbors.get(i) {
            Some(n) => f.extend([n.rel_pos.x, n.rel_pos.y, n.rel_vel.x, n.rel_vel.y, n.heading_diff]),
            None => f.extend([0.0, obs.sensing_range, 0.0, 0.0, 0.0]),
        }
    }
    f.push(obs.curb_distance);
    f
}

/// Ego-frame displacements of the next `n` waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPrediction {
    pub offsets: Vec<Point2>,
    pub period: f64,
}

impl WaypointPrediction {
    pub fn new(offsets: Vec<Point2>, period: f64) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Policy("prediction needs at least one waypoint".into()));
        }
        if offsets.iter().any(|o| !o.is_finite()) || !(period > 0.0) {
            return Err(Error::Policy("prediction must be finite with a positive period".into()));
        }
        Ok(Self { offsets, period })
    }

    pub fn n(&self) -> usize {
        self.offsets.len()
    }

    /// World trajectory starting at the ego's current position.
    pub fn to_world(&self, ego: &EgoState) -> Result<Trajectory> {
        let frame = EgoFrame::new(ego.pos, ego.heading);
        let mut wps = vec![Waypoint {
            t: ego.t,
            pos: ego.pos,
            heading: None,
        }];
        wps.extend(self.offsets.iter().enumerate().map(|(i, o)| Waypoint {
            t: ego.t + (i + 1) as f64 * self.period,
            pos: frame.to_world(*o),
            heading: None,
        }));
        Trajectory::new(wps)
    }
}

/// A driving policy mapping observations to waypoint offsets.
pub trait Policy: Sync {
    fn act(&self, obs: &Observation) -> Result<WaypointPrediction>;
}

/// Convenience wrapper mirroring [`Policy::act`].
pub fn policy_act(policy: &dyn Policy, obs: &Observation) -> Result<WaypointPrediction> {
    policy.act(obs)
}

/// Logged future of `track` expressed in the frame of `ego`, clamped to the
/// last logged state.
pub fn logged_offsets(log: &TrafficLog, track: TrackId, ego: &EgoState, n: usize, period: f64) -> Result<Vec<Point2>> {
    let tr = log
        .track(track)
        .ok_or_else(|| Error::Validation(format!("track {track} not in log")))?;
    let frame = EgoFrame::new(ego.pos, ego.heading);
    Ok((1..=n)
        .map(|i| {
            let t = (ego.t + i as f64 * period).min(tr.last_t());
            let st = tr.state_at(t).expect("clamped time lies inside the track");
            frame.to_local(st.pos)
        })
        .collect())
}

/// Replays a logged track's future from wherever the ego currently is.
#[derive(Debug, Clone, Copy)]
pub struct LogReplayPolicy<'a> {
    pub log: &'a TrafficLog,
    pub track: TrackId,
    pub n: usize,
    pub period: f64,
}

impl Policy for LogReplayPolicy<'_> {
    fn act(&self, obs: &Observation) -> Result<WaypointPrediction> {
        let offsets = logged_offsets(self.log, self.track, &obs.ego, self.n, self.period)?;
        WaypointPrediction::new(offsets, self.period)
    }
}

/// Always returns the same ego-frame offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub WaypointPrediction);

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &Observation) -> Result<WaypointPrediction> {
        Ok(self.0.clone())
    }
}
