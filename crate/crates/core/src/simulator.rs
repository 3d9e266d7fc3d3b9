//! Log-replay rollout engine.
//!
//! The ego follows the policy through a kinematic waypoint tracker; every
//! other vehicle replays the log and never reacts to the ego.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeSpec, TrackId, TrafficLog};
use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, wrap_angle, OrientedBox, Point2};
use crate::policy::{featurize, observe, ObserveConfig, Policy, Scene};
use crate::refine::{qp_smooth, RefineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pos: Point2,
    pub heading: f64,
    pub speed: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub pos: Point2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

/// Timestamped world-frame waypoints with strictly increasing times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Waypoint>", into = "Vec<Waypoint>")]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
}

impl TryFrom<Vec<Waypoint>> for Trajectory {
    type Error = Error;

    fn try_from(waypoints: Vec<Waypoint>) -> Result<Self> {
        Trajectory::new(waypoints)
    }
}

impl From<Trajectory> for Vec<Waypoint> {
    fn from(t: Trajectory) -> Self {
        t.waypoints
    }
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::Validation("trajectory needs at least one waypoint".into()));
        }
        if waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Validation("trajectory timestamps must strictly increase".into()));
        }
        if waypoints.iter().any(|w| !w.pos.is_finite() || !w.t.is_finite()) {
            return Err(Error::Validation("trajectory has non-finite waypoints".into()));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.waypoints.last().unwrap().t
    }

    /// Linear interpolation in time; `None` outside the covered interval.
    pub fn position_at(&self, t: f64) -> Option<Point2> {
        const EPS: f64 = 1e-9;
        if t < self.start_time() - EPS || t > self.end_time() + EPS {
            return None;
        }
        let i = self.waypoints.partition_point(|w| w.t <= t);
        if i == 0 {
            return Some(self.waypoints[0].pos);
        }
        if i == self.waypoints.len() {
            return Some(self.waypoints[i - 1].pos);
        }
        let (a, b) = (&self.waypoints[i - 1], &self.waypoints[i]);
        Some(a.pos.lerp(b.pos, (t - a.t) / (b.t - a.t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Bound on |speed change| per second (m/s^2).
    pub max_accel: f64,
    /// Bound on |heading change| per second (rad/s).
    pub max_yaw_rate: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            max_accel: 4.0,
            max_yaw_rate: 0.6,
        }
    }
}

/// Advances the ego one step toward the trajectory position at `t + step`.
/// Speed and heading changes are capped; when a cap binds the ego moves
/// along the capped motion instead of landing on the waypoint.
pub fn track_waypoints(
    state: &EgoState,
    traj: &Trajectory,
    step_period: f64,
    cfg: &TrackingConfig,
) -> Result<EgoState> {
    let t_next = state.t + step_period;
    if !(traj.end_time() > state.t) {
        return Err(Error::Tracking(format!(
            "no waypoint after t = {:.3} s (trajectory ends at {:.3} s)",
            state.t,
            traj.end_time()
        )));
    }
    let target = traj
        .position_at(t_next.min(traj.end_time()))
        .ok_or_else(|| Error::Tracking(format!("trajectory does not cover t = {t_next:.3} s")))?;
    let disp = target - state.pos;
    let want_speed = disp.norm() / step_period;
    let want_heading = if disp.norm() > 1e-9 { disp.angle() } else { state.heading };

    let dv_max = cfg.max_accel * step_period;
    let dh_max = cfg.max_yaw_rate * step_period;
    let dv = want_speed - state.speed;
    let dh = wrap_angle(want_heading - state.heading);
    let speed_capped = dv.abs() > dv_max;
    let heading_capped = dh.abs() > dh_max;

    let speed = if speed_capped {
        (state.speed + dv.signum() * dv_max).max(0.0)
    } else {
        want_speed
    };
    let heading = if heading_capped {
        wrap_angle(state.heading + dh.signum() * dh_max)
    } else {
        want_heading
    };
    let pos = if speed_capped || heading_capped {
        state.pos + Point2::from_angle(heading) * (speed * step_period)
    } else {
        target
    };
    Ok(EgoState {
        pos,
        heading,
        speed,
        t: t_next,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum Collision {
    Vehicle(TrackId),
    Curb(usize),
}

/// Vehicles are checked before curbs; the first hit by ascending track id or
/// curb index is reported.
pub fn check_collisions(
    ego_box: &OrientedBox,
    log: &TrafficLog,
    t: f64,
    exclude: Option<TrackId>,
) -> Option<Collision> {
    for (tr, st) in log.vehicles_at(t, exclude) {
        if boxes_overlap(ego_box, &tr.footprint(&st)) {
            return Some(Collision::Vehicle(tr.id));
        }
    }
    curb_hit(ego_box, log)
}

pub fn curb_hit(ego_box: &OrientedBox, log: &TrafficLog) -> Option<Collision> {
    let r = ego_box.circumradius();
    for (i, curb) in log.curbs().iter().enumerate() {
        for w in curb.windows(2) {
            let mid = (w[0] + w[1]) * 0.5;
            let half = w[0].distance(w[1]) * 0.5;
            if mid.distance(ego_box.center) > r + half {
                continue;
            }
            if ego_box.intersects_segment(w[0], w[1]) {
                return Some(Collision::Curb(i));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailVehicle,
    FailCurb,
    Timeout,
}

impl Outcome {
    pub fn is_failure(self) -> bool {
        matches!(self, Outcome::FailVehicle | Outcome::FailCurb)
    }
}

/// One simulation step: the ego state, the compact observation the policy
/// saw, and the raw waypoint offsets it returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub ego: EgoState,
    pub features: Vec<f64>,
    pub prediction: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub spec: EpisodeSpec,
    pub outcome: Outcome,
    pub failure_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision: Option<Collision>,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub step_period: f64,
    pub goal_radius: f64,
    pub tracking: TrackingConfig,
    /// Smooth raw policy waypoints before tracking them.
    pub smooth: bool,
    pub refine: RefineConfig,
    pub observe: ObserveConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_period: 0.1,
            goal_radius: 2.0,
            tracking: TrackingConfig::default(),
            smooth: true,
            refine: RefineConfig::default(),
            observe: ObserveConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self, log: &TrafficLog) -> Result<()> {
        if !(self.step_period > 0.0) {
            return Err(Error::Validation("step period must be positive".into()));
        }
        let ratio = log.frame_period() / self.step_period;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(Error::Validation(format!(
                "step period {} s must divide the frame period {} s",
                self.step_period,
                log.frame_period()
            )));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::Validation("goal radius must be positive".into()));
        }
        self.refine.validate()
    }

    fn steps_per_frame(&self, log: &TrafficLog) -> usize {
        (log.frame_period() / self.step_period).round() as usize
    }
}

/// Logged state of the ego track at its start frame.
pub fn initial_ego_state(log: &TrafficLog, spec: &EpisodeSpec) -> Result<EgoState> {
    spec.validate(log)?;
    let st = log.track(spec.ego_track_id).unwrap().states[spec.start_frame];
    Ok(EgoState {
        pos: st.pos,
        heading: st.heading,
        speed: st.speed(),
        t: st.t(),
    })
}

/// Builds the scene an episode's ego perceives.
pub fn episode_scene<'a>(log: &'a TrafficLog, ego_track: TrackId) -> Result<Scene<'a>> {
    let tr = log
        .track(ego_track)
        .ok_or_else(|| Error::Validation(format!("track {ego_track} not in log")))?;
    Ok(Scene {
        log,
        path: log.route_of(ego_track).unwrap(),
        ego_track: Some(ego_track),
        ego_length: tr.length,
        ego_width: tr.width,
    })
}

pub fn ego_box(scene: &Scene<'_>, ego: &EgoState) -> OrientedBox {
    OrientedBox {
        center: ego.pos,
        heading: wrap_angle(ego.heading),
        length: scene.ego_length,
        width: scene.ego_width,
    }
}

/// Terminal condition at the current state, if any.
fn terminal(scene: &Scene<'_>, ego: &EgoState, cfg: &SimConfig) -> Option<(Outcome, Option<Collision>)> {
    let bx = ego_box(scene, ego);
    match check_collisions(&bx, scene.log, ego.t, scene.ego_track) {
        Some(c @ Collision::Vehicle(_)) => return Some((Outcome::FailVehicle, Some(c))),
        Some(c @ Collision::Curb(_)) => return Some((Outcome::FailCurb, Some(c))),
        None => {}
    }
    (ego.pos.distance(scene.path.end()) <= cfg.goal_radius).then_some((Outcome::Success, None))
}

/// Rolls one episode out. Driving failures end the episode with a failure
/// outcome; policy or tracking errors are returned as `Err`.
pub fn run_episode(
    log: &TrafficLog,
    spec: &EpisodeSpec,
    policy: &dyn Policy,
    cfg: &SimConfig,
) -> Result<RolloutResult> {
    cfg.validate(log)?;
    let scene = episode_scene(log, spec.ego_track_id)?;
    let mut ego = initial_ego_state(log, spec)?;
    let max_steps = spec.horizon_frames * cfg.steps_per_frame(log);
    let mut frames = Vec::with_capacity(max_steps + 1);
    let mut step = 0usize;
    loop {
        let obs = observe(&scene, &ego, &cfg.observe);
        let pred = policy.act(&obs)?;
        frames.push(Frame {
            ego,
            features: featurize(&obs),
            prediction: pred.offsets.clone(),
        });
        if let Some((outcome, collision)) = terminal(&scene, &ego, cfg) {
            return Ok(RolloutResult {
                spec: *spec,
                outcome,
                failure_frame: outcome.is_failure().then_some(step),
                collision,
                frames,
            });
        }
        if step == max_steps {
            return Ok(RolloutResult {
                spec: *spec,
                outcome: Outcome::Timeout,
                failure_frame: None,
                collision: None,
                frames,
            });
        }
        let traj = if cfg.smooth {
            qp_smooth(&pred.offsets, pred.period, &ego, &cfg.refine)?
        } else {
            pred.to_world(&ego)?
        };
        ego = track_waypoints(&ego, &traj, cfg.step_period, &cfg.tracking)?;
        step += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub successes: usize,
    pub fail_vehicle: usize,
    pub fail_curb: usize,
    pub timeouts: usize,
    pub suc_rate: f64,
    pub fail_v_rate: f64,
    pub fail_c_rate: f64,
    pub timeout_rate: f64,
}

impl Metrics {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = Outcome>) -> Self {
        let mut m = Metrics::default();
        for o in outcomes {
            m.episodes += 1;
            match o {
                Outcome::Success => m.successes += 1,
                Outcome::FailVehicle => m.fail_vehicle += 1,
                Outcome::FailCurb => m.fail_curb += 1,
                Outcome::Timeout => m.timeouts += 1,
            }
        }
        if m.episodes > 0 {
            let n = m.episodes as f64;
            m.suc_rate = m.successes as f64 / n;
            m.fail_v_rate = m.fail_vehicle as f64 / n;
            m.fail_c_rate = m.fail_curb as f64 / n;
            m.timeout_rate = m.timeouts as f64 / n;
        }
        m
    }

    /// The partition holds on counts exactly; rates are derived from them.
    pub fn counts_partition(&self) -> bool {
        self.successes + self.fail_vehicle + self.fail_curb + self.timeouts == self.episodes
    }
}

/// Episode outcomes in spec order plus aggregate metrics. Episodes whose
/// rollout errored are listed separately and excluded from the rates.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub results: Vec<RolloutResult>,
    pub errors: Vec<(EpisodeSpec, String)>,
    pub metrics: Metrics,
}

/// Runs every episode on `workers` threads; results are ordered by spec index
/// regardless of the worker count.
pub fn evaluate(
    log: &TrafficLog,
    specs: &[EpisodeSpec],
    policy: &dyn Policy,
    cfg: &SimConfig,
    workers: usize,
) -> Result<Evaluation> {
    if specs.is_empty() {
        return Err(Error::Validation("no episodes to evaluate".into()));
    }
    cfg.validate(log)?;
    let run = || -> Vec<Result<RolloutResult>> {
        specs
            .par_iter()
            .map(|spec| run_episode(log, spec, policy, cfg))
            .collect()
    };
    let raw = with_workers(workers, run)?;
    let mut results = Vec::with_capacity(specs.len());
    let mut errors = Vec::new();
    for (spec, r) in specs.iter().zip(raw) {
        match r {
            Ok(r) => results.push(r),
            Err(e) => errors.push((*spec, e.to_string())),
        }
    }
    let metrics = Metrics::from_outcomes(results.iter().map(|r| r.outcome));
    Ok(Evaluation {
        results,
        errors,
        metrics,
    })
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn write_rollouts_jsonl<W: Write>(mut w: W, results: &[RolloutResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rollouts_jsonl<R: BufRead>(r: R) -> Result<Vec<RolloutResult>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: "rollouts".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{simple_log, straight_track};
    use crate::dataset::{enumerate_episodes, make_synthetic_scenario, ScenarioKind};
    use crate::policy::{ConstantPolicy, LogReplayPolicy, WaypointPrediction};

    fn straight(speed: f64, heading: f64) -> (EgoState, Trajectory) {
        let ego = EgoState { pos: Point2::new(1.0, 2.0), heading, speed, t: 3.0 };
        let dir = Point2::from_angle(heading);
        let wps = (0..5)
            .map(|k| Waypoint { t: 3.0 + 0.3 * k as f64, pos: ego.pos + dir * (speed * 0.3 * k as f64), heading: None })
            .collect();
        (ego, Trajectory::new(wps).unwrap())
    }

    #[test]
    fn tracking_keeps_straight_motion() {
        let (ego, traj) = straight(6.0, 0.4);
        let next = track_waypoints(&ego, &traj, 0.1, &TrackingConfig::default()).unwrap();
        assert!((next.speed - 6.0).abs() < 1e-9);
        assert!((next.heading - 0.4).abs() < 1e-9);
        assert!(next.pos.distance(ego.pos + Point2::from_angle(0.4) * 0.6) < 1e-9);
        assert!((next.t - 3.1).abs() < 1e-12);
    }

    #[test]
    fn tracking_caps_bind() {
        let (ego, _) = straight(6.0, 0.0);
        let sharp = Trajectory::new(vec![
            Waypoint { t: 3.0, pos: ego.pos, heading: None },
            Waypoint { t: 3.3, pos: ego.pos + Point2::new(0.0, 5.0), heading: None },
        ])
        .unwrap();
        let cfg = TrackingConfig::default();
        let next = track_waypoints(&ego, &sharp, 0.1, &cfg).unwrap();
        assert!((next.heading - cfg.max_yaw_rate * 0.1).abs() < 1e-12);
        let stale = Trajectory::new(vec![Waypoint { t: 2.0, pos: ego.pos, heading: None }]).unwrap();
        assert!(matches!(track_waypoints(&ego, &stale, 0.1, &cfg), Err(Error::Tracking(_))));
    }

    #[test]
    fn replaying_the_log_never_crashes() {
        let log = make_synthetic_scenario(ScenarioKind::Roundabout, 12, 11).unwrap();
        let specs = enumerate_episodes(&log, 20, 30);
        assert!(!specs.is_empty());
        let cfg = SimConfig::default();
        for spec in specs.iter().take(25) {
            let policy = LogReplayPolicy { log: &log, track: spec.ego_track_id, n: 10, period: 0.3 };
            let r = run_episode(&log, spec, &policy, &cfg).unwrap();
            assert!(!r.outcome.is_failure(), "{spec:?} -> {:?} {:?}", r.outcome, r.collision);
        }
    }

    fn curbed_log() -> TrafficLog {
        let base = simple_log(vec![straight_track(1, 80, 0.0, 5.0, 100)]);
        TrafficLog::new(
            base.tracks().clone(),
            100,
            vec![vec![Point2::new(-10.0, 3.0), Point2::new(200.0, 3.0)]],
            base.reference_paths().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn steering_into_curb_fails() {
        let log = curbed_log();
        let spec = EpisodeSpec { ego_track_id: 1, start_frame: 0, horizon_frames: 60 };
        let left = ConstantPolicy(WaypointPrediction::new((1..=10).map(|i| Point2::new(-0.4 * i as f64, 1.5 * i as f64)).collect(), 0.3).unwrap());
        let r = run_episode(&log, &spec, &left, &SimConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::FailCurb);
        assert_eq!(r.failure_frame, Some(r.frames.len() - 1));
        assert_eq!(r.collision, Some(Collision::Curb(0)));
    }

    #[test]
    fn vehicle_collision_detected() {
        let log = simple_log(vec![straight_track(1, 80, 0.0, 5.0, 100), straight_track(2, 80, 20.0, 0.0, 100)]);
        let spec = EpisodeSpec { ego_track_id: 1, start_frame: 0, horizon_frames: 60 };
        let ahead = ConstantPolicy(WaypointPrediction::new((1..=10).map(|i| Point2::new(0.0, 1.5 * i as f64)).collect(), 0.3).unwrap());
        let r = run_episode(&log, &spec, &ahead, &SimConfig::default()).unwrap();
        assert_eq!(r.outcome, Outcome::FailVehicle);
        assert_eq!(r.collision, Some(Collision::Vehicle(2)));
    }

    #[test]
    fn evaluation_is_worker_independent() {
        let log = make_synthetic_scenario(ScenarioKind::Merging, 10, 2).unwrap();
        let specs = enumerate_episodes(&log, 25, 30);
        let drift = ConstantPolicy(WaypointPrediction::new((1..=10).map(|i| Point2::new(0.1 * i as f64, 2.0 * i as f64)).collect(), 0.3).unwrap());
        let cfg = SimConfig::default();
        let a = evaluate(&log, &specs, &drift, &cfg, 1).unwrap();
        let b = evaluate(&log, &specs, &drift, &cfg, 4).unwrap();
        assert_eq!(a.results, b.results);
        assert!(a.metrics.counts_partition());
        let total = a.metrics.suc_rate + a.metrics.fail_v_rate + a.metrics.fail_c_rate + a.metrics.timeout_rate;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(evaluate(&log, &[], &drift, &cfg, 1).is_err());

        let mut buf = Vec::new();
        write_rollouts_jsonl(&mut buf, &a.results).unwrap();
        assert_eq!(read_rollouts_jsonl(buf.as_slice()).unwrap(), a.results);
    }

    #[test]
    fn step_period_must_divide_frames() {
        let log = curbed_log();
        let cfg = SimConfig { step_period: 0.03, ..SimConfig::default() };
        assert!(cfg.validate(&log).is_err());
    }
}
