//! Search-based pseudo-expert over arc length, speed, and time along a
//! reference path, with collision checks against the logged futures.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{TrackId, TrafficLog};
use crate::error::{Error, Result};
use crate::geometry::{boxes_overlap, OrientedBox, ReferencePath};
use crate::simulator::{Trajectory, Waypoint};

pub const DEFAULT_ACCELS: [f64; 9] = [-4.0, -3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub s: f64,
    pub v: f64,
    pub t: f64,
    /// Index of the parent within the owning node list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_in: Option<f64>,
    pub g_cost: f64,
}

impl PlanNode {
    pub fn root(s: f64, v: f64) -> Self {
        Self {
            s,
            v,
            t: 0.0,
            parent: None,
            accel_in: None,
            g_cost: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub accel_set: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub bin_s: f64,
    pub bin_v: f64,
    pub bin_t: f64,
    pub w_accel: f64,
    pub w_curvature: f64,
    pub w_speed: f64,
    pub v_goal: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    pub safety_margin: f64,
    /// Weight of the optional speed-error heuristic; 0 gives uniform-cost search.
    pub heuristic_weight: f64,
    pub max_expansions: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            accel_set: DEFAULT_ACCELS.to_vec(),
            dt: 0.5,
            horizon: 8.0,
            bin_s: 0.5,
            bin_v: 0.25,
            bin_t: 0.5,
            w_accel: 1.0,
            w_curvature: 2.0,
            w_speed: 0.5,
            v_goal: 8.0,
            ego_length: 4.5,
            ego_width: 1.8,
            safety_margin: 0.3,
            heuristic_weight: 0.0,
            max_expansions: 400_000,
        }
    }
}

impl PlannerConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Goal speed and footprint taken from a logged track.
    pub fn for_track(&self, log: &TrafficLog, id: TrackId) -> Result<Self> {
        let tr = log
            .track(id)
            .ok_or_else(|| Error::Validation(format!("track {id} not in log")))?;
        Ok(Self {
            v_goal: tr.mean_speed(),
            ego_length: tr.length,
            ego_width: tr.width,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.accel_set.is_empty() || self.accel_set.iter().any(|a| !a.is_finite()) {
            return bad("acceleration set must be non-empty and finite".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let ratio = self.horizon / self.dt;
        if !(self.horizon > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("horizon {} must be a positive multiple of dt {}", self.horizon, self.dt));
        }
        if !(self.bin_s > 0.0 && self.bin_v > 0.0 && self.bin_t > 0.0) {
            return bad("bin sizes must be positive".into());
        }
        if [self.w_accel, self.w_curvature, self.w_speed, self.heuristic_weight]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return bad("cost weights must be non-negative".into());
        }
        if !(self.v_goal >= 0.0) || !(self.ego_length > 0.0 && self.ego_width > 0.0) || !(self.safety_margin >= 0.0) {
            return bad("goal speed, footprint, and margin must be valid".into());
        }
        Ok(())
    }
}

/// Kinematic update; a node that would reverse stops within the step.
pub fn step_node(n: &PlanNode, a: f64, dt: f64) -> PlanNode {
    let v_next = n.v + a * dt;
    let (s, v) = if v_next < 0.0 {
        (n.s + n.v * n.v / (2.0 * a.abs()), 0.0)
    } else {
        (n.s + n.v * dt + 0.5 * a * dt * dt, v_next)
    };
    PlanNode {
        s,
        v,
        t: n.t + dt,
        parent: None,
        accel_in: Some(a),
        g_cost: n.g_cost,
    }
}

/// Ego footprint placed on the path at `s`, inflated by the safety margin.
pub fn footprint_at(path: &ReferencePath, s: f64, cfg: &PlannerConfig) -> OrientedBox {
    let ps = path.eval_clamped(s);
    OrientedBox {
        center: ps.pos,
        heading: crate::geometry::wrap_angle(ps.heading),
        length: cfg.ego_length,
        width: cfg.ego_width,
    }
    .inflated(cfg.safety_margin)
}

/// Whether the on-path footprint at `s` overlaps a replay vehicle at world
/// time `t_abs`.
pub fn in_collision(path: &ReferencePath, s: f64, log: &TrafficLog, t_abs: f64, exclude: Option<TrackId>, cfg: &PlannerConfig) -> bool {
    let bx = footprint_at(path, s, cfg);
    log.vehicles_at(t_abs, exclude)
        .any(|(tr, st)| boxes_overlap(&bx, &tr.footprint(&st)))
}

/// Sum of acceleration, centripetal, and speed-error terms, or infinity on
/// collision.
#[allow(clippy::too_many_arguments)]
pub fn transition_cost(
    a: f64,
    next: &PlanNode,
    path: &ReferencePath,
    log: &TrafficLog,
    t0: f64,
    exclude: Option<TrackId>,
    cfg: &PlannerConfig,
) -> f64 {
    if in_collision(path, next.s.min(path.length()), log, t0 + next.t, exclude, cfg) {
        return f64::INFINITY;
    }
    smooth_cost(a, next, path, cfg)
}

fn smooth_cost(a: f64, next: &PlanNode, path: &ReferencePath, cfg: &PlannerConfig) -> f64 {
    let kappa = path.eval_clamped(next.s).curvature.abs();
    cfg.w_accel * a * a + cfg.w_curvature * kappa * next.v * next.v + cfg.w_speed * (next.v - cfg.v_goal).powi(2)
}

pub type BinKey = (i64, i64, i64);

/// Discretisation unit of a node at search depth `step`.
pub fn bin_key(n: &PlanNode, step: usize, cfg: &PlannerConfig) -> BinKey {
    (
        (n.s / cfg.bin_s).floor() as i64,
        (n.v / cfg.bin_v).floor() as i64,
        (step as f64 * cfg.dt / cfg.bin_t + 1e-9).floor() as i64,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub nodes: Vec<PlanNode>,
    pub trajectory: Trajectory,
    pub total_cost: f64,
    pub expansions: usize,
}

impl PlanResult {
    pub fn accelerations(&self) -> Vec<f64> {
        self.nodes.iter().filter_map(|n| n.accel_in).collect()
    }
}

pub fn to_world_trajectory(nodes: &[PlanNode], path: &ReferencePath, t0: f64) -> Result<Trajectory> {
    Trajectory::new(
        nodes
            .iter()
            .map(|n| {
                let ps = path.eval_clamped(n.s);
                Waypoint {
                    t: t0 + n.t,
                    pos: ps.pos,
                    heading: Some(ps.heading),
                }
            })
            .collect(),
    )
}

struct Entry {
    f: f64,
    step: usize,
    s: f64,
    v: f64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Entry {
    // reversed so the max-heap pops the smallest key
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.step.cmp(&self.step))
            .then(o.s.total_cmp(&self.s))
            .then(o.v.total_cmp(&self.v))
            .then(o.idx.cmp(&self.idx))
    }
}

/// Replay footprints near the path at each search depth.
struct Obstacles<'a> {
    log: &'a TrafficLog,
    path: &'a ReferencePath,
    t0: f64,
    exclude: Option<TrackId>,
    reach: f64,
    dt: f64,
    layers: Vec<Option<Vec<OrientedBox>>>,
}

impl Obstacles<'_> {
    fn at(&mut self, step: usize) -> &[OrientedBox] {
        if self.layers[step].is_none() {
            let t = self.t0 + step as f64 * self.dt;
            let boxes = self
                .log
                .vehicles_at(t, self.exclude)
                .map(|(tr, st)| tr.footprint(&st))
                .filter(|b| self.path.project(b.center).lateral_offset.abs() <= self.reach + b.circumradius())
                .collect();
            self.layers[step] = Some(boxes);
        }
        self.layers[step].as_deref().unwrap()
    }
}

/// Uniform-cost search from `(start_s, start_v)` at world time `t0` to the
/// planning horizon. `exclude` hides the ego's own logged track.
pub fn plan(
    start_s: f64,
    start_v: f64,
    path: &ReferencePath,
    log: &TrafficLog,
    t0: f64,
    exclude: Option<TrackId>,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    cfg.validate()?;
    if !(0.0..=path.length()).contains(&start_s) {
        return Err(Error::OutOfRange {
            what: "start_s",
            value: start_s,
            lo: 0.0,
            hi: path.length(),
        });
    }
    if !(start_v >= 0.0) {
        return Err(Error::Validation(format!("start speed must be non-negative, got {start_v}")));
    }
    let steps = cfg.steps();
    let ego_reach = footprint_at(path, start_s, cfg).circumradius();
    let mut obstacles = Obstacles {
        log,
        path,
        t0,
        exclude,
        reach: ego_reach,
        dt: cfg.dt,
        layers: vec![None; steps + 1],
    };
    let collides = |obs: &mut Obstacles<'_>, s: f64, step: usize| {
        let bx = footprint_at(path, s, cfg);
        obs.at(step).iter().any(|b| boxes_overlap(&bx, b))
    };
    if collides(&mut obstacles, start_s, 0) {
        return Err(Error::InfeasiblePlan(format!(
            "start position s = {start_s:.2} m already overlaps a replay vehicle"
        )));
    }
    let h = |n: &PlanNode, step: usize| {
        if cfg.heuristic_weight == 0.0 {
            0.0
        } else {
            cfg.heuristic_weight * cfg.w_speed * (n.v - cfg.v_goal).powi(2) * (steps - step) as f64
        }
    };

    let mut nodes = vec![PlanNode::root(start_s, start_v)];
    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        f: h(&nodes[0], 0),
        step: 0,
        s: start_s,
        v: start_v,
        idx: 0,
    });
    let mut closed: HashSet<BinKey> = HashSet::new();
    let mut expansions = 0usize;
    while let Some(e) = heap.pop() {
        let node = nodes[e.idx];
        if !closed.insert(bin_key(&node, e.step, cfg)) {
            continue;
        }
        if e.step == steps {
            let mut chain = vec![e.idx];
            while let Some(p) = nodes[*chain.last().unwrap()].parent {
                chain.push(p);
            }
            chain.reverse();
            let mut out: Vec<PlanNode> = chain.iter().map(|&i| nodes[i]).collect();
            for (k, n) in out.iter_mut().enumerate() {
                n.parent = k.checked_sub(1);
                // exact multiples of dt rather than accumulated sums
                n.t = k as f64 * cfg.dt;
            }
            let trajectory = to_world_trajectory(&out, path, t0)?;
            return Ok(PlanResult {
                total_cost: node.g_cost,
                nodes: out,
                trajectory,
                expansions,
            });
        }
        expansions += 1;
        if expansions > cfg.max_expansions {
            return Err(Error::InfeasiblePlan(format!(
                "search exceeded {} expansions without reaching the horizon",
                cfg.max_expansions
            )));
        }
        for &a in &cfg.accel_set {
            let mut child = step_node(&node, a, cfg.dt);
            child.s = child.s.min(path.length());
            if collides(&mut obstacles, child.s, e.step + 1) {
                continue;
            }
            child.g_cost = node.g_cost + smooth_cost(a, &child, path, cfg);
            child.parent = Some(e.idx);
            if closed.contains(&bin_key(&child, e.step + 1, cfg)) {
                continue;
            }
            nodes.push(child);
            heap.push(Entry {
                f: child.g_cost + h(&child, e.step + 1),
                step: e.step + 1,
                s: child.s,
                v: child.v,
                idx: nodes.len() - 1,
            });
        }
    }
    Err(Error::InfeasiblePlan(format!(
        "every branch collides before the {:.1} s horizon",
        cfg.horizon
    )))
}
