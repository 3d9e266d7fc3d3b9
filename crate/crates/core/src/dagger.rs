//! Iterative data aggregation with the search-based pseudo-expert.
//!
//! Each iteration fits the policy on the aggregated set, rolls it out on the
//! fixed training episodes, picks critical states (frames before a failure,
//! or the least expert-like frame per rollout), labels them with the planner,
//! and adds the labels with a multiplicity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{enumerate_episodes_with, EpisodeOptions, EpisodeSpec, TrackId, TrafficLog};
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, EgoFrame, OrientedBox, Point2};
use crate::planner::{plan, PlannerConfig};
use crate::policy::{
    featurize, knn_bc_fit, observe, sample_losses, Dataset, KnnBcPolicy, LabeledSample, LossBreakdown, LossConfig,
    Policy, SampleContext, Source,
};
use crate::refine::blend_to_ego;
use crate::simulator::{
    check_collisions, episode_scene, evaluate, with_workers, EgoState, Metrics, RolloutResult, SimConfig, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    KFailure { k: usize },
    Adversary,
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::KFailure { k: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Stop once the mean log-loss improves by less than this.
    pub tolerance: f64,
    pub l2: f64,
    /// Per-class cap on training rows, taken at an even stride.
    pub max_per_class: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 0.5,
            tolerance: 1e-7,
            l2: 1e-4,
            max_per_class: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaggerConfig {
    pub iterations: usize,
    pub strategy: Strategy,
    /// Multiplicity given to every new expert sample.
    pub duplication: u32,
    /// Expert samples drawn along the labelled trajectory per selected state.
    pub expert_samples: usize,
    pub knn_k: usize,
    pub waypoints: usize,
    pub waypoint_period: f64,
    pub episodes: EpisodeOptions,
    /// Keep only this many training episodes, evenly spaced.
    pub rollout_limit: Option<usize>,
    /// Original samples used for the per-iteration loss report.
    pub loss_samples: usize,
    pub loss: LossConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            strategy: Strategy::default(),
            duplication: 10,
            expert_samples: 1,
            knn_k: 5,
            waypoints: 10,
            waypoint_period: 0.3,
            episodes: EpisodeOptions::default(),
            rollout_limit: None,
            loss_samples: 8,
            loss: LossConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be at least 1".into()));
        }
        if let Strategy::KFailure { k: 0 } = self.strategy {
            return Err(Error::Validation("k-failure window must be at least 1 frame".into()));
        }
        if self.duplication == 0 || self.expert_samples == 0 || self.knn_k == 0 || self.waypoints == 0 {
            return Err(Error::Validation(
                "duplication, expert samples, k, and waypoint count must be at least 1".into(),
            ));
        }
        if !(self.waypoint_period > 0.0) {
            return Err(Error::Validation("waypoint period must be positive".into()));
        }
        if self.rollout_limit == Some(0) {
            return Err(Error::Validation("rollout limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Frames per waypoint period, when the period is a whole number of frames.
fn frame_stride(log: &TrafficLog, period: f64) -> Result<usize> {
    let r = period / log.frame_period();
    if r < 1.0 - 1e-9 || (r - r.round()).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "waypoint period {period} s must be a whole multiple of the frame period {} s",
            log.frame_period()
        )));
    }
    Ok(r.round() as usize)
}

/// Every logged vehicle at every frame with `n` periods of future becomes a
/// sample whose targets are its own logged offsets.
pub fn extract_original_dataset(
    log: &TrafficLog,
    n: usize,
    period: f64,
    observe_cfg: &crate::policy::ObserveConfig,
) -> Result<Dataset> {
    let stride = frame_stride(log, period)?;
    let mut ds = Dataset::new(n, period)?;
    for tr in log.tracks().values() {
        let scene = episode_scene(log, tr.id)?;
        for j in 0..tr.len().saturating_sub(n * stride) {
            let st = tr.states[j];
            let ego = EgoState {
                pos: st.pos,
                heading: st.heading,
                speed: st.speed(),
                t: st.t(),
            };
            let frame = EgoFrame::new(ego.pos, ego.heading);
            let targets = (1..=n).map(|i| frame.to_local(tr.states[j + i * stride].pos)).collect();
            ds.push(LabeledSample {
                features: featurize(&observe(&scene, &ego, observe_cfg)),
                targets,
                source: Source::Original,
                multiplicity: 1,
                context: Some(SampleContext { ego_track: tr.id, ego }),
            })?;
        }
    }
    Ok(ds)
}

/// The `k` frames before a failure, clamped at the episode start.
pub fn select_k_failure(result: &RolloutResult, k: usize) -> Vec<usize> {
    match (result.outcome.is_failure(), result.failure_frame) {
        (true, Some(f)) => (f.saturating_sub(k)..f).collect(),
        _ => Vec::new(),
    }
}

/// Logistic model scoring how expert-like a (features, offsets) row looks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Discriminator {
    /// All-zero model: every row scores exactly 0.5.
    pub fn zero(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Probability that `row` came from the expert.
    pub fn expert_probability(&self, row: &[f64]) -> f64 {
        let z = row
            .iter()
            .zip(&self.weights)
            .zip(self.mean.iter().zip(&self.scale))
            .map(|((x, w), (m, s))| w * (x - m) / s)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

/// Discriminator input for a sample or rollout frame.
pub fn behavior_row(features: &[f64], offsets: &[Point2]) -> Vec<f64> {
    let mut row = features.to_vec();
    for o in offsets {
        row.push(o.x);
        row.push(o.y);
    }
    row
}

fn strided<T: Clone>(rows: &[T], cap: usize) -> Vec<T> {
    if rows.len() <= cap {
        return rows.to_vec();
    }
    (0..cap).map(|i| rows[i * rows.len() / cap].clone()).collect()
}

/// Full-batch gradient descent on the regularised log-loss (label 1 = expert).
pub fn fit_discriminator_rows(expert: &[Vec<f64>], policy: &[Vec<f64>], cfg: &DiscriminatorConfig) -> Result<Discriminator> {
    if expert.is_empty() || policy.is_empty() {
        return Err(Error::SingleClass {
            expert: expert.len(),
            policy: policy.len(),
        });
    }
    let expert = strided(expert, cfg.max_per_class.max(1));
    let policy = strided(policy, cfg.max_per_class.max(1));
    let dim = expert[0].len();
    if expert.iter().chain(&policy).any(|r| r.len() != dim) {
        return Err(Error::ShapeMismatch("discriminator rows differ in length".into()));
    }
    let rows: Vec<(&Vec<f64>, f64)> = expert
        .iter()
        .map(|r| (r, 1.0))
        .chain(policy.iter().map(|r| (r, 0.0)))
        .collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for (r, _) in &rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for (r, _) in &rows {
        for ((s, x), m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (x - m) * (x - m) / n;
        }
    }
    for s in scale.iter_mut() {
        *s = if s.sqrt() < 1e-9 { 1.0 } else { s.sqrt() };
    }
    let z: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|(r, y)| (r.iter().zip(mean.iter().zip(&scale)).map(|(x, (m, s))| (x - m) / s).collect(), *y))
        .collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut last = f64::INFINITY;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, y) in &z {
            let p = sigmoid(x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b);
            let err = p - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
            loss -= y * p.max(1e-300).ln() + (1.0 - y) * (1.0 - p).max(1e-300).ln();
        }
        loss = loss / n + 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= cfg.learning_rate * (g / n + cfg.l2 * *wi);
        }
        b -= cfg.learning_rate * gb / n;
        if (last - loss).abs() < cfg.tolerance {
            break;
        }
        last = loss;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Validation("discriminator training diverged".into()));
    }
    Ok(Discriminator {
        mean,
        scale,
        weights: w,
        bias: b,
    })
}

/// Expert rows come from the samples, policy rows from every rollout frame.
pub fn fit_discriminator(expert: &Dataset, rollouts: &[RolloutResult], cfg: &DiscriminatorConfig) -> Result<Discriminator> {
    let e: Vec<Vec<f64>> = expert.samples().iter().map(|s| behavior_row(&s.features, &s.targets)).collect();
    let p: Vec<Vec<f64>> = rollouts
        .iter()
        .flat_map(|r| r.frames.iter().map(|f| behavior_row(&f.features, &f.prediction)))
        .collect();
    fit_discriminator_rows(&e, &p, cfg)
}

/// The single least expert-like frame; ties go to the earliest.
pub fn select_adversary(result: &RolloutResult, disc: &Discriminator) -> Vec<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, f) in result.frames.iter().enumerate() {
        let p = disc.expert_probability(&behavior_row(&f.features, &f.prediction));
        if best.is_none_or(|(bp, _)| p < bp) {
            best = Some((p, i));
        }
    }
    best.map(|(_, i)| vec![i]).unwrap_or_default()
}

/// Everything the pseudo-expert needs besides the state being labelled.
#[derive(Debug, Clone)]
pub struct ExpertSetup<'a> {
    pub log: &'a TrafficLog,
    pub planner: &'a PlannerConfig,
    pub sim: &'a SimConfig,
    pub waypoints: usize,
    pub period: f64,
    pub expert_samples: usize,
}

fn footprint_on(traj: &Trajectory, t: f64, dt: f64, fallback: f64, length: f64, width: f64) -> Option<OrientedBox> {
    let p = traj.position_at(t)?;
    let ahead = traj.position_at((t + dt).min(traj.end_time()))?;
    let behind = traj.position_at((t - dt).max(traj.start_time()))?;
    let d = ahead - behind;
    let heading = if d.norm() > 1e-6 { d.angle() } else { fallback };
    Some(OrientedBox {
        center: p,
        heading: wrap_angle(heading),
        length,
        width,
    })
}

/// Plans from the ego's projection onto its route, blends the plan back to
/// the ego pose, and resamples it into labelled samples. Fails when the
/// plan or blend is infeasible or a target would collide.
pub fn label_with_expert(
    setup: &ExpertSetup<'_>,
    ego_track: TrackId,
    ego: &EgoState,
    iteration: usize,
) -> Result<Vec<LabeledSample>> {
    let log = setup.log;
    let scene = episode_scene(log, ego_track)?;
    let path = scene.path;
    let pcfg = setup.planner.for_track(log, ego_track)?;
    let proj = path.project(ego.pos);
    let rough = plan(proj.s, ego.speed.max(0.0), path, log, ego.t, Some(ego_track), &pcfg)?;
    let refined = blend_to_ego(&rough.trajectory, ego, path, &setup.sim.refine)?;

    let (n, period) = (setup.waypoints, setup.period);
    let last = setup.expert_samples - 1 + n;
    if ego.t + last as f64 * period > refined.end_time() + 1e-9 {
        return Err(Error::InfeasiblePlan(format!(
            "plan horizon {:.1} s is shorter than the {} requested waypoints",
            refined.end_time() - ego.t,
            last
        )));
    }
    let half = 0.5 * period;
    let mut states = Vec::with_capacity(last + 1);
    for j in 0..=last {
        let t = ego.t + j as f64 * period;
        let bx = footprint_on(&refined, t, half, ego.heading, scene.ego_length, scene.ego_width)
            .expect("time lies inside the refined trajectory");
        if j > 0 {
            if let Some(c) = check_collisions(&bx, log, t, Some(ego_track)) {
                return Err(Error::InfeasiblePlan(format!("expert waypoint {j} collides ({c:?})")));
            }
        }
        states.push((t, bx));
    }
    let mut out = Vec::with_capacity(setup.expert_samples);
    for j in 0..setup.expert_samples {
        let state = if j == 0 {
            *ego
        } else {
            let (t, bx) = states[j];
            let speed = refined.position_at((t + half).min(refined.end_time())).unwrap()
                .distance(refined.position_at(t - half).unwrap())
                / (2.0 * half).max(1e-9);
            EgoState {
                pos: bx.center,
                heading: bx.heading,
                speed,
                t,
            }
        };
        let frame = EgoFrame::new(state.pos, state.heading);
        let targets = (1..=n).map(|i| frame.to_local(states[j + i].1.center)).collect();
        out.push(LabeledSample {
            features: featurize(&observe(&scene, &state, &setup.sim.observe)),
            targets,
            source: Source::PseudoExpert { iteration },
            multiplicity: 1,
            context: Some(SampleContext { ego_track, ego: state }),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub metrics: Metrics,
    pub dataset_samples: usize,
    pub dataset_weighted: u64,
    pub rollout_errors: usize,
    pub selected: usize,
    pub labeled: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerReport {
    pub strategy: Strategy,
    pub episodes: usize,
    pub iterations: Vec<IterationReport>,
}

impl DaggerReport {
    pub fn success_rates(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.metrics.suc_rate).collect()
    }
}

/// Resumable loop state: the aggregated set before fitting `next_iteration`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaggerState {
    pub next_iteration: usize,
    pub dataset: Dataset,
    pub reports: Vec<IterationReport>,
}

/// Training episodes used for every iteration's rollouts.
pub fn training_episodes(log: &TrafficLog, cfg: &DaggerConfig) -> Vec<EpisodeSpec> {
    let all = enumerate_episodes_with(log, &cfg.episodes);
    match cfg.rollout_limit {
        Some(m) if m < all.len() => (0..m).map(|i| all[i * all.len() / m]).collect(),
        _ => all,
    }
}

pub struct DaggerRun<'a> {
    pub log: &'a TrafficLog,
    pub cfg: &'a DaggerConfig,
    pub sim: &'a SimConfig,
    pub planner: &'a PlannerConfig,
    pub workers: usize,
}

impl DaggerRun<'_> {
    fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.sim.validate(self.log)?;
        self.planner.validate()?;
        Ok(())
    }

    /// Fresh state holding the original dataset.
    pub fn initial_state(&self) -> Result<DaggerState> {
        self.validate()?;
        let ds = extract_original_dataset(self.log, self.cfg.waypoints, self.cfg.waypoint_period, &self.sim.observe)?;
        if ds.is_empty() {
            return Err(Error::Validation("log yields no original samples".into()));
        }
        Ok(DaggerState {
            next_iteration: 0,
            dataset: ds,
            reports: Vec::new(),
        })
    }

    fn loss_report(&self, policy: &KnnBcPolicy, ds: &Dataset) -> Result<Option<LossBreakdown>> {
        let originals: Vec<&LabeledSample> = ds.samples().iter().filter(|s| s.source == Source::Original).collect();
        if self.cfg.loss_samples == 0 || originals.is_empty() {
            return Ok(None);
        }
        let picked: Vec<&LabeledSample> = strided(&originals, self.cfg.loss_samples);
        let preds = picked
            .iter()
            .map(|s| policy.predict_features(&s.features))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(sample_losses(self.log, &picked, &preds, &self.cfg.loss)?))
    }

    /// Runs iterations until the configured count, calling `checkpoint` after
    /// each with the state for the following iteration.
    pub fn run_from(
        &self,
        mut state: DaggerState,
        mut checkpoint: impl FnMut(&DaggerState) -> Result<()>,
    ) -> Result<DaggerReport> {
        self.validate()?;
        let specs = training_episodes(self.log, self.cfg);
        if specs.is_empty() {
            return Err(Error::Validation("no training episodes in the log".into()));
        }
        let setup = ExpertSetup {
            log: self.log,
            planner: self.planner,
            sim: self.sim,
            waypoints: self.cfg.waypoints,
            period: self.cfg.waypoint_period,
            expert_samples: self.cfg.expert_samples,
        };
        let originals = {
            let mut d = Dataset::new(state.dataset.n, state.dataset.period)?;
            d.extend(state.dataset.samples().iter().filter(|s| s.source == Source::Original).cloned())?;
            d
        };
        while state.next_iteration <= self.cfg.iterations {
            let i = state.next_iteration;
            let policy = knn_bc_fit(&state.dataset, self.cfg.knn_k)?;
            let eval = evaluate(self.log, &specs, &policy as &dyn Policy, self.sim, self.workers)?;
            for (spec, e) in &eval.errors {
                log::warn!("iteration {i}: episode {spec:?} errored: {e}");
            }
            let mut report = IterationReport {
                iteration: i,
                metrics: eval.metrics,
                dataset_samples: state.dataset.len(),
                dataset_weighted: state.dataset.weighted_len(),
                rollout_errors: eval.errors.len(),
                selected: 0,
                labeled: 0,
                skipped: 0,
                losses: self.loss_report(&policy, &state.dataset)?,
            };
            log::info!(
                "iteration {i}: success {:.3}, fail-v {:.3}, fail-c {:.3}, {} samples",
                eval.metrics.suc_rate,
                eval.metrics.fail_v_rate,
                eval.metrics.fail_c_rate,
                state.dataset.len()
            );
            if i < self.cfg.iterations {
                let disc = match self.cfg.strategy {
                    Strategy::Adversary => Some(fit_discriminator(&originals, &eval.results, &self.cfg.discriminator)?),
                    Strategy::KFailure { .. } => None,
                };
                let picks: Vec<(TrackId, EgoState)> = eval
                    .results
                    .iter()
                    .flat_map(|r| {
                        let frames = match (&self.cfg.strategy, &disc) {
                            (Strategy::KFailure { k }, _) => select_k_failure(r, *k),
                            (Strategy::Adversary, Some(d)) => select_adversary(r, d),
                            (Strategy::Adversary, None) => unreachable!("discriminator is fit for this strategy"),
                        };
                        frames.into_iter().map(move |f| (r.spec.ego_track_id, r.frames[f].ego))
                    })
                    .collect();
                let labels = with_workers(self.workers, || {
                    picks
                        .par_iter()
                        .map(|(track, ego)| label_with_expert(&setup, *track, ego, i + 1))
                        .collect::<Vec<_>>()
                })?;
                report.selected = picks.len();
                for ((track, ego), l) in picks.iter().zip(labels) {
                    match l {
                        Ok(samples) => {
                            report.labeled += 1;
                            state.dataset.extend(samples.into_iter().map(|mut s| {
                                s.multiplicity = self.cfg.duplication;
                                s
                            }))?;
                        }
                        Err(e) => {
                            report.skipped += 1;
                            log::debug!("iteration {i}: skipped track {track} at t = {:.1} s: {e}", ego.t);
                        }
                    }
                }
            }
            state.reports.push(report);
            state.next_iteration += 1;
            checkpoint(&state)?;
        }
        Ok(DaggerReport {
            strategy: self.cfg.strategy,
            episodes: specs.len(),
            iterations: state.reports,
        })
    }
}

/// Runs the whole loop from the original dataset.
pub fn run_dagger(
    log: &TrafficLog,
    cfg: &DaggerConfig,
    sim: &SimConfig,
    planner: &PlannerConfig,
    workers: usize,
) -> Result<DaggerReport> {
    let run = DaggerRun {
        log,
        cfg,
        sim,
        planner,
        workers,
    };
    let state = run.initial_state()?;
    run.run_from(state, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{simple_log, straight_track};
    use crate::dataset::{make_synthetic_scenario, ScenarioKind};
    use crate::policy::ObserveConfig;
    use crate::simulator::{Frame, Outcome};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rollout(outcome: Outcome, failure: Option<usize>, frames: usize) -> RolloutResult {
        RolloutResult {
            spec: EpisodeSpec { ego_track_id: 1, start_frame: 0, horizon_frames: 200 },
            outcome,
            failure_frame: failure,
            collision: None,
            frames: (0..frames)
                .map(|k| Frame {
                    ego: EgoState { pos: Point2::new(k as f64, 0.0), heading: 0.0, speed: 1.0, t: 0.1 * k as f64 },
                    features: vec![0.0; 3],
                    prediction: vec![Point2::ZERO],
                })
                .collect(),
        }
    }

    #[test]
    fn k_failure_windows() {
        assert!(select_k_failure(&rollout(Outcome::Success, None, 50), 20).is_empty());
        assert!(select_k_failure(&rollout(Outcome::Timeout, None, 50), 20).is_empty());
        assert_eq!(select_k_failure(&rollout(Outcome::FailVehicle, Some(100), 101), 20), (80..100).collect::<Vec<_>>());
        assert_eq!(select_k_failure(&rollout(Outcome::FailCurb, Some(5), 6), 20), (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn adversary_ties_and_single_frame() {
        let zero = Discriminator::zero(5);
        assert_eq!(zero.expert_probability(&[3.0, -1.0, 2.0, 0.0, 9.0]), 0.5);
        assert_eq!(select_adversary(&rollout(Outcome::Success, None, 30), &zero), vec![0]);
        assert_eq!(select_adversary(&rollout(Outcome::Success, None, 1), &zero), vec![0]);
    }

    #[test]
    fn discriminator_separable_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(1.0..3.0), rng.gen_range(-1.0..1.0)]).collect();
        let p: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-3.0..-1.0), rng.gen_range(-1.0..1.0)]).collect();
        let d = fit_discriminator_rows(&e, &p, &DiscriminatorConfig::default()).unwrap();
        let correct = e.iter().filter(|r| d.expert_probability(r) > 0.5).count()
            + p.iter().filter(|r| d.expert_probability(r) < 0.5).count();
        assert_eq!(correct, 400);

        let a: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let b: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let d = fit_discriminator_rows(&a, &b, &DiscriminatorConfig::default()).unwrap();
        for _ in 0..50 {
            let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert!((d.expert_probability(&q) - 0.5).abs() < 0.1);
        }
        assert!(matches!(fit_discriminator_rows(&a, &[], &DiscriminatorConfig::default()), Err(Error::SingleClass { .. })));
    }

    #[test]
    fn original_dataset_counts() {
        let log = simple_log(vec![
            straight_track(1, 11, 0.0, 2.0, 100),
            straight_track(2, 4, 30.0, 0.0, 100),
            straight_track(3, 25, 60.0, 1.0, 100),
        ]);
        let n = 10;
        let ds = extract_original_dataset(&log, n, 0.1, &ObserveConfig::default()).unwrap();
        let brute: usize = log.tracks().values().map(|t| (0..t.len()).filter(|j| j + n < t.len()).count()).sum();
        assert_eq!(ds.len(), brute);
        assert_eq!(ds.len(), 1 + 15);
        // the 4-frame track contributes nothing, the 11-frame track exactly one
        let first = &ds.samples()[0];
        assert!((first.targets[9].y - 2.0).abs() < 1e-9);
        let stationary = simple_log(vec![straight_track(4, 14, 5.0, 0.0, 100)]);
        let ds = extract_original_dataset(&stationary, 3, 0.3, &ObserveConfig::default()).unwrap();
        assert_eq!(ds.len(), 14 - 9);
        assert!(ds.samples().iter().all(|s| s.targets.iter().all(|t| t.norm() < 1e-12)));
        assert!(extract_original_dataset(&stationary, 3, 0.25, &ObserveConfig::default()).is_err());
    }

    fn setup<'a>(log: &'a TrafficLog, planner: &'a PlannerConfig, sim: &'a SimConfig) -> ExpertSetup<'a> {
        ExpertSetup { log, planner, sim, waypoints: 10, period: 0.3, expert_samples: 1 }
    }

    #[test]
    fn expert_on_empty_road_goes_straight() {
        let log = simple_log(vec![straight_track(1, 200, 0.0, 6.0, 100)]);
        let (planner, sim) = (PlannerConfig::default(), SimConfig::default());
        let ego = EgoState { pos: Point2::new(20.0, 0.0), heading: 0.0, speed: 6.0, t: 1.0 };
        let out = label_with_expert(&setup(&log, &planner, &sim), 1, &ego, 1).unwrap();
        assert_eq!(out.len(), 1);
        for (i, t) in out[0].targets.iter().enumerate() {
            assert!(t.distance(Point2::new(0.0, 6.0 * 0.3 * (i + 1) as f64)) < 1e-9, "{i}: {t:?}");
        }
        assert_eq!(out[0].source, Source::PseudoExpert { iteration: 1 });
    }

    #[test]
    fn expert_bends_back_from_offset() {
        let log = simple_log(vec![straight_track(1, 200, 0.0, 6.0, 100), straight_track(2, 200, 60.0, 6.0, 100)]);
        let (planner, sim) = (PlannerConfig::default(), SimConfig::default());
        let ego = EgoState { pos: Point2::new(20.0, 0.5), heading: 0.0, speed: 6.0, t: 1.0 };
        let s = setup(&log, &planner, &sim);
        let out = label_with_expert(&ExpertSetup { expert_samples: 3, ..s }, 1, &ego, 2).unwrap();
        assert_eq!(out.len(), 3);
        // ego frame x points right, so returning to the path means moving right
        assert!(out[0].targets[0].x > 0.0);
        assert!(out[0].targets.windows(2).all(|w| w[1].x >= w[0].x - 1e-9));
    }

    #[test]
    fn blocked_state_is_rejected() {
        let log = simple_log(vec![straight_track(1, 200, 0.0, 6.0, 100), straight_track(2, 200, 40.0, -8.0, 100)]);
        let (planner, sim) = (PlannerConfig::default(), SimConfig::default());
        let ego = EgoState { pos: Point2::new(20.0, 0.0), heading: 0.0, speed: 6.0, t: 0.0 };
        assert!(label_with_expert(&setup(&log, &planner, &sim), 1, &ego, 1).is_err());
    }

    #[test]
    fn small_loop_is_deterministic_and_monotone() {
        let log = make_synthetic_scenario(ScenarioKind::Merging, 8, 5).unwrap();
        let cfg = DaggerConfig {
            iterations: 2,
            rollout_limit: Some(6),
            loss_samples: 2,
            strategy: Strategy::Adversary,
            ..DaggerConfig::default()
        };
        let (sim, planner) = (SimConfig::default(), PlannerConfig::default());
        let run = DaggerRun { log: &log, cfg: &cfg, sim: &sim, planner: &planner, workers: 1 };
        let mut sizes = Vec::new();
        let mut snapshots: Vec<Dataset> = Vec::new();
        let report = run
            .run_from(run.initial_state().unwrap(), |st| {
                sizes.push(st.dataset.len());
                snapshots.push(st.dataset.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(report.iterations.len(), 3);
        assert!(sizes.windows(2).all(|w| w[1] >= w[0]));
        for w in snapshots.windows(2) {
            assert_eq!(&w[1].samples()[..w[0].len()], w[0].samples());
        }
        for r in &report.iterations[..2] {
            assert_eq!(r.selected, r.labeled + r.skipped);
            assert_eq!(r.selected, report.episodes - r.rollout_errors);
        }
        let again = run_dagger(&log, &cfg, &sim, &planner, 3).unwrap();
        assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    }
}
