use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use replay_dagger::dagger::{extract_original_dataset, training_episodes, DaggerRun, DaggerState, IterationReport, Strategy};
use replay_dagger::dataset::{load_log, make_synthetic_scenario, write_log, TrafficLog};
use replay_dagger::geometry::Point2;
use replay_dagger::planner::{plan, PlanResult};
use replay_dagger::policy::{knn_bc_fit, Dataset, Policy};
use replay_dagger::simulator::{evaluate, read_rollouts_jsonl, write_rollouts_jsonl, Metrics};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::svg::{render_curve, render_scene, Overlay};
use crate::{Command, DaggerArgs, EvalArgs, GenArgs, PlanArgs, RenderArgs, StrategyArg};

pub const TRACKS_FILE: &str = "tracks.csv";
pub const MAP_FILE: &str = "map.json";

/// Marks an error as a usage or configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigError;

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid configuration")
    }
}

fn config_error(e: anyhow::Error) -> anyhow::Error {
    e.context(ConfigError)
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    let infeasible = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<replay_dagger::Error>(), Some(replay_dagger::Error::InfeasiblePlan(_))));
    if infeasible {
        3
    } else {
        1
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Plan(a) => cmd_plan(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Dagger(a) => cmd_dagger(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = RunConfig::load(path).map_err(config_error)?;
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn load_scene(dir: &Path) -> Result<TrafficLog> {
    load_log(&dir.join(TRACKS_FILE), &dir.join(MAP_FILE)).with_context(|| format!("loading scene {}", dir.display()))
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let log = make_synthetic_scenario(a.kind.into(), a.vehicles, a.seed).map_err(|e| config_error(e.into()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_log(&log, &a.out.join(TRACKS_FILE), &a.out.join(MAP_FILE))?;
    println!(
        "wrote {} vehicles to {} and {}",
        log.tracks().len(),
        a.out.join(TRACKS_FILE).display(),
        a.out.join(MAP_FILE).display()
    );
    Ok(())
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let log = load_scene(&a.scene)?;
    let track = log.track(a.track).ok_or_else(|| config_error(anyhow!("no track {} in scene", a.track)))?;
    let st = track
        .states
        .get(a.frame)
        .ok_or_else(|| config_error(anyhow!("track {} has {} frames, asked for {}", a.track, track.len(), a.frame)))?;
    let path = log.route_of(a.track).ok_or_else(|| anyhow!("track {} has no route", a.track))?;
    let planner = cfg.planner.for_track(&log, a.track)?;
    let result = plan(path.project(st.pos).s, st.speed(), path, &log, st.t(), Some(a.track), &planner)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(out) = &a.svg {
        let ego: Vec<Point2> = result.trajectory.waypoints().iter().map(|w| w.pos).collect();
        let overlay = Overlay {
            path: Some(path),
            window: (result.trajectory.start_time(), result.trajectory.end_time()),
            exclude: Some(a.track),
            ego: &ego,
        };
        write_atomic(out, render_scene(&log, &overlay).as_bytes())?;
    }
    Ok(())
}

pub fn metrics_table(m: &Metrics) -> String {
    format!(
        "{:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n{:>8}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
        "episodes", "success", "fail-v", "fail-c", "timeout", m.episodes, m.suc_rate, m.fail_v_rate, m.fail_c_rate, m.timeout_rate
    )
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let log = load_scene(&a.scene)?;
    cfg.sim.validate(&log).map_err(|e| config_error(e.into()))?;
    let dataset = match &a.dataset {
        Some(p) => Dataset::read_jsonl(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
            .with_context(|| format!("reading {}", p.display()))?,
        None => extract_original_dataset(&log, cfg.dagger.waypoints, cfg.dagger.waypoint_period, &cfg.sim.observe)?,
    };
    let specs = training_episodes(&log, &cfg.dagger);
    if specs.is_empty() {
        bail!("the scene yields no evaluation episodes");
    }
    let policy = knn_bc_fit(&dataset, cfg.dagger.knn_k)?;
    let eval = evaluate(&log, &specs, &policy as &dyn Policy, &cfg.sim, cfg.workers)?;
    for (spec, e) in &eval.errors {
        log::warn!("episode {spec:?} errored: {e}");
    }
    let json = serde_json::to_string(&eval.metrics)?;
    print!("{}", metrics_table(&eval.metrics));
    println!("{json}");
    if let Some(p) = &a.json {
        write_atomic(p, format!("{}\n", serde_json::to_string_pretty(&eval.metrics)?).as_bytes())?;
    }
    if let Some(p) = &a.rollouts {
        let mut buf = Vec::new();
        write_rollouts_jsonl(&mut buf, &eval.results)?;
        write_atomic(p, &buf)?;
    }
    Ok(())
}

/// Everything but the dataset, which is stored next to it as JSONL.
#[derive(Serialize, Deserialize)]
struct CheckpointState {
    next_iteration: usize,
    config: RunConfig,
    reports: Vec<IterationReport>,
}

const STATE_FILE: &str = "state.json";
const DATASET_FILE: &str = "dataset.jsonl";

pub fn checkpoint_dir(out: &Path, next_iteration: usize) -> PathBuf {
    out.join("checkpoints").join(format!("iter-{next_iteration:03}"))
}

fn write_checkpoint(out: &Path, state: &DaggerState, cfg: &RunConfig) -> Result<()> {
    let dir = checkpoint_dir(out, state.next_iteration);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut ds = Vec::new();
    state.dataset.write_jsonl(&mut ds)?;
    write_atomic(&dir.join(DATASET_FILE), &ds)?;
    let meta = CheckpointState {
        next_iteration: state.next_iteration,
        config: cfg.clone(),
        reports: state.reports.clone(),
    };
    write_atomic(&dir.join(STATE_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

fn read_checkpoint(dir: &Path, cfg: &RunConfig) -> Result<DaggerState> {
    let text = fs::read_to_string(dir.join(STATE_FILE)).with_context(|| format!("reading checkpoint {}", dir.display()))?;
    let meta: CheckpointState = serde_json::from_str(&text).context("parsing checkpoint state")?;
    let comparable = |c: &RunConfig| {
        let mut c = c.clone();
        c.workers = 0;
        c.output_dir = PathBuf::new();
        c.dagger.iterations = 0;
        c
    };
    if comparable(&meta.config) != comparable(cfg) {
        return Err(config_error(anyhow!(
            "checkpoint {} was written with a different configuration",
            dir.display()
        )));
    }
    let f = File::open(dir.join(DATASET_FILE)).with_context(|| format!("opening {}", dir.join(DATASET_FILE).display()))?;
    Ok(DaggerState {
        next_iteration: meta.next_iteration,
        dataset: Dataset::read_jsonl(BufReader::new(f))?,
        reports: meta.reports,
    })
}

fn cmd_dagger(a: &DaggerArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.iterations {
        cfg.dagger.iterations = n;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    match (a.strategy, a.k) {
        (Some(StrategyArg::Adversary), Some(_)) => {
            return Err(config_error(anyhow!("--k only applies to the k-failure strategy")));
        }
        (Some(StrategyArg::Adversary), None) => cfg.dagger.strategy = Strategy::Adversary,
        (Some(StrategyArg::KFailure), k) => {
            let k = k.unwrap_or(match cfg.dagger.strategy {
                Strategy::KFailure { k } => k,
                Strategy::Adversary => 20,
            });
            cfg.dagger.strategy = Strategy::KFailure { k };
        }
        (None, Some(k)) => match cfg.dagger.strategy {
            Strategy::KFailure { .. } => cfg.dagger.strategy = Strategy::KFailure { k },
            Strategy::Adversary => return Err(config_error(anyhow!("--k only applies to the k-failure strategy"))),
        },
        (None, None) => {}
    }
    if let Some(out) = &a.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(config_error)?;
    let log = load_scene(&a.scene)?;
    let run = DaggerRun {
        log: &log,
        cfg: &cfg.dagger,
        sim: &cfg.sim,
        planner: &cfg.planner,
        workers: cfg.workers,
    };
    let state = match &a.resume {
        Some(dir) => read_checkpoint(dir, &cfg)?,
        None => run.initial_state().map_err(|e| match e {
            replay_dagger::Error::Validation(_) | replay_dagger::Error::OutOfRange { .. } => config_error(e.into()),
            e => e.into(),
        })?,
    };
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let report = run.run_from(state, |s| {
        write_checkpoint(&out, s, &cfg).map_err(|e| replay_dagger::Error::Io(std::io::Error::other(format!("{e:#}"))))
    })?;
    write_atomic(&out.join("report.json"), format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes())?;
    let label = match report.strategy {
        Strategy::KFailure { k } => format!("success rate, k-failure (k = {k})"),
        Strategy::Adversary => "success rate, adversary".to_string(),
    };
    write_atomic(&out.join("success.svg"), render_curve(&report.success_rates(), &label).as_bytes())?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "iteration  success  fail-v  fail-c  timeout  samples")?;
    for r in &report.iterations {
        writeln!(
            stdout,
            "{:>9}  {:>7.4}  {:>6.4}  {:>6.4}  {:>7.4}  {:>7}",
            r.iteration, r.metrics.suc_rate, r.metrics.fail_v_rate, r.metrics.fail_c_rate, r.metrics.timeout_rate, r.dataset_samples
        )?;
    }
    writeln!(stdout, "report written to {}", out.join("report.json").display())?;
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let log = load_scene(&a.scene)?;
    let svg = if let Some(p) = &a.rollouts {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let rollouts = read_rollouts_jsonl(BufReader::new(f))?;
        let r = rollouts
            .get(a.episode)
            .ok_or_else(|| config_error(anyhow!("{} holds {} rollouts, asked for {}", p.display(), rollouts.len(), a.episode)))?;
        let ego: Vec<Point2> = r.frames.iter().map(|f| f.ego.pos).collect();
        let (t0, t1) = match (r.frames.first(), r.frames.last()) {
            (Some(a), Some(b)) => (a.ego.t, b.ego.t),
            _ => bail!("rollout {} has no frames", a.episode),
        };
        let overlay = Overlay {
            path: log.route_of(r.spec.ego_track_id),
            window: (t0, t1),
            exclude: Some(r.spec.ego_track_id),
            ego: &ego,
        };
        render_scene(&log, &overlay)
    } else if let Some(p) = &a.plan {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let plan: PlanResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let ego: Vec<Point2> = plan.trajectory.waypoints().iter().map(|w| w.pos).collect();
        let path = match a.track {
            Some(id) => log.route_of(id),
            None => nearest_path(&log, ego[0]),
        };
        let overlay = Overlay {
            path,
            window: (plan.trajectory.start_time(), plan.trajectory.end_time()),
            exclude: a.track,
            ego: &ego,
        };
        render_scene(&log, &overlay)
    } else {
        unreachable!("clap requires --rollouts or --plan")
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(&a.out, svg.as_bytes())
}

fn nearest_path(log: &TrafficLog, p: Point2) -> Option<&replay_dagger::geometry::ReferencePath> {
    log.reference_paths()
        .iter()
        .min_by(|a, b| a.project(p).lateral_offset.abs().total_cmp(&b.project(p).lateral_offset.abs()))
}
