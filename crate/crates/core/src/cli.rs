//! The pipeline stages behind the `frmd` subcommands.
//!
//! Every stage reads and writes fixed file names inside the output
//! directory, keyed by task kind, so stages chain without extra flags.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::consistency::{distill, Which};
use crate::dataset;
use crate::diffusion::{train_teacher, LossRecord};
use crate::envs::{
    expert_demo, make_task, rollout, slice_dataset, Demonstration, Normalizer, Policy, PolicyInput, TaskInstance,
    OBS_DIM,
};
use crate::error::{FrmdError, Result};
use crate::metrics::{
    assemble_report, bench_inference, config_hash, nonsmooth_count, EpisodeSummary, EvalReport, LatencyStats,
    ReportMeta, RunRecord,
};
use crate::mp::BoundaryState;
use crate::nn::HeadMode;
use crate::plot::{parse_trace_csv, render_svg, EpisodeArtifact};
use crate::policy::{ModelBundle, ModelPolicy, Role, Sampler};

/// Evaluation tasks are drawn from seeds well away from the demonstration seeds.
pub const EVAL_TASK_OFFSET: u64 = 10_000;

/// Task and rollout seeds of evaluation episode `episode` under `seed`.
pub fn eval_episode_seeds(seed: u64, episode: usize) -> (u64, u64) {
    let e = episode as u64;
    (EVAL_TASK_OFFSET + 1000 * seed + e, 1000 * seed + e)
}

pub struct Paths {
    pub dataset: PathBuf,
    pub teacher: PathBuf,
    pub raw: PathBuf,
    pub student: PathBuf,
    pub report: PathBuf,
    pub bench: PathBuf,
    pub traces: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        let task = cfg.data.task.as_str();
        let f = |name: String| cfg.out.join(name);
        Paths {
            dataset: f(format!("demos_{task}.jsonl")),
            teacher: f(format!("teacher_{task}.ckpt")),
            raw: f(format!("raw_{task}.ckpt")),
            student: f(format!("student_{task}.ckpt")),
            report: f(format!("eval_{task}.json")),
            bench: f(format!("bench_{task}.json")),
            traces: f(format!("traces_{task}")),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FrmdError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FrmdError::io(path, e))
}

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for r in curve {
        s.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    s
}

fn loss_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("loss.csv")
}

pub fn generate_demos(cfg: &RunConfig) -> Vec<Demonstration> {
    (0..cfg.data.demos as u64)
        .map(|s| expert_demo(&make_task(cfg.data.task, s, &cfg.env), s, &cfg.env))
        .collect()
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let path = Paths::new(cfg).dataset;
    create_dir(&cfg.out)?;
    let mut file = File::create(&path).map_err(|e| FrmdError::io(&path, e))?;
    let text = dataset::to_jsonl(&generate_demos(cfg))?;
    file.write_all(text.as_bytes()).map_err(|e| FrmdError::io(&path, e))?;
    println!("wrote {} demonstrations to {}", cfg.data.demos, path.display());
    Ok(path)
}

fn load_windows(cfg: &RunConfig, normalizer: Option<&Normalizer>) -> Result<(Vec<crate::diffusion::WindowSample>, Normalizer)> {
    let demos = dataset::read(&Paths::new(cfg).dataset)?;
    if let Some(d) = demos.iter().find(|d| d.task.kind != cfg.data.task) {
        return Err(FrmdError::Validation(format!(
            "dataset holds {} demonstrations, the configuration asks for {}",
            d.task.kind.as_str(),
            cfg.data.task.as_str()
        )));
    }
    let norm = match normalizer {
        Some(n) => n.clone(),
        None => Normalizer::fit(&demos)?,
    };
    let (windows, stats) = slice_dataset(&demos, cfg.data.horizon, cfg.data.history, cfg.env.dt, &norm)?;
    if stats.skipped_demos > 0 {
        eprintln!("warning: skipped {} demonstrations shorter than one window", stats.skipped_demos);
    }
    Ok((windows, norm))
}

/// Trains the MP-head teacher, or the raw-head baseline when `teacher.head = raw`.
pub fn cmd_train_teacher(cfg: &RunConfig) -> Result<PathBuf> {
    let paths = Paths::new(cfg);
    let (windows, normalizer) = load_windows(cfg, None)?;
    let space = cfg.trajectory_space()?;
    let schedule = cfg.noise_schedule()?;
    let tcfg = cfg.teacher_config();
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = train_teacher(&windows, &space, &schedule, &tcfg, &mut rng)?;
    checkpoint::round_params_to_f32(&mut out.net);
    let (role, path) = match tcfg.head {
        HeadMode::Mp => (Role::Teacher, paths.teacher),
        HeadMode::Raw => (Role::RawBaseline, paths.raw),
    };
    let bundle = ModelBundle { role, net: out.net, space, schedule, normalizer, consistency: None };
    create_dir(&cfg.out)?;
    checkpoint::save(&path, &bundle)?;
    write_file(&loss_path(&path), &loss_csv(&out.curve))?;
    println!(
        "final loss {:.4e} (validation {:.4e} -> {:.4e}) in {:.1} s; wrote {}",
        out.curve.last().map_or(f64::NAN, |r| r.loss),
        out.initial_validation,
        out.final_validation,
        clock.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(path)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(FrmdError::MissingDependency(format!("{what} {} not found", path.display())))
    }
}

pub fn cmd_distill(cfg: &RunConfig) -> Result<PathBuf> {
    let paths = Paths::new(cfg);
    require(&paths.teacher, "teacher checkpoint")?;
    let teacher = checkpoint::load(&paths.teacher)?;
    if teacher.role != Role::Teacher {
        return Err(FrmdError::Validation(format!(
            "{} holds a {} checkpoint, not a teacher",
            paths.teacher.display(),
            teacher.role.as_str()
        )));
    }
    check_compatible(&teacher, cfg)?;
    let (windows, _) = load_windows(cfg, Some(&teacher.normalizer))?;
    let dcfg = cfg.distill_config();
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = distill(&windows, &teacher.net, &teacher.space, &teacher.schedule, &dcfg, &mut rng)?;
    let mut net = out.student.deployed().clone();
    checkpoint::round_params_to_f32(&mut net);
    let role = match dcfg.deploy {
        Which::Online => Role::StudentOnline,
        Which::Target => Role::StudentTarget,
    };
    let bundle = ModelBundle {
        role,
        net,
        space: teacher.space,
        schedule: teacher.schedule,
        normalizer: teacher.normalizer,
        consistency: Some(dcfg),
    };
    create_dir(&cfg.out)?;
    checkpoint::save(&paths.student, &bundle)?;
    write_file(&loss_path(&paths.student), &loss_csv(&out.curve))?;
    println!(
        "final loss {:.4e} in {:.1} s; wrote {}",
        out.curve.last().map_or(f64::NAN, |r| r.loss),
        clock.elapsed().as_secs_f64(),
        paths.student.display()
    );
    Ok(paths.student)
}

/// A checkpoint must match the task's action and observation sizes.
pub fn check_compatible(bundle: &ModelBundle, cfg: &RunConfig) -> Result<()> {
    let dof = bundle.space.dof();
    if dof != crate::envs::ACTION_DIM {
        return Err(FrmdError::Validation(format!(
            "checkpoint has {dof} degrees of freedom, the tasks need {}",
            crate::envs::ACTION_DIM
        )));
    }
    let obs_len = cfg.data.history * OBS_DIM;
    if bundle.net.layout.obs_len != obs_len {
        return Err(FrmdError::Validation(format!(
            "checkpoint expects {} observation entries, the configuration provides {obs_len}",
            bundle.net.layout.obs_len
        )));
    }
    if bundle.space.horizon < cfg.eval.replan_every {
        return Err(FrmdError::Validation(format!(
            "checkpoint plans {} steps, fewer than eval.replan_every = {}",
            bundle.space.horizon, cfg.eval.replan_every
        )));
    }
    Ok(())
}

/// Checkpoints present in the output directory, each with its sampler.
pub fn load_policies(cfg: &RunConfig) -> Result<Vec<ModelPolicy>> {
    let paths = Paths::new(cfg);
    let ode = Sampler::Ode { steps: cfg.eval.teacher_steps, heun: cfg.eval.heun };
    let mut policies = Vec::new();
    for (path, sampler) in [(&paths.teacher, ode), (&paths.student, Sampler::OneStep), (&paths.raw, ode)] {
        if path.exists() {
            let bundle = checkpoint::load(path)?;
            check_compatible(&bundle, cfg)?;
            policies.push(ModelPolicy::new(bundle, sampler)?);
        }
    }
    if policies.is_empty() {
        return Err(FrmdError::MissingDependency(format!(
            "no checkpoints for {} in {}",
            cfg.data.task.as_str(),
            cfg.out.display()
        )));
    }
    Ok(policies)
}

/// Runs every seed and episode of the protocol for one policy.
pub fn evaluate_policy(
    policy: &dyn Policy,
    cfg: &RunConfig,
    mut on_episode: impl FnMut(u64, usize, &TaskInstance, &crate::envs::EpisodeResult) -> Result<()>,
) -> Result<Vec<RunRecord>> {
    let mut runs = Vec::with_capacity(cfg.eval.seeds.len());
    for &seed in &cfg.eval.seeds {
        let mut episodes = Vec::with_capacity(cfg.eval.episodes);
        for e in 0..cfg.eval.episodes {
            let (task_seed, rollout_seed) = eval_episode_seeds(seed, e);
            let task = make_task(cfg.data.task, task_seed, &cfg.env);
            let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed);
            let r = rollout(policy, &task, &cfg.env, cfg.data.history, cfg.eval.replan_every, &mut rng)?;
            let n = if r.trace.len() >= 3 { nonsmooth_count(&r.trace, cfg.eval.k_max)?.nonsmooth_count } else { 0 };
            on_episode(seed, e, &task, &r)?;
            episodes.push(EpisodeSummary {
                task_seed,
                success: r.success,
                steps_used: r.steps_used,
                inference_calls: r.inference_calls,
                nonsmooth_count: n,
                latency_ms: r.per_call_latency_ms.clone(),
            });
        }
        runs.push(RunRecord { policy: policy.name().to_string(), task: cfg.data.task, seed, episodes });
    }
    Ok(runs)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let paths = Paths::new(cfg);
    let policies = load_policies(cfg)?;
    create_dir(&paths.traces)?;
    let mut runs = Vec::new();
    for policy in &policies {
        let name = policy.bundle.role.as_str();
        runs.extend(evaluate_policy(policy, cfg, |seed, e, task, r| {
            let stem = paths.traces.join(format!("{name}_s{seed}_e{e}"));
            write_file(&stem.with_extension("csv"), &r.trace_csv())?;
            if r.trace.len() >= 3 {
                let artifact = EpisodeArtifact {
                    policy: policy.name().to_string(),
                    task: task.clone(),
                    success: r.success,
                    smoothness: nonsmooth_count(&r.trace, cfg.eval.k_max)?,
                };
                let json = serde_json::to_string_pretty(&artifact).map_err(|e| FrmdError::Report(e.to_string()))?;
                write_file(&stem.with_extension("json"), &json)?;
            }
            Ok(())
        })?);
    }
    let checkpoints = [&paths.teacher, &paths.student, &paths.raw]
        .iter()
        .filter(|p| p.exists())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let meta = ReportMeta { seeds: cfg.eval.seeds.clone(), checkpoints, config_hash: config_hash(&cfg.render()) };
    let report = assemble_report(&runs, meta)?;
    write_file(&paths.report, &report.to_json()?)?;
    for p in &report.policies {
        for t in &p.tasks {
            println!(
                "{:<20} {:<12} success {:.3} ± {:.3}  median N {:.1}",
                p.name,
                t.task.as_str(),
                t.success.mean,
                t.success.std,
                t.smoothness.median
            );
        }
    }
    println!("wrote {}", paths.report.display());
    Ok(report)
}

/// Initial observation windows of evaluation tasks, at rest.
pub fn probe_inputs(cfg: &RunConfig) -> Vec<(Vec<f64>, BoundaryState)> {
    (0..cfg.eval.bench_probes)
        .map(|i| {
            let (task_seed, _) = eval_episode_seeds(0, i);
            let task = make_task(cfg.data.task, task_seed, &cfg.env);
            let first = task.observation(task.start, task.near_via(task.start));
            let obs: Vec<f64> = (0..cfg.data.history).flat_map(|_| first.iter().copied()).collect();
            let bc = BoundaryState { t_b: 0.0, y0: task.start.to_vec(), dy0: vec![0.0; 2] };
            (obs, bc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub policy: String,
    pub latency: LatencyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entries: Vec<BenchEntry>,
    /// Student mean over teacher mean; absent unless both were benchmarked.
    pub student_over_teacher: Option<f64>,
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let paths = Paths::new(cfg);
    let policies = load_policies(cfg)?;
    let probes = probe_inputs(cfg);
    let inputs: Vec<PolicyInput<'_>> = probes
        .iter()
        .map(|(obs, bc)| PolicyInput { step: 0, obs, bc })
        .collect();
    let mut entries = Vec::new();
    for policy in &policies {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let latency = bench_inference(policy, &inputs, cfg.eval.bench_reps, &mut rng)?;
        println!(
            "{:<20} mean {:.3} ms  std {:.3}  min {:.3}  max {:.3}",
            policy.name(),
            latency.mean_ms,
            latency.std_ms,
            latency.min_ms,
            latency.max_ms
        );
        entries.push((policy.bundle.role, BenchEntry { policy: policy.name().to_string(), latency }));
    }
    let mean = |pred: fn(Role) -> bool| entries.iter().find(|(r, _)| pred(*r)).map(|(_, e)| e.latency.mean_ms);
    let student_over_teacher = match (mean(|r| r.is_student()), mean(|r| r == Role::Teacher)) {
        (Some(s), Some(t)) => Some(s / t),
        _ => None,
    };
    let report = BenchReport { entries: entries.into_iter().map(|(_, e)| e).collect(), student_over_teacher };
    if let Some(r) = report.student_over_teacher {
        println!("student / teacher latency ratio {r:.3}");
    }
    create_dir(&cfg.out)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| FrmdError::Report(e.to_string()))?;
    write_file(&paths.bench, &json)?;
    Ok(report)
}

/// Renders `plot.trace` with the circles listed in `plot.report` (an
/// episode artifact written by `eval`). The SVG lands next to the outputs.
pub fn cmd_plot(cfg: &RunConfig) -> Result<PathBuf> {
    let trace_path = cfg
        .plot
        .trace
        .as_ref()
        .ok_or_else(|| FrmdError::Config("plot.trace is not set".into()))?;
    let text = std::fs::read_to_string(trace_path).map_err(|e| FrmdError::io(trace_path, e))?;
    let trace = parse_trace_csv(&text)?;
    let (task, flags) = match &cfg.plot.report {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| FrmdError::io(path, e))?;
            let artifact: EpisodeArtifact = serde_json::from_str(&text).map_err(|e| FrmdError::Parse {
                line: e.line(),
                reason: e.to_string(),
            })?;
            (Some(artifact.task), artifact.smoothness.nonsmooth_indices)
        }
        None if trace.len() >= 3 => (None, nonsmooth_count(&trace, cfg.eval.k_max)?.nonsmooth_indices),
        None => (None, Vec::new()),
    };
    let svg = render_svg(&trace, task.as_ref(), &flags)?;
    create_dir(&cfg.out)?;
    let stem = trace_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    let out = cfg.out.join(format!("{stem}.svg"));
    write_file(&out, &svg)?;
    println!("wrote {} ({} non-smooth points circled)", out.display(), flags.len());
    Ok(out)
}
