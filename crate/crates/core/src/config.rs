//! Flat `key = value` run configuration.
//!
//! Every tunable default lives here under a dotted key. Unknown keys are
//! rejected, and [`RunConfig::validate`] checks every section before a
//! command does any work.

use std::path::{Path, PathBuf};

use crate::consistency::{ConsistencyConfig, LambdaWeight, Metric, Which};
use crate::diffusion::{karras_levels, LossWeighting, NoiseSchedule, TeacherConfig, TrajectorySpace};
use crate::envs::{EnvConfig, TaskKind};
use crate::error::{FrmdError, Result};
use crate::metrics::DEFAULT_K_MAX;
use crate::mp::MpConfig;
use crate::nn::{Activation, AdamWConfig, HeadMode};

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub n: usize,
    pub epsilon: f64,
    pub t_max: f64,
    pub rho: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { n: 40, epsilon: 0.002, t_max: 10.0, rho: 7.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub task: TaskKind,
    pub demos: usize,
    /// Actions per window, `n`.
    pub horizon: usize,
    /// Observations per window, `m`.
    pub history: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { task: TaskKind::Reach, demos: 100, horizon: 12, history: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub replan_every: usize,
    /// Network evaluations for ODE sampling.
    pub teacher_steps: usize,
    pub heun: bool,
    pub k_max: f64,
    pub bench_reps: usize,
    pub bench_probes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: vec![0, 1, 2],
            episodes: 10,
            replan_every: 8,
            teacher_steps: 10,
            heun: false,
            k_max: DEFAULT_K_MAX,
            bench_reps: 100,
            bench_probes: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotConfig {
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub mp: MpConfig,
    pub rbf_gain: f64,
    pub schedule: ScheduleParams,
    pub data: DataConfig,
    pub env: EnvConfig,
    pub teacher: TeacherConfig,
    pub distill: ConsistencyConfig,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            mp: MpConfig::default(),
            rbf_gain: crate::diffusion::DEFAULT_RBF_GAIN,
            schedule: ScheduleParams::default(),
            data: DataConfig::default(),
            env: EnvConfig::default(),
            teacher: TeacherConfig::default(),
            distill: pipeline_distill(),
            eval: EvalConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

/// One link spanning the whole schedule: at desk-scale budgets, chained
/// single-level links drift away from the teacher's samples.
fn pipeline_distill() -> ConsistencyConfig {
    let steps = 1500;
    ConsistencyConfig {
        k: ScheduleParams::default().n - 1,
        steps,
        optim: AdamWConfig { lr: 1e-3, total_steps: steps, warmup_steps: 0, ..AdamWConfig::default() },
        ..ConsistencyConfig::default()
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| FrmdError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(FrmdError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FrmdError::Parse {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                FrmdError::Config(reason) => FrmdError::Config(format!("line {}: {reason}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrmdError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.teacher;
        let d = &mut self.distill;
        match key {
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),

            "mp.n_basis" => self.mp.n_basis = num(key, v)?,
            "mp.alpha" => self.mp.alpha = num(key, v)?,
            "mp.tau_s" => self.mp.tau_s = num(key, v)?,
            "mp.alpha_x" => self.mp.alpha_x = num(key, v)?,
            "mp.weight_scale" => self.mp.weight_scale = num(key, v)?,
            "mp.grid_points" => self.mp.grid_points = num(key, v)?,
            "mp.rbf_gain" => self.rbf_gain = num(key, v)?,

            "schedule.n" => self.schedule.n = num(key, v)?,
            "schedule.epsilon" => self.schedule.epsilon = num(key, v)?,
            "schedule.t_max" => self.schedule.t_max = num(key, v)?,
            "schedule.rho" => self.schedule.rho = num(key, v)?,

            "data.task" => self.data.task = TaskKind::parse(v).map_err(|e| FrmdError::Config(e.to_string()))?,
            "data.demos" => self.data.demos = num(key, v)?,
            "data.horizon" => self.data.horizon = num(key, v)?,
            "data.history" => self.data.history = num(key, v)?,

            "env.dt" => self.env.dt = num(key, v)?,
            "env.plant_gain" => self.env.plant_gain = num(key, v)?,
            "env.success_radius" => self.env.success_radius = num(key, v)?,
            "env.via_radius" => self.env.via_radius = num(key, v)?,
            "env.max_steps" => self.env.max_steps = num(key, v)?,
            "env.move_time" => self.env.move_time = num(key, v)?,

            "teacher.hidden" => t.hidden = list(key, v)?,
            "teacher.activation" => t.activation = Activation::parse(v)?,
            "teacher.head" => t.head = HeadMode::parse(v)?,
            "teacher.steps" => t.steps = num(key, v)?,
            "teacher.batch_size" => t.batch_size = num(key, v)?,
            "teacher.lr" => t.optim.lr = num(key, v)?,
            "teacher.weight_decay" => t.optim.weight_decay = num(key, v)?,
            "teacher.beta1" => t.optim.beta1 = num(key, v)?,
            "teacher.beta2" => t.optim.beta2 = num(key, v)?,
            "teacher.adam_eps" => t.optim.eps = num(key, v)?,
            "teacher.warmup_steps" => t.optim.warmup_steps = num(key, v)?,
            "teacher.log_every" => t.log_every = num(key, v)?,
            "teacher.weighting" => t.weighting = LossWeighting::parse(v)?,
            "teacher.validation_fraction" => t.validation_fraction = num(key, v)?,
            "teacher.ema_decay" => t.ema_decay = num(key, v)?,

            "distill.k" => d.k = num(key, v)?,
            "distill.mu" => d.mu = num(key, v)?,
            "distill.gamma_d" => d.gamma_d = num(key, v)?,
            "distill.beta" => d.beta = num(key, v)?,
            "distill.metric" => d.metric = Metric::parse(v)?,
            "distill.lambda" => d.lambda_weight = LambdaWeight::parse(v)?,
            "distill.steps" => d.steps = num(key, v)?,
            "distill.batch_size" => d.batch_size = num(key, v)?,
            "distill.lr" => d.optim.lr = num(key, v)?,
            "distill.weight_decay" => d.optim.weight_decay = num(key, v)?,
            "distill.beta1" => d.optim.beta1 = num(key, v)?,
            "distill.beta2" => d.optim.beta2 = num(key, v)?,
            "distill.adam_eps" => d.optim.eps = num(key, v)?,
            "distill.warmup_steps" => d.optim.warmup_steps = num(key, v)?,
            "distill.log_every" => d.log_every = num(key, v)?,
            "distill.heun" => d.heun = flag(key, v)?,
            "distill.deploy" => d.deploy = Which::parse(v)?,

            "eval.seeds" => self.eval.seeds = list(key, v)?,
            "eval.episodes" => self.eval.episodes = num(key, v)?,
            "eval.replan_every" => self.eval.replan_every = num(key, v)?,
            "eval.teacher_steps" => self.eval.teacher_steps = num(key, v)?,
            "eval.heun" => self.eval.heun = flag(key, v)?,
            "eval.k_max" => self.eval.k_max = num(key, v)?,
            "eval.bench_reps" => self.eval.bench_reps = num(key, v)?,
            "eval.bench_probes" => self.eval.bench_probes = num(key, v)?,

            "plot.trace" => self.plot.trace = (!v.is_empty()).then(|| PathBuf::from(v)),
            "plot.report" => self.plot.report = (!v.is_empty()).then(|| PathBuf::from(v)),

            other => return Err(FrmdError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line, in a
    /// stable order. Parsing the output yields the same configuration.
    pub fn render(&self) -> String {
        let (t, d, e) = (&self.teacher, &self.distill, &self.eval);
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("mp.n_basis", self.mp.n_basis.to_string()),
            ("mp.alpha", self.mp.alpha.to_string()),
            ("mp.tau_s", self.mp.tau_s.to_string()),
            ("mp.alpha_x", self.mp.alpha_x.to_string()),
            ("mp.weight_scale", self.mp.weight_scale.to_string()),
            ("mp.grid_points", self.mp.grid_points.to_string()),
            ("mp.rbf_gain", self.rbf_gain.to_string()),
            ("schedule.n", self.schedule.n.to_string()),
            ("schedule.epsilon", self.schedule.epsilon.to_string()),
            ("schedule.t_max", self.schedule.t_max.to_string()),
            ("schedule.rho", self.schedule.rho.to_string()),
            ("data.task", self.data.task.as_str().to_string()),
            ("data.demos", self.data.demos.to_string()),
            ("data.horizon", self.data.horizon.to_string()),
            ("data.history", self.data.history.to_string()),
            ("env.dt", self.env.dt.to_string()),
            ("env.plant_gain", self.env.plant_gain.to_string()),
            ("env.success_radius", self.env.success_radius.to_string()),
            ("env.via_radius", self.env.via_radius.to_string()),
            ("env.max_steps", self.env.max_steps.to_string()),
            ("env.move_time", self.env.move_time.to_string()),
            ("teacher.hidden", join(&t.hidden)),
            ("teacher.activation", t.activation.as_str().to_string()),
            ("teacher.head", t.head.as_str().to_string()),
            ("teacher.steps", t.steps.to_string()),
            ("teacher.batch_size", t.batch_size.to_string()),
            ("teacher.lr", t.optim.lr.to_string()),
            ("teacher.weight_decay", t.optim.weight_decay.to_string()),
            ("teacher.beta1", t.optim.beta1.to_string()),
            ("teacher.beta2", t.optim.beta2.to_string()),
            ("teacher.adam_eps", t.optim.eps.to_string()),
            ("teacher.warmup_steps", t.optim.warmup_steps.to_string()),
            ("teacher.log_every", t.log_every.to_string()),
            ("teacher.weighting", t.weighting.as_str().to_string()),
            ("teacher.validation_fraction", t.validation_fraction.to_string()),
            ("teacher.ema_decay", t.ema_decay.to_string()),
            ("distill.k", d.k.to_string()),
            ("distill.mu", d.mu.to_string()),
            ("distill.gamma_d", d.gamma_d.to_string()),
            ("distill.beta", d.beta.to_string()),
            ("distill.metric", d.metric.as_str().to_string()),
            ("distill.lambda", d.lambda_weight.as_str().to_string()),
            ("distill.steps", d.steps.to_string()),
            ("distill.batch_size", d.batch_size.to_string()),
            ("distill.lr", d.optim.lr.to_string()),
            ("distill.weight_decay", d.optim.weight_decay.to_string()),
            ("distill.beta1", d.optim.beta1.to_string()),
            ("distill.beta2", d.optim.beta2.to_string()),
            ("distill.adam_eps", d.optim.eps.to_string()),
            ("distill.warmup_steps", d.optim.warmup_steps.to_string()),
            ("distill.log_every", d.log_every.to_string()),
            ("distill.heun", d.heun.to_string()),
            ("distill.deploy", d.deploy.as_str().to_string()),
            ("eval.seeds", join(&e.seeds)),
            ("eval.episodes", e.episodes.to_string()),
            ("eval.replan_every", e.replan_every.to_string()),
            ("eval.teacher_steps", e.teacher_steps.to_string()),
            ("eval.heun", e.heun.to_string()),
            ("eval.k_max", e.k_max.to_string()),
            ("eval.bench_reps", e.bench_reps.to_string()),
            ("eval.bench_probes", e.bench_probes.to_string()),
            ("plot.trace", path_or_empty(&self.plot.trace)),
            ("plot.report", path_or_empty(&self.plot.report)),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        karras_levels(s.n, s.epsilon, s.t_max, s.rho)
    }

    pub fn trajectory_space(&self) -> Result<TrajectorySpace> {
        TrajectorySpace::new(self.mp.clone(), self.data.horizon, self.env.dt, self.rbf_gain)
    }

    /// Teacher settings with the run seed and a schedule matching the step count.
    pub fn teacher_config(&self) -> TeacherConfig {
        let mut t = self.teacher.clone();
        t.optim.total_steps = t.steps;
        t.seed = self.seed;
        t
    }

    pub fn distill_config(&self) -> ConsistencyConfig {
        let mut d = self.distill.clone();
        d.optim.total_steps = d.steps;
        d
    }

    /// Checks every section against its module's invariants.
    pub fn validate(&self) -> Result<()> {
        self.mp.validate()?;
        let schedule = self.noise_schedule()?;
        self.trajectory_space()?;
        self.env.validate()?;
        self.teacher_config().validate()?;
        self.distill_config().validate(&schedule)?;
        let data = &self.data;
        if data.demos == 0 {
            return Err(FrmdError::Config("data.demos must be positive".into()));
        }
        if data.horizon == 0 || data.history == 0 {
            return Err(FrmdError::Config("data.horizon and data.history must be positive".into()));
        }
        if data.horizon + data.history > self.env.max_steps {
            return Err(FrmdError::Config(format!(
                "windows of {} steps do not fit into env.max_steps = {}",
                data.horizon + data.history,
                self.env.max_steps
            )));
        }
        let e = &self.eval;
        if e.seeds.is_empty() || e.episodes == 0 {
            return Err(FrmdError::Config("eval needs at least one seed and one episode".into()));
        }
        if e.replan_every == 0 || e.replan_every > data.horizon {
            return Err(FrmdError::Config(format!(
                "eval.replan_every must lie in [1, data.horizon = {}], got {}",
                data.horizon, e.replan_every
            )));
        }
        if e.teacher_steps == 0 {
            return Err(FrmdError::Config("eval.teacher_steps must be positive".into()));
        }
        if !(e.k_max >= 0.0 && e.k_max.is_finite()) {
            return Err(FrmdError::Config(format!("eval.k_max must be non-negative, got {}", e.k_max)));
        }
        if e.bench_reps < 10 || e.bench_probes == 0 {
            return Err(FrmdError::Config("eval.bench_reps must be >= 10 and eval.bench_probes >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_render_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = RunConfig::parse("# demo\nseed = 7\n\nteacher.hidden = 64, 32  # small\neval.seeds=4,5\ndistill.heun = true\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.teacher.hidden, vec![64, 32]);
        assert_eq!(cfg.eval.seeds, vec![4, 5]);
        assert!(cfg.distill.heun);
        assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse("teacher.depth = 3"), Err(FrmdError::Config(_))));
        assert!(matches!(RunConfig::parse("seed = -1"), Err(FrmdError::Config(_))));
        assert!(matches!(RunConfig::parse("just words"), Err(FrmdError::Parse { line: 1, .. })));
        assert!(RunConfig::parse("data.task = juggle").is_err());
    }

    #[test]
    fn validation_catches_each_section() {
        for (k, v) in [
            ("data.demos", "0"),
            ("mp.alpha", "-1"),
            ("schedule.n", "1"),
            ("env.plant_gain", "1.5"),
            ("teacher.lr", "0"),
            ("distill.mu", "1"),
            ("distill.k", "40"),
            ("eval.replan_every", "13"),
            ("eval.bench_reps", "5"),
        ] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k} = {v} should be invalid");
        }
    }
}
