//! One-step student distilled from the diffusion teacher.
//!
//! The consistency function `f(τ, t) = c_skip(t) τ + c_out(t) F(τ, o, t)`
//! is the identity at `t = 0` by construction. Distillation pulls the online
//! network's output at a noisy point towards the EMA target network's output
//! at the point one teacher ODE step (or `k` steps) less noisy.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{
    at_step, backward_through_decode, denoise_batch, denoise_batch_taped, stack_batch,
    BatchSampler, Denoiser, LossRecord, NoiseSchedule, TrajectorySpace, WindowSample,
};
use crate::error::{FrmdError, Result};
use crate::mp::BoundaryState;
use crate::nn::{optimizer_step, AdamWConfig, DenoiserNet, Gradients, OptimizerState, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SquaredL2,
    PseudoHuber,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::SquaredL2 => "squared_l2",
            Metric::PseudoHuber => "pseudo_huber",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "squared_l2" => Ok(Metric::SquaredL2),
            "pseudo_huber" => Ok(Metric::PseudoHuber),
            other => Err(FrmdError::Config(format!("unknown distance `{other}`"))),
        }
    }

    /// Distance and its gradient with respect to `a` for `d(a, b)`.
    fn eval(&self, diff: ndarray::ArrayView1<f64>) -> (f64, ndarray::Array1<f64>) {
        let sq = diff.dot(&diff);
        match self {
            Metric::SquaredL2 => (sq, diff.mapv(|v| 2.0 * v)),
            Metric::PseudoHuber => {
                let c = 0.00054 * (diff.len() as f64).sqrt();
                let r = (sq + c * c).sqrt();
                (r - c, diff.mapv(|v| v / r))
            }
        }
    }
}

/// Weighting `λ(t_n)` over distillation levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaWeight {
    Uniform,
}

impl LambdaWeight {
    pub fn weight(&self, _t_n: f64) -> f64 {
        match self {
            LambdaWeight::Uniform => 1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        "uniform"
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(LambdaWeight::Uniform),
            other => Err(FrmdError::Config(format!("unknown lambda weighting `{other}`"))),
        }
    }
}

/// Which network a student deploys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

impl Which {
    pub fn as_str(&self) -> &'static str {
        match self {
            Which::Online => "online",
            Which::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(Which::Online),
            "target" => Ok(Which::Target),
            other => Err(FrmdError::Config(format!("unknown network `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyConfig {
    /// Schedule levels skipped by the teacher per distillation target.
    pub k: usize,
    /// EMA rate of the target network.
    pub mu: f64,
    pub gamma_d: f64,
    pub beta: f64,
    pub metric: Metric,
    pub lambda_weight: LambdaWeight,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub log_every: usize,
    /// Teacher ODE solver used to produce targets.
    pub heun: bool,
    pub deploy: Which,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            k: 1,
            mu: 0.95,
            gamma_d: 0.5,
            beta: 1.0,
            metric: Metric::SquaredL2,
            lambda_weight: LambdaWeight::Uniform,
            steps: 2000,
            batch_size: 128,
            optim: AdamWConfig {
                warmup_steps: 0,
                total_steps: 2000,
                ..AdamWConfig::default()
            },
            log_every: 100,
            heun: false,
            deploy: Which::Target,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.k == 0 || self.k >= schedule.len() {
            return Err(FrmdError::Config(format!(
                "distill.k must lie in [1, {}), got {}",
                schedule.len(),
                self.k
            )));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(FrmdError::Config(format!("distill.mu must lie in [0, 1), got {}", self.mu)));
        }
        if !(self.gamma_d > 0.0 && self.beta > 0.0) {
            return Err(FrmdError::Config("distill.gamma_d and distill.beta must be positive".into()));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(FrmdError::Config("distill.batch_size and distill.log_every must be positive".into()));
        }
        self.optim.validate("distill")
    }
}

/// `γ_d² / (β² t² + γ_d²)`.
pub fn c_skip(t: f64, config: &ConsistencyConfig) -> f64 {
    let g2 = config.gamma_d * config.gamma_d;
    g2 / (config.beta * config.beta * t * t + g2)
}

/// `β t / sqrt(β² t² + γ_d²)`.
pub fn c_out(t: f64, config: &ConsistencyConfig) -> f64 {
    config.beta * t / (config.beta * config.beta * t * t + config.gamma_d * config.gamma_d).sqrt()
}

/// Online network θ, EMA target θ⁻ and the shared decode/schedule context.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub online: DenoiserNet,
    pub target: DenoiserNet,
    pub space: TrajectorySpace,
    pub schedule: NoiseSchedule,
    pub config: ConsistencyConfig,
}

impl StudentModel {
    /// Both networks start as copies of the teacher.
    pub fn from_teacher(
        teacher: &DenoiserNet,
        space: TrajectorySpace,
        schedule: NoiseSchedule,
        config: ConsistencyConfig,
    ) -> Result<Self> {
        config.validate(&schedule)?;
        Ok(StudentModel {
            online: teacher.clone(),
            target: teacher.clone(),
            space,
            schedule,
            config,
        })
    }

    pub fn net(&self, which: Which) -> &DenoiserNet {
        match which {
            Which::Online => &self.online,
            Which::Target => &self.target,
        }
    }

    pub fn deployed(&self) -> &DenoiserNet {
        self.net(self.config.deploy)
    }
}

/// Single-sample consistency function with either network.
pub fn consistency_f(
    student: &StudentModel,
    noisy: &[f64],
    obs: &[f64],
    t: f64,
    bc: &BoundaryState,
    which: Which,
) -> Result<Vec<f64>> {
    let model = ConsistencyFn {
        net: student.net(which),
        space: &student.space,
        config: &student.config,
    };
    model.eval(noisy, obs, t, bc)
}

/// A network viewed through the consistency parametrization.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyFn<'a> {
    pub net: &'a DenoiserNet,
    pub space: &'a TrajectorySpace,
    pub config: &'a ConsistencyConfig,
}

impl ConsistencyFn<'_> {
    pub fn eval(&self, noisy: &[f64], obs: &[f64], t: f64, bc: &BoundaryState) -> Result<Vec<f64>> {
        if noisy.len() != self.space.traj_len() {
            return Err(FrmdError::Layout(format!(
                "trajectory has {} entries, expected {}",
                noisy.len(),
                self.space.traj_len()
            )));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(FrmdError::Argument(format!("consistency function needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(noisy.to_vec());
        }
        let f = crate::diffusion::denoise_f(self.net, self.space, noisy, obs, t, bc)?;
        let (s, o) = (c_skip(t, self.config), c_out(t, self.config));
        Ok(noisy.iter().zip(&f).map(|(x, f)| s * x + o * f).collect())
    }
}

/// Batched consistency function; optionally records a tape on the underlying
/// denoiser.
pub fn consistency_batch(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    config: &ConsistencyConfig,
    noisy: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    t: &[f64],
    bcs: &[BoundaryState],
    taped: bool,
) -> Result<(Array2<f64>, Option<Tape>)> {
    if t.iter().any(|t| !(*t > 0.0)) {
        return Err(FrmdError::Argument("batched consistency function needs t > 0".into()));
    }
    let (f, tape) = if taped {
        let (f, tape) = denoise_batch_taped(net, space, noisy, obs, t, bcs)?;
        (f, Some(tape))
    } else {
        (denoise_batch(net, space, noisy, obs, t, bcs)?, None)
    };
    let mut out = f;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let (s, o) = (c_skip(t[i], config), c_out(t[i], config));
        row *= o;
        row.scaled_add(s, &noisy.row(i));
    }
    Ok((out, tape))
}

/// Batched teacher PF-ODE step with per-row levels.
pub fn teacher_step_batch(
    teacher: &DenoiserNet,
    space: &TrajectorySpace,
    x: &Array2<f64>,
    obs: ArrayView2<f64>,
    t_from: &[f64],
    t_to: &[f64],
    bcs: &[BoundaryState],
    heun: bool,
) -> Result<Array2<f64>> {
    let f0 = denoise_batch(teacher, space, x.view(), obs, t_from, bcs)?;
    let mut d0 = x - &f0;
    for (i, mut row) in d0.rows_mut().into_iter().enumerate() {
        row /= t_from[i];
    }
    let mut euler = x.clone();
    for (i, mut row) in euler.rows_mut().into_iter().enumerate() {
        row.scaled_add(t_to[i] - t_from[i], &d0.row(i));
    }
    if !heun {
        return Ok(euler);
    }
    let f1 = denoise_batch(teacher, space, euler.view(), obs, t_to, bcs)?;
    let mut out = x.clone();
    for i in 0..x.nrows() {
        let h = t_to[i] - t_from[i];
        let d1 = (&euler.row(i) - &f1.row(i)) / t_to[i];
        let avg = (&d0.row(i) + &d1) * 0.5;
        out.row_mut(i).scaled_add(h, &avg);
    }
    Ok(out)
}

/// Result of one distillation step.
#[derive(Debug, Clone)]
pub struct DistillStep {
    pub loss: f64,
    pub online_grads: Gradients,
    /// Always zero: the target branch is evaluated without a tape.
    pub target_grads: Gradients,
}

/// Distillation loss at explicit ascending level indices `n` (1-based) and
/// noise draws, with skip `k`; `k = 0` compares both branches at the same
/// point.
#[allow(clippy::too_many_arguments)]
pub fn distill_loss_at(
    teacher: &DenoiserNet,
    student: &StudentModel,
    batch: &[&WindowSample],
    n: &[usize],
    noise: ArrayView2<f64>,
    k: usize,
    heun: bool,
) -> Result<DistillStep> {
    let schedule = &student.schedule;
    let space = &student.space;
    let big_n = schedule.len();
    if n.iter().any(|&i| i == 0 || i + k > big_n) {
        return Err(FrmdError::Argument(format!("level index out of [1, {}]", big_n - k)));
    }
    let (obs, clean, bcs) = stack_batch(batch);
    let t_hi: Vec<f64> = n.iter().map(|&i| schedule.ascending(i + k)).collect();
    let t_lo: Vec<f64> = n.iter().map(|&i| schedule.ascending(i)).collect();
    let mut x_hi = clean;
    for (i, mut row) in x_hi.rows_mut().into_iter().enumerate() {
        row.scaled_add(t_hi[i], &noise.row(i));
    }
    let mut x_lo = x_hi.clone();
    for j in (0..k).rev() {
        let from: Vec<f64> = n.iter().map(|&i| schedule.ascending(i + j + 1)).collect();
        let to: Vec<f64> = n.iter().map(|&i| schedule.ascending(i + j)).collect();
        x_lo = teacher_step_batch(teacher, space, &x_lo, obs.view(), &from, &to, &bcs, heun)?;
    }
    let cfg = &student.config;
    let (f_online, tape) =
        consistency_batch(&student.online, space, cfg, x_hi.view(), obs.view(), &t_hi, &bcs, true)?;
    let (f_target, _) =
        consistency_batch(&student.target, space, cfg, x_lo.view(), obs.view(), &t_lo, &bcs, false)?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(f_online.dim());
    for i in 0..batch.len() {
        let diff = &f_online.row(i) - &f_target.row(i);
        let (d, g) = cfg.metric.eval(diff.view());
        let w = cfg.lambda_weight.weight(t_lo[i]);
        loss += w * d / b;
        // chain through f = c_skip x + c_out F: only F depends on θ
        grad.row_mut(i).assign(&(g * (w * c_out(t_hi[i], cfg) / b)));
    }
    if !loss.is_finite() {
        return Err(FrmdError::Training {
            step: 0,
            reason: "non-finite distillation loss".into(),
        });
    }
    let mut tape = tape.expect("online branch is taped");
    let online_grads = backward_through_decode(&student.online, space, &mut tape, grad.view())?;
    Ok(DistillStep {
        loss,
        online_grads,
        target_grads: Gradients::zeros_like(&student.target),
    })
}

/// One distillation step with random levels and noise.
pub fn distill_step<R: Rng + ?Sized>(
    teacher: &DenoiserNet,
    teacher_schedule: &NoiseSchedule,
    student: &StudentModel,
    batch: &[&WindowSample],
    rng: &mut R,
) -> Result<DistillStep> {
    if teacher_schedule != &student.schedule {
        return Err(FrmdError::Config("teacher and student noise schedules differ".into()));
    }
    if teacher.layout != student.online.layout {
        return Err(FrmdError::Config("teacher and student layouts differ".into()));
    }
    if batch.is_empty() {
        return Err(FrmdError::Argument("empty distillation batch".into()));
    }
    let k = student.config.k;
    let top = student.schedule.len() - k;
    let n: Vec<usize> = (0..batch.len()).map(|_| rng.random_range(1..=top)).collect();
    let noise = Array2::from_shape_simple_fn((batch.len(), student.space.traj_len()), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    distill_loss_at(teacher, student, batch, &n, noise.view(), k, student.config.heun)
}

/// `θ⁻ ← μ θ⁻ + (1 - μ) θ`.
pub fn ema_update(student: &mut StudentModel, mu: f64) -> Result<()> {
    if student.online.layout != student.target.layout
        || student.online.hidden_sizes() != student.target.hidden_sizes()
    {
        return Err(FrmdError::Layout("online and target layouts differ".into()));
    }
    let online = student.online.params();
    let mut target = student.target.params();
    for (t, o) in target.iter_mut().zip(&online) {
        *t = mu * *t + (1.0 - mu) * o;
    }
    student.target.set_params(&target)
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: StudentModel,
    pub curve: Vec<LossRecord>,
}

/// Full distillation loop: student initialized from the teacher, then
/// `distill_step`, optimizer step on θ, EMA update of θ⁻.
pub fn distill<R: Rng + ?Sized>(
    windows: &[WindowSample],
    teacher: &DenoiserNet,
    space: &TrajectorySpace,
    schedule: &NoiseSchedule,
    config: &ConsistencyConfig,
    rng: &mut R,
) -> Result<DistillOutcome> {
    if windows.is_empty() {
        return Err(FrmdError::Argument("empty dataset".into()));
    }
    let mut student = StudentModel::from_teacher(teacher, space.clone(), schedule.clone(), config.clone())?;
    let mut state = OptimizerState::for_net(&student.online);
    let mut sampler = BatchSampler::new(windows.len(), config.batch_size);
    let mut curve = Vec::new();
    let (mut running, mut count) = (0.0, 0usize);
    for step in 1..=config.steps {
        let idx = sampler.next(rng);
        let batch: Vec<&WindowSample> = idx.iter().map(|&i| &windows[i]).collect();
        let out = distill_step(teacher, schedule, &student, &batch, rng).map_err(|e| at_step(e, step))?;
        optimizer_step(&mut student.online, &out.online_grads, &mut state, &config.optim)
            .map_err(|e| at_step(e, step))?;
        ema_update(&mut student, config.mu)?;
        running += out.loss;
        count += 1;
        if step % config.log_every.max(1) == 0 || step == config.steps {
            let mean = running / count as f64;
            if !mean.is_finite() {
                return Err(FrmdError::Training {
                    step,
                    reason: "loss diverged".into(),
                });
            }
            curve.push(LossRecord {
                step,
                loss: mean,
                lr: state.last_lr,
            });
            running = 0.0;
            count = 0;
        }
    }
    Ok(DistillOutcome { student, curve })
}

/// One-step generation: `f(τ_T, o, T_max)` with `τ_T ~ N(0, T_max² I)`.
/// The denoiser is called exactly once.
///
/// With `project` set, the output is projected onto the primitives starting
/// from `bc`: the skip term `c_skip(T_max) τ_T` carries a small share of raw
/// noise that no primitive can represent, and dropping it keeps the plan an
/// exact, boundary-respecting primitive.
pub fn sample_student<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    config: &ConsistencyConfig,
    schedule: &NoiseSchedule,
    obs: &[f64],
    bc: &BoundaryState,
    project: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let t = schedule.t_max;
    let zeros = vec![0.0; model.space().traj_len()];
    let x = crate::diffusion::add_noise(&zeros, t, rng);
    let f = model.denoise(&x, obs, t, bc)?;
    let (s, o) = (c_skip(t, config), c_out(t, config));
    let out: Vec<f64> = x.iter().zip(&f).map(|(x, f)| s * x + o * f).collect();
    if project {
        Ok(model.space().project(&out, bc)?.1)
    } else {
        Ok(out)
    }
}

/// Mean distance between consistency outputs at adjacent levels along
/// teacher PF-ODE trajectories started from the given probes.
pub fn self_consistency_gap<R: Rng + ?Sized>(
    teacher: &DenoiserNet,
    net: &DenoiserNet,
    space: &TrajectorySpace,
    schedule: &NoiseSchedule,
    config: &ConsistencyConfig,
    probes: &[&WindowSample],
    rng: &mut R,
) -> Result<f64> {
    let (obs, _, bcs) = stack_batch(probes);
    let b = probes.len();
    let mut x = Array2::from_shape_simple_fn((b, space.traj_len()), || {
        schedule.t_max * rng.sample::<f64, _>(StandardNormal)
    });
    let levels = &schedule.levels;
    let ts = |t: f64| vec![t; b];
    let (mut prev, _) = consistency_batch(net, space, config, x.view(), obs.view(), &ts(levels[0]), &bcs, false)?;
    let mut total = 0.0;
    for pair in levels.windows(2) {
        x = teacher_step_batch(teacher, space, &x, obs.view(), &ts(pair[0]), &ts(pair[1]), &bcs, false)?;
        let (cur, _) = consistency_batch(net, space, config, x.view(), obs.view(), &ts(pair[1]), &bcs, false)?;
        let d = &cur - &prev;
        total += d.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>();
        prev = cur;
    }
    Ok(total / (b * (levels.len() - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{karras_levels, NetDenoiser, DEFAULT_RBF_GAIN};
    use crate::mp::MpConfig;
    use crate::nn::{Activation, HeadMode, Layout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn space() -> TrajectorySpace {
        TrajectorySpace::new(MpConfig::default(), 12, 0.1, DEFAULT_RBF_GAIN).unwrap()
    }

    fn net(seed: u64) -> DenoiserNet {
        let sp = space();
        let layout = Layout {
            traj_len: 24,
            obs_len: 4,
            embed_dim: crate::nn::TIME_EMBED_DIM,
            output_len: sp.output_len(HeadMode::Mp),
            head: HeadMode::Mp,
        };
        DenoiserNet::init(layout, &[16, 16], Activation::Gelu, seed).unwrap()
    }

    fn student(seed: u64) -> StudentModel {
        StudentModel::from_teacher(&net(seed), space(), NoiseSchedule::default(), ConsistencyConfig::default()).unwrap()
    }

    fn windows(n: usize, seed: u64) -> Vec<WindowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| WindowSample {
                obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                actions: (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
                bc: BoundaryState {
                    t_b: 0.0,
                    y0: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    dy0: vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
                },
            })
            .collect()
    }

    #[test]
    fn coefficient_limits_and_identity() {
        let c = ConsistencyConfig::default();
        assert_eq!(c_skip(0.0, &c), 1.0);
        assert_eq!(c_out(0.0, &c), 0.0);
        assert!(c_skip(1e6, &c) < 1e-12);
        assert!((c_out(1e6, &c) - 1.0).abs() < 1e-12);
        for t in [0.002, 0.1, 0.5, 3.0, 10.0] {
            let b2t2 = c.beta * c.beta * t * t;
            assert!((c_skip(t, &c) + b2t2 / (b2t2 + c.gamma_d * c.gamma_d) - 1.0).abs() < 1e-15);
        }
        assert!(c_skip(0.002, &c) > 0.9999);
    }

    #[test]
    fn boundary_condition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..5 {
            let s = student(seed);
            let x: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
            let bc = BoundaryState::at_rest(vec![0.2, 0.1]);
            for which in [Which::Online, Which::Target] {
                let f = consistency_f(&s, &x, &[0.0; 4], 0.0, &bc, which).unwrap();
                for (a, b) in f.iter().zip(&x) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_net_is_skip_plus_homogeneous() {
        let mut s = student(1);
        s.online.zero_params();
        let bc = BoundaryState {
            t_b: 0.0,
            y0: vec![0.5, -0.5],
            dy0: vec![0.0, 0.0],
        };
        let x = vec![1.0; 24];
        let t = 8.0;
        let f = consistency_f(&s, &x, &[0.0; 4], t, &bc, Which::Online).unwrap();
        let homog = crate::mp::decode(
            s.space.tables(),
            &bc,
            &crate::mp::MpWeights::zeros(&s.space.mp),
            &s.space.times(),
        )
        .unwrap()
        .flat_positions();
        let c = &s.config;
        for i in 0..24 {
            assert!((f[i] - (c_skip(t, c) * x[i] + c_out(t, c) * homog[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_layout_error() {
        let s = student(0);
        let bc = BoundaryState::at_rest(vec![0.0, 0.0]);
        assert!(matches!(
            consistency_f(&s, &[0.0; 5], &[0.0; 4], 1.0, &bc, Which::Online),
            Err(FrmdError::Layout(_))
        ));
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let data = windows(3, 2);
        let refs: Vec<&WindowSample> = data.iter().collect();
        let (obs, _, bcs) = stack_batch(&refs);
        let t = [0.01, 0.8, 6.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((3, 24), || rng.random_range(-2.0..2.0));
        let probe = Array2::from_shape_simple_fn((3, 24), || rng.random_range(-1.0..1.0));
        let cfg = ConsistencyConfig::default();
        let sp = space();
        let base = net(4);
        let value = |n: &DenoiserNet| {
            let (f, _) = consistency_batch(n, &sp, &cfg, x.view(), obs.view(), &t, &bcs, false).unwrap();
            (&f * &probe).sum()
        };
        let (_, tape) = consistency_batch(&base, &sp, &cfg, x.view(), obs.view(), &t, &bcs, true).unwrap();
        let mut g = probe.clone();
        for (i, mut row) in g.rows_mut().into_iter().enumerate() {
            row *= c_out(t[i], &cfg);
        }
        let analytic: Vec<f64> = backward_through_decode(&base, &sp, &mut tape.unwrap(), g.view())
            .unwrap()
            .iter()
            .collect();
        let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let params = base.params();
        let mut probe_net = base.clone();
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += 1e-4;
            probe_net.set_params(&p).unwrap();
            let up = value(&probe_net);
            p[i] -= 2e-4;
            probe_net.set_params(&p).unwrap();
            let down = value(&probe_net);
            let fd = (up - down) / 2e-4;
            worst = worst.max((analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(floor));
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn degenerate_skip_gives_zero_loss() {
        let s = student(3);
        let teacher = net(9);
        let data = windows(4, 1);
        let refs: Vec<&WindowSample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = Array2::from_shape_simple_fn((4, 24), || rng.sample::<f64, _>(StandardNormal));
        let out = distill_loss_at(&teacher, &s, &refs, &[1, 10, 20, 40], noise.view(), 0, false).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.online_grads.is_zero());
    }

    #[test]
    fn target_branch_receives_no_gradient() {
        let s = student(3);
        let teacher = net(9);
        let data = windows(6, 1);
        let refs: Vec<&WindowSample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = distill_step(&teacher, &NoiseSchedule::default(), &s, &refs, &mut rng).unwrap();
        assert!(out.loss > 0.0);
        assert!(out.target_grads.is_zero());
        assert!(!out.online_grads.is_zero());
    }

    #[test]
    fn distill_step_gradient_matches_finite_differences_on_online_only() {
        let s = student(6);
        let teacher = net(7);
        let data = windows(2, 3);
        let refs: Vec<&WindowSample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Array2::from_shape_simple_fn((2, 24), || rng.sample::<f64, _>(StandardNormal));
        let n = [5, 30];
        let base = distill_loss_at(&teacher, &s, &refs, &n, noise.view(), 1, false).unwrap();
        let analytic: Vec<f64> = base.online_grads.iter().collect();
        let floor = 1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let params = s.online.params();
        let mut worst: f64 = 0.0;
        for i in (0..params.len()).step_by(5) {
            let mut probe = s.clone();
            let mut p = params.clone();
            p[i] += 1e-4;
            probe.online.set_params(&p).unwrap();
            let up = distill_loss_at(&teacher, &probe, &refs, &n, noise.view(), 1, false).unwrap().loss;
            p[i] -= 2e-4;
            probe.online.set_params(&p).unwrap();
            let down = distill_loss_at(&teacher, &probe, &refs, &n, noise.view(), 1, false).unwrap().loss;
            let fd = (up - down) / 2e-4;
            worst = worst.max((analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(floor));
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn schedule_mismatch_is_config_error() {
        let s = student(0);
        let other = karras_levels(20, 0.002, 10.0, 7.0).unwrap();
        let data = windows(2, 0);
        let refs: Vec<&WindowSample> = data.iter().collect();
        let r = distill_step(&net(0), &other, &s, &refs, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(FrmdError::Config(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let sched = NoiseSchedule::default();
        let bad = [
            ConsistencyConfig { k: 0, ..Default::default() },
            ConsistencyConfig { k: 40, ..Default::default() },
            ConsistencyConfig { mu: 1.0, ..Default::default() },
            ConsistencyConfig { gamma_d: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate(&sched).is_err(), "{c:?}");
        }
    }

    #[test]
    fn ema_algebra() {
        let mut s = student(2);
        s.online = net(11);
        ema_update(&mut s, 0.0).unwrap();
        assert_eq!(s.target.params(), s.online.params());

        let mut s = student(2);
        let n = s.online.n_params();
        s.target.set_params(&vec![1.0; n]).unwrap();
        s.online.set_params(&vec![0.0; n]).unwrap();
        ema_update(&mut s, 0.95).unwrap();
        assert!(s.target.params().iter().all(|v| (v - 0.95).abs() < 1e-15));
        let mut gap = 0.95;
        for _ in 0..20 {
            ema_update(&mut s, 0.95).unwrap();
            let next = s.target.params()[0];
            assert!((next - 0.95 * gap).abs() < 1e-12);
            gap = next;
        }
    }

    #[test]
    fn zero_steps_student_equals_teacher() {
        let teacher = net(5);
        let data = windows(8, 0);
        let cfg = ConsistencyConfig { steps: 0, ..Default::default() };
        let out = distill(&data, &teacher, &space(), &NoiseSchedule::default(), &cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(out.student.online.params(), teacher.params());
        assert_eq!(out.student.target.params(), teacher.params());
        assert!(out.curve.is_empty());
    }

    #[test]
    fn distill_is_deterministic() {
        let teacher = net(5);
        let data = windows(16, 0);
        let cfg = ConsistencyConfig {
            steps: 6,
            batch_size: 4,
            log_every: 2,
            ..Default::default()
        };
        let run = || {
            distill(&data, &teacher, &space(), &NoiseSchedule::default(), &cfg, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap()
                .curve
        };
        let a = run();
        assert_eq!(a.len(), 3);
        assert_eq!(a, run());
    }

    struct Counting<'a> {
        inner: NetDenoiser<'a>,
        calls: Cell<usize>,
    }

    impl Denoiser for Counting<'_> {
        fn space(&self) -> &TrajectorySpace {
            self.inner.space
        }
        fn denoise(&self, noisy: &[f64], obs: &[f64], t: f64, bc: &BoundaryState) -> Result<Vec<f64>> {
            self.calls.set(self.calls.get() + 1);
            self.inner.denoise(noisy, obs, t, bc)
        }
    }

    #[test]
    fn one_step_sampling_calls_network_once_and_keeps_boundary() {
        let s = student(8);
        let model = Counting {
            inner: NetDenoiser { net: s.deployed(), space: &s.space },
            calls: Cell::new(0),
        };
        let bc = BoundaryState {
            t_b: 0.0,
            y0: vec![0.3, -0.2],
            dy0: vec![0.1, 0.4],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 1..=5 {
            let out = sample_student(&model, &s.config, &s.schedule, &[0.0; 4], &bc, true, &mut rng).unwrap();
            assert_eq!(model.calls.get(), i);
            let (w, back) = s.space.project(&out, &bc).unwrap();
            for (a, b) in out.iter().zip(&back) {
                // re-projection is idempotent up to the decoder's conditioning
                assert!((a - b).abs() < 1e-8, "{}", (a - b).abs());
            }
            let w = crate::mp::MpWeights::from_flat(&s.space.mp, &w).unwrap();
            let start = crate::mp::decode(s.space.tables(), &bc, &w, &[0.0]).unwrap();
            let vel = start.velocities.unwrap();
            for d in 0..2 {
                assert!((start.positions[[0, d]] - bc.y0[d]).abs() < 1e-9);
                assert!((vel[[0, d]] - bc.dy0[d]).abs() < 1e-9);
            }
        }
    }
}
