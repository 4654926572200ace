//! Score-based diffusion over action trajectories.
//!
//! The noise level is identified with time, `σ(t) = t`, so a noisy
//! trajectory is `τ + t ε` and the probability-flow ODE reads
//! `dτ/dt = (τ - F(τ, o, t)) / t`, with `F` the denoiser. In MP-head mode `F`
//! decodes the network's ProDMP weights through the boundary state, so every
//! denoised trajectory starts exactly at the measured position and velocity.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FrmdError, Result};
use crate::mp::{action_times, build_basis, BasisTables, BoundaryState, DecodeOperator, MpConfig, Trajectory};
use crate::nn::{
    optimizer_step, Activation, AdamWConfig, DenoiserNet, Gradients, HeadMode, Layout,
    OptimizerState, Tape,
};

/// Decreasing noise levels `t_1 = t_max > .. > t_N = epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub levels: Vec<f64>,
    pub epsilon: f64,
    pub t_max: f64,
    pub rho: f64,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level `i` counted from the clean end: `ascending(1) == epsilon`,
    /// `ascending(N) == t_max`.
    pub fn ascending(&self, i: usize) -> f64 {
        self.levels[self.levels.len() - i]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        karras_levels(40, 0.002, 10.0, 7.0).expect("default schedule is valid")
    }
}

/// `t_i = (t_max^(1/ρ) + (i-1)/(N-1) (ε^(1/ρ) - t_max^(1/ρ)))^ρ`.
pub fn karras_levels(n: usize, epsilon: f64, t_max: f64, rho: f64) -> Result<NoiseSchedule> {
    if n < 2 {
        return Err(FrmdError::Config(format!("schedule needs N >= 2, got {n}")));
    }
    if !(epsilon > 0.0 && epsilon < t_max && t_max.is_finite()) {
        return Err(FrmdError::Config(format!(
            "schedule needs 0 < epsilon < t_max, got {epsilon} and {t_max}"
        )));
    }
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(FrmdError::Config(format!("schedule needs rho >= 1, got {rho}")));
    }
    let hi = t_max.powf(1.0 / rho);
    let lo = epsilon.powf(1.0 / rho);
    let mut levels: Vec<f64> = (0..n)
        .map(|i| (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(rho))
        .collect();
    levels[0] = t_max;
    levels[n - 1] = epsilon;
    Ok(NoiseSchedule {
        levels,
        epsilon,
        t_max,
        rho,
    })
}

/// Levels visited by a sampler that spends `steps` network evaluations:
/// `steps - 1` ODE steps over a `steps`-level schedule plus a final denoise.
pub fn sampling_levels(schedule: &NoiseSchedule, steps: usize) -> Result<Vec<f64>> {
    match steps {
        0 => Err(FrmdError::Argument("sampler needs at least one step".into())),
        1 => Ok(vec![schedule.t_max]),
        s => Ok(karras_levels(s, schedule.epsilon, schedule.t_max, schedule.rho)?.levels),
    }
}

/// `traj + t * N(0, I)`.
pub fn add_noise<R: Rng + ?Sized>(traj: &[f64], t: f64, rng: &mut R) -> Vec<f64> {
    traj.iter()
        .map(|x| {
            let e: f64 = rng.sample(StandardNormal);
            x + t * e
        })
        .collect()
}

/// Default multiplier from network outputs to basis weights.
pub const DEFAULT_RBF_GAIN: f64 = 50.0;

/// Action grid plus the ProDMP decoder shared by every model.
///
/// In MP-head mode the network's outputs for the basis functions are
/// multiplied by `rbf_gain` before decoding (goal entries pass through), so
/// that unit-scale outputs reach the weight magnitudes demonstrations need.
#[derive(Debug, Clone)]
pub struct TrajectorySpace {
    pub horizon: usize,
    pub dt: f64,
    pub mp: MpConfig,
    pub rbf_gain: f64,
    tables: Arc<BasisTables>,
    decoder: Arc<DecodeOperator>,
    /// Decode matrix with the gain folded into its basis columns.
    head_h: Arc<Array2<f64>>,
    /// Pseudo-inverse of the unscaled decode matrix.
    pinv: Arc<Array2<f64>>,
}

impl TrajectorySpace {
    pub fn new(mp: MpConfig, horizon: usize, dt: f64, rbf_gain: f64) -> Result<Self> {
        if !(rbf_gain > 0.0 && rbf_gain.is_finite()) {
            return Err(FrmdError::Config(format!("rbf gain must be positive, got {rbf_gain}")));
        }
        if horizon == 0 {
            return Err(FrmdError::Config("action horizon must be positive".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(FrmdError::Config(format!("control period must be positive, got {dt}")));
        }
        if horizon as f64 * dt > mp.tau_s + 1e-12 {
            return Err(FrmdError::Config(format!(
                "horizon {horizon} x dt {dt} exceeds the primitive duration {}",
                mp.tau_s
            )));
        }
        let tables = build_basis(&mp)?;
        let decoder = DecodeOperator::new(&tables, 0.0, &action_times(horizon, dt))?;
        let mut head_h = decoder.h.clone();
        let per_dof = mp.weights_per_dof();
        for (j, mut col) in head_h.columns_mut().into_iter().enumerate() {
            if j % per_dof != per_dof - 1 {
                col *= rbf_gain;
            }
        }
        let pinv = pseudo_inverse(&decoder.h)?;
        Ok(TrajectorySpace {
            horizon,
            dt,
            mp,
            rbf_gain,
            tables: Arc::new(tables),
            decoder: Arc::new(decoder),
            head_h: Arc::new(head_h),
            pinv: Arc::new(pinv),
        })
    }

    /// Least-squares projection of a trajectory onto the primitives that
    /// start from `bc`. Returns the basis weights and the decoded trajectory.
    pub fn project(&self, traj: &[f64], bc: &BoundaryState) -> Result<(Vec<f64>, Vec<f64>)> {
        if traj.len() != self.traj_len() {
            return Err(FrmdError::Layout(format!(
                "trajectory has {} entries, expected {}",
                traj.len(),
                self.traj_len()
            )));
        }
        let b = self.decoder.offset(bc)?;
        let r = Array1::from_iter(traj.iter().zip(&b).map(|(x, b)| x - b));
        let w = self.pinv.dot(&r);
        let decoded = self.decoder.apply(w.as_slice().expect("contiguous"), &b);
        Ok((w.to_vec(), decoded))
    }

    /// Basis weights encoded by an MP-head network output.
    pub fn weights_from_output(&self, out: &[f64]) -> Vec<f64> {
        let per_dof = self.mp.weights_per_dof();
        out.iter()
            .enumerate()
            .map(|(j, o)| if j % per_dof == per_dof - 1 { *o } else { o * self.rbf_gain })
            .collect()
    }

    pub fn dof(&self) -> usize {
        self.mp.dof
    }

    pub fn traj_len(&self) -> usize {
        self.horizon * self.mp.dof
    }

    pub fn times(&self) -> Vec<f64> {
        action_times(self.horizon, self.dt)
    }

    pub fn tables(&self) -> &BasisTables {
        &self.tables
    }

    pub fn decoder(&self) -> &DecodeOperator {
        &self.decoder
    }

    pub fn output_len(&self, head: HeadMode) -> usize {
        match head {
            HeadMode::Mp => self.mp.n_weights(),
            HeadMode::Raw => self.traj_len(),
        }
    }

    /// Maps raw network outputs to trajectories (one per row).
    pub fn decode_batch(
        &self,
        head: HeadMode,
        out: ArrayView2<f64>,
        bcs: &[BoundaryState],
    ) -> Result<Array2<f64>> {
        if out.ncols() != self.output_len(head) || out.nrows() != bcs.len() {
            return Err(FrmdError::Layout(format!(
                "network output {:?} does not match {} boundary states x {}",
                out.dim(),
                bcs.len(),
                self.output_len(head)
            )));
        }
        match head {
            HeadMode::Raw => Ok(out.to_owned()),
            HeadMode::Mp => {
                let mut traj = out.dot(&self.head_h.t());
                for (mut row, bc) in traj.rows_mut().into_iter().zip(bcs) {
                    let b = self.decoder.offset(bc)?;
                    row += &Array1::from(b);
                }
                Ok(traj)
            }
        }
    }

    /// Chain rule through [`Self::decode_batch`]: trajectory gradient to
    /// network-output gradient.
    pub fn pull_back(&self, head: HeadMode, grad: ArrayView2<f64>) -> Array2<f64> {
        match head {
            HeadMode::Raw => grad.to_owned(),
            HeadMode::Mp => grad.dot(self.head_h.as_ref()),
        }
    }

    pub fn to_trajectory(&self, flat: &[f64]) -> Trajectory {
        let positions = Array2::from_shape_vec((self.horizon, self.dof()), flat.to_vec())
            .expect("flat trajectory length matches horizon x dof");
        Trajectory {
            times: self.times(),
            positions,
            velocities: None,
        }
    }
}

/// Moore-Penrose pseudo-inverse via SVD, cutting singular values below
/// `1e-12` of the largest.
fn pseudo_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, c) = a.dim();
    let m = nalgebra::DMatrix::from_fn(r, c, |i, j| a[[i, j]]);
    let svd = m.svd(true, true);
    let cut = 1e-12 * svd.singular_values.max();
    let p = svd
        .pseudo_inverse(cut)
        .map_err(|e| FrmdError::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok(Array2::from_shape_fn((c, r), |(i, j)| p[(i, j)]))
}

/// Anything that maps `(noisy trajectory, observation, t, boundary)` to a
/// clean-trajectory estimate.
pub trait Denoiser {
    fn space(&self) -> &TrajectorySpace;
    fn denoise(&self, noisy: &[f64], obs: &[f64], t: f64, bc: &BoundaryState) -> Result<Vec<f64>>;
}

/// Batched `F_θ`: network forward followed by the head's decode.
pub fn denoise_batch(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    noisy: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    t: &[f64],
    bcs: &[BoundaryState],
) -> Result<Array2<f64>> {
    let out = net.predict(noisy, obs, t)?;
    space.decode_batch(net.layout.head, out.view(), bcs)
}

/// Like [`denoise_batch`] but records a tape for backpropagation.
pub fn denoise_batch_taped(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    noisy: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    t: &[f64],
    bcs: &[BoundaryState],
) -> Result<(Array2<f64>, Tape)> {
    let (out, tape) = net.forward(noisy, obs, t)?;
    Ok((space.decode_batch(net.layout.head, out.view(), bcs)?, tape))
}

/// Backpropagates a trajectory-space gradient into the network parameters.
pub fn backward_through_decode(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    tape: &mut Tape,
    grad_traj: ArrayView2<f64>,
) -> Result<Gradients> {
    let g = space.pull_back(net.layout.head, grad_traj);
    net.backward(tape, g.view())
}

/// A network bound to its trajectory space.
#[derive(Debug, Clone, Copy)]
pub struct NetDenoiser<'a> {
    pub net: &'a DenoiserNet,
    pub space: &'a TrajectorySpace,
}

impl Denoiser for NetDenoiser<'_> {
    fn space(&self) -> &TrajectorySpace {
        self.space
    }

    fn denoise(&self, noisy: &[f64], obs: &[f64], t: f64, bc: &BoundaryState) -> Result<Vec<f64>> {
        denoise_f(self.net, self.space, noisy, obs, t, bc)
    }
}

/// `F_θ(τ̃, o, t)` for a single sample.
pub fn denoise_f(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    noisy: &[f64],
    obs: &[f64],
    t: f64,
    bc: &BoundaryState,
) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, noisy.len()), noisy)
        .map_err(|e| FrmdError::Layout(e.to_string()))?;
    let o = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| FrmdError::Layout(e.to_string()))?;
    let out = denoise_batch(net, space, x, o, &[t], std::slice::from_ref(bc))?;
    Ok(out.into_raw_vec_and_offset().0)
}

/// `(F(τ, o, t) - τ) / t²`.
pub fn score_estimate<D: Denoiser + ?Sized>(
    model: &D,
    noisy: &[f64],
    obs: &[f64],
    t: f64,
    bc: &BoundaryState,
) -> Result<Vec<f64>> {
    if t == 0.0 || !t.is_finite() {
        return Err(FrmdError::Argument(format!("score is undefined at t = {t}")));
    }
    let f = model.denoise(noisy, obs, t, bc)?;
    Ok(f.iter().zip(noisy).map(|(f, x)| (f - x) / (t * t)).collect())
}

/// One PF-ODE step from `t_from` down to `t_to` (Euler, optionally Heun).
pub fn ode_step<D: Denoiser + ?Sized>(
    model: &D,
    traj: &[f64],
    t_from: f64,
    t_to: f64,
    obs: &[f64],
    bc: &BoundaryState,
    heun: bool,
) -> Result<Vec<f64>> {
    if !(t_from > t_to && t_to > 0.0) {
        return Err(FrmdError::Argument(format!(
            "ODE step needs t_from > t_to > 0, got {t_from} -> {t_to}"
        )));
    }
    let h = t_to - t_from;
    let f0 = model.denoise(traj, obs, t_from, bc)?;
    let d0: Vec<f64> = traj.iter().zip(&f0).map(|(x, f)| (x - f) / t_from).collect();
    let euler: Vec<f64> = traj.iter().zip(&d0).map(|(x, d)| x + h * d).collect();
    if !heun {
        return Ok(euler);
    }
    let f1 = model.denoise(&euler, obs, t_to, bc)?;
    Ok(traj
        .iter()
        .zip(&d0)
        .zip(euler.iter().zip(&f1))
        .map(|((x, d0), (xe, f1))| {
            let d1 = (xe - f1) / t_to;
            x + 0.5 * h * (d0 + d1)
        })
        .collect())
}

/// Solves the PF-ODE from `N(0, t_max² I)` noise and returns a trajectory in
/// the model's (normalized) action space.
pub fn sample_teacher<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    schedule: &NoiseSchedule,
    obs: &[f64],
    bc: &BoundaryState,
    steps: usize,
    heun: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let levels = sampling_levels(schedule, steps)?;
    let zeros = vec![0.0; model.space().traj_len()];
    let mut x = add_noise(&zeros, schedule.t_max, rng);
    for pair in levels.windows(2) {
        x = ode_step(model, &x, pair[0], pair[1], obs, bc, heun)?;
    }
    model.denoise(&x, obs, *levels.last().expect("non-empty levels"), bc)
}

/// One training example: observation window, clean action window and the
/// boundary state at the prediction instant, all in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub bc: BoundaryState,
}

/// Weighting of the denoising regression over noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// `1 / t²`.
    InverseSquare,
    /// `1 / (t² + σ_data²)`: `1 / t²` at high noise, bounded at low noise.
    InverseSquareFloored,
}

impl LossWeighting {
    pub fn weight(&self, t: f64) -> f64 {
        match self {
            LossWeighting::InverseSquare => 1.0 / (t * t),
            LossWeighting::InverseSquareFloored => {
                1.0 / (t * t + crate::nn::SIGMA_DATA * crate::nn::SIGMA_DATA)
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossWeighting::InverseSquare => "inv_t2",
            LossWeighting::InverseSquareFloored => "inv_t2_floored",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inv_t2" => Ok(LossWeighting::InverseSquare),
            "inv_t2_floored" => Ok(LossWeighting::InverseSquareFloored),
            other => Err(FrmdError::Config(format!("unknown loss weighting `{other}`"))),
        }
    }
}

/// Stacks window samples into batch matrices.
pub fn stack_batch(batch: &[&WindowSample]) -> (Array2<f64>, Array2<f64>, Vec<BoundaryState>) {
    let b = batch.len();
    let obs_len = batch[0].obs.len();
    let traj_len = batch[0].actions.len();
    let mut obs = Array2::zeros((b, obs_len));
    let mut clean = Array2::zeros((b, traj_len));
    for (i, s) in batch.iter().enumerate() {
        obs.row_mut(i).assign(&ndarray::ArrayView1::from(&s.obs[..]));
        clean.row_mut(i).assign(&ndarray::ArrayView1::from(&s.actions[..]));
    }
    (obs, clean, batch.iter().map(|s| s.bc.clone()).collect())
}

/// Log-uniform draw on `[lo, hi]`.
pub fn sample_log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Loss at explicit noise levels and noise draws; the building block shared by
/// training and validation.
pub fn denoising_loss_at(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    batch: &[&WindowSample],
    t: &[f64],
    noise: ArrayView2<f64>,
    weighting: LossWeighting,
    with_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    let (obs, clean, bcs) = stack_batch(batch);
    let mut noisy = clean.clone();
    for (i, mut row) in noisy.rows_mut().into_iter().enumerate() {
        row.scaled_add(t[i], &noise.row(i));
    }
    let b = batch.len() as f64;
    let per_elem = clean.ncols() as f64;
    let weights: Vec<f64> = t.iter().map(|t| weighting.weight(*t)).collect();
    let (pred, tape) = if with_grad {
        let (p, tape) = denoise_batch_taped(net, space, noisy.view(), obs.view(), t, &bcs)?;
        (p, Some(tape))
    } else {
        (denoise_batch(net, space, noisy.view(), obs.view(), t, &bcs)?, None)
    };
    let diff = &pred - &clean;
    let loss = diff
        .rows()
        .into_iter()
        .zip(&weights)
        .map(|(r, w)| w * r.dot(&r))
        .sum::<f64>()
        / (b * per_elem);
    if !loss.is_finite() {
        return Err(FrmdError::Training {
            step: 0,
            reason: "non-finite denoising loss".into(),
        });
    }
    let grads = match tape {
        Some(mut tape) => {
            let mut g = diff;
            for (mut row, w) in g.rows_mut().into_iter().zip(&weights) {
                row *= 2.0 * w / (b * per_elem);
            }
            Some(backward_through_decode(net, space, &mut tape, g.view())?)
        }
        None => None,
    };
    Ok((loss, grads))
}

/// Denoising regression `E[λ(t) ‖F(τ + t ε, o, t) - τ‖²]` with `t`
/// log-uniform on `[epsilon, t_max]`.
///
/// Up to a constant, this is the score-matching objective for the score
/// estimate `(F - τ̃)/t²`: the conditional score of `N(τ, t² I)` is
/// `-(τ̃ - τ)/t²`, and their difference is `(F - τ)/t²`.
pub fn teacher_loss<R: Rng + ?Sized>(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    schedule: &NoiseSchedule,
    batch: &[&WindowSample],
    weighting: LossWeighting,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(FrmdError::Argument("empty training batch".into()));
    }
    let t: Vec<f64> = (0..batch.len())
        .map(|_| sample_log_uniform(rng, schedule.epsilon, schedule.t_max))
        .collect();
    let noise = Array2::from_shape_simple_fn((batch.len(), space.traj_len()), || {
        rng.sample::<f64, _>(StandardNormal)
    });
    let (loss, grads) = denoising_loss_at(net, space, batch, &t, noise.view(), weighting, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub head: HeadMode,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub log_every: usize,
    pub weighting: LossWeighting,
    /// Fraction of windows held out for validation loss.
    pub validation_fraction: f64,
    /// Decay of the parameter moving average that becomes the trained net;
    /// 0 keeps the raw optimizer iterate.
    pub ema_decay: f64,
    pub seed: u64,
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(FrmdError::Config(format!(
                "teacher.hidden needs non-zero layer sizes, got {:?}",
                self.hidden
            )));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(FrmdError::Config("teacher.batch_size and teacher.log_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(FrmdError::Config(format!("teacher.ema_decay must lie in [0, 1), got {}", self.ema_decay)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(FrmdError::Config(format!(
                "teacher.validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.optim.validate("teacher")
    }
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden: vec![256, 256, 256],
            activation: Activation::Gelu,
            head: HeadMode::Mp,
            steps: 10_000,
            batch_size: 128,
            optim: AdamWConfig {
                lr: 2e-3,
                total_steps: 10_000,
                ..AdamWConfig::default()
            },
            log_every: 100,
            weighting: LossWeighting::InverseSquareFloored,
            validation_fraction: 0.1,
            ema_decay: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DenoiserNet,
    pub curve: Vec<LossRecord>,
    pub initial_validation: f64,
    pub final_validation: f64,
}

/// Fixed-noise validation loss: 8 noise levels spread log-uniformly, noise
/// drawn from a dedicated seed so repeated calls are comparable.
pub fn validation_loss(
    net: &DenoiserNet,
    space: &TrajectorySpace,
    schedule: &NoiseSchedule,
    windows: &[WindowSample],
    weighting: LossWeighting,
) -> Result<f64> {
    use rand::SeedableRng;
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let levels = karras_levels(8, schedule.epsilon, schedule.t_max, 1.0)?.levels;
    let mut total = 0.0;
    let mut count = 0.0;
    for chunk in windows.chunks(256) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        for &t in &levels {
            // geometric spacing
            let t = (schedule.epsilon.ln()
                + (t - schedule.epsilon) / (schedule.t_max - schedule.epsilon)
                    * (schedule.t_max.ln() - schedule.epsilon.ln()))
            .exp();
            let ts = vec![t; refs.len()];
            let noise = Array2::from_shape_simple_fn((refs.len(), space.traj_len()), || {
                rng.sample::<f64, _>(StandardNormal)
            });
            let (l, _) = denoising_loss_at(net, space, &refs, &ts, noise.view(), weighting, false)?;
            total += l * refs.len() as f64;
            count += refs.len() as f64;
        }
    }
    Ok(total / count)
}

/// Deterministic split into (train, validation).
pub fn split_windows(windows: &[WindowSample], fraction: f64) -> (Vec<WindowSample>, Vec<WindowSample>) {
    if fraction <= 0.0 || windows.len() < 10 {
        return (windows.to_vec(), Vec::new());
    }
    let stride = (1.0 / fraction).round().max(2.0) as usize;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        if i % stride == stride - 1 {
            val.push(w.clone());
        } else {
            train.push(w.clone());
        }
    }
    (train, val)
}

/// Minibatch indices for one step: a shuffled pass over the data, refilled
/// when exhausted. The final batch of a pass may be shorter.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            cursor: n,
            batch_size: batch_size.max(1),
        }
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        use rand::seq::SliceRandom;
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

/// Trains a denoiser on window samples.
pub fn train_teacher<R: Rng + ?Sized>(
    windows: &[WindowSample],
    space: &TrajectorySpace,
    schedule: &NoiseSchedule,
    config: &TeacherConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if windows.is_empty() {
        return Err(FrmdError::Argument("empty dataset".into()));
    }
    let obs_len = windows[0].obs.len();
    let layout = Layout {
        traj_len: space.traj_len(),
        obs_len,
        embed_dim: crate::nn::TIME_EMBED_DIM,
        output_len: space.output_len(config.head),
        head: config.head,
    };
    let mut net = DenoiserNet::init(layout, &config.hidden, config.activation, config.seed)?;
    let (train, val) = split_windows(windows, config.validation_fraction);
    let val_ref = if val.is_empty() { &train } else { &val };
    let initial_validation = validation_loss(&net, space, schedule, val_ref, config.weighting)?;
    let mut state = OptimizerState::for_net(&net);
    let mut sampler = BatchSampler::new(train.len(), config.batch_size);
    let mut curve = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0usize;
    let mut average = (config.ema_decay > 0.0).then(|| net.params());
    for step in 1..=config.steps {
        let idx = sampler.next(rng);
        let batch: Vec<&WindowSample> = idx.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = teacher_loss(&net, space, schedule, &batch, config.weighting, rng)
            .map_err(|e| at_step(e, step))?;
        optimizer_step(&mut net, &grads, &mut state, &config.optim).map_err(|e| at_step(e, step))?;
        if let Some(avg) = average.as_mut() {
            let d = config.ema_decay;
            for (a, p) in avg.iter_mut().zip(net.params()) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
        running += loss;
        running_n += 1;
        if step % config.log_every.max(1) == 0 || step == config.steps {
            let mean = running / running_n as f64;
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
            running_n = 0;
        }
    }
    if let Some(avg) = average {
        net.set_params(&avg)?;
    }
    let final_validation = validation_loss(&net, space, schedule, val_ref, config.weighting)?;
    Ok(TrainOutcome {
        net,
        curve,
        initial_validation,
        final_validation,
    })
}

pub(crate) fn at_step(e: FrmdError, step: usize) -> FrmdError {
    match e {
        FrmdError::Training { reason, .. } => FrmdError::Training { step, reason },
        other => other,
    }
}

/// Mean of the rows of a batch, used by diagnostics.
pub fn row_mean(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).expect("non-empty batch")
}
