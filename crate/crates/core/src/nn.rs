//! Small dense network with hand-written reverse mode.
//!
//! The denoiser is a GELU MLP over `[c_in(t) * noisy_traj, obs_window,
//! embed(log t)]`. Forward passes work on a batch (one sample per row) and
//! record a [`Tape`] holding the intermediates needed by [`DenoiserNet::backward`].

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FrmdError, Result};

/// Width of the noise-level embedding.
pub const TIME_EMBED_DIM: usize = 16;

/// Data scale assumed by the input preconditioning `1 / sqrt(t² + σ²)`.
pub const SIGMA_DATA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Network emits ProDMP weights, decoded into a trajectory.
    Mp,
    /// Network emits the waypoints directly.
    Raw,
}

impl HeadMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadMode::Mp => "mp",
            HeadMode::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mp" => Ok(HeadMode::Mp),
            "raw" => Ok(HeadMode::Raw),
            other => Err(FrmdError::Config(format!("unknown head mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Tanh,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(FrmdError::Config(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (k * (x + 0.044715 * x * x * x)).tanh())
            }
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let k = (2.0 / std::f64::consts::PI).sqrt();
                let u = k * (x + 0.044715 * x * x * x);
                let th = u.tanh();
                let du = k * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
            Activation::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
        }
    }
}

/// Input/output sizes of a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// `n * D`.
    pub traj_len: usize,
    /// `m * obs_dim`.
    pub obs_len: usize,
    pub embed_dim: usize,
    /// `D * (n_basis + 1)` for the MP head, `n * D` for the raw head.
    pub output_len: usize,
    pub head: HeadMode,
}

impl Layout {
    pub fn new(
        horizon: usize,
        dof: usize,
        obs_history: usize,
        obs_dim: usize,
        n_basis: usize,
        head: HeadMode,
    ) -> Self {
        let output_len = match head {
            HeadMode::Mp => dof * (n_basis + 1),
            HeadMode::Raw => horizon * dof,
        };
        Layout {
            traj_len: horizon * dof,
            obs_len: obs_history * obs_dim,
            embed_dim: TIME_EMBED_DIM,
            output_len,
            head,
        }
    }

    pub fn input_len(&self) -> usize {
        self.traj_len + self.obs_len + self.embed_dim
    }
}

/// Sinusoidal features of `log t`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let lt = t.ln();
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        // frequencies from 0.1 to 10, geometric
        let freq = if half > 1 {
            0.1 * 100f64.powf(k as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out.push((freq * lt).sin());
        out.push((freq * lt).cos());
    }
    if dim % 2 == 1 {
        out.push(lt);
    }
    out
}

/// Preconditioning applied to the noisy trajectory before it enters the net.
pub fn input_scale(t: f64) -> f64 {
    1.0 / (t * t + SIGMA_DATA * SIGMA_DATA).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub layout: Layout,
    pub activation: Activation,
    pub layers: Vec<Linear>,
}

/// Per-layer parameter gradients, same shapes as [`DenoiserNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
}

impl Gradients {
    pub fn zeros_like(net: &DenoiserNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| g == 0.0)
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight *= s;
            l.bias *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

enum TapeOp {
    Linear { layer: usize, input: Array2<f64> },
    Activation { pre: Array2<f64> },
}

/// Forward intermediates for one batch; consumed by a single backward pass.
pub struct Tape {
    ops: Vec<TapeOp>,
    batch: usize,
    consumed: bool,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

impl DenoiserNet {
    /// Fan-in scaled uniform initialization, deterministic in `seed`.
    pub fn init(layout: Layout, hidden: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if hidden.is_empty() {
            return Err(FrmdError::Config(
                "denoiser needs at least one hidden layer".into(),
            ));
        }
        if hidden.contains(&0)
            || layout.traj_len == 0
            || layout.output_len == 0
            || layout.embed_dim == 0
        {
            return Err(FrmdError::Config("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![layout.input_len()];
        sizes.extend_from_slice(hidden);
        sizes.push(layout.output_len);
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Linear { weight, bias }
            })
            .collect();
        Ok(DenoiserNet {
            layout,
            activation,
            layers,
        })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.bias.len())
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters in declared order: for each layer, weight (row-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(FrmdError::Layout(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Sets every weight and bias to zero.
    pub fn zero_params(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Builds the batched network input.
    pub fn assemble_input(
        &self,
        noisy: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        t: &[f64],
    ) -> Result<Array2<f64>> {
        let layout = &self.layout;
        let batch = noisy.nrows();
        if noisy.ncols() != layout.traj_len {
            return Err(FrmdError::Layout(format!(
                "noisy trajectory has {} entries, expected {}",
                noisy.ncols(),
                layout.traj_len
            )));
        }
        if obs.ncols() != layout.obs_len || obs.nrows() != batch {
            return Err(FrmdError::Layout(format!(
                "observation batch is {:?}, expected ({batch}, {})",
                obs.dim(),
                layout.obs_len
            )));
        }
        if t.len() != batch {
            return Err(FrmdError::Layout(format!(
                "{} noise levels for a batch of {batch}",
                t.len()
            )));
        }
        if let Some(bad) = t.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(FrmdError::Argument(format!("noise level must be positive, got {bad}")));
        }
        let mut x = Array2::zeros((batch, layout.input_len()));
        for (b, mut row) in x.rows_mut().into_iter().enumerate() {
            let scale = input_scale(t[b]);
            let mut k = 0;
            for v in noisy.row(b) {
                row[k] = scale * v;
                k += 1;
            }
            for v in obs.row(b) {
                row[k] = *v;
                k += 1;
            }
            for v in time_embedding(t[b], layout.embed_dim) {
                row[k] = v;
                k += 1;
            }
        }
        Ok(x)
    }

    /// Forward pass recording a tape.
    pub fn forward(
        &self,
        noisy: ArrayView2<f64>,
        obs: ArrayView2<f64>,
        t: &[f64],
    ) -> Result<(Array2<f64>, Tape)> {
        let input = self.assemble_input(noisy, obs, t)?;
        let batch = input.nrows();
        let mut ops = Vec::with_capacity(2 * self.layers.len());
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            ops.push(TapeOp::Linear { layer: i, input: h });
            if i == last {
                h = z;
            } else {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                ops.push(TapeOp::Activation { pre: z });
            }
        }
        Ok((
            h,
            Tape {
                ops,
                batch,
                consumed: false,
            },
        ))
    }

    /// Forward pass without recording intermediates.
    pub fn predict(&self, noisy: ArrayView2<f64>, obs: ArrayView2<f64>, t: &[f64]) -> Result<Array2<f64>> {
        let mut h = self.assemble_input(noisy, obs, t)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i != last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    /// Reverse pass: gradients of `sum(output * output_gradient)` w.r.t. every
    /// parameter, summed over the batch.
    pub fn backward(&self, tape: &mut Tape, output_gradient: ArrayView2<f64>) -> Result<Gradients> {
        if tape.consumed {
            return Err(FrmdError::Usage("tape has already been consumed by a backward pass".into()));
        }
        if output_gradient.dim() != (tape.batch, self.layout.output_len) {
            return Err(FrmdError::Layout(format!(
                "output gradient is {:?}, expected ({}, {})",
                output_gradient.dim(),
                tape.batch,
                self.layout.output_len
            )));
        }
        tape.consumed = true;
        let mut grads = Gradients::zeros_like(self);
        let mut g = output_gradient.to_owned();
        for op in tape.ops.iter().rev() {
            match op {
                TapeOp::Activation { pre } => {
                    let act = self.activation;
                    ndarray::Zip::from(&mut g)
                        .and(pre)
                        .for_each(|g, &z| *g *= act.derivative(z));
                }
                TapeOp::Linear { layer, input } => {
                    let l = &self.layers[*layer];
                    let out = &mut grads.layers[*layer];
                    out.weight = input.t().dot(&g);
                    out.bias = g.sum_axis(Axis(0));
                    if *layer > 0 {
                        g = g.dot(&l.weight.t());
                    }
                }
            }
        }
        tape.ops.clear();
        Ok(grads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    /// Length of the cosine decay, counted from step 0.
    pub total_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 500,
            total_steps: 30_000,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FrmdError::Config(format!("{prefix}.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(FrmdError::Config(format!(
                "{prefix}.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(FrmdError::Config(format!("{prefix} Adam betas must lie in [0, 1)")));
        }
        if !(self.eps > 0.0) {
            return Err(FrmdError::Config(format!("{prefix}.eps must be positive")));
        }
        Ok(())
    }

    /// Linear warm-up to `lr`, then cosine decay to zero at `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub last_lr: f64,
}

impl OptimizerState {
    pub fn new(block_sizes: &[usize]) -> Self {
        OptimizerState {
            step: 0,
            first_moment: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second_moment: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            last_lr: 0.0,
        }
    }

    pub fn for_net(net: &DenoiserNet) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self::new(&sizes)
    }

    /// One AdamW update over named parameter blocks.
    pub fn update(
        &mut self,
        params: Vec<&mut [f64]>,
        grads: Vec<&[f64]>,
        names: &[String],
        hyper: &AdamWConfig,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(FrmdError::Layout("optimizer block count mismatch".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.first_moment[i].len() || params[i].len() != g.len() {
                return Err(FrmdError::Layout(format!("block {} size mismatch", names[i])));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(FrmdError::Training {
                    step: self.step,
                    reason: format!("non-finite gradient in parameter block {}", names[i]),
                });
            }
        }
        self.step += 1;
        let lr = hyper.lr_at(self.step);
        self.last_lr = lr;
        let bc1 = 1.0 - hyper.beta1.powi(self.step as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for k in 0..p.len() {
                m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
                v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * p[k]);
            }
        }
        Ok(())
    }
}

fn block_names(net: &DenoiserNet) -> Vec<String> {
    (0..net.layers.len())
        .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
        .collect()
}

/// AdamW step with the warm-up/cosine schedule.
pub fn optimizer_step(
    net: &mut DenoiserNet,
    grads: &Gradients,
    state: &mut OptimizerState,
    hyper: &AdamWConfig,
) -> Result<()> {
    let names = block_names(net);
    let params: Vec<&mut [f64]> = net
        .layers
        .iter_mut()
        .flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("contiguous weight"),
                l.bias.as_slice_mut().expect("contiguous bias"),
            ]
        })
        .collect();
    let g: Vec<&[f64]> = grads
        .layers
        .iter()
        .flat_map(|l| {
            [
                l.weight.as_slice().expect("contiguous weight"),
                l.bias.as_slice().expect("contiguous bias"),
            ]
        })
        .collect();
    state.update(params, g, &names, hyper)
}
