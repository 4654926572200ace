use frmd::consistency::{distill, self_consistency_gap, ConsistencyConfig};
use frmd::diffusion::{denoise_batch, ode_step, NetDenoiser, NoiseSchedule, TrajectorySpace, WindowSample, DEFAULT_RBF_GAIN};
use frmd::mp::{BoundaryState, MpConfig};
use frmd::nn::{Activation, AdamWConfig, DenoiserNet, HeadMode, Layout, TIME_EMBED_DIM};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const OBS: usize = 4;

fn space() -> TrajectorySpace {
    TrajectorySpace::new(MpConfig::default(), 12, 0.1, DEFAULT_RBF_GAIN).unwrap()
}

fn mean_traj() -> Vec<f64> {
    (0..24).map(|i| 0.3 * (i as f64 * 0.4).sin()).collect()
}

/// Exact denoiser for data concentrated at `mean_traj`: hidden layers random,
/// output layer zeroed with its bias set to the mean.
fn perfect_teacher() -> DenoiserNet {
    let layout = Layout { traj_len: 24, obs_len: OBS, embed_dim: TIME_EMBED_DIM, output_len: 24, head: HeadMode::Raw };
    let mut net = DenoiserNet::init(layout, &[32, 32], Activation::Gelu, 7).unwrap();
    let last = net.layers.last_mut().unwrap();
    last.weight.fill(0.0);
    last.bias.assign(&ndarray::Array1::from(mean_traj()));
    net
}

fn windows(n: usize) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..n)
        .map(|_| WindowSample {
            obs: (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect(),
            actions: mean_traj(),
            bc: BoundaryState { t_b: 0.0, y0: vec![0.0, 0.0], dy0: vec![0.0, 0.0] },
        })
        .collect()
}

fn config(steps: usize) -> ConsistencyConfig {
    ConsistencyConfig {
        k: 1,
        steps,
        batch_size: 32,
        log_every: 1,
        optim: AdamWConfig { lr: 1e-3, total_steps: steps, warmup_steps: 0, ..AdamWConfig::default() },
        ..ConsistencyConfig::default()
    }
}

#[test]
fn teacher_step_follows_the_linear_contraction() {
    let sp = space();
    let teacher = perfect_teacher();
    let model = NetDenoiser { net: &teacher, space: &sp };
    let w = &windows(1)[0];
    let mu = mean_traj();
    let schedule = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for pair in schedule.levels.windows(2) {
        let (hi, lo) = (pair[0], pair[1]);
        let x: Vec<f64> = mu.iter().map(|m| m + hi * rng.sample::<f64, _>(StandardNormal)).collect();
        let stepped = ode_step(&model, &x, hi, lo, &w.obs, &w.bc, false).unwrap();
        for ((s, xi), m) in stepped.iter().zip(&x).zip(&mu) {
            let exact = m + (lo / hi) * (xi - m);
            assert!((s - exact).abs() < 1e-12 * (1.0 + exact.abs()), "{s} vs {exact} at t = {hi}");
        }
    }
    let x = Array2::from_shape_fn((3, 24), |(_, j)| j as f64);
    let obs = Array2::zeros((3, OBS));
    let d = denoise_batch(&teacher, &sp, x.view(), obs.view(), &[0.1, 1.0, 10.0], &vec![w.bc.clone(); 3]).unwrap();
    for row in d.rows() {
        assert!(row.iter().zip(&mu).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}

#[test]
fn distillation_loss_trends_down_on_gaussian_teacher() {
    let sp = space();
    let teacher = perfect_teacher();
    let data = windows(64);
    let schedule = NoiseSchedule::default();
    let out = distill(&data, &teacher, &sp, &schedule, &config(500), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let losses: Vec<f64> = out.curve.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 500);
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (first, last) = (avg(&losses[..50]), avg(&losses[450..]));
    assert!(last < first, "first 10% {first:.3e}, last 10% {last:.3e}");
}

#[test]
fn self_consistency_gap_shrinks_after_distillation() {
    let sp = space();
    let teacher = perfect_teacher();
    let data = windows(64);
    let schedule = NoiseSchedule::default();
    let cfg = config(3000);
    let out = distill(&data, &teacher, &sp, &schedule, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let probes: Vec<&WindowSample> = data.iter().take(16).collect();
    let gap = |net: &DenoiserNet| {
        self_consistency_gap(&teacher, net, &sp, &schedule, &cfg, &probes, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    };
    let (before, after) = (gap(&teacher), gap(out.student.deployed()));
    assert!(after < before, "gap {before:.3e} -> {after:.3e}");
}
