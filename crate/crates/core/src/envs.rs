//! Synthetic 2-D task suite: task placement, analytic experts, dataset
//! windows and receding-horizon rollouts through a first-order plant.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::WindowSample;
use crate::error::{FrmdError, Result};
use crate::mp::BoundaryState;

/// Half-width of the square workspace `[-1, 1]²`.
pub const WORKSPACE: f64 = 1.0;
/// Placement margin: generated points stay inside `[-0.9, 0.9]²`.
pub const PLACEMENT: f64 = 0.9;
pub const MIN_SEPARATION: f64 = 0.5;
/// Observation layout: agent (2), goal (2), via or zeros (2), via-visited flag.
pub const OBS_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Reach,
    ViaPoint,
    BimodalVia,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Reach, TaskKind::ViaPoint, TaskKind::BimodalVia];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Reach => "reach",
            TaskKind::ViaPoint => "via_point",
            TaskKind::BimodalVia => "bimodal_via",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(TaskKind::Reach),
            "via_point" => Ok(TaskKind::ViaPoint),
            "bimodal_via" => Ok(TaskKind::BimodalVia),
            other => Err(FrmdError::Argument(format!("unknown task kind `{other}`"))),
        }
    }

    fn tag(&self) -> u64 {
        match self {
            TaskKind::Reach => 0x7265_6163,
            TaskKind::ViaPoint => 0x7669_6170,
            TaskKind::BimodalVia => 0x626d_7669,
        }
    }
}

/// Environment constants shared by experts and rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub dt: f64,
    /// Fraction of the remaining distance to the commanded target covered per step.
    pub plant_gain: f64,
    pub success_radius: f64,
    pub via_radius: f64,
    pub max_steps: usize,
    /// Duration of the expert's movement; the rest of the episode holds the goal.
    pub move_time: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.1,
            plant_gain: 0.8,
            success_radius: 0.05,
            via_radius: 0.08,
            max_steps: 96,
            move_time: 6.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FrmdError::Config(format!("env.dt must be positive, got {}", self.dt)));
        }
        if !(self.plant_gain > 0.0 && self.plant_gain <= 1.0) {
            return Err(FrmdError::Config(format!(
                "env.plant_gain must lie in (0, 1], got {}",
                self.plant_gain
            )));
        }
        if !(self.success_radius > 0.0 && self.via_radius > 0.0) {
            return Err(FrmdError::Config("env radii must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(FrmdError::Config("env.max_steps must be positive".into()));
        }
        if !(self.move_time > 0.0 && self.move_time <= self.max_steps as f64 * self.dt) {
            return Err(FrmdError::Config(format!(
                "env.move_time must lie in (0, max_steps * dt], got {}",
                self.move_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub seed: u64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// One via-point, or the two mirror-image alternatives for the bimodal task.
    pub vias: Vec<[f64; 2]>,
    pub success_radius: f64,
    pub via_radius: f64,
    pub max_steps: usize,
}

impl TaskInstance {
    /// What the policy sees in the via slot: the via itself, the point between
    /// the two alternatives for the bimodal task (so the branch is not
    /// revealed), or zeros.
    pub fn via_hint(&self) -> [f64; 2] {
        match self.vias.len() {
            0 => [0.0, 0.0],
            1 => self.vias[0],
            _ => midpoint(self.vias[0], self.vias[1]),
        }
    }

    pub fn near_via(&self, p: [f64; 2]) -> bool {
        self.vias.iter().any(|v| dist(*v, p) <= self.via_radius)
    }

    pub fn at_goal(&self, p: [f64; 2]) -> bool {
        dist(self.goal, p) <= self.success_radius
    }

    pub fn observation(&self, p: [f64; 2], via_visited: bool) -> Vec<f64> {
        let h = self.via_hint();
        vec![
            p[0],
            p[1],
            self.goal[0],
            self.goal[1],
            h[0],
            h[1],
            if via_visited { 1.0 } else { 0.0 },
        ]
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn inside(p: [f64; 2]) -> bool {
    p[0].abs() <= PLACEMENT && p[1].abs() <= PLACEMENT
}

/// Deterministic task placement.
///
/// Via tasks use a long start-goal chord (1.8 to 2.4) with the via offset
/// 0.25 to 0.3 off the chord midpoint, which keeps the expert path's peak
/// curvature below 0.75.
pub fn make_task(kind: TaskKind, seed: u64, env: &EnvConfig) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.tag().rotate_left(17));
    loop {
        let start = [
            rng.random_range(-PLACEMENT..=PLACEMENT),
            rng.random_range(-PLACEMENT..=PLACEMENT),
        ];
        let (len_lo, len_hi) = match kind {
            TaskKind::Reach => (0.6, 2.0),
            _ => (1.8, 2.4),
        };
        let len = rng.random_range(len_lo..=len_hi);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = [angle.cos(), angle.sin()];
        let goal = [start[0] + len * dir[0], start[1] + len * dir[1]];
        let offset = rng.random_range(0.25..=0.3);
        let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if !inside(goal) {
            continue;
        }
        let mid = midpoint(start, goal);
        let normal = [-dir[1], dir[0]];
        let via = |s: f64| [mid[0] + s * offset * normal[0], mid[1] + s * offset * normal[1]];
        let vias = match kind {
            TaskKind::Reach => vec![],
            TaskKind::ViaPoint => vec![via(side)],
            TaskKind::BimodalVia => vec![via(1.0), via(-1.0)],
        };
        if !vias.iter().all(|v| inside(*v)) {
            continue;
        }
        return TaskInstance {
            kind,
            seed,
            start,
            goal,
            vias,
            success_radius: env.success_radius,
            via_radius: env.via_radius,
            max_steps: env.max_steps,
        };
    }
}

/// Checks placement invariants: separation, workspace, mirror symmetry.
pub fn check_task(task: &TaskInstance) -> Result<()> {
    let mut pts = vec![task.start, task.goal];
    pts.extend(task.vias.iter().copied());
    for p in &pts {
        if !(p[0].abs() <= WORKSPACE && p[1].abs() <= WORKSPACE) {
            return Err(FrmdError::Validation(format!("point {p:?} outside the workspace")));
        }
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if dist(pts[i], pts[j]) < MIN_SEPARATION {
                return Err(FrmdError::Validation(format!(
                    "points {:?} and {:?} closer than {MIN_SEPARATION}",
                    pts[i], pts[j]
                )));
            }
        }
    }
    let expected_vias = match task.kind {
        TaskKind::Reach => 0,
        TaskKind::ViaPoint => 1,
        TaskKind::BimodalVia => 2,
    };
    if task.vias.len() != expected_vias {
        return Err(FrmdError::Validation(format!(
            "{} task carries {} via-points",
            task.kind.as_str(),
            task.vias.len()
        )));
    }
    Ok(())
}

/// Minimum-jerk time scaling `10u³ - 15u⁴ + 6u⁵` on `[0, 1]`.
pub fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Derivative of [`min_jerk`] with respect to `u`.
pub fn min_jerk_rate(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// Expert reference path through the task points, parametrized by `s` in `[0, 1]`.
///
/// With a via-point the path is the quadratic Bézier curve passing through it
/// at `s = 1/2`, so the geometry stays smooth at the via.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPath {
    pub start: [f64; 2],
    pub control: Option<[f64; 2]>,
    pub goal: [f64; 2],
}

impl ExpertPath {
    pub fn point(&self, s: f64) -> [f64; 2] {
        let (a, g) = (self.start, self.goal);
        match self.control {
            None => [a[0] + s * (g[0] - a[0]), a[1] + s * (g[1] - a[1])],
            Some(c) => {
                let r = 1.0 - s;
                [
                    r * r * a[0] + 2.0 * r * s * c[0] + s * s * g[0],
                    r * r * a[1] + 2.0 * r * s * c[1] + s * s * g[1],
                ]
            }
        }
    }
}

/// Observations, commanded targets and plant positions of one expert episode.
///
/// `actions[i]` is the target that produced `positions[i]` from
/// `positions[i - 1]`; `actions[0]` is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub task: TaskInstance,
    pub seed: u64,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<[f64; 2]>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.obs.iter().map(|o| [o[0], o[1]]).collect()
    }
}

/// Plant update: move a fraction `gain` of the way to the target.
pub fn plant_step(p: [f64; 2], target: [f64; 2], gain: f64) -> [f64; 2] {
    [p[0] + gain * (target[0] - p[0]), p[1] + gain * (target[1] - p[1])]
}

pub fn expert_path(task: &TaskInstance, seed: u64) -> ExpertPath {
    let via = match task.vias.len() {
        0 => None,
        1 => Some(task.vias[0]),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5_b1a5);
            Some(task.vias[usize::from(rng.random::<bool>())])
        }
    };
    let control = via.map(|v| {
        let m = midpoint(task.start, task.goal);
        [2.0 * v[0] - m[0], 2.0 * v[1] - m[1]]
    });
    ExpertPath {
        start: task.start,
        control,
        goal: task.goal,
    }
}

/// Analytic expert: commands follow the path with minimum-jerk timing and a
/// first-order plant tracks them.
pub fn expert_demo(task: &TaskInstance, seed: u64, env: &EnvConfig) -> Demonstration {
    let path = expert_path(task, seed);
    let n = task.max_steps;
    let mut obs = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut p = task.start;
    let mut visited = task.near_via(p);
    actions.push(task.start);
    obs.push(task.observation(p, visited));
    for i in 1..n {
        let s = min_jerk(i as f64 * env.dt / env.move_time);
        let a = path.point(s);
        p = plant_step(p, a, env.plant_gain);
        visited |= task.near_via(p);
        actions.push(a);
        obs.push(task.observation(p, visited));
    }
    Demonstration {
        task: task.clone(),
        seed,
        obs,
        actions,
    }
}

/// Per-dimension affine map of actions onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub center: Vec<f64>,
    pub half_range: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            center: vec![0.0; dim],
            half_range: vec![1.0; dim],
        }
    }

    pub fn fit(demos: &[Demonstration]) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for a in demos.iter().flat_map(|d| d.actions.iter()) {
            for k in 0..2 {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(a[k]);
            }
        }
        if !lo[0].is_finite() {
            return Err(FrmdError::Argument("cannot fit normalization to an empty dataset".into()));
        }
        let center = (0..2).map(|k| 0.5 * (lo[k] + hi[k])).collect();
        let half_range = (0..2).map(|k| (0.5 * (hi[k] - lo[k])).max(1e-6)).collect();
        Ok(Normalizer { center, half_range })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.center[i % d]) / self.half_range[i % d])
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.half_range[i % d] + self.center[i % d])
            .collect()
    }

    pub fn normalize_bc(&self, bc: &BoundaryState) -> BoundaryState {
        BoundaryState {
            t_b: bc.t_b,
            y0: self.normalize(&bc.y0),
            dy0: bc.dy0.iter().zip(&self.half_range).map(|(v, h)| v / h).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SliceStats {
    pub windows: usize,
    pub skipped_demos: usize,
}

/// Stride-1 windows: observations `[j, j + m)`, actions `[j + m, j + m + n)`,
/// boundary state measured at the last observation.
pub fn slice_dataset(
    demos: &[Demonstration],
    n: usize,
    m: usize,
    dt: f64,
    normalizer: &Normalizer,
) -> Result<(Vec<WindowSample>, SliceStats)> {
    if n == 0 || m < 2 {
        return Err(FrmdError::Argument(format!(
            "windows need n >= 1 and m >= 2 (velocity estimate), got n = {n}, m = {m}"
        )));
    }
    let mut out = Vec::new();
    let mut stats = SliceStats::default();
    for demo in demos {
        if demo.len() < n + m || demo.obs.len() != demo.len() {
            stats.skipped_demos += 1;
            continue;
        }
        let pos = demo.positions();
        for j in 0..=demo.len() - n - m {
            let k = j + m - 1;
            let obs: Vec<f64> = demo.obs[j..j + m].iter().flatten().copied().collect();
            let actions: Vec<f64> = demo.actions[j + m..j + m + n].iter().flatten().copied().collect();
            let bc = BoundaryState {
                t_b: 0.0,
                y0: pos[k].to_vec(),
                dy0: vec![(pos[k][0] - pos[k - 1][0]) / dt, (pos[k][1] - pos[k - 1][1]) / dt],
            };
            out.push(WindowSample {
                obs,
                actions: normalizer.normalize(&actions),
                bc: normalizer.normalize_bc(&bc),
            });
        }
    }
    stats.windows = out.len();
    Ok((out, stats))
}

/// What a policy sees at a replanning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput<'a> {
    pub step: usize,
    /// `m` stacked observations, oldest first.
    pub obs: &'a [f64],
    /// Measured position and velocity in world units.
    pub bc: &'a BoundaryState,
}

/// A plan of world-frame position targets, one row per control step.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub targets: Vec<[f64; 2]>,
    /// Planned position at the replanning instant itself, when the
    /// representation defines one.
    pub initial: Option<[f64; 2]>,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn sample(&self, input: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Plan>;
}

/// Replays a demonstration's actions.
pub struct ReplayPolicy {
    pub demo: Demonstration,
    pub horizon: usize,
}

impl Policy for ReplayPolicy {
    fn name(&self) -> &str {
        "expert_replay"
    }

    fn sample(&self, input: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Plan> {
        let last = *self.demo.actions.last().expect("non-empty demo");
        let targets = (1..=self.horizon)
            .map(|i| self.demo.actions.get(input.step + i).copied().unwrap_or(last))
            .collect();
        Ok(Plan { targets, initial: None })
    }
}

/// Always commands the same point.
pub struct ConstantPolicy {
    pub target: [f64; 2],
    pub horizon: usize,
}

impl Policy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn sample(&self, _: &PolicyInput<'_>, _: &mut ChaCha8Rng) -> Result<Plan> {
        Ok(Plan {
            targets: vec![self.target; self.horizon],
            initial: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRecord {
    pub step: usize,
    pub measured: [f64; 2],
    pub planned_initial: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Executed positions, starting with the initial position.
    pub trace: Vec<[f64; 2]>,
    pub commanded: Vec<[f64; 2]>,
    pub success: bool,
    pub via_visited: bool,
    pub steps_used: usize,
    pub inference_calls: usize,
    pub per_call_latency_ms: Vec<f64>,
    pub replans: Vec<ReplanRecord>,
}

impl EpisodeResult {
    /// CSV with header `step,x,y,commanded_x,commanded_y`; row 0 is the start
    /// and has no command.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,x,y,commanded_x,commanded_y\n");
        for (i, p) in self.trace.iter().enumerate() {
            match i.checked_sub(1).and_then(|j| self.commanded.get(j)) {
                Some(c) => s.push_str(&format!("{i},{},{},{},{}\n", p[0], p[1], c[0], c[1])),
                None => s.push_str(&format!("{i},{},{},,\n", p[0], p[1])),
            }
        }
        s
    }
}

/// Receding-horizon execution: replan every `replan_every` steps from the
/// measured position and finite-difference velocity, stop on success or after
/// `max_steps`.
pub fn rollout(
    policy: &dyn Policy,
    task: &TaskInstance,
    env: &EnvConfig,
    m: usize,
    replan_every: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult> {
    if replan_every == 0 {
        return Err(FrmdError::Argument("replan_every must be positive".into()));
    }
    let mut p = task.start;
    let mut v = [0.0, 0.0];
    let mut visited = task.near_via(p);
    let first = task.observation(p, visited);
    let mut history: Vec<Vec<f64>> = vec![first; m.max(1)];
    let mut trace = vec![p];
    let mut commanded = Vec::new();
    let mut latency = Vec::new();
    let mut replans = Vec::new();
    let mut plan: Vec<[f64; 2]> = Vec::new();
    let mut cursor = 0;
    let mut success = false;
    let mut step = 0;
    let needs_via = !task.vias.is_empty();
    while step < task.max_steps {
        if step % replan_every == 0 {
            let obs: Vec<f64> = history.iter().flatten().copied().collect();
            let bc = BoundaryState {
                t_b: 0.0,
                y0: p.to_vec(),
                dy0: v.to_vec(),
            };
            let clock = Instant::now();
            let out = policy.sample(&PolicyInput { step, obs: &obs, bc: &bc }, rng)?;
            latency.push(clock.elapsed().as_secs_f64() * 1e3);
            if out.targets.len() < replan_every.min(task.max_steps - step) {
                return Err(FrmdError::Layout(format!(
                    "policy `{}` returned {} targets, need at least {replan_every}",
                    policy.name(),
                    out.targets.len()
                )));
            }
            if out.targets.iter().flatten().any(|x| !x.is_finite()) {
                return Err(FrmdError::Numerical(format!(
                    "policy `{}` returned a non-finite target",
                    policy.name()
                )));
            }
            replans.push(ReplanRecord {
                step,
                measured: p,
                planned_initial: out.initial,
            });
            plan = out.targets;
            cursor = 0;
        }
        let a = plan[cursor];
        cursor += 1;
        let next = plant_step(p, a, env.plant_gain);
        v = [(next[0] - p[0]) / env.dt, (next[1] - p[1]) / env.dt];
        p = next;
        visited |= task.near_via(p);
        history.remove(0);
        history.push(task.observation(p, visited));
        trace.push(p);
        commanded.push(a);
        step += 1;
        if task.at_goal(p) && (visited || !needs_via) {
            success = true;
            break;
        }
    }
    Ok(EpisodeResult {
        inference_calls: latency.len(),
        trace,
        commanded,
        success,
        via_visited: visited,
        steps_used: step,
        per_call_latency_ms: latency,
        replans,
    })
}

/// Which bimodal branch an executed trace took, judged by the side of the
/// start-goal chord it strays to furthest.
pub fn bimodal_branch(task: &TaskInstance, trace: &[[f64; 2]]) -> Option<usize> {
    if task.vias.len() != 2 {
        return None;
    }
    let reach: Vec<f64> = task
        .vias
        .iter()
        .map(|v| trace.iter().map(|p| dist(*v, *p)).fold(f64::INFINITY, f64::min))
        .collect();
    if reach[0] <= task.via_radius && reach[0] < reach[1] {
        Some(0)
    } else if reach[1] <= task.via_radius && reach[1] < reach[0] {
        Some(1)
    } else {
        None
    }
}
