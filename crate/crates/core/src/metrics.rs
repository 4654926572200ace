//! Success rate, inference latency and curvature-based smoothness.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{dist, Policy, PolicyInput, TaskKind};
use crate::error::{FrmdError, Result};

/// Default curvature threshold for a non-smooth transition.
pub const DEFAULT_K_MAX: f64 = 1.0;

/// Warm-up calls discarded by [`bench_inference`].
pub const WARMUP_CALLS: usize = 3;

/// Per-point discrete curvature of a 2-D trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Curvature {
    /// `k[j]` belongs to trace point `j + 1`; endpoints have no value.
    pub k: Vec<f64>,
    /// Trace indices whose triple contains coincident consecutive points.
    pub degenerate: Vec<usize>,
}

/// Steps shorter than this fraction of the trace's bounding-box diagonal
/// count as coincident: below it the triangle area is dominated by roundoff.
pub const COINCIDENT_REL: f64 = 1e-8;

/// Circumscribed-circle curvature of three points.
///
/// Returns `None` when two consecutive points coincide. A full reversal
/// (`a == c`) is the limit of a circle with diameter `|ab|`.
pub fn menger(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<f64> {
    menger_tol(a, b, c, 0.0)
}

fn menger_tol(a: [f64; 2], b: [f64; 2], c: [f64; 2], tol: f64) -> Option<f64> {
    let ab = dist(a, b);
    let bc = dist(b, c);
    if ab <= tol || bc <= tol {
        return None;
    }
    let ca = dist(c, a);
    if ca == 0.0 {
        return Some(2.0 / ab);
    }
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    Some(2.0 * cross.abs() / (ab * bc * ca))
}

pub fn curvature(trace: &[[f64; 2]]) -> Result<Curvature> {
    if trace.len() < 3 {
        return Err(FrmdError::Argument(format!(
            "curvature needs at least 3 points, got {}",
            trace.len()
        )));
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in trace {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let tol = COINCIDENT_REL * dist(lo, hi);
    let mut k = Vec::with_capacity(trace.len() - 2);
    let mut degenerate = Vec::new();
    for i in 1..trace.len() - 1 {
        match menger_tol(trace[i - 1], trace[i], trace[i + 1], tol) {
            Some(v) => k.push(v),
            None => {
                k.push(0.0);
                degenerate.push(i);
            }
        }
    }
    Ok(Curvature { k, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub curvatures: Vec<f64>,
    pub nonsmooth_count: usize,
    pub k_max: f64,
    /// Trace indices with `k > k_max`.
    pub nonsmooth_indices: Vec<usize>,
    pub degenerate_indices: Vec<usize>,
}

impl SmoothnessReport {
    /// CSV with header `index,k,nonsmooth,degenerate`.
    pub fn to_csv(&self) -> String {
        let flagged: BTreeSet<usize> = self.nonsmooth_indices.iter().copied().collect();
        let degenerate: BTreeSet<usize> = self.degenerate_indices.iter().copied().collect();
        let mut s = String::from("index,k,nonsmooth,degenerate\n");
        for (j, k) in self.curvatures.iter().enumerate() {
            let i = j + 1;
            s.push_str(&format!(
                "{i},{k},{},{}\n",
                flagged.contains(&i) as u8,
                degenerate.contains(&i) as u8
            ));
        }
        s
    }
}

pub fn nonsmooth_count(trace: &[[f64; 2]], k_max: f64) -> Result<SmoothnessReport> {
    if !(k_max >= 0.0) {
        return Err(FrmdError::Argument(format!("k_max must be non-negative, got {k_max}")));
    }
    let c = curvature(trace)?;
    let nonsmooth_indices: Vec<usize> = c
        .k
        .iter()
        .enumerate()
        .filter(|(_, &k)| k > k_max)
        .map(|(j, _)| j + 1)
        .collect();
    Ok(SmoothnessReport {
        nonsmooth_count: nonsmooth_indices.len(),
        curvatures: c.k,
        k_max,
        nonsmooth_indices,
        degenerate_indices: c.degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessStats {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Per-seed success fractions, then mean and population std across seeds.
pub fn success_rate(by_seed: &[Vec<bool>]) -> Result<SuccessStats> {
    if by_seed.is_empty() {
        return Err(FrmdError::Argument("no seeds to aggregate".into()));
    }
    let mut per_seed = Vec::with_capacity(by_seed.len());
    for (i, group) in by_seed.iter().enumerate() {
        if group.is_empty() {
            return Err(FrmdError::Argument(format!("seed group {i} has no episodes")));
        }
        per_seed.push(group.iter().filter(|&&s| s).count() as f64 / group.len() as f64);
    }
    let (mean, std) = mean_std(&per_seed);
    Ok(SuccessStats { mean, std, per_seed })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let (mean_ms, std_ms) = mean_std(ms);
        Some(LatencyStats {
            mean_ms,
            std_ms,
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            samples: ms.len(),
        })
    }
}

/// Wall-clock time of `policy.sample` over the probes, `reps` rounds after
/// [`WARMUP_CALLS`] discarded calls. Each probe call is one sample.
pub fn bench_inference(
    policy: &dyn Policy,
    probes: &[PolicyInput<'_>],
    reps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LatencyStats> {
    if reps < 10 {
        return Err(FrmdError::Argument(format!("at least 10 repetitions required, got {reps}")));
    }
    if probes.is_empty() {
        return Err(FrmdError::Argument("no probe inputs".into()));
    }
    for probe in probes.iter().cycle().take(WARMUP_CALLS) {
        policy.sample(probe, rng)?;
    }
    let mut ms = Vec::with_capacity(reps * probes.len());
    for _ in 0..reps {
        for probe in probes {
            let clock = Instant::now();
            policy.sample(probe, rng)?;
            ms.push(clock.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(LatencyStats::from_samples(&ms).expect("non-empty"))
}

/// What an evaluation keeps from one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_seed: u64,
    pub success: bool,
    pub steps_used: usize,
    pub inference_calls: usize,
    pub nonsmooth_count: usize,
    pub latency_ms: Vec<f64>,
}

/// Episodes of one policy on one task kind under one evaluation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub task: TaskKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSummary {
    pub median: f64,
    pub mean: f64,
    pub max: usize,
    pub per_episode: Vec<usize>,
}

impl SmoothnessSummary {
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => sorted[n / 2] as f64,
            _ => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
        };
        SmoothnessSummary {
            median,
            mean: if n == 0 { 0.0 } else { sorted.iter().sum::<usize>() as f64 / n as f64 },
            max: sorted.last().copied().unwrap_or(0),
            per_episode: counts.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskKind,
    pub success: SuccessStats,
    pub smoothness: SmoothnessSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub name: String,
    /// `None` when no call was timed.
    pub latency: Option<LatencyStats>,
    pub tasks: Vec<TaskReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub policies: Vec<PolicyReport>,
}

impl EvalReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| FrmdError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| FrmdError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

impl PolicyReport {
    pub fn task(&self, kind: TaskKind) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == kind)
    }
}

/// Hex CRC-32 of a resolved configuration text.
pub fn config_hash(text: &str) -> String {
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}

/// Groups runs by policy and task. Every policy must cover the same task
/// kinds, and every task the same seeds.
pub fn assemble_report(runs: &[RunRecord], meta: ReportMeta) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(FrmdError::Report("no runs to report".into()));
    }
    let mut grouped: BTreeMap<&str, BTreeMap<TaskKind, BTreeMap<u64, &RunRecord>>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for run in runs {
        if !grouped.contains_key(run.policy.as_str()) {
            order.push(&run.policy);
        }
        let seeds = grouped.entry(&run.policy).or_default().entry(run.task).or_default();
        if seeds.insert(run.seed, run).is_some() {
            return Err(FrmdError::Report(format!(
                "duplicate run for {} on {} with seed {}",
                run.policy,
                run.task.as_str(),
                run.seed
            )));
        }
    }
    let reference: Vec<TaskKind> = grouped[order[0]].keys().copied().collect();
    let mut policies = Vec::with_capacity(order.len());
    for name in order {
        let tasks_map = &grouped[name];
        let kinds: Vec<TaskKind> = tasks_map.keys().copied().collect();
        if kinds != reference {
            return Err(FrmdError::Report(format!(
                "policy {name} covers tasks {:?}, expected {:?}",
                kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
                reference.iter().map(|k| k.as_str()).collect::<Vec<_>>()
            )));
        }
        let mut latency = Vec::new();
        let mut tasks = Vec::with_capacity(kinds.len());
        for (kind, seeds) in tasks_map {
            if let Some(expected) = (!meta.seeds.is_empty()).then_some(&meta.seeds) {
                let got: Vec<u64> = seeds.keys().copied().collect();
                let mut want = expected.clone();
                want.sort_unstable();
                if got != want {
                    return Err(FrmdError::Report(format!(
                        "policy {name} on {} ran seeds {got:?}, expected {want:?}",
                        kind.as_str()
                    )));
                }
            }
            let mut by_seed = Vec::with_capacity(seeds.len());
            let mut counts = Vec::new();
            for run in seeds.values() {
                by_seed.push(run.episodes.iter().map(|e| e.success).collect::<Vec<_>>());
                for e in &run.episodes {
                    counts.push(e.nonsmooth_count);
                    latency.extend_from_slice(&e.latency_ms);
                }
            }
            tasks.push(TaskReport {
                task: *kind,
                success: success_rate(&by_seed)?,
                smoothness: SmoothnessSummary::from_counts(&counts),
            });
        }
        policies.push(PolicyReport {
            name: name.to_string(),
            latency: LatencyStats::from_samples(&latency),
            tasks,
        });
    }
    Ok(EvalReport { meta, policies })
}
