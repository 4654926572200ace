//! Probabilistic dynamic movement primitives (ProDMP).
//!
//! A trajectory is the solution of the critically damped second-order system
//!
//! ```text
//! tau² ÿ = alpha (beta (g - y) - tau ẏ) + f(x),   beta = alpha / 4
//! ```
//!
//! whose forcing term `f` is a weighted sum of normalized Gaussian bumps in the
//! phase variable `x(t) = exp(-alpha_x t / tau)`. Because the system is linear,
//! its solution splits into complementary functions `y1 = e^{-λt}`,
//! `y2 = t e^{-λt}` (with `λ = alpha / (2 tau)`) and a particular part that is
//! linear in the weights. The particular part is precomputed once on a dense
//! grid (variation of parameters, trapezoidal quadrature), after which decoding
//! any weight vector is an affine map: no integration at decode time.
//!
//! Each DoF has its own weight row `[w_1 .. w_Nb, g]` and shares the scalar
//! basis tables.

use ndarray::Array2;

use crate::error::{FrmdError, Result};

/// Trapezoid sub-intervals per grid cell used when accumulating the
/// variation-of-parameters integrals.
const QUAD_SUBSTEPS: usize = 8;

/// Slack on range checks so that times computed as `k * dt` still land inside
/// the grid span.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MpConfig {
    pub dof: usize,
    /// Radial basis functions per DoF.
    pub n_basis: usize,
    /// Spring constant. Damping is tied to it (stiffness `alpha / 4`).
    pub alpha: f64,
    /// Duration of the primitive in seconds.
    pub tau_s: f64,
    /// Phase decay rate.
    pub alpha_x: f64,
    /// Multiplier on the basis forcing, so weights of order one produce
    /// accelerations comparable to the goal attractor's.
    pub weight_scale: f64,
    pub grid_points: usize,
}

impl Default for MpConfig {
    fn default() -> Self {
        MpConfig {
            dof: 2,
            n_basis: 8,
            alpha: 25.0,
            tau_s: 4.0,
            alpha_x: 3.0,
            weight_scale: 1.0,
            grid_points: 200,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dof == 0 {
            return Err(FrmdError::Config("mp.dof must be positive".into()));
        }
        if self.n_basis == 0 {
            return Err(FrmdError::Config("mp.n_basis must be positive".into()));
        }
        for (name, v) in [
            ("mp.alpha", self.alpha),
            ("mp.tau_s", self.tau_s),
            ("mp.alpha_x", self.alpha_x),
            ("mp.weight_scale", self.weight_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FrmdError::Config(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if self.grid_points < 2 {
            return Err(FrmdError::Config("mp.grid_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Decay rate of the repeated root, `alpha / (2 tau)`.
    pub fn lambda(&self) -> f64 {
        self.alpha / (2.0 * self.tau_s)
    }

    /// Stiffness `alpha * beta` with `beta = alpha / 4`.
    pub fn stiffness(&self) -> f64 {
        self.alpha * self.alpha / 4.0
    }

    /// Weights per DoF: one per basis function plus the goal.
    pub fn weights_per_dof(&self) -> usize {
        self.n_basis + 1
    }

    pub fn n_weights(&self) -> usize {
        self.dof * self.weights_per_dof()
    }

    pub fn phase(&self, t: f64) -> f64 {
        (-self.alpha_x * t / self.tau_s).exp()
    }

    /// Normalized Gaussian bumps evaluated at phase `x`, premultiplied by `x`
    /// (so the forcing vanishes as the phase decays) and by `weight_scale`.
    pub fn forcing_basis(&self, x: f64) -> Vec<f64> {
        let nb = self.n_basis;
        let x_end = self.phase(self.tau_s);
        let mut out = vec![0.0; nb];
        if nb == 1 {
            out[0] = x * self.weight_scale;
            return out;
        }
        let spacing = (1.0 - x_end) / (nb - 1) as f64;
        let width = 0.5 * spacing;
        let mut total = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            let c = x_end + spacing * i as f64;
            let z = (x - c) / width;
            *o = (-0.5 * z * z).exp();
            total += *o;
        }
        for o in &mut out {
            *o *= x * self.weight_scale / total;
        }
        out
    }
}

/// Complementary functions `(y1, y2, dy1, dy2)` at time `t`.
pub fn complementary(lambda: f64, t: f64) -> [f64; 4] {
    let e = (-lambda * t).exp();
    [e, t * e, -lambda * e, (1.0 - lambda * t) * e]
}

/// Precomputed ProDMP tables on a uniform grid over `[0, tau_s]`.
#[derive(Debug, Clone)]
pub struct BasisTables {
    config: MpConfig,
    pub grid: Vec<f64>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub dy1: Vec<f64>,
    pub dy2: Vec<f64>,
    /// `grid_points x (n_basis + 1)`, last column is the goal term.
    pub phi: Array2<f64>,
    pub dphi: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpWeights {
    /// `dof x (n_basis + 1)`.
    pub w: Array2<f64>,
}

impl MpWeights {
    pub fn zeros(config: &MpConfig) -> Self {
        MpWeights {
            w: Array2::zeros((config.dof, config.weights_per_dof())),
        }
    }

    /// Builds weights from a row-major flat vector (`dof` rows).
    pub fn from_flat(config: &MpConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != config.n_weights() {
            return Err(FrmdError::Layout(format!(
                "expected {} weights, got {}",
                config.n_weights(),
                flat.len()
            )));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(FrmdError::Numerical(format!("weight {i} is not finite")));
        }
        let w = Array2::from_shape_vec((config.dof, config.weights_per_dof()), flat.to_vec())
            .expect("shape checked above");
        Ok(MpWeights { w })
    }

    pub fn flat(&self) -> Vec<f64> {
        self.w.iter().copied().collect()
    }

    fn check(&self, config: &MpConfig) -> Result<()> {
        if self.w.dim() != (config.dof, config.weights_per_dof()) {
            return Err(FrmdError::Layout(format!(
                "weights have shape {:?}, expected ({}, {})",
                self.w.dim(),
                config.dof,
                config.weights_per_dof()
            )));
        }
        if self.w.iter().any(|v| !v.is_finite()) {
            return Err(FrmdError::Numerical("weights contain non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryState {
    pub t_b: f64,
    pub y0: Vec<f64>,
    pub dy0: Vec<f64>,
}

impl BoundaryState {
    pub fn at_rest(y0: Vec<f64>) -> Self {
        let dof = y0.len();
        BoundaryState {
            t_b: 0.0,
            y0,
            dy0: vec![0.0; dof],
        }
    }

    fn check(&self, config: &MpConfig) -> Result<()> {
        if self.y0.len() != config.dof || self.dy0.len() != config.dof {
            return Err(FrmdError::Layout(format!(
                "boundary state has {} / {} entries, expected {}",
                self.y0.len(),
                self.dy0.len(),
                config.dof
            )));
        }
        if !(self.t_b >= 0.0 && self.t_b < config.tau_s) {
            return Err(FrmdError::Range(format!(
                "boundary time {} outside [0, {})",
                self.t_b, config.tau_s
            )));
        }
        if self.y0.iter().chain(&self.dy0).any(|v| !v.is_finite()) {
            return Err(FrmdError::Numerical("boundary state is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `n x dof`.
    pub positions: Array2<f64>,
    pub velocities: Option<Array2<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Row-major flattening of the positions (`i * dof + d`).
    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions.iter().copied().collect()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.positions
            .rows()
            .into_iter()
            .map(|r| [r[0], if r.len() > 1 { r[1] } else { 0.0 }])
            .collect()
    }
}

/// Action times `dt, 2 dt, .., n dt` of a plan starting at `t = 0`.
pub fn action_times(n: usize, dt: f64) -> Vec<f64> {
    (1..=n).map(|i| i as f64 * dt).collect()
}

impl BasisTables {
    pub fn config(&self) -> &MpConfig {
        &self.config
    }

    pub fn lambda(&self) -> f64 {
        self.config.lambda()
    }

    fn spacing(&self) -> f64 {
        self.config.tau_s / (self.grid.len() - 1) as f64
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_SLACK && t <= self.config.tau_s + TIME_SLACK) {
            return Err(FrmdError::Range(format!(
                "time {t} outside basis grid [0, {}]",
                self.config.tau_s
            )));
        }
        Ok(())
    }

    /// Linear interpolation of a table row at time `t`.
    fn interp(&self, table: &Array2<f64>, t: f64) -> Vec<f64> {
        let last = self.grid.len() - 1;
        let u = (t / self.spacing()).clamp(0.0, last as f64);
        let k = (u.floor() as usize).min(last - 1);
        let frac = u - k as f64;
        let a = table.row(k);
        let b = table.row(k + 1);
        a.iter()
            .zip(b.iter())
            .map(|(x0, x1)| x0 + frac * (x1 - x0))
            .collect()
    }

    pub fn phi_at(&self, t: f64) -> Vec<f64> {
        self.interp(&self.phi, t)
    }

    pub fn dphi_at(&self, t: f64) -> Vec<f64> {
        self.interp(&self.dphi, t)
    }
}

/// Precomputes the complementary functions and the position/velocity basis.
pub fn build_basis(config: &MpConfig) -> Result<BasisTables> {
    config.validate()?;
    let g = config.grid_points;
    let nb = config.n_basis;
    let cols = nb + 1;
    let tau = config.tau_s;
    let lambda = config.lambda();
    let h = tau / (g - 1) as f64;
    let goal_forcing = config.stiffness();
    let inv_tau2 = 1.0 / (tau * tau);

    let grid: Vec<f64> = (0..g).map(|k| k as f64 * h).collect();
    let mut y1 = Vec::with_capacity(g);
    let mut y2 = Vec::with_capacity(g);
    let mut dy1 = Vec::with_capacity(g);
    let mut dy2 = Vec::with_capacity(g);
    for &t in &grid {
        let [a, b, c, d] = complementary(lambda, t);
        y1.push(a);
        y2.push(b);
        dy1.push(c);
        dy2.push(d);
    }

    // Integrands of p1 (s e^{λs} F(s)) and p2 (e^{λs} F(s)) for every column,
    // where F is the forcing divided by tau².
    let integrands = |s: f64| -> (Vec<f64>, Vec<f64>) {
        let mut forcing = config.forcing_basis(config.phase(s));
        forcing.push(goal_forcing);
        let e = (lambda * s).exp() * inv_tau2;
        let i2: Vec<f64> = forcing.iter().map(|f| e * f).collect();
        let i1: Vec<f64> = i2.iter().map(|v| s * v).collect();
        (i1, i2)
    };

    let mut p1 = vec![0.0; cols];
    let mut p2 = vec![0.0; cols];
    let mut phi = Array2::zeros((g, cols));
    let mut dphi = Array2::zeros((g, cols));
    let sub = h / QUAD_SUBSTEPS as f64;
    let (mut prev1, mut prev2) = integrands(0.0);
    for k in 0..g {
        if k > 0 {
            let t0 = grid[k - 1];
            for j in 1..=QUAD_SUBSTEPS {
                let s = if j == QUAD_SUBSTEPS { grid[k] } else { t0 + j as f64 * sub };
                let (cur1, cur2) = integrands(s);
                for c in 0..cols {
                    p1[c] += 0.5 * sub * (prev1[c] + cur1[c]);
                    p2[c] += 0.5 * sub * (prev2[c] + cur2[c]);
                }
                prev1 = cur1;
                prev2 = cur2;
            }
        }
        for c in 0..cols {
            let pos = y2[k] * p2[c] - y1[k] * p1[c];
            let vel = dy2[k] * p2[c] - dy1[k] * p1[c];
            if !(pos.is_finite() && vel.is_finite()) {
                let name = if c == nb {
                    "goal".to_string()
                } else {
                    format!("basis {c}")
                };
                return Err(FrmdError::Numerical(format!(
                    "basis construction produced a non-finite value in column {c} ({name}) at t = {}",
                    grid[k]
                )));
            }
            phi[[k, c]] = pos;
            dphi[[k, c]] = vel;
        }
    }

    Ok(BasisTables {
        config: config.clone(),
        grid,
        y1,
        y2,
        dy1,
        dy2,
        phi,
        dphi,
    })
}

/// Boundary matrix `[[y1, y2], [dy1, dy2]]` at `t_b` and its determinant.
fn boundary_matrix(lambda: f64, t_b: f64) -> Result<([f64; 4], f64)> {
    let m = complementary(lambda, t_b);
    let det = m[0] * m[3] - m[1] * m[2];
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(FrmdError::Numerical(format!(
            "singular boundary system at t_b = {t_b} (det = {det})"
        )));
    }
    Ok((m, det))
}

/// Solves for the complementary-function coefficients `(c1, c2)` of each DoF.
pub fn solve_boundary(
    tables: &BasisTables,
    bc: &BoundaryState,
    w: &MpWeights,
) -> Result<Vec<(f64, f64)>> {
    let config = tables.config();
    bc.check(config)?;
    w.check(config)?;
    tables.check_time(bc.t_b)?;
    let ([y1, y2, dy1, dy2], det) = boundary_matrix(tables.lambda(), bc.t_b)?;
    let phi_b = tables.phi_at(bc.t_b);
    let dphi_b = tables.dphi_at(bc.t_b);
    let coeffs = (0..config.dof)
        .map(|d| {
            let row = w.w.row(d);
            let pw: f64 = phi_b.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let dpw: f64 = dphi_b.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let r1 = bc.y0[d] - pw;
            let r2 = bc.dy0[d] - dpw;
            ((r1 * dy2 - y2 * r2) / det, (y1 * r2 - dy1 * r1) / det)
        })
        .collect();
    Ok(coeffs)
}

fn check_times(tables: &BasisTables, bc: &BoundaryState, times: &[f64]) -> Result<()> {
    for (i, &t) in times.iter().enumerate() {
        tables.check_time(t)?;
        if t < bc.t_b - TIME_SLACK {
            return Err(FrmdError::Range(format!(
                "time {t} precedes the boundary time {}",
                bc.t_b
            )));
        }
        if i > 0 && t <= times[i - 1] {
            return Err(FrmdError::Range("decode times must be strictly increasing".into()));
        }
    }
    Ok(())
}

/// Decodes weights into positions and velocities at `times`.
pub fn decode(
    tables: &BasisTables,
    bc: &BoundaryState,
    w: &MpWeights,
    times: &[f64],
) -> Result<Trajectory> {
    let coeffs = solve_boundary(tables, bc, w)?;
    check_times(tables, bc, times)?;
    let dof = tables.config().dof;
    let lambda = tables.lambda();
    let mut positions = Array2::zeros((times.len(), dof));
    let mut velocities = Array2::zeros((times.len(), dof));
    for (i, &t) in times.iter().enumerate() {
        let [y1, y2, dy1, dy2] = complementary(lambda, t);
        let phi = tables.phi_at(t);
        let dphi = tables.dphi_at(t);
        for d in 0..dof {
            let row = w.w.row(d);
            let pw: f64 = phi.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let dpw: f64 = dphi.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            let (c1, c2) = coeffs[d];
            positions[[i, d]] = c1 * y1 + c2 * y2 + pw;
            velocities[[i, d]] = c1 * dy1 + c2 * dy2 + dpw;
        }
    }
    Ok(Trajectory {
        times: times.to_vec(),
        positions,
        velocities: Some(velocities),
    })
}

/// Decode written as `positions = H vec(w) + b`.
///
/// For a fixed boundary time and time vector, `H` does not depend on the
/// boundary position/velocity; the offset is `a1 * y0 + a2 * dy0` per row.
/// Row index is `i * dof + d`, column index is `d * (n_basis + 1) + j`.
#[derive(Debug, Clone)]
pub struct DecodeOperator {
    dof: usize,
    n_times: usize,
    /// `(n_times * dof) x (dof * (n_basis + 1))`, block diagonal over DoFs.
    pub h: Array2<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    t_b: f64,
}

impl DecodeOperator {
    pub fn new(tables: &BasisTables, t_b: f64, times: &[f64]) -> Result<Self> {
        let config = tables.config();
        tables.check_time(t_b)?;
        let probe = BoundaryState {
            t_b,
            y0: vec![0.0; config.dof],
            dy0: vec![0.0; config.dof],
        };
        probe.check(config)?;
        check_times(tables, &probe, times)?;
        let dof = config.dof;
        let cols = config.weights_per_dof();
        let lambda = tables.lambda();
        let ([y1b, y2b, dy1b, dy2b], det) = boundary_matrix(lambda, t_b)?;
        let phi_b = tables.phi_at(t_b);
        let dphi_b = tables.dphi_at(t_b);
        let mut h = Array2::zeros((times.len() * dof, dof * cols));
        let mut a1 = Vec::with_capacity(times.len());
        let mut a2 = Vec::with_capacity(times.len());
        for (i, &t) in times.iter().enumerate() {
            let [y1, y2, _, _] = complementary(lambda, t);
            let c_r1 = (y1 * dy2b - y2 * dy1b) / det;
            let c_r2 = (y2 * y1b - y1 * y2b) / det;
            let phi = tables.phi_at(t);
            for d in 0..dof {
                for j in 0..cols {
                    h[[i * dof + d, d * cols + j]] = phi[j] - c_r1 * phi_b[j] - c_r2 * dphi_b[j];
                }
            }
            a1.push(c_r1);
            a2.push(c_r2);
        }
        Ok(DecodeOperator {
            dof,
            n_times: times.len(),
            h,
            a1,
            a2,
            t_b,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.n_times * self.dof
    }

    pub fn n_inputs(&self) -> usize {
        self.h.ncols()
    }

    pub fn t_b(&self) -> f64 {
        self.t_b
    }

    /// Offset vector `b` for a boundary state.
    pub fn offset(&self, bc: &BoundaryState) -> Result<Vec<f64>> {
        if bc.y0.len() != self.dof || bc.dy0.len() != self.dof {
            return Err(FrmdError::Layout("boundary state dimension mismatch".into()));
        }
        if (bc.t_b - self.t_b).abs() > TIME_SLACK {
            return Err(FrmdError::Argument(format!(
                "operator built for t_b = {}, boundary state has t_b = {}",
                self.t_b, bc.t_b
            )));
        }
        let mut b = Vec::with_capacity(self.n_outputs());
        for i in 0..self.n_times {
            for d in 0..self.dof {
                b.push(self.a1[i] * bc.y0[d] + self.a2[i] * bc.dy0[d]);
            }
        }
        Ok(b)
    }

    /// `H w + b` for a flat weight vector.
    pub fn apply(&self, w_flat: &[f64], offset: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w_flat.len(), self.n_inputs());
        self.h
            .rows()
            .into_iter()
            .zip(offset)
            .map(|(row, b)| row.iter().zip(w_flat).map(|(h, w)| h * w).sum::<f64>() + b)
            .collect()
    }

    /// `Hᵀ g`: pulls a gradient on the stacked positions back to the weights.
    pub fn pullback(&self, grad_positions: &[f64]) -> Vec<f64> {
        debug_assert_eq!(grad_positions.len(), self.n_outputs());
        let mut out = vec![0.0; self.n_inputs()];
        for (row, g) in self.h.rows().into_iter().zip(grad_positions) {
            if *g == 0.0 {
                continue;
            }
            for (o, h) in out.iter_mut().zip(row.iter()) {
                *o += h * g;
            }
        }
        out
    }
}

/// Returns `(H, b)` with `decode(w).positions == H vec(w) + b`.
pub fn decode_affine_map(
    tables: &BasisTables,
    bc: &BoundaryState,
    times: &[f64],
) -> Result<(Array2<f64>, Vec<f64>)> {
    bc.check(tables.config())?;
    let op = DecodeOperator::new(tables, bc.t_b, times)?;
    let b = op.offset(bc)?;
    Ok((op.h, b))
}

/// RK4 integration of the forced system; the costly path the basis tables
/// avoid. Used as a reference for `decode`.
pub fn reference_integrate(
    config: &MpConfig,
    bc: &BoundaryState,
    w: &MpWeights,
    times: &[f64],
) -> Result<Trajectory> {
    config.validate()?;
    bc.check(config)?;
    w.check(config)?;
    let dof = config.dof;
    let tau = config.tau_s;
    let alpha = config.alpha;
    let beta = alpha / 4.0;
    let max_step = tau / 2000.0;
    let nb = config.n_basis;

    let accel = |t: f64, y: &[f64], v: &[f64]| -> Vec<f64> {
        let basis = config.forcing_basis(config.phase(t));
        (0..dof)
            .map(|d| {
                let row = w.w.row(d);
                let goal = row[nb];
                let f: f64 = basis.iter().zip(row.iter()).map(|(b, w)| b * w).sum();
                (alpha * (beta * (goal - y[d]) - tau * v[d]) + f) / (tau * tau)
            })
            .collect()
    };

    let mut t = bc.t_b;
    let mut y = bc.y0.clone();
    let mut v = bc.dy0.clone();
    let mut positions = Array2::zeros((times.len(), dof));
    let mut velocities = Array2::zeros((times.len(), dof));
    for (i, &target) in times.iter().enumerate() {
        if target < t - TIME_SLACK {
            return Err(FrmdError::Range(format!(
                "time {target} precedes the integration state at {t}"
            )));
        }
        let span = (target - t).max(0.0);
        let steps = (span / max_step).ceil() as usize;
        if steps > 0 {
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1v = accel(t, &y, &v);
                let k1y = v.clone();
                let y2: Vec<f64> = (0..dof).map(|d| y[d] + 0.5 * h * k1y[d]).collect();
                let v2: Vec<f64> = (0..dof).map(|d| v[d] + 0.5 * h * k1v[d]).collect();
                let k2v = accel(t + 0.5 * h, &y2, &v2);
                let k2y = v2;
                let y3: Vec<f64> = (0..dof).map(|d| y[d] + 0.5 * h * k2y[d]).collect();
                let v3: Vec<f64> = (0..dof).map(|d| v[d] + 0.5 * h * k2v[d]).collect();
                let k3v = accel(t + 0.5 * h, &y3, &v3);
                let k3y = v3;
                let y4: Vec<f64> = (0..dof).map(|d| y[d] + h * k3y[d]).collect();
                let v4: Vec<f64> = (0..dof).map(|d| v[d] + h * k3v[d]).collect();
                let k4v = accel(t + h, &y4, &v4);
                let k4y = v4;
                for d in 0..dof {
                    y[d] += h / 6.0 * (k1y[d] + 2.0 * k2y[d] + 2.0 * k3y[d] + k4y[d]);
                    v[d] += h / 6.0 * (k1v[d] + 2.0 * k2v[d] + 2.0 * k3v[d] + k4v[d]);
                }
                t += h;
            }
        }
        t = target;
        for d in 0..dof {
            positions[[i, d]] = y[d];
            velocities[[i, d]] = v[d];
        }
    }
    Ok(Trajectory {
        times: times.to_vec(),
        positions,
        velocities: Some(velocities),
    })
}
