//! Trained networks packaged as rollout policies.

use rand_chacha::ChaCha8Rng;

use crate::consistency::{sample_student, ConsistencyConfig};
use crate::diffusion::{sample_teacher, NetDenoiser, NoiseSchedule, TrajectorySpace};
use crate::envs::{Normalizer, Plan, Policy, PolicyInput};
use crate::error::{FrmdError, Result};
use crate::mp::{decode, MpWeights};
use crate::nn::{DenoiserNet, HeadMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Teacher,
    StudentOnline,
    StudentTarget,
    RawBaseline,
}

impl Role {
    pub fn code(&self) -> u8 {
        match self {
            Role::Teacher => 0,
            Role::StudentOnline => 1,
            Role::StudentTarget => 2,
            Role::RawBaseline => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Role::Teacher),
            1 => Ok(Role::StudentOnline),
            2 => Ok(Role::StudentTarget),
            3 => Ok(Role::RawBaseline),
            other => Err(FrmdError::Checkpoint(format!("unknown role flag {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::StudentOnline => "student-online",
            Role::StudentTarget => "student-target",
            Role::RawBaseline => "raw-baseline",
        }
    }

    pub fn is_student(&self) -> bool {
        matches!(self, Role::StudentOnline | Role::StudentTarget)
    }
}

/// A network with everything needed to turn it into action plans.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub role: Role,
    pub net: DenoiserNet,
    pub space: TrajectorySpace,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    /// Present for students.
    pub consistency: Option<ConsistencyConfig>,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        let layout = &self.net.layout;
        if layout.traj_len != self.space.traj_len() || layout.output_len != self.space.output_len(layout.head) {
            return Err(FrmdError::Validation(format!(
                "network layout {layout:?} does not match the trajectory space ({} x {})",
                self.space.horizon,
                self.space.dof()
            )));
        }
        if self.normalizer.dim() != self.space.dof() {
            return Err(FrmdError::Validation(format!(
                "normalization has {} dims, the model {}",
                self.normalizer.dim(),
                self.space.dof()
            )));
        }
        if self.role.is_student() != self.consistency.is_some() {
            return Err(FrmdError::Validation(format!(
                "role {} and consistency settings disagree",
                self.role.as_str()
            )));
        }
        Ok(())
    }
}

/// How plans are drawn from a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    /// PF-ODE with the given number of network evaluations.
    Ode { steps: usize, heun: bool },
    /// A single consistency evaluation at `T_max`.
    OneStep,
}

pub struct ModelPolicy {
    pub bundle: ModelBundle,
    pub sampler: Sampler,
    name: String,
}

impl ModelPolicy {
    pub fn new(bundle: ModelBundle, sampler: Sampler) -> Result<Self> {
        bundle.validate()?;
        if sampler == Sampler::OneStep && bundle.consistency.is_none() {
            return Err(FrmdError::Validation("one-step sampling needs a student checkpoint".into()));
        }
        let name = match sampler {
            Sampler::Ode { steps, .. } => format!("{}[{steps}]", bundle.role.as_str()),
            Sampler::OneStep => format!("{}[1]", bundle.role.as_str()),
        };
        Ok(ModelPolicy { bundle, sampler, name })
    }

    /// Normalized plan for normalized inputs.
    pub fn sample_normalized(
        &self,
        obs: &[f64],
        bc: &crate::mp::BoundaryState,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let b = &self.bundle;
        let model = NetDenoiser {
            net: &b.net,
            space: &b.space,
        };
        let mp = b.net.layout.head == HeadMode::Mp;
        match self.sampler {
            Sampler::Ode { steps, heun } => sample_teacher(&model, &b.schedule, obs, bc, steps, heun, rng),
            Sampler::OneStep => {
                let cfg = b.consistency.as_ref().expect("checked at construction");
                sample_student(&model, cfg, &b.schedule, obs, bc, mp, rng)
            }
        }
    }
}

impl Policy for ModelPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn sample(&self, input: &PolicyInput<'_>, rng: &mut ChaCha8Rng) -> Result<Plan> {
        let b = &self.bundle;
        if input.obs.len() != b.net.layout.obs_len {
            return Err(FrmdError::Validation(format!(
                "observation window has {} entries, the model expects {}",
                input.obs.len(),
                b.net.layout.obs_len
            )));
        }
        let bc = b.normalizer.normalize_bc(input.bc);
        let traj = self.sample_normalized(input.obs, &bc, rng)?;
        let world = b.normalizer.denormalize(&traj);
        let dof = b.space.dof();
        let targets = world.chunks(dof).map(|c| [c[0], c[1]]).collect();
        let initial = if b.net.layout.head == HeadMode::Mp {
            let (w, _) = b.space.project(&traj, &bc)?;
            let w = MpWeights::from_flat(&b.space.mp, &w)?;
            let start = decode(b.space.tables(), &bc, &w, &[bc.t_b])?;
            let p = b.normalizer.denormalize(&start.flat_positions());
            Some([p[0], p[1]])
        } else {
            None
        };
        Ok(Plan { targets, initial })
    }
}
