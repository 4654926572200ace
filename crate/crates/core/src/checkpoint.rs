//! Binary checkpoint format.
//!
//! Layout: `FRMD`, format version (u16), role flag (u8), a header holding the
//! layout, primitive, schedule, normalization and (for students) consistency
//! settings, the parameter count (u32), the parameters as little-endian f32,
//! and a CRC-32 of every byte after the magic. Header reals are stored as
//! f64, so only the parameters lose precision; [`round_params_to_f32`] makes
//! an in-memory net match what a save/load cycle produces.

use std::path::Path;

use crate::consistency::{ConsistencyConfig, LambdaWeight, Metric, Which};
use crate::diffusion::{NoiseSchedule, TrajectorySpace};
use crate::envs::Normalizer;
use crate::error::{FrmdError, Result};
use crate::mp::MpConfig;
use crate::nn::{Activation, AdamWConfig, DenoiserNet, HeadMode, Layout};
use crate::policy::{ModelBundle, Role};

pub const MAGIC: &[u8; 4] = b"FRMD";
pub const VERSION: u16 = 1;

/// Rounds every parameter to the nearest f32.
pub fn round_params_to_f32(net: &mut DenoiserNet) {
    let rounded: Vec<f64> = net.params().iter().map(|&v| v as f32 as f64).collect();
    net.set_params(&rounded).expect("same length");
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint fields fit in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            FrmdError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FrmdError::Checkpoint("non-UTF-8 tag".into()))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(FrmdError::Checkpoint(format!("bad boolean byte {other}"))),
        }
    }
}

fn hidden_sizes(net: &DenoiserNet) -> Vec<usize> {
    net.layers[..net.layers.len() - 1].iter().map(|l| l.weight.ncols()).collect()
}

fn write_optim(w: &mut Writer, o: &AdamWConfig) {
    for v in [o.lr, o.weight_decay, o.beta1, o.beta2, o.eps] {
        w.f64(v);
    }
    w.u32(o.warmup_steps);
    w.u32(o.total_steps);
}

fn read_optim(r: &mut Reader) -> Result<AdamWConfig> {
    Ok(AdamWConfig {
        lr: r.f64()?,
        weight_decay: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        warmup_steps: r.u32()?,
        total_steps: r.u32()?,
    })
}

/// Serializes a bundle. Parameters are written as f32.
pub fn to_bytes(b: &ModelBundle) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u8(b.role.code());

    let l = &b.net.layout;
    for v in [l.traj_len, l.obs_len, l.embed_dim, l.output_len] {
        w.u32(v);
    }
    w.str(l.head.as_str());
    w.str(b.net.activation.as_str());
    let hidden = hidden_sizes(&b.net);
    w.u32(hidden.len());
    hidden.iter().for_each(|&h| w.u32(h));

    w.u32(b.space.horizon);
    w.f64(b.space.dt);
    w.f64(b.space.rbf_gain);
    let mp = &b.space.mp;
    w.u32(mp.dof);
    w.u32(mp.n_basis);
    for v in [mp.alpha, mp.tau_s, mp.alpha_x, mp.weight_scale] {
        w.f64(v);
    }
    w.u32(mp.grid_points);

    let s = &b.schedule;
    w.f64(s.epsilon);
    w.f64(s.t_max);
    w.f64(s.rho);
    w.f64s(&s.levels);

    w.f64s(&b.normalizer.center);
    w.f64s(&b.normalizer.half_range);

    match &b.consistency {
        None => w.u8(0),
        Some(c) => {
            w.u8(1);
            w.u32(c.k);
            for v in [c.mu, c.gamma_d, c.beta] {
                w.f64(v);
            }
            w.str(c.metric.as_str());
            w.str(c.lambda_weight.as_str());
            w.u32(c.steps);
            w.u32(c.batch_size);
            write_optim(&mut w, &c.optim);
            w.u32(c.log_every);
            w.u8(c.heun as u8);
            w.str(c.deploy.as_str());
        }
    }

    let params = b.net.params();
    w.u32(params.len());
    for p in params {
        w.0.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&w.0[MAGIC.len()..]);
    w.0.extend_from_slice(&crc.to_le_bytes());
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..4] != MAGIC {
        return Err(FrmdError::Checkpoint("missing FRMD magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(&body[MAGIC.len()..]);
    if stored != actual {
        return Err(FrmdError::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u16()?;
    if version != VERSION {
        return Err(FrmdError::Checkpoint(format!("unsupported format version {version}")));
    }
    let role = Role::from_code(r.u8()?)?;

    let traj_len = r.u32()?;
    let obs_len = r.u32()?;
    let embed_dim = r.u32()?;
    let output_len = r.u32()?;
    let head = HeadMode::parse(&r.str()?)?;
    let activation = Activation::parse(&r.str()?)?;
    let n_hidden = r.u32()?;
    let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let layout = Layout { traj_len, obs_len, embed_dim, output_len, head };

    let horizon = r.u32()?;
    let dt = r.f64()?;
    let rbf_gain = r.f64()?;
    let mp = MpConfig {
        dof: r.u32()?,
        n_basis: r.u32()?,
        alpha: r.f64()?,
        tau_s: r.f64()?,
        alpha_x: r.f64()?,
        weight_scale: r.f64()?,
        grid_points: r.u32()?,
    };
    let space = TrajectorySpace::new(mp, horizon, dt, rbf_gain)?;

    let schedule = NoiseSchedule {
        epsilon: r.f64()?,
        t_max: r.f64()?,
        rho: r.f64()?,
        levels: r.f64s()?,
    };
    if schedule.levels.len() < 2 || schedule.levels.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(FrmdError::Checkpoint("noise levels are not strictly decreasing".into()));
    }
    let normalizer = Normalizer {
        center: r.f64s()?,
        half_range: r.f64s()?,
    };

    let consistency = if r.flag()? {
        Some(ConsistencyConfig {
            k: r.u32()?,
            mu: r.f64()?,
            gamma_d: r.f64()?,
            beta: r.f64()?,
            metric: Metric::parse(&r.str()?)?,
            lambda_weight: LambdaWeight::parse(&r.str()?)?,
            steps: r.u32()?,
            batch_size: r.u32()?,
            optim: read_optim(&mut r)?,
            log_every: r.u32()?,
            heun: r.flag()?,
            deploy: Which::parse(&r.str()?)?,
        })
    } else {
        None
    };

    let mut net = DenoiserNet::init(layout, &hidden, activation, 0)?;
    let count = r.u32()?;
    if count != net.n_params() {
        return Err(FrmdError::Checkpoint(format!(
            "payload has {count} parameters, the layout needs {}",
            net.n_params()
        )));
    }
    let raw = r.take(4 * count)?;
    let params: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if r.pos != body.len() {
        return Err(FrmdError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    net.set_params(&params)?;
    let bundle = ModelBundle { role, net, space, schedule, normalizer, consistency };
    bundle.validate()?;
    if let Some(c) = &bundle.consistency {
        c.validate(&bundle.schedule)?;
    }
    Ok(bundle)
}

pub fn save(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, to_bytes(bundle)).map_err(|e| FrmdError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(|e| FrmdError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        FrmdError::Checkpoint(msg) => FrmdError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TIME_EMBED_DIM;

    fn bundle(role: Role) -> ModelBundle {
        let space = TrajectorySpace::new(MpConfig::default(), 12, 0.1, 50.0).unwrap();
        let layout = Layout {
            traj_len: space.traj_len(),
            obs_len: 21,
            embed_dim: TIME_EMBED_DIM,
            output_len: space.output_len(HeadMode::Mp),
            head: HeadMode::Mp,
        };
        let mut net = DenoiserNet::init(layout, &[16, 8], Activation::Gelu, 3).unwrap();
        round_params_to_f32(&mut net);
        ModelBundle {
            role,
            net,
            space,
            schedule: NoiseSchedule::default(),
            normalizer: Normalizer { center: vec![0.1, -0.2], half_range: vec![0.9, 1.3] },
            consistency: role.is_student().then(ConsistencyConfig::default),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for role in [Role::Teacher, Role::StudentTarget] {
            let b = bundle(role);
            let bytes = to_bytes(&b);
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(to_bytes(&back), bytes);
            let same_bits = b.net.params().iter().zip(back.net.params()).all(|(a, c)| a.to_bits() == c.to_bits());
            assert!(same_bits);
            assert_eq!(back.schedule, b.schedule);
            assert_eq!(back.normalizer, b.normalizer);
            assert_eq!(back.consistency, b.consistency);
            assert_eq!(back.space.mp, b.space.mp);
            assert_eq!(back.role, role);
        }
    }

    #[test]
    fn any_flipped_byte_is_rejected() {
        let bytes = to_bytes(&bundle(Role::Teacher));
        for i in (4..bytes.len()).step_by(97) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(matches!(from_bytes(&bad), Err(FrmdError::Checkpoint(_))), "byte {i}");
        }
        assert!(from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(from_bytes(b"NOPE").is_err());
    }
}
