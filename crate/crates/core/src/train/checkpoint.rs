use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Encoder, LatentOptimizer, TrainConfig, TrainState};
use crate::bench::ScalerSpec;
use crate::error::{Error, Result};
use crate::model::BgmIvModel;
use crate::ndcompute::{AdamConfig, AdamState};
use crate::rng::{stream, stream_rng};

const MAGIC: &[u8; 8] = b"BGMIVCKP";
const VERSION: u32 = 1;

/// A training state with the scalers and settings it was produced under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub scalers: ScalerSpec,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> std::result::Result<ChaCha8Rng, String> {
        if self.seed.len() != 64 {
            return Err("rng seed must be 64 hex digits".into());
        }
        let mut seed = [0u8; 32];
        for (k, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * k..2 * k + 2], 16).map_err(|e| e.to_string())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse::<u128>().map_err(|e| e.to_string())?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    arch: Architecture,
    config: TrainConfig,
    scalers: ScalerSpec,
    v_dim: usize,
    n: usize,
    epoch: usize,
    adam: AdamConfig,
    adam_steps: [u64; 3],
    latent_steps: Vec<u64>,
    shuffle_rng: RngState,
    mc_rng: RngState,
    arrays: Vec<ArrayEntry>,
}

fn arrays(state: &TrainState) -> Vec<(&'static str, Vec<f64>)> {
    let s = state;
    vec![
        ("covariate", s.model.covariate.flat_params()),
        ("treatment", s.model.treatment.params.values.clone()),
        ("outcome", s.model.outcome.params.values.clone()),
        ("encoder", s.encoder.flat_params()),
        ("adam_theta_m", s.adam_theta.first_moment.clone()),
        ("adam_theta_v", s.adam_theta.second_moment.clone()),
        ("adam_phi_m", s.adam_phi.first_moment.clone()),
        ("adam_phi_v", s.adam_phi.second_moment.clone()),
        ("adam_omega_m", s.adam_omega.first_moment.clone()),
        ("adam_omega_v", s.adam_omega.second_moment.clone()),
        ("latents", s.latents.clone()),
        ("latent_m", s.latent_opt.first_moment.clone()),
        ("latent_v", s.latent_opt.second_moment.clone()),
    ]
}

/// Encodes a checkpoint as `magic, version (u32 LE), manifest length (u64 LE),
/// JSON manifest, f64 LE arrays`.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let s = &ckpt.state;
    let data = arrays(s);
    let manifest = Manifest {
        arch: s.arch.clone(),
        config: ckpt.config.clone(),
        scalers: ckpt.scalers.clone(),
        v_dim: s.model.v_dim(),
        n: s.n(),
        epoch: s.epoch,
        adam: s.adam_theta.config,
        adam_steps: [s.adam_theta.step_count, s.adam_phi.step_count, s.adam_omega.step_count],
        latent_steps: s.latent_opt.step_counts.clone(),
        shuffle_rng: RngState::capture(&s.shuffle_rng),
        mc_rng: RngState::capture(&s.mc_rng),
        arrays: data
            .iter()
            .map(|(name, v)| ArrayEntry {
                name: (*name).into(),
                len: v.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let total: usize = data.iter().map(|(_, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(20 + json.len() + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in &data {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, len: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(len.checked_mul(8).ok_or("array length overflows")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint".into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|e| e.to_string())?;
    let m: Manifest = serde_json::from_slice(r.take(len)?).map_err(|e| e.to_string())?;

    let d = m.arch.partition.total();
    let mut rng = stream_rng(m.config.seed, stream::INIT);
    let mut model = BgmIvModel::new(&m.arch.model, m.arch.partition, m.v_dim, m.arch.treatment_kind, &mut rng)
        .map_err(|e| e.to_string())?;
    let mut encoder = Encoder::new(
        &m.arch.encoder,
        m.v_dim,
        d,
        m.arch.model.activation,
        m.arch.model.l2_coefficient,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    let expected = [
        ("covariate", model.covariate.parameter_count()),
        ("treatment", model.treatment.params.total_count()),
        ("outcome", model.outcome.params.total_count()),
        ("encoder", encoder.parameter_count()),
        ("adam_theta_m", model.covariate.parameter_count()),
        ("adam_theta_v", model.covariate.parameter_count()),
        ("adam_phi_m", model.treatment.params.total_count()),
        ("adam_phi_v", model.treatment.params.total_count()),
        ("adam_omega_m", model.outcome.params.total_count()),
        ("adam_omega_v", model.outcome.params.total_count()),
        ("latents", m.n * d),
        ("latent_m", m.n * d),
        ("latent_v", m.n * d),
    ];
    if m.arrays.len() != expected.len() || m.latent_steps.len() != m.n {
        return Err("array table does not match the architecture".into());
    }
    let mut values = Vec::with_capacity(expected.len());
    for (entry, (name, len)) in m.arrays.iter().zip(expected) {
        if entry.name != name || entry.len != len {
            return Err(format!("array {} has length {}, expected {name} of {len}", entry.name, entry.len));
        }
        values.push(r.f64s(len)?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut it = values.into_iter();
    let mut next = || it.next().expect("one array per entry");
    model.covariate.set_flat_params(&next()).map_err(|e| e.to_string())?;
    model.treatment.params.values = next();
    model.outcome.params.values = next();
    encoder.set_flat_params(&next()).map_err(|e| e.to_string())?;
    let adam = |step_count: u64, first_moment: Vec<f64>, second_moment: Vec<f64>| AdamState {
        config: m.adam,
        first_moment,
        second_moment,
        step_count,
    };
    let adam_theta = adam(m.adam_steps[0], next(), next());
    let adam_phi = adam(m.adam_steps[1], next(), next());
    let adam_omega = adam(m.adam_steps[2], next(), next());
    let latents = next();
    let latent_opt = LatentOptimizer {
        config: m.adam,
        dim: d,
        first_moment: next(),
        second_moment: next(),
        step_counts: m.latent_steps,
    };
    let state = TrainState {
        arch: m.arch,
        model,
        encoder,
        adam_theta,
        adam_phi,
        adam_omega,
        latents,
        latent_opt,
        epoch: m.epoch,
        shuffle_rng: m.shuffle_rng.restore()?,
        mc_rng: m.mc_rng.restore()?,
    };
    Ok(Checkpoint {
        state,
        scalers: m.scalers,
        config: m.config,
    })
}

pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    decode(bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, write_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
