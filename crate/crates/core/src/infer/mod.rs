//! Covariate-only MAP latent inference and structural prediction on the
//! original outcome scale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bench::{EvaluationGrid, ScalerSpec};
use crate::error::{Error, Result};
use crate::model::{BgmIvModel, LatentPartition, LatentState};
use crate::ndcompute::{adam_update, AdamConfig};
use crate::train::{Checkpoint, Encoder, TrainState};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Trained generators and encoder with the scalers of their training data.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: BgmIvModel,
    pub encoder: Option<Encoder>,
    pub partition: LatentPartition,
    pub scalers: ScalerSpec,
}

impl FittedModel {
    pub fn from_state(state: &TrainState, scalers: &ScalerSpec) -> Self {
        FittedModel {
            model: state.model.clone(),
            encoder: Some(state.encoder.clone()),
            partition: state.model.partition,
            scalers: scalers.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        Self::from_state(&ckpt.state, &ckpt.scalers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapInit {
    Encoder,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Falls back to zero when the model has no encoder.
    pub init: MapInit,
    /// Keep the objective value of every iterate.
    pub record_trajectory: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            steps: 1000,
            learning_rate: 1e-4,
            init: MapInit::Encoder,
            record_trajectory: false,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("MAP learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSolution {
    pub z: LatentState,
    /// Final value of `log p(z) + log p(v | z)`.
    pub objective: f64,
    /// Set when ascent hit a non-finite objective; `z` is then the best
    /// finite iterate seen.
    pub warning: bool,
    /// Objective of iterates `0..=steps` when recorded.
    pub trajectory: Vec<f64>,
}

/// Per-row `log N(z; 0, I) + log p(v | z)`; the latent gradient overwrites
/// `grad` when given.
fn objective(model: &BgmIvModel, z: &[f64], v: &[f64], batch: usize, mut grad: Option<&mut [f64]>) -> Result<Vec<f64>> {
    let d = model.latent_dim();
    if let Some(g) = grad.as_deref_mut() {
        for (gk, zk) in g.iter_mut().zip(z) {
            *gk = -zk;
        }
    }
    let mut out = if model.v_dim() == 0 {
        vec![0.0; batch]
    } else {
        model.covariate.log_density_batch(z, v, batch, &vec![1.0; batch], None, grad)?
    };
    for (o, row) in out.iter_mut().zip(z.chunks_exact(d)) {
        *o += -0.5 * row.iter().map(|x| x * x).sum::<f64>() - d as f64 * HALF_LN_2PI;
    }
    Ok(out)
}

/// `log p(z) + log p(v | z)` for one latent vector.
pub fn map_objective(model: &BgmIvModel, z: &LatentState, v: &[f64]) -> Result<f64> {
    Ok(objective(model, &z.z, v, 1, None)?[0])
}

/// MAP latents of each covariate row, each solved by its own Adam ascent.
/// Rows do not interact, so a batch returns what separate solves would.
pub fn map_latents(fitted: &FittedModel, v: &[f64], batch: usize, cfg: &MapConfig) -> Result<Vec<MapSolution>> {
    cfg.validate()?;
    let model = &fitted.model;
    let (d, p) = (model.latent_dim(), model.v_dim());
    if v.len() != batch * p {
        return Err(Error::dims("MAP covariates", batch * p, v.len()));
    }
    if batch == 0 {
        return Ok(Vec::new());
    }
    let mut z = match (&fitted.encoder, cfg.init) {
        (Some(enc), MapInit::Encoder) if p > 0 => enc.encode(v, batch)?,
        _ => vec![0.0; batch * d],
    };
    let adam = AdamConfig::default();
    let mut m = vec![0.0; batch * d];
    let mut s = vec![0.0; batch * d];
    let mut steps = vec![0u64; batch];
    let mut active = vec![true; batch];
    let mut best_z = z.clone();
    let mut best = vec![f64::NEG_INFINITY; batch];
    let mut last = vec![f64::NAN; batch];
    let mut warning = vec![false; batch];
    let mut traces = vec![Vec::new(); if cfg.record_trajectory { batch } else { 0 }];
    let mut grad = vec![0.0; batch * d];
    for iter in 0..=cfg.steps {
        let values = objective(model, &z, v, batch, Some(&mut grad))?;
        for i in 0..batch {
            if !active[i] {
                continue;
            }
            let r = i * d..(i + 1) * d;
            let value = values[i];
            let finite = value.is_finite() && grad[r.clone()].iter().all(|g| g.is_finite());
            if !finite {
                warning[i] = true;
                active[i] = false;
                z[r.clone()].copy_from_slice(&best_z[r]);
                continue;
            }
            if cfg.record_trajectory {
                traces[i].push(value);
            }
            last[i] = value;
            if value > best[i] {
                best[i] = value;
                best_z[r.clone()].copy_from_slice(&z[r.clone()]);
            }
            if iter < cfg.steps {
                let descent: Vec<f64> = grad[r.clone()].iter().map(|g| -g).collect();
                adam_update(
                    &adam,
                    &mut m[r.clone()],
                    &mut s[r.clone()],
                    &mut steps[i],
                    &mut z[r],
                    &descent,
                    cfg.learning_rate,
                )?;
            }
        }
    }
    (0..batch)
        .map(|i| {
            let r = i * d..(i + 1) * d;
            let (row, value) = if warning[i] {
                (best_z[r].to_vec(), best[i])
            } else {
                (z[r].to_vec(), last[i])
            };
            Ok(MapSolution {
                z: LatentState::new(fitted.partition, row)?,
                objective: value,
                warning: warning[i],
                trajectory: if cfg.record_trajectory { std::mem::take(&mut traces[i]) } else { Vec::new() },
            })
        })
        .collect()
}

/// MAP latent of one covariate vector on the model scale.
pub fn map_latent(fitted: &FittedModel, v: &[f64], cfg: &MapConfig) -> Result<MapSolution> {
    Ok(map_latents(fitted, v, 1, cfg)?.remove(0))
}

/// Outcome mean at intervention `x` (model scale) and latent `z`, on the
/// original outcome scale. Only `z0` and `z1` enter.
pub fn predict_at(fitted: &FittedModel, x: &[f64], z: &LatentState) -> Result<Vec<f64>> {
    let zo = fitted.model.outcome_latents(&z.z);
    let zo: Vec<f64> = x.iter().flat_map(|_| zo.iter().copied()).collect();
    let mean = fitted.model.outcome_mean(&zo, x)?;
    Ok(mean.into_iter().map(|m| fitted.scalers.y.invert(m)).collect())
}

/// Structural prediction at intervention `x` (model scale) for covariates
/// `v` (model scale).
pub fn structural_predict(fitted: &FittedModel, x: f64, v: &[f64], cfg: &MapConfig) -> Result<f64> {
    let sol = map_latent(fitted, v, cfg)?;
    Ok(predict_at(fitted, &[x], &sol.z)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralScore {
    /// Mean squared error on the original outcome scale.
    pub mse: f64,
    /// Distinct covariate vectors solved.
    pub distinct_v: usize,
    /// Solves that ended with a warning.
    pub map_warnings: usize,
    pub predictions: Vec<f64>,
}

/// Mean of `(g_hat - g0)^2` over a grid on the original scale, with one MAP
/// solve per distinct covariate vector.
pub fn structural_mse(fitted: &FittedModel, grid: &EvaluationGrid, cfg: &MapConfig) -> Result<StructuralScore> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("evaluation grid"));
    }
    let scaled = fitted.scalers.apply_grid(grid)?;
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct = Vec::new();
    let mut which = Vec::with_capacity(grid.len());
    for i in 0..scaled.len() {
        let row = scaled.v_row(i);
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        let next = slot.len();
        let k = *slot.entry(key).or_insert_with(|| {
            distinct.extend_from_slice(row);
            next
        });
        which.push(k);
    }
    let count = slot.len();
    let sols = map_latents(fitted, &distinct, count, cfg)?;
    let zo: Vec<f64> = which
        .iter()
        .flat_map(|&k| fitted.model.outcome_latents(&sols[k].z.z))
        .collect();
    let mean = fitted.model.outcome_mean(&zo, &scaled.x)?;
    let predictions: Vec<f64> = mean.into_iter().map(|m| fitted.scalers.y.invert(m)).collect();
    let mse = predictions
        .iter()
        .zip(&grid.g0)
        .map(|(g, t)| (g - t) * (g - t))
        .sum::<f64>()
        / grid.len() as f64;
    Ok(StructuralScore {
        mse,
        distinct_v: count,
        map_warnings: sols.iter().filter(|s| s.warning).count(),
        predictions,
    })
}
