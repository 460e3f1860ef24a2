use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Encoder, TrainConfig, WarmStart};
use crate::bench::Observed;
use crate::error::{Error, Result};
use crate::model::BgmIvModel;
use crate::ndcompute::{AdamConfig, AdamState};

const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub mode: WarmStart,
    /// Mean `-log p(v | enc(v))` over all subjects before and after fitting.
    pub initial_nll: Option<f64>,
    pub final_nll: Option<f64>,
    /// Mini-batch objective per iteration.
    pub losses: Vec<f64>,
}

/// `|m|^2 + |C - I|_F^2` for the batch mean `m` and second moment
/// `C = (1/B) sum_i (z_i - m)(z_i - m)^T`; the gradient with respect to the
/// rows of `z` is accumulated into `grad`.
pub fn moment_penalty(z: &[f64], batch: usize, dim: usize, grad: Option<&mut [f64]>) -> f64 {
    let bf = batch as f64;
    let mut m = vec![0.0; dim];
    for row in z.chunks_exact(dim) {
        for (a, &v) in m.iter_mut().zip(row) {
            *a += v / bf;
        }
    }
    let mut c = vec![0.0; dim * dim];
    for row in z.chunks_exact(dim) {
        for j in 0..dim {
            for k in 0..dim {
                c[j * dim + k] += (row[j] - m[j]) * (row[k] - m[k]) / bf;
            }
        }
    }
    let mut value: f64 = m.iter().map(|v| v * v).sum();
    for j in 0..dim {
        c[j * dim + j] -= 1.0;
    }
    value += c.iter().map(|v| v * v).sum::<f64>();
    if let Some(grad) = grad {
        for (row, g) in z.chunks_exact(dim).zip(grad.chunks_exact_mut(dim)) {
            for j in 0..dim {
                let mut acc = 2.0 * m[j];
                for k in 0..dim {
                    acc += 4.0 * c[j * dim + k] * (row[k] - m[k]);
                }
                g[j] += acc / bf;
            }
        }
    }
    value
}

/// Mean `-log p(v_i | z_i)` over all rows.
pub fn covariate_nll(model: &BgmIvModel, z: &[f64], v: &[f64]) -> Result<f64> {
    let (d, p) = (model.latent_dim(), model.v_dim());
    let n = z.len() / d;
    let mut total = 0.0;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let b = end - start;
        let lp = model
            .covariate
            .log_density_batch(&z[start * d..end * d], &v[start * p..end * p], b, &vec![0.0; b], None, None)?;
        total -= lp.iter().sum::<f64>();
    }
    Ok(total / n as f64)
}

fn encode_all(encoder: &Encoder, v: &[f64], n: usize) -> Result<Vec<f64>> {
    let p = encoder.v_dim;
    let mut z = Vec::with_capacity(n * encoder.latent_dim);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        z.extend(encoder.encode(&v[start * p..end * p], end - start)?);
    }
    Ok(z)
}

/// Initial latents for every subject of model-scale data.
///
/// The simplified mode minimizes, over the encoder and covariate generator,
/// the batch mean of `-log p(v | enc(v))` plus [`moment_penalty`] on the
/// encodings plus both L2 penalties, then encodes every subject. Without
/// covariates, or in the Xavier-only mode, latents are standard normal draws.
pub fn warm_start<R: Rng + ?Sized>(
    data: &Observed,
    model: &mut BgmIvModel,
    encoder: &mut Encoder,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, WarmStartReport)> {
    let n = data.n();
    let d = model.latent_dim();
    if cfg.warm_start == WarmStart::XavierOnly || data.v_dim == 0 {
        let z = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let report = WarmStartReport {
            mode: WarmStart::XavierOnly,
            initial_nll: None,
            final_nll: None,
            losses: Vec::new(),
        };
        return Ok((z, report));
    }
    let initial_nll = covariate_nll(model, &encode_all(encoder, &data.v, n)?, &data.v)?;
    let adam = AdamConfig::default();
    let mut enc_state = AdamState::new(encoder.parameter_count(), adam);
    let mut cov_state = AdamState::new(model.covariate.parameter_count(), adam);
    let b = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n;
    let mut losses = Vec::with_capacity(cfg.warm_start_iters);
    for _ in 0..cfg.warm_start_iters {
        if pos + b > n {
            order.shuffle(rng);
            pos = 0;
        }
        let idx = &order[pos..pos + b];
        pos += b;
        let v: Vec<f64> = idx.iter().flat_map(|&i| data.v_row(i).iter().copied()).collect();
        let cache = encoder.forward(&v, b)?;
        let z = cache.latents();
        let mut z_grad = vec![0.0; b * d];
        let mut cov_grad = vec![0.0; model.covariate.parameter_count()];
        let lp = model.covariate.log_density_batch(
            z,
            &v,
            b,
            &vec![-1.0 / b as f64; b],
            Some(&mut cov_grad),
            Some(&mut z_grad),
        )?;
        let penalty = moment_penalty(z, b, d, Some(&mut z_grad));
        let loss = -lp.iter().sum::<f64>() / b as f64 + penalty + model.covariate.l2_penalty() + encoder.l2_penalty();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                node: "warm-start objective".into(),
            });
        }
        let mut enc_grad = vec![0.0; encoder.parameter_count()];
        encoder.backward(&cache, &z_grad, &mut enc_grad)?;
        encoder.add_l2_gradient(1.0, &mut enc_grad);
        model.covariate.add_l2_gradient(1.0, &mut cov_grad);
        encoder.adam_step(&mut enc_state, &enc_grad, cfg.warm_start_lr)?;
        model.covariate.adam_step(&mut cov_state, &cov_grad, cfg.warm_start_lr)?;
        losses.push(loss);
    }
    let z = encode_all(encoder, &data.v, n)?;
    let final_nll = covariate_nll(model, &z, &data.v)?;
    let report = WarmStartReport {
        mode: WarmStart::SimplifiedEgm,
        initial_nll: Some(initial_nll),
        final_nll: Some(final_nll),
        losses,
    };
    Ok((z, report))
}
