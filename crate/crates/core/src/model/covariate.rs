use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::density::{gaussian_log_density, gaussian_log_density_grad};
use crate::error::{Error, Result};
use crate::ndcompute::{Activation, AdamState, HeadSpec, HeadTransform, Network, NetworkSpec};

/// A network producing the Gaussian mean and variance of a contiguous range
/// of covariate columns from the full latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBranch {
    pub columns: Range<usize>,
    pub net: Network,
}

/// Diagonal-Gaussian covariate generator `p(v | z)`.
///
/// The low-dimensional variant uses a single branch covering every column.
/// The vector-proxy variant splits the scalar column from the proxy block so
/// each gets its own decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateGenerator {
    pub latent_dim: usize,
    pub v_dim: usize,
    pub branches: Vec<CovariateBranch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchLayout {
    pub columns: Range<usize>,
    pub hidden: Vec<usize>,
}

pub(crate) fn branch_spec(
    latent_dim: usize,
    width: usize,
    hidden: &[usize],
    activation: Activation,
    l2: f64,
) -> Result<NetworkSpec> {
    NetworkSpec::new(
        latent_dim,
        hidden.to_vec(),
        activation,
        vec![
            HeadSpec::new("mean", width, HeadTransform::Identity),
            HeadSpec::new("var", width, HeadTransform::Softplus),
        ],
        l2,
    )
}

impl CovariateGenerator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        layout: &[BranchLayout],
        activation: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut next = 0;
        let mut branches = Vec::with_capacity(layout.len());
        for b in layout {
            if b.columns.start != next || b.columns.is_empty() {
                return Err(Error::InvalidConfig(
                    "covariate branches must tile the columns in order".into(),
                ));
            }
            next = b.columns.end;
            let spec = branch_spec(latent_dim, b.columns.len(), &b.hidden, activation, l2)?;
            branches.push(CovariateBranch {
                columns: b.columns.clone(),
                net: Network::new(spec, rng),
            });
        }
        if next == 0 {
            return Err(Error::InvalidConfig("covariate dimension must be positive".into()));
        }
        Ok(CovariateGenerator {
            latent_dim,
            v_dim: next,
            branches,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.branches.iter().map(|b| b.net.params.total_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.branches
            .iter()
            .flat_map(|b| b.net.params.values.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::dims("covariate parameters", self.parameter_count(), values.len()));
        }
        let mut offset = 0;
        for b in &mut self.branches {
            let n = b.net.params.values.len();
            b.net.params.values.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn adam_step(&mut self, state: &mut AdamState, grad: &[f64], lr: f64) -> Result<()> {
        let mut segs: Vec<&mut [f64]> = self
            .branches
            .iter_mut()
            .map(|b| b.net.params.values.as_mut_slice())
            .collect();
        state.step_segments(&mut segs, grad, lr)
    }

    pub fn l2_penalty(&self) -> f64 {
        self.branches.iter().map(|b| b.net.l2_penalty()).sum()
    }

    pub fn add_l2_gradient(&self, scale: f64, grad: &mut [f64]) {
        let mut offset = 0;
        for b in &self.branches {
            let n = b.net.params.total_count();
            b.net.add_l2_gradient(scale, &mut grad[offset..offset + n]);
            offset += n;
        }
    }

    /// Means and variances for `batch` latent rows, each `batch x v_dim`.
    pub fn moments(&self, z: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.v_dim;
        let mut mean = vec![0.0; batch * p];
        let mut var = vec![0.0; batch * p];
        for b in &self.branches {
            let cache = b.net.forward_batch(z, batch)?;
            let width = b.columns.len();
            for i in 0..batch {
                let dst = i * p + b.columns.start..i * p + b.columns.end;
                mean[dst.clone()].copy_from_slice(&cache.head(0)[i * width..(i + 1) * width]);
                var[dst].copy_from_slice(&cache.head(1)[i * width..(i + 1) * width]);
            }
        }
        Ok((mean, var))
    }

    /// Per-row `log p(v | z)`.
    ///
    /// Gradients of `sum_i weights[i] * log p(v_i | z_i)` are accumulated into
    /// `param_grad` (flat, branch order) and `z_grad` (`batch x latent_dim`).
    pub fn log_density_batch(
        &self,
        z: &[f64],
        v: &[f64],
        batch: usize,
        weights: &[f64],
        mut param_grad: Option<&mut [f64]>,
        mut z_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let p = self.v_dim;
        if v.len() != batch * p {
            return Err(Error::dims("covariate batch", batch * p, v.len()));
        }
        if z.len() != batch * self.latent_dim {
            return Err(Error::dims("latent batch", batch * self.latent_dim, z.len()));
        }
        let want_grad = param_grad.is_some() || z_grad.is_some();
        let mut out = vec![0.0; batch];
        let mut offset = 0;
        for b in &self.branches {
            let cache = b.net.forward_batch(z, batch)?;
            let width = b.columns.len();
            let (mean, var) = (cache.head(0), cache.head(1));
            let mut g_mean = vec![0.0; if want_grad { batch * width } else { 0 }];
            let mut g_var = g_mean.clone();
            for i in 0..batch {
                let row = &v[i * p + b.columns.start..i * p + b.columns.end];
                let mut acc = 0.0;
                for (j, &vj) in row.iter().enumerate() {
                    let k = i * width + j;
                    acc += gaussian_log_density(vj, mean[k], var[k]);
                    if want_grad {
                        let (gm, gv) = gaussian_log_density_grad(vj, mean[k], var[k]);
                        g_mean[k] = weights[i] * gm;
                        g_var[k] = weights[i] * gv;
                    }
                }
                out[i] += acc;
            }
            if want_grad {
                let n = b.net.params.total_count();
                let pg = param_grad.as_deref_mut().map(|g| &mut g[offset..offset + n]);
                b.net.backward_batch(
                    &cache,
                    &[Some(&g_mean), Some(&g_var)],
                    pg,
                    z_grad.as_deref_mut(),
                )?;
                offset += n;
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: format!("covariate log density of row {i}"),
            });
        }
        Ok(out)
    }
}
