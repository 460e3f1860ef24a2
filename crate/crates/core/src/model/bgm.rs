use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::covariate::{BranchLayout, CovariateGenerator};
use super::density::{gaussian_log_density, gaussian_log_density_grad, log_prior};
use super::iv::{outcome_mixture, MixtureGrads};
use super::{Block, IvMcConfig, LatentPartition, LatentState};
use crate::error::{Error, Result};
use crate::ndcompute::{softplus, Activation, HeadSpec, HeadTransform, Network, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateArchitecture {
    /// One decoder for every covariate column.
    Mlp { hidden: Vec<usize> },
    /// Column 0 (a scalar covariate) and columns `1..` (a proxy block) get
    /// separate decoders.
    Branched {
        scalar_hidden: Vec<usize>,
        proxy_hidden: Vec<usize>,
    },
}

impl CovariateArchitecture {
    pub fn layout(&self, v_dim: usize) -> Result<Vec<BranchLayout>> {
        match self {
            CovariateArchitecture::Mlp { hidden } => Ok(vec![BranchLayout {
                columns: 0..v_dim,
                hidden: hidden.clone(),
            }]),
            CovariateArchitecture::Branched {
                scalar_hidden,
                proxy_hidden,
            } => {
                if v_dim < 2 {
                    return Err(Error::InvalidConfig(
                        "branched covariate decoder needs at least two columns".into(),
                    ));
                }
                Ok(vec![
                    BranchLayout {
                        columns: 0..1,
                        hidden: scalar_hidden.clone(),
                    },
                    BranchLayout {
                        columns: 1..v_dim,
                        hidden: proxy_hidden.clone(),
                    },
                ])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchitecture {
    pub covariate: CovariateArchitecture,
    pub treatment_hidden: Vec<usize>,
    pub outcome_hidden: Vec<usize>,
    pub activation: Activation,
    pub l2_coefficient: f64,
}

impl ModelArchitecture {
    pub fn lowdim() -> Self {
        ModelArchitecture {
            covariate: CovariateArchitecture::Mlp {
                hidden: vec![64; 5],
            },
            treatment_hidden: vec![64, 32, 8],
            outcome_hidden: vec![64, 32, 8],
            activation: Activation::DEFAULT_LEAKY,
            l2_coefficient: 1e-4,
        }
    }

    pub fn vector() -> Self {
        ModelArchitecture {
            covariate: CovariateArchitecture::Branched {
                scalar_hidden: vec![64, 64],
                proxy_hidden: vec![64, 128],
            },
            ..ModelArchitecture::lowdim()
        }
    }
}

/// Outcome factor of the latent objective.
#[derive(Debug, Clone, Copy)]
pub enum OutcomeLikelihood<'a> {
    /// `log p_IV(y | w, z)` with the given standard normal draws.
    InstrumentIntegrated { eps: &'a [f64], cfg: &'a IvMcConfig },
    /// `log p(y | x, z0, z1)` at the observed treatment.
    Observed,
}

/// Gradient sinks for a batched term; both buffers are accumulated into.
#[derive(Default)]
pub struct GradSink<'a> {
    /// Gradient with respect to the parameters of the network the term
    /// belongs to.
    pub params: Option<&'a mut [f64]>,
    /// `batch x latent_dim` gradient with respect to the latents.
    pub z: Option<&'a mut [f64]>,
}

impl<'a> GradSink<'a> {
    /// Sink for latent gradients only.
    pub fn latents(z: &'a mut Option<&mut [f64]>) -> Self {
        GradSink {
            params: None,
            z: z.as_deref_mut(),
        }
    }
}

/// The three generators over a partitioned latent.
#[derive(Debug, Clone, PartialEq)]
pub struct BgmIvModel {
    pub partition: LatentPartition,
    pub treatment_kind: TreatmentKind,
    /// `p(v | z)` on the full latent.
    pub covariate: CovariateGenerator,
    /// `p(x | z0, z2, w)` reading `[z0, z2, w]`.
    pub treatment: Network,
    /// `p(y | z0, z1, x)` reading `[z0, z1, x]`.
    pub outcome: Network,
}

fn gaussian_heads() -> Vec<HeadSpec> {
    vec![
        HeadSpec::new("mean", 1, HeadTransform::Identity),
        HeadSpec::new("var", 1, HeadTransform::Softplus),
    ]
}

impl BgmIvModel {
    pub fn new<R: Rng + ?Sized>(
        arch: &ModelArchitecture,
        partition: LatentPartition,
        v_dim: usize,
        treatment_kind: TreatmentKind,
        rng: &mut R,
    ) -> Result<Self> {
        partition.validate()?;
        let [d0, d1, d2, _] = partition.dims;
        let covariate = CovariateGenerator::new(
            partition.total(),
            &arch.covariate.layout(v_dim)?,
            arch.activation,
            arch.l2_coefficient,
            rng,
        )?;
        let treatment_heads = match treatment_kind {
            TreatmentKind::Continuous => gaussian_heads(),
            TreatmentKind::Binary => vec![HeadSpec::new("logit", 1, HeadTransform::Identity)],
        };
        let treatment_spec = NetworkSpec::new(
            d0 + d2 + 1,
            arch.treatment_hidden.clone(),
            arch.activation,
            treatment_heads,
            arch.l2_coefficient,
        )?;
        let outcome_spec = NetworkSpec::new(
            d0 + d1 + 1,
            arch.outcome_hidden.clone(),
            arch.activation,
            gaussian_heads(),
            arch.l2_coefficient,
        )?;
        Ok(BgmIvModel {
            partition,
            treatment_kind,
            covariate,
            treatment: Network::new(treatment_spec, rng),
            outcome: Network::new(outcome_spec, rng),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.partition.total()
    }

    pub fn v_dim(&self) -> usize {
        self.covariate.v_dim
    }

    fn check_latents(&self, z: &[f64], batch: usize) -> Result<()> {
        if z.len() != batch * self.latent_dim() {
            return Err(Error::dims("latent batch", batch * self.latent_dim(), z.len()));
        }
        Ok(())
    }

    fn check_column(what: &str, values: &[f64], batch: usize) -> Result<()> {
        if values.len() != batch {
            return Err(Error::dims(what.to_string(), batch, values.len()));
        }
        Ok(())
    }

    /// Rows `[z0, z2, w]`.
    pub fn treatment_inputs(&self, z: &[f64], w: &[f64]) -> Vec<f64> {
        let d = self.latent_dim();
        let (r0, r2) = (self.partition.range(Block::Z0), self.partition.range(Block::Z2));
        let mut out = Vec::with_capacity(w.len() * (r0.len() + r2.len() + 1));
        for (row, &wi) in z.chunks_exact(d).zip(w) {
            out.extend_from_slice(&row[r0.clone()]);
            out.extend_from_slice(&row[r2.clone()]);
            out.push(wi);
        }
        out
    }

    /// Rows `[z0, z1]`, the latent part of the outcome input.
    pub fn outcome_latents(&self, z: &[f64]) -> Vec<f64> {
        let d = self.latent_dim();
        let (r0, r1) = (self.partition.range(Block::Z0), self.partition.range(Block::Z1));
        let mut out = Vec::with_capacity(z.len() / d.max(1) * (r0.len() + r1.len()));
        for row in z.chunks_exact(d) {
            out.extend_from_slice(&row[r0.clone()]);
            out.extend_from_slice(&row[r1.clone()]);
        }
        out
    }

    /// Rows `[z0, z1, x]` from outcome latents.
    pub fn outcome_inputs(&self, zo: &[f64], x: &[f64]) -> Vec<f64> {
        let q = self.outcome.input_dim() - 1;
        let mut out = Vec::with_capacity(x.len() * (q + 1));
        for (row, &xi) in zo.chunks_exact(q.max(1)).zip(x) {
            out.extend_from_slice(&row[..q]);
            out.push(xi);
        }
        if q == 0 {
            out = x.to_vec();
        }
        out
    }

    fn scatter_treatment_grad(&self, input_grad: &[f64], z_grad: &mut [f64]) {
        let d = self.latent_dim();
        let (r0, r2) = (self.partition.range(Block::Z0), self.partition.range(Block::Z2));
        let width = r0.len() + r2.len() + 1;
        for (g, dst) in input_grad.chunks_exact(width).zip(z_grad.chunks_exact_mut(d)) {
            for (k, j) in r0.clone().enumerate() {
                dst[j] += g[k];
            }
            for (k, j) in r2.clone().enumerate() {
                dst[j] += g[r0.len() + k];
            }
        }
    }

    fn scatter_outcome_grad(&self, zo_grad: &[f64], stride: usize, z_grad: &mut [f64]) {
        let d = self.latent_dim();
        let (r0, r1) = (self.partition.range(Block::Z0), self.partition.range(Block::Z1));
        for (g, dst) in zo_grad.chunks_exact(stride).zip(z_grad.chunks_exact_mut(d)) {
            for (k, j) in r0.clone().chain(r1.clone()).enumerate() {
                dst[j] += g[k];
            }
        }
    }

    /// Per-row `log p(v | z)`.
    pub fn covariate_term(
        &self,
        z: &[f64],
        v: &[f64],
        batch: usize,
        weights: &[f64],
        sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        self.check_latents(z, batch)?;
        self.covariate
            .log_density_batch(z, v, batch, weights, sink.params, sink.z)
    }

    /// Per-row `log p(x | w, z0, z2)`.
    pub fn treatment_term(
        &self,
        z: &[f64],
        w: &[f64],
        x: &[f64],
        batch: usize,
        weights: &[f64],
        mut sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        self.check_latents(z, batch)?;
        Self::check_column("instrument batch", w, batch)?;
        Self::check_column("treatment batch", x, batch)?;
        let inputs = self.treatment_inputs(z, w);
        let cache = self.treatment.forward_batch(&inputs, batch)?;
        let want = sink.params.is_some() || sink.z.is_some();
        let mut out = vec![0.0; batch];
        let mut head_grads: Vec<Vec<f64>> = Vec::new();
        match self.treatment_kind {
            TreatmentKind::Continuous => {
                let (mean, var) = (cache.head(0), cache.head(1));
                let mut gm = vec![0.0; batch];
                let mut gv = vec![0.0; batch];
                for i in 0..batch {
                    out[i] = gaussian_log_density(x[i], mean[i], var[i]);
                    let (a, b) = gaussian_log_density_grad(x[i], mean[i], var[i]);
                    gm[i] = weights[i] * a;
                    gv[i] = weights[i] * b;
                }
                head_grads.push(gm);
                head_grads.push(gv);
            }
            TreatmentKind::Binary => {
                let logit = cache.head(0);
                let mut gl = vec![0.0; batch];
                for i in 0..batch {
                    if x[i] != 0.0 && x[i] != 1.0 {
                        return Err(Error::InvalidInput(format!(
                            "binary treatment must be 0 or 1, got {}",
                            x[i]
                        )));
                    }
                    // x * l - softplus(l)
                    out[i] = x[i] * logit[i] - softplus(logit[i]);
                    gl[i] = weights[i] * (x[i] - crate::ndcompute::sigmoid(logit[i]));
                }
                head_grads.push(gl);
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: format!("treatment log density of row {i}"),
            });
        }
        if want {
            let hg: Vec<Option<&[f64]>> = head_grads.iter().map(|g| Some(g.as_slice())).collect();
            let mut d_in = vec![0.0; if sink.z.is_some() { inputs.len() } else { 0 }];
            self.treatment.backward_batch(
                &cache,
                &hg,
                sink.params.as_deref_mut(),
                sink.z.is_some().then_some(d_in.as_mut_slice()),
            )?;
            if let Some(gz) = sink.z.as_deref_mut() {
                self.scatter_treatment_grad(&d_in, gz);
            }
        }
        Ok(out)
    }

    /// Per-row `log p(y | x, z0, z1)` at the given treatments.
    pub fn outcome_term(
        &self,
        z: &[f64],
        x: &[f64],
        y: &[f64],
        batch: usize,
        weights: &[f64],
        mut sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        self.check_latents(z, batch)?;
        Self::check_column("treatment batch", x, batch)?;
        Self::check_column("outcome batch", y, batch)?;
        let zo = self.outcome_latents(z);
        let inputs = self.outcome_inputs(&zo, x);
        let cache = self.outcome.forward_batch(&inputs, batch)?;
        let (mean, var) = (cache.head(0), cache.head(1));
        let mut out = vec![0.0; batch];
        let mut gm = vec![0.0; batch];
        let mut gv = vec![0.0; batch];
        for i in 0..batch {
            out[i] = gaussian_log_density(y[i], mean[i], var[i]);
            let (a, b) = gaussian_log_density_grad(y[i], mean[i], var[i]);
            gm[i] = weights[i] * a;
            gv[i] = weights[i] * b;
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: format!("outcome log density of row {i}"),
            });
        }
        if sink.params.is_some() || sink.z.is_some() {
            let mut d_in = vec![0.0; if sink.z.is_some() { inputs.len() } else { 0 }];
            self.outcome.backward_batch(
                &cache,
                &[Some(&gm), Some(&gv)],
                sink.params.as_deref_mut(),
                sink.z.is_some().then_some(d_in.as_mut_slice()),
            )?;
            if let Some(gz) = sink.z.as_deref_mut() {
                self.scatter_outcome_grad(&d_in, self.outcome.input_dim(), gz);
            }
        }
        Ok(out)
    }

    /// Per-row instrument-integrated outcome likelihood `log p_IV(y | w, z)`.
    ///
    /// For a continuous treatment `eps` holds `batch x mc_samples` standard
    /// normal draws: sample `m` of row `i` is `mu + sigma * eps[i, m]` under
    /// the treatment generator. For a binary treatment the two-point mixture
    /// is exact and `eps` is ignored. `sink.params` receives the outcome-net
    /// gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn iv_term(
        &self,
        z: &[f64],
        w: &[f64],
        y: &[f64],
        eps: &[f64],
        batch: usize,
        cfg: &IvMcConfig,
        weights: &[f64],
        sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        self.check_latents(z, batch)?;
        Self::check_column("instrument batch", w, batch)?;
        Self::check_column("outcome batch", y, batch)?;
        match self.treatment_kind {
            TreatmentKind::Continuous => self.iv_continuous(z, w, y, eps, batch, cfg, weights, sink),
            TreatmentKind::Binary => self.iv_binary(z, w, y, batch, weights, sink),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn iv_continuous(
        &self,
        z: &[f64],
        w: &[f64],
        y: &[f64],
        eps: &[f64],
        batch: usize,
        cfg: &IvMcConfig,
        weights: &[f64],
        mut sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        let mc = cfg.mc_samples;
        if eps.len() != batch * mc {
            return Err(Error::dims("Monte-Carlo draws", batch * mc, eps.len()));
        }
        let t_in = self.treatment_inputs(z, w);
        let t_cache = self.treatment.forward_batch(&t_in, batch)?;
        let (mu, var) = (t_cache.head(0), t_cache.head(1));
        let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        let mut xs = vec![0.0; batch * mc];
        for i in 0..batch {
            for m in 0..mc {
                xs[i * mc + m] = mu[i] + sd[i] * eps[i * mc + m];
            }
        }
        let zo = self.outcome_latents(z);
        let q = self.outcome.input_dim() - 1;
        let want_z = sink.z.is_some();
        let through_samples = want_z && cfg.reparameterize_for_latent;
        let mut zo_grad = vec![0.0; if want_z { zo.len() } else { 0 }];
        let mut x_grad = vec![0.0; if through_samples { xs.len() } else { 0 }];
        let out = outcome_mixture(
            cfg.engine,
            &self.outcome,
            &zo,
            y,
            &xs,
            batch,
            mc,
            weights,
            MixtureGrads {
                params: sink.params.as_deref_mut(),
                zo: want_z.then_some(zo_grad.as_mut_slice()),
                xs: through_samples.then_some(x_grad.as_mut_slice()),
            },
        )?;
        if let Some(gz) = sink.z.as_deref_mut() {
            if q > 0 {
                self.scatter_outcome_grad(&zo_grad, q, gz);
            }
            if through_samples {
                let mut g_mu = vec![0.0; batch];
                let mut g_var = vec![0.0; batch];
                for i in 0..batch {
                    let (mut a, mut b) = (0.0, 0.0);
                    for m in 0..mc {
                        let g = x_grad[i * mc + m];
                        a += g;
                        b += g * eps[i * mc + m];
                    }
                    g_mu[i] = a;
                    g_var[i] = b / (2.0 * sd[i]);
                }
                let mut d_in = vec![0.0; t_in.len()];
                self.treatment
                    .backward_batch(&t_cache, &[Some(&g_mu), Some(&g_var)], None, Some(&mut d_in))?;
                self.scatter_treatment_grad(&d_in, gz);
            }
        }
        Ok(out)
    }

    fn iv_binary(
        &self,
        z: &[f64],
        w: &[f64],
        y: &[f64],
        batch: usize,
        weights: &[f64],
        mut sink: GradSink<'_>,
    ) -> Result<Vec<f64>> {
        let t_in = self.treatment_inputs(z, w);
        let t_cache = self.treatment.forward_batch(&t_in, batch)?;
        let logit = t_cache.head(0);
        let zo = self.outcome_latents(z);
        let mut both = zo.clone();
        both.extend_from_slice(&zo);
        let mut x_both = vec![1.0; batch];
        x_both.extend(std::iter::repeat_n(0.0, batch));
        let o_in = self.outcome_inputs(&both, &x_both);
        let o_cache = self.outcome.forward_batch(&o_in, 2 * batch)?;
        let (mean, var) = (o_cache.head(0), o_cache.head(1));
        let mut out = vec![0.0; batch];
        let mut g_mean = vec![0.0; 2 * batch];
        let mut g_var = vec![0.0; 2 * batch];
        let mut g_logit = vec![0.0; batch];
        for i in 0..batch {
            let lp1 = gaussian_log_density(y[i], mean[i], var[i]);
            let lp0 = gaussian_log_density(y[i], mean[batch + i], var[batch + i]);
            let a1 = -softplus(-logit[i]) + lp1;
            let a0 = -softplus(logit[i]) + lp0;
            let value = super::log_sum_exp(&[a1, a0]);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    node: format!("binary mixture of row {i}"),
                });
            }
            out[i] = value;
            let r1 = (a1 - value).exp();
            let r0 = (a0 - value).exp();
            for (k, r) in [(i, r1), (batch + i, r0)] {
                let (gm, gv) = gaussian_log_density_grad(y[i], mean[k], var[k]);
                g_mean[k] = weights[i] * r * gm;
                g_var[k] = weights[i] * r * gv;
            }
            g_logit[i] = weights[i] * (r1 - crate::ndcompute::sigmoid(logit[i]));
        }
        if sink.params.is_none() && sink.z.is_none() {
            return Ok(out);
        }
        let want_z = sink.z.is_some();
        let mut d_o = vec![0.0; if want_z { o_in.len() } else { 0 }];
        self.outcome.backward_batch(
            &o_cache,
            &[Some(&g_mean), Some(&g_var)],
            sink.params.as_deref_mut(),
            want_z.then_some(d_o.as_mut_slice()),
        )?;
        if let Some(gz) = sink.z.as_deref_mut() {
            let stride = self.outcome.input_dim();
            self.scatter_outcome_grad(&d_o[..batch * stride], stride, gz);
            self.scatter_outcome_grad(&d_o[batch * stride..], stride, gz);
            let mut d_t = vec![0.0; t_in.len()];
            self.treatment
                .backward_batch(&t_cache, &[Some(&g_logit)], None, Some(&mut d_t))?;
            self.scatter_treatment_grad(&d_t, gz);
        }
        Ok(out)
    }

    /// Per-row latent objective
    /// `pzv * (log prior + log p(v|z)) + log p(x|w,z0,z2) + log p_IV(y|w,z)`
    /// with its latent gradient accumulated into `z_grad`.
    #[allow(clippy::too_many_arguments)]
    pub fn latent_objective(
        &self,
        z: &[f64],
        x: &[f64],
        y: &[f64],
        v: &[f64],
        w: &[f64],
        eps: &[f64],
        batch: usize,
        cfg: &IvMcConfig,
        pzv_weight: f64,
        z_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let outcome = OutcomeLikelihood::InstrumentIntegrated { eps, cfg };
        self.latent_objective_with(outcome, z, x, y, v, w, batch, pzv_weight, z_grad)
    }

    /// [`Self::latent_objective`] with a choice of outcome likelihood.
    #[allow(clippy::too_many_arguments)]
    pub fn latent_objective_with(
        &self,
        outcome: OutcomeLikelihood<'_>,
        z: &[f64],
        x: &[f64],
        y: &[f64],
        v: &[f64],
        w: &[f64],
        batch: usize,
        pzv_weight: f64,
        mut z_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&pzv_weight) {
            return Err(Error::InvalidConfig(format!(
                "pzv_weight must lie in [0, 1], got {pzv_weight}"
            )));
        }
        self.check_latents(z, batch)?;
        let d = self.latent_dim();
        let ones = vec![1.0; batch];
        let pzv = vec![pzv_weight; batch];
        let cov = self.covariate_term(z, v, batch, &pzv, GradSink::latents(&mut z_grad))?;
        let tr = self.treatment_term(z, w, x, batch, &ones, GradSink::latents(&mut z_grad))?;
        let out = match outcome {
            OutcomeLikelihood::InstrumentIntegrated { eps, cfg } => {
                self.iv_term(z, w, y, eps, batch, cfg, &ones, GradSink::latents(&mut z_grad))?
            }
            OutcomeLikelihood::Observed => self.outcome_term(z, x, y, batch, &ones, GradSink::latents(&mut z_grad))?,
        };
        if let Some(gz) = z_grad {
            for (g, zi) in gz.iter_mut().zip(z) {
                *g -= pzv_weight * zi;
            }
        }
        Ok((0..batch)
            .map(|i| {
                let prior = log_prior(&z[i * d..(i + 1) * d]);
                pzv_weight * (prior + cov[i]) + tr[i] + out[i]
            })
            .collect())
    }

    fn assemble(&self, blocks: [&[f64]; 4]) -> Result<Vec<f64>> {
        Ok(LatentState::from_blocks(self.partition, blocks)?.z)
    }

    fn zeros(&self, block: Block) -> Vec<f64> {
        vec![0.0; self.partition.dim(block)]
    }

    pub fn log_p_v(&self, z: &LatentState, v: &[f64]) -> Result<f64> {
        Ok(self.covariate_term(&z.z, v, 1, &[1.0], GradSink::default())?[0])
    }

    pub fn log_p_x(&self, w: f64, z0: &[f64], z2: &[f64], x: f64) -> Result<f64> {
        let z = self.assemble([z0, &self.zeros(Block::Z1), z2, &self.zeros(Block::Z3)])?;
        Ok(self.treatment_term(&z, &[w], &[x], 1, &[1.0], GradSink::default())?[0])
    }

    pub fn log_p_y(&self, x: f64, z0: &[f64], z1: &[f64], y: f64) -> Result<f64> {
        let z = self.assemble([z0, z1, &self.zeros(Block::Z2), &self.zeros(Block::Z3)])?;
        Ok(self.outcome_term(&z, &[x], &[y], 1, &[1.0], GradSink::default())?[0])
    }

    /// Single-subject `log p_IV`; draws `mc_samples` normals from `rng` for
    /// a continuous treatment and nothing for a binary one.
    #[allow(clippy::too_many_arguments)]
    pub fn log_p_iv<R: Rng + ?Sized>(
        &self,
        w: f64,
        z0: &[f64],
        z1: &[f64],
        z2: &[f64],
        y: f64,
        cfg: &IvMcConfig,
        rng: &mut R,
    ) -> Result<f64> {
        cfg.validate()?;
        let z = self.assemble([z0, z1, z2, &self.zeros(Block::Z3)])?;
        let eps = self.draw_eps(cfg, 1, rng);
        Ok(self.iv_term(&z, &[w], &[y], &eps, 1, cfg, &[1.0], GradSink::default())?[0])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn log_quasi_posterior<R: Rng + ?Sized>(
        &self,
        z: &LatentState,
        x: f64,
        y: f64,
        v: &[f64],
        w: f64,
        cfg: &IvMcConfig,
        pzv_weight: f64,
        rng: &mut R,
    ) -> Result<f64> {
        cfg.validate()?;
        let eps = self.draw_eps(cfg, 1, rng);
        Ok(self.latent_objective(&z.z, &[x], &[y], v, &[w], &eps, 1, cfg, pzv_weight, None)?[0])
    }

    /// Standard normal draws for `batch` rows of the continuous IV term; empty
    /// for a binary treatment.
    pub fn draw_eps<R: Rng + ?Sized>(&self, cfg: &IvMcConfig, batch: usize, rng: &mut R) -> Vec<f64> {
        match self.treatment_kind {
            TreatmentKind::Continuous => {
                let mut eps: Vec<f64> = (0..batch * cfg.mc_samples)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                // Sorted rows let the sweep skip its own sort.
                for row in eps.chunks_mut(cfg.mc_samples.max(1)) {
                    row.sort_unstable_by(f64::total_cmp);
                }
                eps
            }
            TreatmentKind::Binary => Vec::new(),
        }
    }

    /// Mean of the outcome generator at `[z0, z1, x]` rows.
    pub fn outcome_mean(&self, zo: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let inputs = self.outcome_inputs(zo, x);
        let cache = self.outcome.forward_batch(&inputs, x.len())?;
        Ok(cache.head(0).to_vec())
    }

    pub fn l2_penalties(&self) -> [f64; 3] {
        [
            self.covariate.l2_penalty(),
            self.treatment.l2_penalty(),
            self.outcome.l2_penalty(),
        ]
    }
}
