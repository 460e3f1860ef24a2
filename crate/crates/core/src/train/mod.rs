//! Alternating stochastic optimization of the three generators and the
//! per-subject latents, with warm start, evaluation hooks and checkpoints.

mod checkpoint;
mod encoder;
mod warm_start;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Observed, ScalerKind, ScalerSpec};
use crate::error::{Error, Result};
use crate::model::{
    BgmIvModel, GradSink, IvEngine, IvMcConfig, LatentPartition, ModelArchitecture, OutcomeLikelihood,
    TreatmentKind,
};
use crate::ndcompute::{adam_update, AdamConfig, AdamState};
use crate::rng::{stream, stream_rng};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use encoder::{Encoder, EncoderArchitecture, EncoderCache};
pub use warm_start::{covariate_nll, moment_penalty, warm_start, WarmStartReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Encoder and covariate generator fitted jointly on reconstruction with
    /// a latent moment penalty; latents start at the encodings.
    SimplifiedEgm,
    /// Initial parameters only; latents start as standard normal draws.
    XavierOnly,
}

/// Outcome factor used in the outcome and latent updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Instrument-integrated outcome likelihood.
    Iv,
    /// Outcome likelihood at the observed treatment.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch indices run are `0..=epochs`.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_omega: f64,
    pub lr_latent: f64,
    /// Epochs during which only the covariate and treatment generators move.
    pub warmup_epochs: usize,
    pub mc_train: usize,
    /// Evaluation period in epochs; 0 evaluates at the final epoch only.
    pub eval_every: usize,
    pub pzv_weight: f64,
    pub warm_start: WarmStart,
    pub warm_start_iters: usize,
    pub warm_start_lr: f64,
    pub seed: u64,
    pub objective: Objective,
    pub reparameterize_for_latent: bool,
    pub iv_engine: IvEngine,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr_theta: 1e-4,
            lr_phi: 1e-4,
            lr_omega: 1e-4,
            lr_latent: 1e-4,
            warmup_epochs: 0,
            mc_train: 1000,
            eval_every: 10,
            pzv_weight: 0.5,
            warm_start: WarmStart::SimplifiedEgm,
            warm_start_iters: 2000,
            warm_start_lr: 2e-4,
            seed: 0,
            objective: Objective::Iv,
            reparameterize_for_latent: true,
            iv_engine: IvEngine::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults of the vector-proxy benchmark.
    pub fn vector() -> Self {
        TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        for (name, lr) in [
            ("lr_theta", self.lr_theta),
            ("lr_phi", self.lr_phi),
            ("lr_omega", self.lr_omega),
            ("lr_latent", self.lr_latent),
            ("warm_start_lr", self.warm_start_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..=1.0).contains(&self.pzv_weight) {
            return Err(Error::InvalidConfig("pzv_weight must lie in [0, 1]".into()));
        }
        self.mc().validate()
    }

    pub fn mc(&self) -> IvMcConfig {
        IvMcConfig {
            mc_samples: self.mc_train,
            reparameterize_for_latent: self.reparameterize_for_latent,
            engine: self.iv_engine,
        }
    }

    /// Whether the evaluation hook fires after epoch index `epoch`.
    pub fn evaluates_at(&self, epoch: usize) -> bool {
        epoch == self.epochs || (self.eval_every > 0 && epoch % self.eval_every == 0)
    }
}

/// Network shapes and latent layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub model: ModelArchitecture,
    pub encoder: EncoderArchitecture,
    pub partition: LatentPartition,
    pub treatment_kind: TreatmentKind,
}

impl Architecture {
    pub fn lowdim() -> Self {
        Architecture {
            model: ModelArchitecture::lowdim(),
            encoder: EncoderArchitecture::lowdim(),
            partition: LatentPartition::DEMAND,
            treatment_kind: TreatmentKind::Continuous,
        }
    }

    pub fn vector() -> Self {
        Architecture {
            model: ModelArchitecture::vector(),
            encoder: EncoderArchitecture::vector(),
            partition: LatentPartition::VECTOR,
            treatment_kind: TreatmentKind::Continuous,
        }
    }
}

/// Adam moments and step counts of every subject's latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentOptimizer {
    pub config: AdamConfig,
    pub dim: usize,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_counts: Vec<u64>,
}

impl LatentOptimizer {
    pub fn new(n: usize, dim: usize, config: AdamConfig) -> Self {
        LatentOptimizer {
            config,
            dim,
            first_moment: vec![0.0; n * dim],
            second_moment: vec![0.0; n * dim],
            step_counts: vec![0; n],
        }
    }

    /// One descent step on subject `i`.
    pub fn step(&mut self, i: usize, z: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        let r = i * self.dim..(i + 1) * self.dim;
        adam_update(
            &self.config,
            &mut self.first_moment[r.clone()],
            &mut self.second_moment[r],
            &mut self.step_counts[i],
            z,
            grad,
            lr,
        )
    }
}

/// Everything the loop mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub arch: Architecture,
    pub model: BgmIvModel,
    pub encoder: Encoder,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub adam_omega: AdamState,
    /// Row-major `n x latent_dim`.
    pub latents: Vec<f64>,
    pub latent_opt: LatentOptimizer,
    /// Next epoch index to run.
    pub epoch: usize,
    pub shuffle_rng: ChaCha8Rng,
    pub mc_rng: ChaCha8Rng,
}

impl TrainState {
    /// Initial parameters and warm-started latents for model-scale data.
    pub fn init(data: &Observed, arch: &Architecture, cfg: &TrainConfig) -> Result<(Self, WarmStartReport)> {
        data.validate()?;
        let mut init_rng = stream_rng(cfg.seed, stream::INIT);
        let mut model = BgmIvModel::new(&arch.model, arch.partition, data.v_dim, arch.treatment_kind, &mut init_rng)?;
        let d = arch.partition.total();
        let mut encoder = Encoder::new(
            &arch.encoder,
            data.v_dim,
            d,
            arch.model.activation,
            arch.model.l2_coefficient,
            &mut init_rng,
        )?;
        let mut warm_rng = stream_rng(cfg.seed, stream::WARM_START);
        let (latents, report) = warm_start(data, &mut model, &mut encoder, cfg, &mut warm_rng)?;
        let adam = AdamConfig::default();
        let state = TrainState {
            arch: arch.clone(),
            adam_theta: AdamState::new(model.covariate.parameter_count(), adam),
            adam_phi: AdamState::new(model.treatment.params.total_count(), adam),
            adam_omega: AdamState::new(model.outcome.params.total_count(), adam),
            latent_opt: LatentOptimizer::new(data.n(), d, adam),
            model,
            encoder,
            latents,
            epoch: 0,
            shuffle_rng: stream_rng(cfg.seed, stream::SHUFFLE),
            mc_rng: stream_rng(cfg.seed, stream::MONTE_CARLO),
        };
        Ok((state, report))
    }

    pub fn n(&self) -> usize {
        self.latent_opt.step_counts.len()
    }

    pub fn latent_row(&self, i: usize) -> &[f64] {
        let d = self.latent_opt.dim;
        &self.latents[i * d..(i + 1) * d]
    }
}

/// Batch losses of one step; the outcome and latent entries are absent
/// during warm-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub covariate: f64,
    pub treatment: f64,
    pub outcome: Option<f64>,
    /// Batch mean of the latent objective before the latent update.
    pub latent: Option<f64>,
}

struct Batch {
    z: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    v: Vec<f64>,
}

fn gather(state: &TrainState, data: &Observed, idx: &[usize]) -> Batch {
    let d = state.latent_opt.dim;
    let mut z = Vec::with_capacity(idx.len() * d);
    let mut v = Vec::with_capacity(idx.len() * data.v_dim);
    for &i in idx {
        z.extend_from_slice(state.latent_row(i));
        v.extend_from_slice(data.v_row(i));
    }
    Batch {
        z,
        x: idx.iter().map(|&i| data.x[i]).collect(),
        y: idx.iter().map(|&i| data.y[i]).collect(),
        w: idx.iter().map(|&i| data.w[i]).collect(),
        v,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// One pass of the four updates on the subjects `idx` of model-scale data:
/// covariate generator, treatment generator, outcome generator, latents.
/// During warm-up epochs only the first two run.
pub fn minibatch_step(
    state: &mut TrainState,
    data: &Observed,
    idx: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<StepLosses> {
    let b = idx.len();
    if b == 0 {
        return Err(Error::EmptyInput("mini-batch"));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= state.n() || i >= data.n()) {
        return Err(Error::InvalidInput(format!("subject index {bad} out of range")));
    }
    let batch = gather(state, data, idx);
    let loss_weights = vec![-1.0 / b as f64; b];
    let model = &mut state.model;

    // (a) covariate generator
    let mut g = vec![0.0; model.covariate.parameter_count()];
    let lv = model.covariate_term(
        &batch.z,
        &batch.v,
        b,
        &loss_weights,
        GradSink {
            params: Some(&mut g),
            z: None,
        },
    )?;
    model.covariate.add_l2_gradient(1.0, &mut g);
    model.covariate.adam_step(&mut state.adam_theta, &g, cfg.lr_theta)?;
    let covariate = -mean(&lv) + model.covariate.l2_penalty();

    // (b) treatment generator
    let mut g = vec![0.0; model.treatment.params.total_count()];
    let lx = model.treatment_term(
        &batch.z,
        &batch.w,
        &batch.x,
        b,
        &loss_weights,
        GradSink {
            params: Some(&mut g),
            z: None,
        },
    )?;
    model.treatment.add_l2_gradient(1.0, &mut g);
    state.adam_phi.step(&mut model.treatment.params.values, &g, cfg.lr_phi)?;
    let treatment = -mean(&lx) + model.treatment.l2_penalty();

    if epoch < cfg.warmup_epochs {
        return Ok(StepLosses {
            covariate,
            treatment,
            outcome: None,
            latent: None,
        });
    }

    // (c) outcome generator; the draws are shared with (d).
    let mc = cfg.mc();
    let eps = match cfg.objective {
        Objective::Iv => model.draw_eps(&mc, b, &mut state.mc_rng),
        Objective::Naive => Vec::new(),
    };
    let mut g = vec![0.0; model.outcome.params.total_count()];
    let sink = GradSink {
        params: Some(&mut g),
        z: None,
    };
    let ly = match cfg.objective {
        Objective::Iv => model.iv_term(&batch.z, &batch.w, &batch.y, &eps, b, &mc, &loss_weights, sink)?,
        Objective::Naive => model.outcome_term(&batch.z, &batch.x, &batch.y, b, &loss_weights, sink)?,
    };
    model.outcome.add_l2_gradient(1.0, &mut g);
    state.adam_omega.step(&mut model.outcome.params.values, &g, cfg.lr_omega)?;
    let outcome = -mean(&ly) + model.outcome.l2_penalty();

    // (d) latents, ascending their own objectives.
    let likelihood = match cfg.objective {
        Objective::Iv => OutcomeLikelihood::InstrumentIntegrated { eps: &eps, cfg: &mc },
        Objective::Naive => OutcomeLikelihood::Observed,
    };
    let d = state.latent_opt.dim;
    let mut zg = vec![0.0; b * d];
    let obj = model.latent_objective_with(
        likelihood,
        &batch.z,
        &batch.x,
        &batch.y,
        &batch.v,
        &batch.w,
        b,
        cfg.pzv_weight,
        Some(&mut zg),
    )?;
    if let Some(k) = zg.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            node: format!("latent gradient of batch row {}", k / d),
        });
    }
    for (row, &i) in idx.iter().enumerate() {
        let descent: Vec<f64> = zg[row * d..(row + 1) * d].iter().map(|g| -g).collect();
        let z = &mut state.latents[i * d..(i + 1) * d];
        state.latent_opt.step(i, z, &descent, cfg.lr_latent)?;
    }
    Ok(StepLosses {
        covariate,
        treatment,
        outcome: Some(outcome),
        latent: Some(mean(&obj)),
    })
}

/// Epoch means of the step losses, plus the hook's structural MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub covariate_loss: f64,
    pub treatment_loss: f64,
    pub outcome_loss: Option<f64>,
    pub latent_objective: Option<f64>,
    pub structural_mse: Option<f64>,
}

/// Called after evaluated epochs with the current state and the scalers;
/// returns a structural MSE.
pub type EvalHook<'a> = dyn FnMut(&TrainState, &ScalerSpec) -> Result<f64> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: TrainState,
    pub scalers: ScalerSpec,
    pub history: Vec<HistoryEntry>,
    pub warm_start: WarmStartReport,
}

/// Runs one epoch index: a fresh shuffle, then every mini-batch in order.
pub fn run_epoch(state: &mut TrainState, data: &Observed, cfg: &TrainConfig) -> Result<HistoryEntry> {
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut state.shuffle_rng);
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for (k, idx) in order.chunks(cfg.batch_size).enumerate() {
        let losses = minibatch_step(state, data, idx, cfg, epoch).map_err(|e| Error::Diverged {
            epoch,
            batch: k,
            source: Box::new(e),
        })?;
        let parts = [Some(losses.covariate), Some(losses.treatment), losses.outcome, losses.latent];
        for (j, part) in parts.into_iter().enumerate() {
            if let Some(v) = part {
                sums[j] += v;
                counts[j] += 1;
            }
        }
    }
    state.epoch += 1;
    let avg = |j: usize| (counts[j] > 0).then(|| sums[j] / counts[j] as f64);
    Ok(HistoryEntry {
        epoch,
        covariate_loss: avg(0).unwrap_or(f64::NAN),
        treatment_loss: avg(1).unwrap_or(f64::NAN),
        outcome_loss: avg(2),
        latent_objective: avg(3),
        structural_mse: None,
    })
}

/// Fits scalers of the given kind, warm-starts, and runs epoch indices
/// `0..=cfg.epochs`.
pub fn train(
    data: &Observed,
    scaling: ScalerKind,
    arch: &Architecture,
    cfg: &TrainConfig,
    mut hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    data.validate()?;
    let scalers = ScalerSpec::fit(scaling, data);
    let scaled = scalers.apply(data)?;
    let (mut state, report) = TrainState::init(&scaled, arch, cfg)?;
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let mut entry = run_epoch(&mut state, &scaled, cfg)?;
        if cfg.evaluates_at(epoch) {
            if let Some(h) = hook.as_deref_mut() {
                entry.structural_mse = Some(h(&state, &scalers)?);
            }
        }
        history.push(entry);
    }
    Ok(TrainOutput {
        state,
        scalers,
        history,
        warm_start: report,
    })
}
