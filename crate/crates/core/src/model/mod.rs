//! The structured-latent generative model: a latent vector split into four
//! blocks, a covariate generator, a treatment generator and an outcome
//! generator, plus the instrument-integrated outcome likelihood.

mod bgm;
mod covariate;
mod density;
mod iv;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bgm::{
    BgmIvModel, CovariateArchitecture, GradSink, ModelArchitecture, OutcomeLikelihood, TreatmentKind,
};
pub use covariate::{BranchLayout, CovariateBranch, CovariateGenerator};
pub use density::{gaussian_log_density, gaussian_log_density_grad, log_mean_exp, log_prior, LN_2PI};
pub use iv::IvEngine;

pub(crate) use density::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    Z0,
    Z1,
    Z2,
    Z3,
}

/// Sizes of the blocks `(z0, z1, z2, z3)`.
///
/// `z0` drives all three generators, `z1` only the covariates and outcome,
/// `z2` only the covariates and treatment, `z3` only the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPartition {
    pub dims: [usize; 4],
}

impl LatentPartition {
    pub const DEMAND: LatentPartition = LatentPartition { dims: [2, 2, 1, 2] };
    pub const VECTOR: LatentPartition = LatentPartition { dims: [2, 1, 1, 2] };

    pub fn new(d0: usize, d1: usize, d2: usize, d3: usize) -> Self {
        LatentPartition {
            dims: [d0, d1, d2, d3],
        }
    }

    pub fn total(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn dim(&self, block: Block) -> usize {
        self.dims[block as usize]
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let i = block as usize;
        let start: usize = self.dims[..i].iter().sum();
        start..start + self.dims[i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::InvalidConfig("latent dimension must be positive".into()));
        }
        Ok(())
    }
}

/// One subject's latent vector with block views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub partition: LatentPartition,
    pub z: Vec<f64>,
}

impl LatentState {
    pub fn new(partition: LatentPartition, z: Vec<f64>) -> Result<Self> {
        if z.len() != partition.total() {
            return Err(Error::dims("latent vector", partition.total(), z.len()));
        }
        Ok(LatentState { partition, z })
    }

    pub fn zeros(partition: LatentPartition) -> Self {
        LatentState {
            partition,
            z: vec![0.0; partition.total()],
        }
    }

    /// Assembles a latent vector from its four blocks.
    pub fn from_blocks(partition: LatentPartition, blocks: [&[f64]; 4]) -> Result<Self> {
        let mut z = Vec::with_capacity(partition.total());
        for (b, (part, &d)) in blocks.iter().zip(&partition.dims).enumerate() {
            if part.len() != d {
                return Err(Error::dims(format!("latent block z{b}"), d, part.len()));
            }
            z.extend_from_slice(part);
        }
        Ok(LatentState { partition, z })
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.z[self.partition.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.partition.range(block);
        &mut self.z[r]
    }

    pub fn z0(&self) -> &[f64] {
        self.block(Block::Z0)
    }

    pub fn z1(&self) -> &[f64] {
        self.block(Block::Z1)
    }

    pub fn z2(&self) -> &[f64] {
        self.block(Block::Z2)
    }

    pub fn z3(&self) -> &[f64] {
        self.block(Block::Z3)
    }
}

/// Monte-Carlo settings for the instrument-integrated outcome likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvMcConfig {
    pub mc_samples: usize,
    /// Propagate latent gradients through the sampled treatments.
    pub reparameterize_for_latent: bool,
    #[serde(default)]
    pub engine: IvEngine,
}

impl Default for IvMcConfig {
    fn default() -> Self {
        IvMcConfig {
            mc_samples: 1000,
            reparameterize_for_latent: true,
            engine: IvEngine::default(),
        }
    }
}

impl IvMcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 1 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        Ok(())
    }
}
