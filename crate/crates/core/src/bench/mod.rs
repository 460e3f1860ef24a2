//! Synthetic benchmarks with known structural functions: the airline demand
//! design (scalar or vector-proxy customer type), a linear IV design, the
//! structural evaluation grid, and column scalers.

mod demand;
mod grid;
mod io;
mod linear;
mod scaler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use demand::{augment_nuisance, gen_demand, gen_vector_proxy, prototypes};
pub use grid::{evaluation_grid, linspace, EvaluationGrid, GRID_POINTS, PRICE_RANGE, TIME_RANGE};
pub use io::{
    diagnostics_checksum, read_dataset, read_grid, sidecar_path, write_dataset, write_grid,
    DatasetSidecar,
};
pub(crate) use io::{fmt_f64, write_text};
pub use linear::{gen_linear_iv, LinearIvConfig};
pub use scaler::{ColumnScaler, ScalerKind, ScalerSpec};

/// Number of customer groups.
pub const GROUPS: u8 = 7;

/// Demand shape in time `t`.
pub fn psi(t: f64) -> f64 {
    let d = t - 5.0;
    2.0 * (d.powi(4) / 600.0 + (-4.0 * d * d).exp() + t / 10.0 - 2.0)
}

/// Structural demand at price `p`, time `t` and customer group `s`.
pub fn structural_f0(p: f64, t: f64, s: u8) -> Result<f64> {
    if !(1..=GROUPS).contains(&s) {
        return Err(Error::InvalidInput(format!(
            "customer group must lie in 1..=7, got {s}"
        )));
    }
    Ok(100.0 + (10.0 + p) * f64::from(s) * psi(t) - 2.0 * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandVariant {
    /// Covariates `[T, S]`.
    Lowdim,
    /// Covariates `[T, r]` with `r` a noisy prototype of the group.
    VectorProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    pub variant: DemandVariant,
    pub proxy_dim: usize,
    pub sigma_rep: f64,
    pub feature_seed: u64,
    pub nuisance_dim: usize,
}

impl DemandConfig {
    pub fn new(variant: DemandVariant, n: usize, rho: f64, seed: u64) -> Self {
        DemandConfig {
            n,
            rho,
            seed,
            variant,
            proxy_dim: 784,
            sigma_rep: 0.5,
            feature_seed: 0,
            nuisance_dim: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.variant == DemandVariant::VectorProxy && self.proxy_dim == 0 {
            return Err(Error::InvalidConfig("proxy_dim must be at least 1".into()));
        }
        if !(self.sigma_rep >= 0.0) {
            return Err(Error::InvalidConfig("sigma_rep must be non-negative".into()));
        }
        Ok(())
    }

    /// Covariate columns seen by a model.
    pub fn v_dim(&self) -> usize {
        match self.variant {
            DemandVariant::Lowdim => 2 + self.nuisance_dim,
            DemandVariant::VectorProxy => 1 + self.proxy_dim + self.nuisance_dim,
        }
    }

    /// Scaling convention of the variant.
    pub fn scaler_kind(&self) -> ScalerKind {
        match self.variant {
            DemandVariant::Lowdim => ScalerKind::StandardizeFit,
            DemandVariant::VectorProxy => ScalerKind::FixedDfiv,
        }
    }
}

/// The observed tuple `(X, Y, V, W)`; everything a model may train on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    /// Row-major `n x v_dim`.
    pub v: Vec<f64>,
    pub v_dim: usize,
}

impl Observed {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.v_dim..(i + 1) * self.v_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::EmptyInput("dataset"));
        }
        for (name, len) in [("y", self.y.len()), ("w", self.w.len())] {
            if len != n {
                return Err(Error::dims(format!("column {name}"), n, len));
            }
        }
        if self.v.len() != n * self.v_dim {
            return Err(Error::dims("covariates", n * self.v_dim, self.v.len()));
        }
        Ok(())
    }

    /// Rows `idx` as a new dataset.
    pub fn select(&self, idx: &[usize]) -> Observed {
        let mut v = Vec::with_capacity(idx.len() * self.v_dim);
        for &i in idx {
            v.extend_from_slice(self.v_row(i));
        }
        Observed {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            w: idx.iter().map(|&i| self.w[i]).collect(),
            v,
            v_dim: self.v_dim,
        }
    }
}

/// Hidden draws kept for generator checks only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub u: Vec<f64>,
    pub eps: Vec<f64>,
    /// Empty for designs without a time covariate.
    pub t: Vec<f64>,
    /// Empty for designs without customer groups.
    pub s: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DatasetSource {
    Demand(DemandConfig),
    LinearIv(LinearIvConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observed: Observed,
    pub diagnostics: Diagnostics,
    pub scaling: ScalerKind,
    pub source: DatasetSource,
}
