use serde::{Deserialize, Serialize};

use super::{EvaluationGrid, Observed};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// Training-set mean and standard deviation on every column.
    StandardizeFit,
    /// Fixed affine maps on treatment and outcome; covariates and instrument
    /// left raw.
    FixedDfiv,
    Identity,
}

/// `value -> (value - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub shift: f64,
    pub scale: f64,
}

impl ColumnScaler {
    pub const IDENTITY: ColumnScaler = ColumnScaler { shift: 0.0, scale: 1.0 };

    /// Population mean and standard deviation; deviations below `1e-6` are
    /// replaced by 1.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        ColumnScaler {
            shift: mean,
            scale: if sd < 1e-6 { 1.0 } else { sd },
        }
    }

    #[inline]
    pub fn apply(&self, value: f64) -> f64 {
        (value - self.shift) / self.scale
    }

    #[inline]
    pub fn invert(&self, value: f64) -> f64 {
        value * self.scale + self.shift
    }
}

/// Fitted or fixed scalers for every observed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerSpec {
    pub kind: ScalerKind,
    pub x: ColumnScaler,
    pub y: ColumnScaler,
    pub w: ColumnScaler,
    pub v: Vec<ColumnScaler>,
}

impl ScalerSpec {
    pub const DFIV_X: ColumnScaler = ColumnScaler { shift: 17.779, scale: 3.7 };
    pub const DFIV_Y: ColumnScaler = ColumnScaler { shift: -292.1, scale: 158.0 };

    pub fn identity(v_dim: usize) -> Self {
        ScalerSpec {
            kind: ScalerKind::Identity,
            x: ColumnScaler::IDENTITY,
            y: ColumnScaler::IDENTITY,
            w: ColumnScaler::IDENTITY,
            v: vec![ColumnScaler::IDENTITY; v_dim],
        }
    }

    pub fn fit(kind: ScalerKind, data: &Observed) -> Self {
        match kind {
            ScalerKind::Identity => Self::identity(data.v_dim),
            ScalerKind::FixedDfiv => ScalerSpec {
                kind,
                x: Self::DFIV_X,
                y: Self::DFIV_Y,
                ..Self::identity(data.v_dim)
            },
            ScalerKind::StandardizeFit => ScalerSpec {
                kind,
                x: ColumnScaler::fit(data.x.iter().copied()),
                y: ColumnScaler::fit(data.y.iter().copied()),
                w: ColumnScaler::fit(data.w.iter().copied()),
                v: (0..data.v_dim)
                    .map(|j| ColumnScaler::fit(data.v.iter().skip(j).step_by(data.v_dim).copied()))
                    .collect(),
            },
        }
    }

    fn check_v(&self, v_dim: usize) -> Result<()> {
        if v_dim != self.v.len() {
            return Err(Error::dims("scaler covariate columns", self.v.len(), v_dim));
        }
        Ok(())
    }

    /// Scales covariate rows (row-major, `v_dim` columns).
    pub fn apply_v(&self, v: &[f64], v_dim: usize) -> Result<Vec<f64>> {
        self.check_v(v_dim)?;
        Ok(v.iter()
            .enumerate()
            .map(|(k, &value)| self.v[k % v_dim.max(1)].apply(value))
            .collect())
    }

    pub fn invert_v(&self, v: &[f64], v_dim: usize) -> Result<Vec<f64>> {
        self.check_v(v_dim)?;
        Ok(v.iter()
            .enumerate()
            .map(|(k, &value)| self.v[k % v_dim.max(1)].invert(value))
            .collect())
    }

    pub fn apply(&self, data: &Observed) -> Result<Observed> {
        Ok(Observed {
            x: data.x.iter().map(|&v| self.x.apply(v)).collect(),
            y: data.y.iter().map(|&v| self.y.apply(v)).collect(),
            w: data.w.iter().map(|&v| self.w.apply(v)).collect(),
            v: self.apply_v(&data.v, data.v_dim)?,
            v_dim: data.v_dim,
        })
    }

    pub fn invert(&self, data: &Observed) -> Result<Observed> {
        Ok(Observed {
            x: data.x.iter().map(|&v| self.x.invert(v)).collect(),
            y: data.y.iter().map(|&v| self.y.invert(v)).collect(),
            w: data.w.iter().map(|&v| self.w.invert(v)).collect(),
            v: self.invert_v(&data.v, data.v_dim)?,
            v_dim: data.v_dim,
        })
    }

    /// Grid with interventions and covariates on the model scale; truth is
    /// left on the original scale.
    pub fn apply_grid(&self, grid: &EvaluationGrid) -> Result<EvaluationGrid> {
        Ok(EvaluationGrid {
            x: grid.x.iter().map(|&v| self.x.apply(v)).collect(),
            v: self.apply_v(&grid.v, grid.v_dim)?,
            v_dim: grid.v_dim,
            g0: grid.g0.clone(),
        })
    }
}
