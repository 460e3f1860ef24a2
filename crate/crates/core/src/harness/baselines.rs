use serde::{Deserialize, Serialize};

use crate::bench::{EvaluationGrid, Observed};
use crate::error::{Error, Result};

/// `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Mean squared error against the grid truth; covariates are ignored.
    pub fn grid_mse(&self, grid: &EvaluationGrid) -> Result<f64> {
        if grid.is_empty() {
            return Err(Error::EmptyInput("evaluation grid"));
        }
        let sum: f64 = grid.x.iter().zip(&grid.g0).map(|(&x, &g)| (self.predict(x) - g).powi(2)).sum();
        Ok(sum / grid.len() as f64)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

fn check(data: &Observed) -> Result<()> {
    data.validate()?;
    if data.n() < 2 {
        return Err(Error::InvalidInput("linear fits need at least two rows".into()));
    }
    Ok(())
}

/// Just-identified instrumental-variable slope `cov(W, Y) / cov(W, X)`.
pub fn two_sls(data: &Observed) -> Result<LinearFit> {
    check(data)?;
    let cwx = cov(&data.w, &data.x);
    if cwx.abs() < 1e-8 {
        return Err(Error::WeakInstrument(cwx));
    }
    let slope = cov(&data.w, &data.y) / cwx;
    Ok(LinearFit {
        slope,
        intercept: mean(&data.y) - slope * mean(&data.x),
    })
}

/// Least-squares slope `cov(X, Y) / var(X)`.
pub fn ols(data: &Observed) -> Result<LinearFit> {
    check(data)?;
    let vx = cov(&data.x, &data.x);
    if vx == 0.0 {
        return Err(Error::InvalidInput("treatment has zero variance".into()));
    }
    let slope = cov(&data.x, &data.y) / vx;
    Ok(LinearFit {
        slope,
        intercept: mean(&data.y) - slope * mean(&data.x),
    })
}
