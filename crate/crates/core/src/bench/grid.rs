use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{prototypes, structural_f0, DemandConfig, DemandVariant, GROUPS};
use crate::error::Result;
use crate::rng::{stream, stream_rng};

pub const PRICE_RANGE: (f64, f64) = (10.0, 25.0);
pub const TIME_RANGE: (f64, f64) = (0.0, 10.0);
/// Points per grid axis.
pub const GRID_POINTS: usize = 20;

/// Intervention points `(x, v)` with structural truth, on original scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    pub x: Vec<f64>,
    /// Row-major `len x v_dim`.
    pub v: Vec<f64>,
    pub v_dim: usize,
    pub g0: Vec<f64>,
}

impl EvaluationGrid {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.v_dim..(i + 1) * self.v_dim]
    }
}

/// `count` evenly spaced points from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i == count - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// The `7 x 20 x 20` grid of groups, times and prices, in that nesting order.
///
/// The vector-proxy variant draws one noisy proxy per `(group, time)` cell
/// from the grid stream of the feature seed; nuisance columns, if any, are
/// drawn per cell from the same stream.
pub fn evaluation_grid(cfg: &DemandConfig) -> Result<EvaluationGrid> {
    let prices = linspace(PRICE_RANGE.0, PRICE_RANGE.1, GRID_POINTS);
    let times = linspace(TIME_RANGE.0, TIME_RANGE.1, GRID_POINTS);
    let v_dim = cfg.v_dim();
    let protos = match cfg.variant {
        DemandVariant::VectorProxy => prototypes(cfg.feature_seed, cfg.proxy_dim),
        DemandVariant::Lowdim => Vec::new(),
    };
    let mut rng = stream_rng(cfg.feature_seed, stream::GRID);
    let rows = usize::from(GROUPS) * GRID_POINTS * GRID_POINTS;
    let mut grid = EvaluationGrid {
        x: Vec::with_capacity(rows),
        v: Vec::with_capacity(rows * v_dim),
        v_dim,
        g0: Vec::with_capacity(rows),
    };
    let mut cell = Vec::with_capacity(v_dim);
    for s in 1..=GROUPS {
        for &t in &times {
            cell.clear();
            cell.push(t);
            match cfg.variant {
                DemandVariant::Lowdim => cell.push(f64::from(s)),
                DemandVariant::VectorProxy => {
                    let d = cfg.proxy_dim;
                    let mu = &protos[(s as usize - 1) * d..s as usize * d];
                    for m in mu {
                        let e: f64 = rng.sample(StandardNormal);
                        cell.push(m + cfg.sigma_rep * e);
                    }
                }
            }
            for _ in 0..cfg.nuisance_dim {
                cell.push(rng.sample(StandardNormal));
            }
            for &p in &prices {
                grid.x.push(p);
                grid.v.extend_from_slice(&cell);
                grid.g0.push(structural_f0(p, t, s)?);
            }
        }
    }
    Ok(grid)
}
