use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSource, Diagnostics, Observed, ScalerKind};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// `W, U, eta ~ N(0, 1)`, `X = gamma W + U`, `eps = rho U + sqrt(1 - rho^2) eta`,
/// `Y = beta X + eps`, with no covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearIvConfig {
    pub n: usize,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub seed: u64,
}

pub fn gen_linear_iv(n: usize, beta: f64, gamma: f64, rho: f64, seed: u64) -> Result<Dataset> {
    let cfg = LinearIvConfig { n, beta, gamma, rho, seed };
    if cfg.gamma == 0.0 || !cfg.gamma.is_finite() {
        return Err(Error::InvalidConfig("gamma must be nonzero".into()));
    }
    if cfg.n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::InvalidConfig(format!("rho must lie in [0, 1], got {}", cfg.rho)));
    }
    let mut rng = stream_rng(cfg.seed, stream::DATA);
    let noise_scale = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut obs = Observed {
        x: Vec::with_capacity(cfg.n),
        y: Vec::with_capacity(cfg.n),
        w: Vec::with_capacity(cfg.n),
        v: Vec::new(),
        v_dim: 0,
    };
    let mut diag = Diagnostics::default();
    for _ in 0..cfg.n {
        let w: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.sample(StandardNormal);
        let eta: f64 = rng.sample(StandardNormal);
        let x = cfg.gamma * w + u;
        let eps = cfg.rho * u + noise_scale * eta;
        obs.x.push(x);
        obs.y.push(cfg.beta * x + eps);
        obs.w.push(w);
        diag.u.push(u);
        diag.eps.push(eps);
    }
    Ok(Dataset {
        observed: obs,
        diagnostics: diag,
        scaling: ScalerKind::Identity,
        source: DatasetSource::LinearIv(cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_rejected() {
        assert!(gen_linear_iv(10, 2.0, 0.0, 0.5, 1).is_err());
    }

    #[test]
    fn equations_hold() {
        let d = gen_linear_iv(100, 2.0, 1.5, 0.8, 3).unwrap();
        for i in 0..100 {
            let o = &d.observed;
            assert_eq!(o.x[i], 1.5 * o.w[i] + d.diagnostics.u[i]);
            assert_eq!(o.y[i], 2.0 * o.x[i] + d.diagnostics.eps[i]);
        }
        assert_eq!(d, gen_linear_iv(100, 2.0, 1.5, 0.8, 3).unwrap());
    }
}
