use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    psi, structural_f0, Dataset, DatasetSource, DemandConfig, DemandVariant, Diagnostics,
    Observed, GROUPS,
};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// The airline demand design.
///
/// Per unit: `S ~ Unif{1..7}`, `T ~ Unif[0, 10]`, `C, U, eta ~ N(0, 1)`,
/// `eps = rho U + sqrt(1 - rho^2) eta`, `P = 25 + (C + 3) psi(T) + U` and
/// `Y = f0(P, T, S) + eps`. The instrument is `C`. The vector-proxy variant
/// replaces `S` in the covariates by a noisy group prototype.
pub fn gen_demand(cfg: &DemandConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = stream_rng(cfg.seed, stream::DATA);
    let noise_scale = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut diag = Diagnostics {
        u: Vec::with_capacity(n),
        eps: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
    };
    let (mut x, mut y, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let s: u8 = rng.random_range(1..=GROUPS);
        let t: f64 = rng.random_range(0.0..10.0);
        let c = normal(&mut rng);
        let u = normal(&mut rng);
        let eta = normal(&mut rng);
        let eps = cfg.rho * u + noise_scale * eta;
        let p = 25.0 + (c + 3.0) * psi(t) + u;
        x.push(p);
        y.push(structural_f0(p, t, s)? + eps);
        w.push(c);
        diag.u.push(u);
        diag.eps.push(eps);
        diag.t.push(t);
        diag.s.push(s);
    }

    let (v, v_dim) = match cfg.variant {
        DemandVariant::Lowdim => {
            let v = diag.t.iter().zip(&diag.s).flat_map(|(&t, &s)| [t, f64::from(s)]).collect();
            (v, 2)
        }
        DemandVariant::VectorProxy => {
            let protos = prototypes(cfg.feature_seed, cfg.proxy_dim);
            let mut noise = stream_rng(cfg.seed, stream::PROXY_NOISE);
            let d = cfg.proxy_dim;
            let mut v = Vec::with_capacity(n * (d + 1));
            for (&t, &s) in diag.t.iter().zip(&diag.s) {
                v.push(t);
                let mu = &protos[(s as usize - 1) * d..s as usize * d];
                v.extend(mu.iter().map(|m| m + cfg.sigma_rep * normal(&mut noise)));
            }
            (v, d + 1)
        }
    };

    let dataset = Dataset {
        observed: Observed { x, y, w, v, v_dim },
        diagnostics: diag,
        scaling: cfg.scaler_kind(),
        source: DatasetSource::Demand(*cfg),
    };
    let mut out = augment_nuisance(dataset, cfg.nuisance_dim, cfg.seed)?;
    out.source = DatasetSource::Demand(*cfg);
    Ok(out)
}

/// [`gen_demand`] restricted to the vector-proxy variant.
pub fn gen_vector_proxy(cfg: &DemandConfig) -> Result<Dataset> {
    if cfg.variant != DemandVariant::VectorProxy {
        return Err(Error::InvalidConfig("gen_vector_proxy needs the vector_proxy variant".into()));
    }
    gen_demand(cfg)
}

/// The seven group prototypes, row-major `7 x dim`, drawn `N(0, I)` from the
/// feature seed alone.
pub fn prototypes(feature_seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = stream_rng(feature_seed, stream::PROTOTYPES);
    (0..usize::from(GROUPS) * dim).map(|_| normal(&mut rng)).collect()
}

/// Appends `k` independent standard normal covariate columns.
pub fn augment_nuisance(mut dataset: Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Ok(dataset);
    }
    let obs = &dataset.observed;
    let n = obs.n();
    let old = obs.v_dim;
    let mut rng = stream_rng(seed, stream::NUISANCE);
    let mut v = Vec::with_capacity(n * (old + k));
    for i in 0..n {
        v.extend_from_slice(obs.v_row(i));
        v.extend((0..k).map(|_| normal(&mut rng)));
    }
    dataset.observed.v = v;
    dataset.observed.v_dim = old + k;
    if let DatasetSource::Demand(cfg) = &mut dataset.source {
        cfg.nuisance_dim += k;
    }
    Ok(dataset)
}
