use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcompute::{Activation, AdamState, BatchCache, HeadSpec, HeadTransform, Network, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArchitecture {
    /// A single network on the full covariate vector.
    Mlp { hidden: Vec<usize> },
    /// Column 0 passes through; columns `1..` go through a ReLU feature block
    /// first, then both feed the body network.
    Proxy {
        feature_hidden: Vec<usize>,
        feature_dim: usize,
        hidden: Vec<usize>,
    },
}

impl EncoderArchitecture {
    pub fn lowdim() -> Self {
        EncoderArchitecture::Mlp { hidden: vec![64; 5] }
    }

    pub fn vector() -> Self {
        EncoderArchitecture::Proxy {
            feature_hidden: vec![128],
            feature_dim: 64,
            hidden: vec![128, 64],
        }
    }
}

/// Deterministic map from covariates to an initial latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub v_dim: usize,
    pub latent_dim: usize,
    /// Feature block on columns `1..` for the proxy variant.
    pub features: Option<Network>,
    pub body: Network,
}

/// Forward intermediates of a batch, kept for the reverse pass.
pub struct EncoderCache {
    batch: usize,
    features: Option<BatchCache>,
    body: BatchCache,
}

impl EncoderCache {
    /// `batch x latent_dim` encodings.
    pub fn latents(&self) -> &[f64] {
        self.body.head(0)
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        arch: &EncoderArchitecture,
        v_dim: usize,
        latent_dim: usize,
        activation: Activation,
        l2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let head = |name: &str, dim| vec![HeadSpec::new(name, dim, HeadTransform::Identity)];
        match arch {
            EncoderArchitecture::Mlp { hidden } => {
                let spec = NetworkSpec::new(v_dim, hidden.clone(), activation, head("z", latent_dim), l2)?;
                Ok(Encoder {
                    v_dim,
                    latent_dim,
                    features: None,
                    body: Network::new(spec, rng),
                })
            }
            EncoderArchitecture::Proxy {
                feature_hidden,
                feature_dim,
                hidden,
            } => {
                if v_dim < 2 {
                    return Err(Error::InvalidConfig("proxy encoder needs at least two columns".into()));
                }
                let fspec = NetworkSpec::new(
                    v_dim - 1,
                    feature_hidden.clone(),
                    Activation::Relu,
                    head("features", *feature_dim),
                    l2,
                )?;
                let bspec =
                    NetworkSpec::new(1 + feature_dim, hidden.clone(), activation, head("z", latent_dim), l2)?;
                let features = Network::new(fspec, rng);
                Ok(Encoder {
                    v_dim,
                    latent_dim,
                    features: Some(features),
                    body: Network::new(bspec, rng),
                })
            }
        }
    }

    fn networks(&self) -> impl Iterator<Item = &Network> {
        self.features.iter().chain(std::iter::once(&self.body))
    }

    pub fn parameter_count(&self) -> usize {
        self.networks().map(|n| n.params.total_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.networks().flat_map(|n| n.params.values.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::dims("encoder parameters", self.parameter_count(), values.len()));
        }
        let mut offset = 0;
        for net in self.features.iter_mut().chain(std::iter::once(&mut self.body)) {
            let n = net.params.values.len();
            net.params.values.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn adam_step(&mut self, state: &mut AdamState, grad: &[f64], lr: f64) -> Result<()> {
        let mut segs: Vec<&mut [f64]> = self
            .features
            .iter_mut()
            .chain(std::iter::once(&mut self.body))
            .map(|n| n.params.values.as_mut_slice())
            .collect();
        state.step_segments(&mut segs, grad, lr)
    }

    pub fn l2_penalty(&self) -> f64 {
        self.networks().map(|n| n.l2_penalty()).sum()
    }

    pub fn add_l2_gradient(&self, scale: f64, grad: &mut [f64]) {
        let mut offset = 0;
        for net in self.networks() {
            let n = net.params.total_count();
            net.add_l2_gradient(scale, &mut grad[offset..offset + n]);
            offset += n;
        }
    }

    pub fn forward(&self, v: &[f64], batch: usize) -> Result<EncoderCache> {
        if v.len() != batch * self.v_dim {
            return Err(Error::dims("encoder input", batch * self.v_dim, v.len()));
        }
        match &self.features {
            None => Ok(EncoderCache {
                batch,
                features: None,
                body: self.body.forward_batch(v, batch)?,
            }),
            Some(fnet) => {
                let d = self.v_dim;
                let proxy: Vec<f64> = v.chunks_exact(d).flat_map(|r| r[1..].iter().copied()).collect();
                let fcache = fnet.forward_batch(&proxy, batch)?;
                let fd = fnet.spec.heads[0].dim;
                let feats = fcache.head(0);
                let mut input = Vec::with_capacity(batch * (1 + fd));
                for i in 0..batch {
                    input.push(v[i * d]);
                    input.extend_from_slice(&feats[i * fd..(i + 1) * fd]);
                }
                Ok(EncoderCache {
                    batch,
                    body: self.body.forward_batch(&input, batch)?,
                    features: Some(fcache),
                })
            }
        }
    }

    /// `batch x latent_dim` encodings of covariate rows.
    pub fn encode(&self, v: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(v, batch)?.latents().to_vec())
    }

    /// Accumulates the parameter gradient of `sum(z_grad * z)`.
    pub fn backward(&self, cache: &EncoderCache, z_grad: &[f64], param_grad: &mut [f64]) -> Result<()> {
        let batch = cache.batch;
        match (&self.features, &cache.features) {
            (None, _) => self.body.backward_batch(&cache.body, &[Some(z_grad)], Some(param_grad), None),
            (Some(fnet), Some(fcache)) => {
                let nf = fnet.params.total_count();
                let (gf, gb) = param_grad.split_at_mut(nf);
                let width = self.body.input_dim();
                let mut d_in = vec![0.0; batch * width];
                self.body
                    .backward_batch(&cache.body, &[Some(z_grad)], Some(gb), Some(&mut d_in))?;
                let d_feat: Vec<f64> = d_in.chunks_exact(width).flat_map(|r| r[1..].iter().copied()).collect();
                fnet.backward_batch(fcache, &[Some(&d_feat)], Some(gf), None)
            }
            (Some(_), None) => Err(Error::InvalidInput("encoder cache lacks feature block".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcompute::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_gradient(arch: EncoderArchitecture, v_dim: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = Encoder::new(&arch, v_dim, 3, Activation::DEFAULT_LEAKY, 0.0, &mut rng).unwrap();
        let batch = 4;
        let v: Vec<f64> = (0..batch * v_dim).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let zg: Vec<f64> = (0..batch * 3).map(|k| ((k * 13 % 7) as f64 - 3.0) / 2.0).collect();
        let cache = enc.forward(&v, batch).unwrap();
        let mut grad = vec![0.0; enc.parameter_count()];
        enc.backward(&cache, &zg, &mut grad).unwrap();
        let params = enc.flat_params();
        let objective = |p: &[f64]| {
            let mut e = enc.clone();
            e.set_flat_params(p).unwrap();
            let z = e.encode(&v, batch).unwrap();
            z.iter().zip(&zg).map(|(a, b)| a * b).sum::<f64>()
        };
        let err = finite_difference_check(objective, &grad, &params, 1e-6);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        check_gradient(EncoderArchitecture::Mlp { hidden: vec![5, 4] }, 2);
    }

    #[test]
    fn proxy_gradient_matches_finite_differences() {
        let arch = EncoderArchitecture::Proxy {
            feature_hidden: vec![6],
            feature_dim: 3,
            hidden: vec![5],
        };
        check_gradient(arch, 5);
    }

    #[test]
    fn output_dim_is_latent_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(&EncoderArchitecture::vector(), 785, 6, Activation::DEFAULT_LEAKY, 1e-4, &mut rng)
            .unwrap();
        let z = enc.encode(&vec![0.1; 2 * 785], 2).unwrap();
        assert_eq!(z.len(), 12);
        assert_eq!(enc.features.as_ref().unwrap().input_dim(), 784);
    }
}
