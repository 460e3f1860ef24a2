//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
        adam_update(
            &self.config,
            &mut self.first_moment,
            &mut self.second_moment,
            &mut self.step_count,
            params,
            grads,
            learning_rate,
        )
    }

    /// One step over parameters stored in several disjoint slices, treated as
    /// a single vector in slice order.
    pub fn step_segments(
        &mut self,
        segments: &mut [&mut [f64]],
        grads: &[f64],
        learning_rate: f64,
    ) -> Result<()> {
        let total: usize = segments.iter().map(|s| s.len()).sum();
        if grads.len() != total || self.len() != total {
            return Err(Error::dims("Adam segmented parameters", self.len(), total.max(grads.len())));
        }
        check_grads(grads)?;
        self.step_count += 1;
        let t = self.step_count as f64;
        let mut offset = 0;
        for seg in segments.iter_mut() {
            let r = offset..offset + seg.len();
            apply(
                &self.config,
                &mut self.first_moment[r.clone()],
                &mut self.second_moment[r.clone()],
                t,
                seg,
                &grads[r],
                learning_rate,
            );
            offset += seg.len();
        }
        Ok(())
    }
}

fn check_grads(grads: &[f64]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            node: format!("gradient entry {i}"),
        }),
        None => Ok(()),
    }
}

/// Shared Adam kernel operating on borrowed moment buffers.
///
/// Leaves every buffer untouched when a gradient entry is non-finite.
pub fn adam_update(
    config: &AdamConfig,
    first_moment: &mut [f64],
    second_moment: &mut [f64],
    step_count: &mut u64,
    params: &mut [f64],
    grads: &[f64],
    learning_rate: f64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n {
        return Err(Error::dims("Adam gradient", n, grads.len()));
    }
    if first_moment.len() != n || second_moment.len() != n {
        return Err(Error::dims("Adam moment vectors", n, first_moment.len()));
    }
    check_grads(grads)?;
    *step_count += 1;
    apply(config, first_moment, second_moment, *step_count as f64, params, grads, learning_rate);
    Ok(())
}

fn apply(
    config: &AdamConfig,
    first_moment: &mut [f64],
    second_moment: &mut [f64],
    t: f64,
    params: &mut [f64],
    grads: &[f64],
    learning_rate: f64,
) {
    let n = params.len();
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = *config;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for i in 0..n {
        let g = grads[i];
        let m = beta1 * first_moment[i] + (1.0 - beta1) * g;
        let v = beta2 * second_moment[i] + (1.0 - beta2) * g * g;
        first_moment[i] = m;
        second_moment[i] = v;
        params[i] -= learning_rate * (m / bc1) / ((v / bc2).sqrt() + epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults() {
        let c = AdamConfig::default();
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.9, 0.99, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_magnitude() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        let lr = 1e-4;
        s.step(&mut p, &[0.5, -3.0], lr).unwrap();
        let eps = 1e-8;
        assert!((p[0] + lr * 0.5 / (0.5 + eps)).abs() < 1e-18);
        assert!((p[1] - lr * 3.0 / (3.0 + eps)).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = s.step(&mut p, &[1.0, f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step_count, 0);
        assert_eq!(s.first_moment, vec![0.0, 0.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        assert!(s.step(&mut p, &[1.0], 0.1).is_err());
    }

    #[test]
    fn segmented_step_matches_flat_step() {
        let grads = [0.3, -1.2, 2.0, 0.01, -0.5];
        let mut flat = AdamState::new(5, AdamConfig::default());
        let mut seg = flat.clone();
        let mut p = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let mut a = vec![1.0, 2.0];
        let mut b = vec![3.0, 4.0, 5.0];
        for _ in 0..3 {
            flat.step(&mut p, &grads, 0.1).unwrap();
            seg.step_segments(&mut [&mut a, &mut b], &grads, 0.1).unwrap();
        }
        assert_eq!(&p[..2], &a[..]);
        assert_eq!(&p[2..], &b[..]);
        assert_eq!(flat, seg);
    }

    proptest! {
        #[test]
        fn zero_learning_rate_never_moves(
            grads in prop::collection::vec(-1e3f64..1e3, 1..16),
            steps in 1usize..5,
        ) {
            let mut s = AdamState::new(grads.len(), AdamConfig::default());
            let mut p: Vec<f64> = (0..grads.len()).map(|i| i as f64 * 0.37 - 1.0).collect();
            let before = p.clone();
            for _ in 0..steps {
                s.step(&mut p, &grads, 0.0).unwrap();
            }
            prop_assert_eq!(p, before);
        }
    }
}
