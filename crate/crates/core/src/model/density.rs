use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard-normal log density summed over coordinates.
pub fn log_prior(z: &[f64]) -> f64 {
    z.iter().map(|&v| -0.5 * (LN_2PI + v * v)).sum()
}

#[inline]
pub fn gaussian_log_density(value: f64, mean: f64, var: f64) -> f64 {
    let r = value - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Partial derivatives of [`gaussian_log_density`] with respect to
/// `(mean, var)`.
#[inline]
pub fn gaussian_log_density_grad(value: f64, mean: f64, var: f64) -> (f64, f64) {
    let r = value - mean;
    let inv = 1.0 / var;
    (r * inv, 0.5 * (r * r * inv * inv - inv))
}

/// `c + ln(sum(exp(v - c))) - ln(M)` with `c = max(v)`.
pub fn log_mean_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("log_mean_exp values"));
    }
    Ok(log_sum_exp(values) - (values.len() as f64).ln())
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let c = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if c == f64::NEG_INFINITY || !c.is_finite() {
        return c;
    }
    let s: f64 = values.iter().map(|&v| (v - c).exp()).sum();
    c + s.ln()
}
