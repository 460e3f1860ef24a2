use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Zero sample variance; `p` is 1 for all-zero differences and 0
    /// otherwise.
    pub degenerate: bool,
}

/// One-sample t-test of the mean difference against zero.
pub fn paired_t_test(diffs: &[f64]) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidInput("paired t-test needs at least two differences".into()));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            node: "paired differences".into(),
        });
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest { t, p, degenerate: true });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Sum of the ranks of positive differences.
    pub w_plus: f64,
    /// Nonzero differences ranked.
    pub n: usize,
    /// Exact two-sided p-value.
    pub p: f64,
}

/// Ranks of `|d|` from 1, with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]].abs() == values[order[start]].abs() {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Signed-rank test with zero differences dropped and the exact null
/// distribution of the positive rank sum over all sign assignments.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<Wilcoxon> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite {
            node: "paired differences".into(),
        });
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::InvalidInput("all differences are zero".into()));
    }
    let ranks = average_ranks(&nonzero);
    // Average ranks are multiples of one half, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let w2: usize = nonzero
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let all = 2f64.powi(nonzero.len() as i32);
    let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
    let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
    Ok(Wilcoxon {
        w_plus: w2 as f64 / 2.0,
        n: nonzero.len(),
        p: (2.0 * lower.min(upper)).min(1.0),
    })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(pvalues: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &k) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * pvalues[k]).min(1.0));
        out[k] = running;
    }
    Ok(out)
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Median of a non-empty slice; the mean of the middle pair for even length.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t_examples() {
        let r = paired_t_test(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!((r.t, r.p, r.degenerate), (0.0, 1.0, false));
        let r = paired_t_test(&[1.0; 4]).unwrap();
        assert!(r.degenerate && r.p == 0.0);
        let r = paired_t_test(&[0.0; 4]).unwrap();
        assert!(r.degenerate && r.p == 1.0);
        assert!(paired_t_test(&[1.0]).is_err());
    }

    #[test]
    fn wilcoxon_examples() {
        assert_eq!(wilcoxon_signed_rank(&[0.3]).unwrap().p, 1.0);
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((r.w_plus, r.p), (15.0, 0.0625));
        assert!(wilcoxon_signed_rank(&[0.0, 0.0]).is_err());
        let r = wilcoxon_signed_rank(&[0.0, 1.0, -2.0]).unwrap();
        assert_eq!(r.n, 2);
    }

    #[test]
    fn tied_magnitudes_share_ranks() {
        assert_eq!(average_ranks(&[1.0, -1.0, 3.0, 2.0]), vec![1.5, 1.5, 4.0, 3.0]);
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_adjust(&[0.01, 0.04]).unwrap(), vec![0.02, 0.04]);
        assert_eq!(holm_adjust(&[0.3]).unwrap(), vec![0.3]);
        assert_eq!(holm_adjust(&[0.04, 0.01]).unwrap(), vec![0.04, 0.02]);
        assert_eq!(holm_adjust(&[0.5, 0.375, 0.25]).unwrap(), vec![0.75, 0.75, 0.75]);
        assert!(holm_adjust(&[1.5]).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]), (1.0, 0.0));
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn wilcoxon_sign_flip_symmetry(d in proptest::collection::vec(-5i32..5, 1..15)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            prop_assume!(d.iter().any(|&x| x != 0.0));
            let flipped: Vec<f64> = d.iter().map(|x| -x).collect();
            let a = wilcoxon_signed_rank(&d).unwrap();
            let b = wilcoxon_signed_rank(&flipped).unwrap();
            prop_assert!((a.p - b.p).abs() < 1e-15);
        }

        #[test]
        fn holm_monotone_and_bounded(p in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let adj = holm_adjust(&p).unwrap();
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in order.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            for (a, q) in adj.iter().zip(&p) {
                prop_assert!(*a <= 1.0 && a >= q);
            }
        }
    }
}
