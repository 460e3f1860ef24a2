//! Independent reference computations.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for
/// `int exp(-x^2) f(x) dx`. Nodes are eigenvalues of the Jacobi matrix,
/// isolated by Sturm-sequence bisection; weights come from the orthonormal
/// recurrence, carried with a running scale to avoid overflow.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off2: Vec<f64> = (1..n).map(|k| k as f64 / 2.0).collect();
    let below = |x: f64| {
        let mut count = 0;
        let mut q = -x;
        for k in 0..n {
            if k > 0 {
                q = -x - off2[k - 1] / q;
            }
            if q == 0.0 {
                q = -1e-300;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bound = (2.0 * n as f64).sqrt() + 1.0;
    let mut x = vec![0.0; n];
    for (k, xk) in x.iter_mut().enumerate() {
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        *xk = 0.5 * (lo + hi);
    }
    let nf = n as f64;
    let w = x
        .iter()
        .map(|&z| {
            let (mut p1, mut p2) = (PI.powf(-0.25), 0.0);
            let mut log_scale = 0.0;
            for j in 1..n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                if p1.abs() > 1e150 {
                    p1 *= 1e-150;
                    p2 *= 1e-150;
                    log_scale += 150.0 * std::f64::consts::LN_10;
                }
            }
            // p1 is the degree n-1 polynomial; w = 1 / (n p_{n-1}^2) in
            // orthonormal form, i.e. 2 / (2n p_{n-1}^2).
            (-(nf.ln()) - 2.0 * (p1.abs().ln() + log_scale)).exp()
        })
        .collect();
    (x, w)
}

/// `E[f(X)]` for `X ~ N(mu, sd^2)` by Gauss–Hermite quadrature.
pub fn normal_expectation(nodes: &(Vec<f64>, Vec<f64>), mu: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = nodes;
    let s: f64 = x.iter().zip(w).map(|(&t, &wk)| wk * f(mu + 2f64.sqrt() * sd * t)).sum();
    s / PI.sqrt()
}

pub fn normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean) * (y - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Composite Simpson rule with `intervals` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(intervals % 2 == 0);
    let h = (b - a) / intervals as f64;
    let mut s = f(a) + f(b);
    for k in 1..intervals {
        let c = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += c * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided Student-t p-value `P(|T| >= |t|)` with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Exact two-sided signed-rank p-value by enumerating every sign assignment.
pub fn wilcoxon_brute_force(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|&a| {
            let below = d.iter().filter(|&&b| b.abs() < a.abs()).count() as f64;
            let equal = d.iter().filter(|&&b| b.abs() == a.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if w <= observed + 1e-9 {
            le += 1;
        }
        if w >= observed - 1e-9 {
            ge += 1;
        }
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le.min(ge) as f64) / total).min(1.0)
}

/// Holm adjustment from its definition:
/// `adj_(i) = max_{j <= i} min(1, (m - j + 1) p_(j))` over sorted p-values.
pub fn holm_by_definition(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out = vec![0.0; m];
    for i in 0..m {
        let adj = (0..=i)
            .map(|j| (((m - j) as f64) * sorted[j].0).min(1.0))
            .fold(0.0, f64::max);
        out[sorted[i].1] = adj;
    }
    out
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
