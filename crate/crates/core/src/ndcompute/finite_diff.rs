//! Central finite differences, used only to verify analytic gradients.

/// Max over coordinates of `|analytic - fd| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(objective: F, analytic: &[f64], at: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..at.len()).collect();
    finite_difference_check_coords(objective, analytic, at, step, &coords)
}

/// Same as [`finite_difference_check`] restricted to `coords`.
pub fn finite_difference_check_coords<F>(
    mut objective: F,
    analytic: &[f64],
    at: &[f64],
    step: f64,
    coords: &[usize],
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(analytic.len(), at.len(), "gradient / point length mismatch");
    let mut x = at.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + step;
        let up = objective(&x);
        x[i] = orig - step;
        let down = objective(&x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
