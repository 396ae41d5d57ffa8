//! Central finite differences, used as the independent oracle for every analytic gradient.

use crate::error::{Error, Result};

/// `(L(p + h·e_i) − L(p − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient<F>(mut loss_fn: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = loss_fn(&p)?;
        p[i] = orig - h;
        let minus = loss_fn(&p)?;
        p[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all coordinates, with
/// `floor = 1e-2 · max|a|` so that coordinates that are zero up to rounding do
/// not dominate.
pub fn max_relative_deviation(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_difference_gradient(|p| Ok(p[0] * p[0]), &[3.0], 1e-6).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_loss_gives_zero() {
        let g = finite_difference_gradient(|_| Ok(2.5), &[1.0, -4.0, 0.0], 1e-6).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn nonpositive_step_rejected() {
        assert!(finite_difference_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }
}
