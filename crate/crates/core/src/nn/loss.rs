use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Values(&'a [f64]),
    Class(usize),
}

/// Smallest probability used inside the logarithm.
const PROB_FLOOR: f64 = 1e-300;

/// Loss value and its gradient with respect to `prediction`.
///
/// `Mse` is the mean of squared errors. `CrossEntropy` is `−ln p[class]` and
/// requires `prediction` to lie on the probability simplex.
pub fn task_loss(kind: LossKind, prediction: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::Mse, Target::Values(t)) => {
            ensure_dim("mse target", prediction.len(), t.len())?;
            if prediction.is_empty() {
                return Err(Error::Domain("mse over an empty vector".into()));
            }
            let n = prediction.len() as f64;
            let mut value = 0.0;
            let grad = prediction
                .iter()
                .zip(t)
                .map(|(p, t)| {
                    let d = p - t;
                    value += d * d;
                    2.0 * d / n
                })
                .collect();
            Ok((value / n, grad))
        }
        (LossKind::CrossEntropy, Target::Class(c)) => {
            if c >= prediction.len() {
                return Err(Error::Domain(format!(
                    "class {c} out of range for {} outputs",
                    prediction.len()
                )));
            }
            let sum: f64 = prediction.iter().sum();
            if prediction.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "cross-entropy needs a probability vector (sum = {sum})"
                )));
            }
            let p = prediction[c].max(PROB_FLOOR);
            let mut grad = vec![0.0; prediction.len()];
            grad[c] = -1.0 / p;
            Ok((-p.ln(), grad))
        }
        (LossKind::Mse, Target::Class(_)) => Err(Error::Domain("mse needs a value target, not a class index".into())),
        (LossKind::CrossEntropy, Target::Values(_)) => {
            Err(Error::Domain("cross-entropy needs a class index target".into()))
        }
    }
}
