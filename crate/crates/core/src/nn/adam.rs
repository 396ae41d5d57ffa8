//! Bias-corrected Adam with per-layer learning rates taken from the network.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::nn::network::{DenseNetwork, Gradients};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<(DMatrix<f64>, DVector<f64>)>,
    second: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(net: &DenseNetwork) -> Self {
        Self::with_hyperparameters(net, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPSILON)
            .expect("default Adam hyperparameters are valid")
    }

    pub fn with_hyperparameters(net: &DenseNetwork, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(Error::Domain(format!(
                "invalid Adam hyperparameters beta1={beta1} beta2={beta2} eps={epsilon}"
            )));
        }
        let zeros: Vec<_> = net
            .layers()
            .iter()
            .map(|l| {
                (
                    DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    DVector::zeros(l.bias.len()),
                )
            })
            .collect();
        Ok(Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    state: (f64, f64, f64),
    bc1: f64,
    bc2: f64,
) {
    let (b1, b2, eps) = state;
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One Adam update of every layer, using each layer's own learning rate.
pub fn adam_step(net: &mut DenseNetwork, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    ensure_dim("adam gradient layers", net.layers().len(), grads.layers.len())?;
    ensure_dim("adam state layers", net.layers().len(), state.first.len())?;
    for ((l, g), (m, _)) in net.layers().iter().zip(&grads.layers).zip(&state.first) {
        if l.weights.shape() != g.weights.shape() || l.weights.shape() != m.shape() {
            return Err(Error::Dimension {
                context: "adam weight shapes",
                expected: l.weights.len(),
                found: g.weights.len(),
            });
        }
        ensure_dim("adam bias", l.bias.len(), g.bias.len())?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let hyper = (state.beta1, state.beta2, state.epsilon);
    for (k, layer) in net.layers_mut().iter_mut().enumerate() {
        let lr = layer.learning_rate;
        let (m_w, m_b) = &mut state.first[k];
        let (v_w, v_b) = &mut state.second[k];
        update(
            layer.weights.as_mut_slice(),
            grads.layers[k].weights.as_slice(),
            m_w.as_mut_slice(),
            v_w.as_mut_slice(),
            lr,
            hyper,
            bc1,
            bc2,
        );
        update(
            layer.bias.as_mut_slice(),
            grads.layers[k].bias.as_slice(),
            m_b.as_mut_slice(),
            v_b.as_mut_slice(),
            lr,
            hyper,
            bc1,
            bc2,
        );
    }
    Ok(())
}
