use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            3 => Some(Activation::Softmax),
            _ => None,
        }
    }

    /// Applies the activation column-wise (one column per sample).
    fn apply(self, mut z: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Linear => z,
            Activation::Relu => {
                z.apply(|v| *v = v.max(0.0));
                z
            }
            Activation::Sigmoid => {
                z.apply(|v| *v = sigmoid(*v));
                z
            }
            Activation::Softmax => {
                for mut col in z.column_iter_mut() {
                    let max = col.max();
                    col.apply(|v| *v = (*v - max).exp());
                    let sum = col.sum();
                    col /= sum;
                }
                z
            }
        }
    }

    /// Maps the gradient w.r.t. the activation output to the gradient w.r.t. its input.
    fn backprop(self, output: &DMatrix<f64>, mut grad: DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Linear => grad,
            Activation::Relu => {
                grad.zip_apply(output, |g, o| {
                    if o <= 0.0 {
                        *g = 0.0
                    }
                });
                grad
            }
            Activation::Sigmoid => {
                grad.zip_apply(output, |g, s| *g *= s * (1.0 - s));
                grad
            }
            Activation::Softmax => {
                for (mut g, s) in grad.column_iter_mut().zip(output.column_iter()) {
                    let dot = g.dot(&s);
                    g.zip_apply(&s, |gi, si| *gi = si * (*gi - dot));
                }
                grad
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One fully connected layer: `out = act(W·in + b)`, `W` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
    pub learning_rate: f64,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Forward pass over a batch (`in × B`), returning the activated output (`out × B`).
    pub fn forward(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights * input;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        self.activation.apply(z)
    }

    /// Backward pass given the layer input, its output and the gradient w.r.t. the output.
    pub fn backward(
        &self,
        input: &DMatrix<f64>,
        output: &DMatrix<f64>,
        output_grad: DMatrix<f64>,
    ) -> (LayerGradient, DMatrix<f64>) {
        let dz = self.activation.backprop(output, output_grad);
        let weights = &dz * input.transpose();
        let bias = DVector::from_iterator(dz.nrows(), dz.row_iter().map(|r| r.sum()));
        let input_grad = self.weights.transpose() * &dz;
        (LayerGradient { weights, bias }, input_grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Flattened in the same order as [`DenseNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded during a forward pass: `values[0]` is the input and
/// `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    generation: u64,
    shapes: Vec<(usize, usize)>,
    values: Vec<DMatrix<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DMatrix<f64> {
        self.values.last().expect("trace always holds the input")
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.values[0]
    }

    pub fn batch_size(&self) -> usize {
        self.values[0].ncols()
    }

    pub fn layer_output(&self, k: usize) -> &DMatrix<f64> {
        &self.values[k + 1]
    }
}

/// Feed-forward stack of dense layers with per-layer learning rates.
///
/// Every parameter update bumps `generation`; traces recorded before the update
/// are rejected by [`DenseNetwork::backward`].
#[derive(Debug, Clone)]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
    generation: u64,
}

impl PartialEq for DenseNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            ensure_dim("layer bias", l.weights.nrows(), l.bias.len())?;
            if l.weights.nrows() == 0 || l.weights.ncols() == 0 {
                return Err(Error::Domain(format!("layer {k} has an empty weight matrix")));
            }
            if !(l.learning_rate > 0.0) {
                return Err(Error::Domain(format!(
                    "layer {k} learning rate must be positive, got {}",
                    l.learning_rate
                )));
            }
            if l.activation == Activation::Softmax && k + 1 != layers.len() {
                return Err(Error::Domain("softmax is only allowed as the final activation".into()));
            }
            if k > 0 {
                ensure_dim("layer chaining", layers[k - 1].output_dim(), l.input_dim())?;
            }
        }
        Ok(Self { layers, generation: 0 })
    }

    /// Gaussian-initialized weights (zero mean, `init_std`), zero biases.
    /// `sizes` lists the input width followed by every layer's output width.
    pub fn gaussian<R: Rng>(
        sizes: &[usize],
        activations: &[Activation],
        learning_rates: &[f64],
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Domain("need an input width and at least one layer width".into()));
        }
        let n = sizes.len() - 1;
        ensure_dim("activation list", n, activations.len())?;
        ensure_dim("learning-rate list", n, learning_rates.len())?;
        if !(init_std >= 0.0) {
            return Err(Error::Domain(format!("init std must be nonnegative, got {init_std}")));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Domain(e.to_string()))?;
        let layers = (0..n)
            .map(|k| DenseLayer {
                weights: DMatrix::from_fn(sizes[k + 1], sizes[k], |_, _| normal.sample(rng)),
                bias: DVector::zeros(sizes[k + 1]),
                activation: activations[k],
                learning_rate: learning_rates[k],
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to the layers; counts as a parameter update.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.learning_rate).collect()
    }

    pub fn halve_learning_rates(&mut self) {
        for l in &mut self.layers {
            l.learning_rate *= 0.5;
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer (weights column-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        ensure_dim("flat parameter vector", self.parameter_count(), params.len())?;
        let mut offset = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Batched forward pass; `inputs` holds one sample per column.
    pub fn forward_batch(&self, inputs: DMatrix<f64>) -> Result<Trace> {
        ensure_dim("network input", self.input_dim(), inputs.nrows())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(inputs);
        for l in &self.layers {
            let next = l.forward(values.last().unwrap());
            values.push(next);
        }
        Ok(Trace {
            generation: self.generation,
            shapes: self.layers.iter().map(|l| l.weights.shape()).collect(),
            values,
        })
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("network input", self.input_dim(), inputs.nrows())?;
        let mut x = self.layers[0].forward(inputs);
        for l in &self.layers[1..] {
            x = l.forward(&x);
        }
        Ok(x)
    }

    /// Reverse-mode gradients of `sum(output_grad ⊙ output)` with respect to the
    /// parameters and the input.
    pub fn backward(&self, trace: &Trace, output_grad: DMatrix<f64>) -> Result<(Gradients, DMatrix<f64>)> {
        if trace.generation != self.generation {
            return Err(Error::Trace(format!(
                "trace recorded at generation {}, network is at generation {}",
                trace.generation, self.generation
            )));
        }
        let shapes: Vec<_> = self.layers.iter().map(|l| l.weights.shape()).collect();
        if trace.shapes != shapes {
            return Err(Error::Trace(
                "trace was recorded on a network of different shape".into(),
            ));
        }
        if output_grad.shape() != trace.output().shape() {
            return Err(Error::Trace(format!(
                "output gradient shape {:?} does not match trace output {:?}",
                output_grad.shape(),
                trace.output().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad;
        for (k, l) in self.layers.iter().enumerate().rev() {
            let (lg, input_grad) = l.backward(&trace.values[k], &trace.values[k + 1], g);
            grads.push(lg);
            g = input_grad;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }
}

/// Single-sample forward pass.
pub fn network_forward(net: &DenseNetwork, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
    let trace = net.forward_batch(DMatrix::from_column_slice(input.len(), 1, input))?;
    Ok((trace.output().as_slice().to_vec(), trace))
}

/// Single-sample backward pass.
pub fn network_backward(net: &DenseNetwork, trace: &Trace, output_gradient: &[f64]) -> Result<(Gradients, Vec<f64>)> {
    let g = DMatrix::from_column_slice(output_gradient.len(), 1, output_gradient);
    let (grads, input_grad) = net.backward(trace, g)?;
    Ok((grads, input_grad.as_slice().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_difference_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(weights: DMatrix<f64>, bias: DVector<f64>) -> DenseNetwork {
        DenseNetwork::new(vec![DenseLayer {
            weights,
            bias,
            activation: Activation::Linear,
            learning_rate: 1e-3,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = linear(DMatrix::identity(3, 3), DVector::zeros(3));
        let (out, _) = network_forward(&net, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_weights_output_bias() {
        let b = DVector::from_vec(vec![0.3, -0.7]);
        let net = linear(DMatrix::zeros(2, 4), b.clone());
        let (out, _) = network_forward(&net, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, b.as_slice());
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNetwork::gaussian(&[5, 4], &[Activation::Softmax], &[1e-3], 10.0, &mut rng).unwrap();
        for s in 0..20 {
            let x: Vec<f64> = (0..5).map(|i| ((s * 7 + i) % 11) as f64 - 5.0).collect();
            let (out, _) = network_forward(&net, &x).unwrap();
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn softmax_must_be_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = DenseNetwork::gaussian(
            &[2, 3, 2],
            &[Activation::Softmax, Activation::Linear],
            &[1e-3, 1e-3],
            0.1,
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn chaining_is_checked() {
        let l1 = DenseLayer {
            weights: DMatrix::zeros(3, 2),
            bias: DVector::zeros(3),
            activation: Activation::Relu,
            learning_rate: 1e-3,
        };
        let l2 = DenseLayer {
            weights: DMatrix::zeros(1, 4),
            bias: DVector::zeros(1),
            activation: Activation::Linear,
            learning_rate: 1e-3,
        };
        assert!(matches!(DenseNetwork::new(vec![l1, l2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn input_dimension_checked() {
        let net = linear(DMatrix::identity(3, 3), DVector::zeros(3));
        assert!(matches!(network_forward(&net, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNetwork::gaussian(
            &[3, 4, 2],
            &[Activation::Relu, Activation::Sigmoid],
            &[1e-3, 1e-3],
            0.5,
            &mut rng,
        )
        .unwrap();
        let (_, trace) = network_forward(&net, &[0.2, -0.1, 0.4]).unwrap();
        let (g, gin) = network_backward(&net, &trace, &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(gin.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_input_gradient_is_transpose_product() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let net = linear(w.clone(), DVector::zeros(2));
        let (_, trace) = network_forward(&net, &[0.1, 0.2, 0.3]).unwrap();
        let (_, gin) = network_backward(&net, &trace, &[0.7, -1.3]).unwrap();
        let expect = w.transpose() * DVector::from_vec(vec![0.7, -1.3]);
        assert_eq!(gin, expect.as_slice());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut net = linear(DMatrix::identity(2, 2), DVector::zeros(2));
        let (_, trace) = network_forward(&net, &[1.0, 2.0]).unwrap();
        net.layers_mut()[0].bias[0] = 1.0;
        assert!(matches!(
            network_backward(&net, &trace, &[1.0, 1.0]),
            Err(Error::Trace(_))
        ));
        let other = linear(DMatrix::identity(3, 3), DVector::zeros(3));
        let (_, trace3) = network_forward(&other, &[1.0, 2.0, 3.0]).unwrap();
        let fresh = linear(DMatrix::identity(2, 2), DVector::zeros(2));
        assert!(matches!(
            network_backward(&fresh, &trace3, &[1.0, 1.0, 1.0]),
            Err(Error::Trace(_))
        ));
    }

    #[test]
    fn three_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = DenseNetwork::gaussian(
            &[4, 6, 5, 3],
            &[Activation::Relu, Activation::Sigmoid, Activation::Linear],
            &[1e-3; 3],
            0.7,
            &mut rng,
        )
        .unwrap();
        let x = [0.3, -0.8, 0.5, 1.1];
        let upstream = [0.4, -1.2, 0.9];
        let (_, trace) = network_forward(&net, &x).unwrap();
        let (grads, _) = network_backward(&net, &trace, &upstream).unwrap();
        let analytic = grads.flatten();
        let mut probe = net.clone();
        let numeric = finite_difference_gradient(
            |p| {
                probe.set_parameters(p)?;
                let (out, _) = network_forward(&probe, &x)?;
                Ok(out.iter().zip(&upstream).map(|(o, u)| o * u).sum())
            },
            &net.parameters(),
            1e-6,
        )
        .unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }
}
