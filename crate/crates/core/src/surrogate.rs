//! Three-port measurement network: a row-wise hypernetwork `g(C; Θ)` mapping
//! one coding-pattern row to one complex row of the measurement weights `W_C`,
//! composed with the linear measurement map `f(x; W_C) = W_C·x`.
//!
//! The hypernetwork sees the reflection coefficients (±1) of a row and emits
//! `2N` reals laid out as `[re_0 .. re_{N-1}, im_0 .. im_{N-1}]`, multiplied by
//! `weight_scale`. Training normalizes scenes and measurements by their RMS and
//! rescales by `√(P·N)`, so that the hypernetwork's own weights have a fixed
//! typical size and an Adam step of size `lr` has the same relative effect at
//! every scale.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::coding::random_pattern;
use crate::error::{config_err, ensure_dim, Error, Result};
use crate::nn::{adam_step, Activation, AdamState, DenseNetwork, Gradients, LayerGradient};
use crate::pattern::CodingPattern;
use crate::physics::{forward_measure, median, noiseless_measure, MeasurementVector, SceneGrid, SensingGeometry};
use crate::rng::{derive_seed, rng_from, tag};

/// Hypernetwork shape and training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MannConfig {
    /// Hidden relu widths; empty means a single linear layer.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_std: f64,
}

impl Default for MannConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 101,
            init_std: 1e-3,
        }
    }
}

/// One supervised sample `(x, C, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MannTriple {
    pub scene: SceneGrid,
    pub pattern: CodingPattern,
    pub measurement: MeasurementVector,
}

/// Summary of per-measurement relative errors against the physics oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityStats {
    pub median: f64,
    pub p90: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSurrogate {
    hypernet: DenseNetwork,
    n_pixels: usize,
    weight_scale: f64,
    trained: bool,
    injected: Option<(CodingPattern, DMatrix<Complex64>)>,
    pub fidelity: Option<FidelityStats>,
}

impl MeasurementSurrogate {
    /// Untrained surrogate with Gaussian-initialized hypernetwork weights.
    pub fn new(n_atoms: usize, n_pixels: usize, config: &MannConfig, seed: u64) -> Result<Self> {
        if n_atoms == 0 || n_pixels == 0 {
            return Err(Error::Domain("surrogate needs positive atom and pixel counts".into()));
        }
        let mut sizes = vec![n_atoms];
        sizes.extend(&config.hidden);
        sizes.push(2 * n_pixels);
        let mut activations = vec![Activation::Relu; config.hidden.len()];
        activations.push(Activation::Linear);
        let lrs = vec![config.learning_rate; activations.len()];
        let mut rng = rng_from(seed, &[tag::MANN]);
        let hypernet = DenseNetwork::gaussian(&sizes, &activations, &lrs, config.init_std, &mut rng)?;
        Self::from_parts(hypernet, weight_scale_default(), false)
    }

    /// Reassembles a surrogate from a stored hypernetwork.
    pub fn from_parts(hypernet: DenseNetwork, weight_scale: f64, trained: bool) -> Result<Self> {
        let out = hypernet.output_dim();
        if !out.is_multiple_of(2) {
            return Err(Error::Domain(format!("hypernetwork output width {out} is not even")));
        }
        if hypernet.layers().last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(Error::Domain("hypernetwork must end in a linear layer".into()));
        }
        if !(weight_scale > 0.0 && weight_scale.is_finite()) {
            return Err(Error::Domain(format!(
                "weight scale must be positive, got {weight_scale}"
            )));
        }
        Ok(Self {
            hypernet,
            n_pixels: out / 2,
            weight_scale,
            trained,
            injected: None,
            fidelity: None,
        })
    }

    pub fn hypernet(&self) -> &DenseNetwork {
        &self.hypernet
    }

    pub fn weight_scale(&self) -> f64 {
        self.weight_scale
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn n_atoms(&self) -> usize {
        self.hypernet.input_dim()
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    /// Overrides `W_C` for exactly this pattern (e.g. with the oracle `H`).
    /// Other patterns still go through the hypernetwork.
    pub fn inject_weights(&mut self, pattern: &CodingPattern, weights: DMatrix<Complex64>) -> Result<()> {
        ensure_dim("injected weight rows", pattern.rows(), weights.nrows())?;
        ensure_dim("injected weight columns", self.n_pixels, weights.ncols())?;
        self.injected = Some((pattern.clone(), weights));
        self.trained = true;
        Ok(())
    }

    fn hypernet_output(&self, pattern: &CodingPattern) -> Result<DMatrix<f64>> {
        ensure_dim("surrogate pattern columns", self.n_atoms(), pattern.cols())?;
        let coeffs = pattern.coefficient_matrix().transpose();
        self.hypernet.predict_batch(&coeffs)
    }

    /// Real and imaginary parts of `W_C`, each `M × N`.
    pub fn weights_re_im(&self, pattern: &CodingPattern) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if let Some((p, w)) = &self.injected {
            if p == pattern {
                return Ok((w.map(|z| z.re), w.map(|z| z.im)));
            }
        }
        let out = self.hypernet_output(pattern)?;
        let n = self.n_pixels;
        let s = self.weight_scale;
        let re = out.rows(0, n).transpose() * s;
        let im = out.rows(n, n).transpose() * s;
        Ok((re, im))
    }

    /// Noiseless measurements of a batch of scenes (columns of `scenes`),
    /// returned as real and imaginary `M × B` blocks.
    pub fn measure_batch(
        &self,
        pattern: &CodingPattern,
        scenes: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        ensure_dim("surrogate scene length", self.n_pixels, scenes.nrows())?;
        let (re, im) = self.weights_re_im(pattern)?;
        Ok((re * scenes, im * scenes))
    }
}

/// Typical magnitude of a trained hypernetwork weight in normalized units.
const NORMALIZED_WEIGHT: f64 = 0.1;

fn weight_scale_default() -> f64 {
    1.0
}

/// `W_C`, one complex row per pattern row.
pub fn generate_weights(surrogate: &MeasurementSurrogate, pattern: &CodingPattern) -> Result<DMatrix<Complex64>> {
    let (re, im) = surrogate.weights_re_im(pattern)?;
    Ok(re.zip_map(&im, Complex64::new))
}

/// `y = W_C·x`, noiseless.
pub fn mann_measure(
    surrogate: &MeasurementSurrogate,
    pattern: &CodingPattern,
    scene: &SceneGrid,
) -> Result<MeasurementVector> {
    let x = DMatrix::from_column_slice(scene.len(), 1, scene.values());
    let (re, im) = surrogate.measure_batch(pattern, &x)?;
    Ok(MeasurementVector {
        values: re.iter().zip(im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect(),
    })
}

/// Triples pairing each scene (cycled) with a fresh random pattern of
/// `rows_per_triple` rows, measured through the oracle with the geometry's noise.
pub fn oracle_triples(
    geom: &SensingGeometry,
    scenes: &[SceneGrid],
    count: usize,
    rows_per_triple: usize,
    seed: u64,
) -> Result<Vec<MannTriple>> {
    if scenes.is_empty() {
        return Err(Error::Data("triple generation needs at least one scene".into()));
    }
    (0..count)
        .map(|k| {
            let scene = scenes[k % scenes.len()].clone();
            let pattern = random_pattern(
                rows_per_triple,
                geom.n_atoms(),
                derive_seed(seed, &[tag::MANN, k as u64]),
            )?;
            let noise_seed = derive_seed(seed, &[tag::MANN, tag::BATCH_NOISE, k as u64]);
            let measurement = forward_measure(geom, &pattern, &scene, noise_seed)?;
            Ok(MannTriple {
                scene,
                pattern,
                measurement,
            })
        })
        .collect()
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Mean squared complex error of a mini-batch (normalized units) and its
/// hypernetwork gradient.
fn batch_loss_and_gradient(
    net: &DenseNetwork,
    triples: &[&MannTriple],
    x_scale: f64,
    y_scale: f64,
) -> Result<(f64, Gradients)> {
    let n = net.output_dim() / 2;
    let p = net.input_dim();
    let b = triples.len();
    let x = DMatrix::from_fn(n, b, |i, s| triples[s].scene.values()[i] / x_scale);
    let rows: usize = triples.iter().map(|t| t.pattern.rows()).sum();
    let norm = 2.0 / rows as f64;
    let mut loss = 0.0;

    if net.layers().len() == 1 {
        // Linear hypernetwork: y_m = c_mᵀ(W_reᵀ x) + b_reᵀ x (and likewise for im),
        // so the cost per scene is independent of the number of rows.
        let layer = &net.layers()[0];
        let wt = layer.weights.transpose();
        let v_re = wt.columns(0, n) * &x;
        let v_im = wt.columns(n, n) * &x;
        let bx_re = layer.bias.rows(0, n).transpose() * &x;
        let bx_im = layer.bias.rows(n, n).transpose() * &x;
        let mut g_re = DMatrix::zeros(p, b);
        let mut g_im = DMatrix::zeros(p, b);
        let mut h_re = DVector::zeros(b);
        let mut h_im = DVector::zeros(b);
        for (s, t) in triples.iter().enumerate() {
            for m in 0..t.pattern.rows() {
                let row = t.pattern.row(m);
                let mut pr = bx_re[s];
                let mut pi = bx_im[s];
                for (a, &bit) in row.iter().enumerate() {
                    let c = CodingPattern::coefficient(bit);
                    pr += c * v_re[(a, s)];
                    pi += c * v_im[(a, s)];
                }
                let target = t.measurement.values[m] / y_scale;
                let (rr, ri) = (pr - target.re, pi - target.im);
                loss += rr * rr + ri * ri;
                let (gr, gi) = (norm * rr, norm * ri);
                for (a, &bit) in row.iter().enumerate() {
                    let c = CodingPattern::coefficient(bit);
                    g_re[(a, s)] += gr * c;
                    g_im[(a, s)] += gi * c;
                }
                h_re[s] += gr;
                h_im[s] += gi;
            }
        }
        let mut weights = DMatrix::zeros(2 * n, p);
        weights.rows_mut(0, n).copy_from(&(&x * g_re.transpose()));
        weights.rows_mut(n, n).copy_from(&(&x * g_im.transpose()));
        let mut bias = DVector::zeros(2 * n);
        bias.rows_mut(0, n).copy_from(&(&x * h_re));
        bias.rows_mut(n, n).copy_from(&(&x * h_im));
        return Ok((
            loss / rows as f64,
            Gradients {
                layers: vec![LayerGradient { weights, bias }],
            },
        ));
    }

    let mut coeffs = DMatrix::zeros(p, rows);
    let mut owner = Vec::with_capacity(rows);
    let mut r = 0;
    for (s, t) in triples.iter().enumerate() {
        for m in 0..t.pattern.rows() {
            for (a, &bit) in t.pattern.row(m).iter().enumerate() {
                coeffs[(a, r)] = CodingPattern::coefficient(bit);
            }
            owner.push((s, m));
            r += 1;
        }
    }
    let trace = net.forward_batch(coeffs)?;
    let out = trace.output();
    let mut grad = DMatrix::zeros(2 * n, rows);
    for (r, &(s, m)) in owner.iter().enumerate() {
        let xs = x.column(s);
        let pr = out.column(r).rows(0, n).dot(&xs);
        let pi = out.column(r).rows(n, n).dot(&xs);
        let target = triples[s].measurement.values[m] / y_scale;
        let (rr, ri) = (pr - target.re, pi - target.im);
        loss += rr * rr + ri * ri;
        grad.column_mut(r).rows_mut(0, n).copy_from(&(xs * (norm * rr)));
        grad.column_mut(r).rows_mut(n, n).copy_from(&(xs * (norm * ri)));
    }
    let (grads, _) = net.backward(&trace, grad)?;
    Ok((loss / rows as f64, grads))
}

/// Fits Θ to the triples with Adam; returns the mean training loss of every
/// epoch (in normalized units).
pub fn train_mann(
    surrogate: &mut MeasurementSurrogate,
    triples: &[MannTriple],
    config: &MannConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if triples.is_empty() {
        return Err(Error::Data("m-ANN training needs at least one triple".into()));
    }
    if config.batch_size == 0 {
        return Err(config_err("mann.batch_size", "must be positive"));
    }
    for t in triples {
        ensure_dim("triple scene length", surrogate.n_pixels, t.scene.len())?;
        ensure_dim("triple pattern columns", surrogate.n_atoms(), t.pattern.cols())?;
        ensure_dim("triple measurement length", t.pattern.rows(), t.measurement.len())?;
    }
    let x_scale = rms(triples.iter().flat_map(|t| t.scene.values().iter().map(|v| v * v)));
    let y_scale = rms(triples
        .iter()
        .flat_map(|t| t.measurement.values.iter().map(|z| z.norm_sqr())));
    if !(x_scale > 0.0 && y_scale > 0.0) {
        return Err(Error::Data("triples have all-zero scenes or measurements".into()));
    }

    // A trained map is re-expressed in the new normalization (exact for the
    // linear output layer); a fresh initialization is taken as normalized already.
    let fan = ((surrogate.n_atoms() * surrogate.n_pixels) as f64).sqrt() * NORMALIZED_WEIGHT;
    let new_scale = y_scale / (x_scale * fan);
    if surrogate.trained {
        let ratio = surrogate.weight_scale / new_scale;
        let last = surrogate.hypernet.layers_mut().last_mut().expect("nonempty network");
        last.weights *= ratio;
        last.bias *= ratio;
    }
    surrogate.weight_scale = new_scale;
    surrogate.injected = None;

    let mut adam = AdamState::new(&surrogate.hypernet);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = rng_from(seed, &[tag::MANN, tag::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MannTriple> = chunk.iter().map(|&k| &triples[k]).collect();
            let (loss, grads) = batch_loss_and_gradient(&surrogate.hypernet, &batch, x_scale * fan, y_scale)?;
            if !loss.is_finite() {
                return Err(Error::Optimizer(format!("non-finite m-ANN loss at epoch {epoch}")));
            }
            adam_step(&mut surrogate.hypernet, &grads, &mut adam)?;
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    surrogate.trained = true;
    Ok(curve)
}

/// Relative errors `|y_mann − y_oracle| / (|y_oracle| + ε)` over every
/// (pattern, scene, row), with `ε = 1e-9 · max |y_oracle|`. The summary is also
/// stored on the surrogate.
pub fn mann_fidelity_report(
    surrogate: &mut MeasurementSurrogate,
    geom: &SensingGeometry,
    test_patterns: &[CodingPattern],
    test_scenes: &[SceneGrid],
) -> Result<FidelityStats> {
    let mut pairs = Vec::new();
    for p in test_patterns {
        for s in test_scenes {
            let oracle = noiseless_measure(geom, p, s)?;
            let approx = mann_measure(surrogate, p, s)?;
            pairs.extend(oracle.values.into_iter().zip(approx.values));
        }
    }
    let peak = pairs.iter().fold(0.0f64, |m, (o, _)| m.max(o.norm()));
    let eps = 1e-9 * peak + f64::MIN_POSITIVE;
    let mut errors: Vec<f64> = pairs.iter().map(|(o, a)| (a - o).norm() / (o.norm() + eps)).collect();
    let count = errors.len();
    let stats = if count == 0 {
        FidelityStats {
            median: f64::NAN,
            p90: f64::NAN,
            count,
        }
    } else {
        let med = median(&mut errors);
        let idx = ((0.9 * count as f64).ceil() as usize).clamp(1, count) - 1;
        FidelityStats {
            median: med,
            p90: errors[idx],
            count,
        }
    };
    surrogate.fidelity = Some(stats);
    Ok(stats)
}
