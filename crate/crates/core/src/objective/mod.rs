//! Variational sensing objective and the training loops built on it.
//!
//! The loss of a mini-batch is
//!
//! ```text
//! L = recon / (2 σ_dec²) + β · KL
//! ```
//!
//! where `recon` is the batch mean of the per-sample task loss (pixel-mean squared
//! error for imaging, cross-entropy for recognition) and `KL` the batch mean of
//! the closed-form divergence between `CN(μ, σ_n²)` per channel and the prior
//! `CN(0, σ_p²)`. The decoder input is `[Re y; Im y] / σ_p`.

pub mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;

pub use train::{
    build_phi, train_stage1, train_stage2_joint, EpochRecord, PhiState, Splits, Stage, TrainConfig, TrainLog,
};

use crate::error::{config_err, ensure_dim, Error, Result};
use crate::nn::{task_loss, DenseNetwork, Gradients, LossKind, Target};
use crate::pattern::CodingPattern;
use crate::physics::{complex_noise, SceneGrid, SensingGeometry};
use crate::rng::rng_from;
use crate::scenes::{classification_report, ssim, ConfusionMatrix, Dataset};
use crate::surrogate::MeasurementSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Imaging,
    Recognition,
}

impl Task {
    pub fn loss_kind(self) -> LossKind {
        match self {
            Task::Imaging => LossKind::Mse,
            Task::Recognition => LossKind::CrossEntropy,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Imaging => "imaging",
            Task::Recognition => "recognition",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "imaging" => Ok(Task::Imaging),
            "recognition" => Ok(Task::Recognition),
            _ => Err(config_err("task", format!("expected imaging|recognition, got {s:?}"))),
        }
    }
}

/// Source of the measurements seen by the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementMode {
    Oracle,
    Surrogate,
}

impl fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeasurementMode::Oracle => "oracle",
            MeasurementMode::Surrogate => "surrogate",
        })
    }
}

impl FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(MeasurementMode::Oracle),
            "surrogate" => Ok(MeasurementMode::Surrogate),
            _ => Err(config_err(
                "measurement",
                format!("expected oracle|surrogate, got {s:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub kl_weight: f64,
    pub prior_std: f64,
    pub decoder_noise_std: f64,
    pub measurement_mode: MeasurementMode,
    pub task: Task,
}

impl VaeConfig {
    /// Defaults for a task with the prior scale still to be calibrated.
    pub fn for_task(task: Task, prior_std: f64) -> Self {
        Self {
            kl_weight: 1e-2,
            prior_std,
            decoder_noise_std: default_decoder_noise_std(task),
            measurement_mode: MeasurementMode::Oracle,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(config_err(
                "vae.kl_weight",
                format!("must be ≥ 0, got {}", self.kl_weight),
            ));
        }
        if !(self.prior_std > 0.0 && self.prior_std.is_finite()) {
            return Err(config_err(
                "vae.prior_std",
                format!("must be > 0, got {}", self.prior_std),
            ));
        }
        if !(self.decoder_noise_std > 0.0 && self.decoder_noise_std.is_finite()) {
            return Err(config_err(
                "vae.decoder_noise_std",
                format!("must be > 0, got {}", self.decoder_noise_std),
            ));
        }
        Ok(())
    }
}

/// `σ_dec` default: 0.1 for imaging; `1/√2` for recognition, which makes the
/// cross-entropy weight `1/(2σ²)` exactly one.
pub fn default_decoder_noise_std(task: Task) -> f64 {
    match task {
        Task::Imaging => 0.1,
        Task::Recognition => std::f64::consts::FRAC_1_SQRT_2,
    }
}

const MIN_NOISE_STD: f64 = 1e-12;

fn check_stds(noise_std: f64, prior_std: f64) -> Result<()> {
    if !(noise_std >= MIN_NOISE_STD) {
        return Err(Error::Domain(format!(
            "measurement noise std {noise_std} below {MIN_NOISE_STD}; KL diverges"
        )));
    }
    if !(prior_std > 0.0) {
        return Err(Error::Domain(format!("prior std must be positive, got {prior_std}")));
    }
    Ok(())
}

/// `Σ_i log(σ_p²/σ_n²) + (σ_n² + |μ_i|²)/σ_p² − 1` over the complex channels.
pub fn kl_gaussian(mean: &[Complex64], noise_std: f64, prior_std: f64) -> Result<f64> {
    check_stds(noise_std, prior_std)?;
    let (sn2, sp2) = (noise_std * noise_std, prior_std * prior_std);
    let constant = (sp2 / sn2).ln() + sn2 / sp2 - 1.0;
    Ok(mean.iter().map(|mu| constant + mu.norm_sqr() / sp2).sum())
}

/// RMS measurement magnitude of `scenes` under `pattern` (noiseless oracle),
/// used as the prior scale `σ_p`.
pub fn calibrate_prior_std(geom: &SensingGeometry, pattern: &CodingPattern, data: &TaskData) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (re, im) = data.oracle_measure(geom, pattern, &all)?;
    let n = re.len();
    if n == 0 {
        return Err(Error::Data("prior calibration needs at least one scene".into()));
    }
    let power = (re.norm_squared() + im.norm_squared()) / n as f64;
    if !(power > 0.0) {
        return Err(Error::Data("calibration measurements are all zero".into()));
    }
    Ok(power.sqrt())
}

/// A dataset prepared for repeated measurement: scenes as matrix columns,
/// labels, and the pattern-independent per-atom responses of every scene.
#[derive(Debug, Clone)]
pub struct TaskData {
    scenes: DMatrix<f64>,
    labels: Option<Vec<usize>>,
    width: usize,
    height: usize,
    response_re: DMatrix<f64>,
    response_im: DMatrix<f64>,
}

impl TaskData {
    pub fn new(dataset: &Dataset, geom: &SensingGeometry) -> Result<Self> {
        let (w, h) = geom.scene_shape();
        ensure_dim("dataset width", w, dataset.width())?;
        ensure_dim("dataset height", h, dataset.height())?;
        let scenes = dataset.matrix();
        let (response_re, response_im) = geom.atom_responses(&scenes)?;
        Ok(Self {
            scenes,
            labels: dataset.labels().ok(),
            width: w,
            height: h,
            response_re,
            response_im,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scenes(&self) -> &DMatrix<f64> {
        &self.scenes
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_pixels(&self) -> usize {
        self.scenes.nrows()
    }

    fn gather(m: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), indices.len(), |r, c| m[(r, indices[c])])
    }

    /// Noiseless oracle measurements `(Re, Im)`, each `M × |indices|`.
    pub fn oracle_measure(
        &self,
        geom: &SensingGeometry,
        pattern: &CodingPattern,
        indices: &[usize],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        ensure_dim("pattern columns", geom.n_atoms(), pattern.cols())?;
        ensure_dim("prepared responses", geom.n_atoms(), self.response_re.nrows())?;
        let s = pattern.coefficient_matrix();
        let re = &s * Self::gather(&self.response_re, indices);
        let im = &s * Self::gather(&self.response_im, indices);
        Ok((re, im))
    }
}

/// Where measurements come from: the physics oracle (always available, also
/// supplies `σ_n`) and optionally a trained surrogate.
#[derive(Debug, Clone, Copy)]
pub struct Sensing<'a> {
    pub geom: &'a SensingGeometry,
    pub surrogate: Option<&'a MeasurementSurrogate>,
}

impl<'a> Sensing<'a> {
    pub fn oracle(geom: &'a SensingGeometry) -> Self {
        Self { geom, surrogate: None }
    }

    /// Noiseless measurement means under `mode`.
    pub fn measure_mean(
        &self,
        mode: MeasurementMode,
        pattern: &CodingPattern,
        data: &TaskData,
        indices: &[usize],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match mode {
            MeasurementMode::Oracle => data.oracle_measure(self.geom, pattern, indices),
            MeasurementMode::Surrogate => {
                let s = self
                    .surrogate
                    .ok_or_else(|| config_err("measurement", "surrogate mode without a surrogate"))?;
                if !s.is_trained() {
                    return Err(config_err("measurement", "surrogate mode needs a trained m-ANN"));
                }
                s.measure_batch(pattern, &TaskData::gather(&data.scenes, indices))
            }
        }
    }
}

/// Loss value, its two components and (when requested) the Φ-gradients.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub recon_term: f64,
    pub kl_term: f64,
    pub gradients: Option<Gradients>,
    pub outputs: DMatrix<f64>,
}

fn sample_noise(seed: u64, index: usize, std: f64, re: &mut [f64], im: &mut [f64]) {
    let mut rng: ChaCha8Rng = rng_from(seed, &[index as u64]);
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        let n = complex_noise(&mut rng, std);
        *r += n.re;
        *i += n.im;
    }
}

#[allow(clippy::too_many_arguments)]
fn objective_impl(
    vae: &VaeConfig,
    phi: &DenseNetwork,
    pattern: &CodingPattern,
    data: &TaskData,
    indices: &[usize],
    sensing: &Sensing<'_>,
    seed: u64,
    with_gradient: bool,
) -> Result<ObjectiveValue> {
    vae.validate()?;
    if indices.is_empty() {
        return Err(Error::Data("objective needs a nonempty batch".into()));
    }
    let m = pattern.rows();
    ensure_dim("decoder input width", 2 * m, phi.input_dim())?;
    let sigma_n = sensing.geom.noise_std();
    check_stds(sigma_n, vae.prior_std)?;
    let labels = match vae.task {
        Task::Imaging => {
            ensure_dim("decoder output width", data.n_pixels(), phi.output_dim())?;
            None
        }
        Task::Recognition => Some(
            data.labels()
                .ok_or_else(|| Error::Data("recognition needs labelled scenes".into()))?,
        ),
    };

    let (mean_re, mean_im) = sensing.measure_mean(vae.measurement_mode, pattern, data, indices)?;
    let b = indices.len();
    let sp2 = vae.prior_std * vae.prior_std;
    let sn2 = sigma_n * sigma_n;
    let kl_constant = m as f64 * ((sp2 / sn2).ln() + sn2 / sp2 - 1.0);
    let kl_term = kl_constant + (mean_re.norm_squared() + mean_im.norm_squared()) / sp2 / b as f64;

    let mut input = DMatrix::zeros(2 * m, b);
    for (c, &idx) in indices.iter().enumerate() {
        let mut re: Vec<f64> = mean_re.column(c).iter().copied().collect();
        let mut im: Vec<f64> = mean_im.column(c).iter().copied().collect();
        sample_noise(seed, idx, sigma_n, &mut re, &mut im);
        for k in 0..m {
            input[(k, c)] = re[k] / vae.prior_std;
            input[(m + k, c)] = im[k] / vae.prior_std;
        }
    }

    let trace = phi.forward_batch(input)?;
    let out = trace.output();
    let kind = vae.task.loss_kind();
    let weight = 1.0 / (2.0 * vae.decoder_noise_std * vae.decoder_noise_std);
    let mut recon = 0.0;
    let mut out_grad = DMatrix::zeros(out.nrows(), b);
    for (c, &idx) in indices.iter().enumerate() {
        let pred = out.column(c);
        let target = match labels {
            None => Target::Values(&data.scenes.as_slice()[idx * data.n_pixels()..(idx + 1) * data.n_pixels()]),
            Some(l) => Target::Class(l[idx]),
        };
        let (value, grad) = task_loss(kind, pred.as_slice(), target)?;
        recon += value;
        if with_gradient {
            for (g, v) in out_grad.column_mut(c).iter_mut().zip(grad) {
                *g = v * weight / b as f64;
            }
        }
    }
    let recon_term = recon / b as f64;
    let loss = recon_term * weight + vae.kl_weight * kl_term;
    let gradients = if with_gradient {
        Some(phi.backward(&trace, out_grad)?.0)
    } else {
        None
    };
    let outputs = trace.output().clone();
    Ok(ObjectiveValue {
        loss,
        recon_term,
        kl_term,
        gradients,
        outputs,
    })
}

/// Objective value and exact Φ-gradients on the batch `indices` of `data`,
/// measured under `pattern` with noise seeded by `(seed, scene index)`.
pub fn vae_objective(
    vae: &VaeConfig,
    phi: &DenseNetwork,
    pattern: &CodingPattern,
    data: &TaskData,
    indices: &[usize],
    sensing: &Sensing<'_>,
    seed: u64,
) -> Result<ObjectiveValue> {
    objective_impl(vae, phi, pattern, data, indices, sensing, seed, true)
}

/// Objective value only.
pub fn vae_loss(
    vae: &VaeConfig,
    phi: &DenseNetwork,
    pattern: &CodingPattern,
    data: &TaskData,
    indices: &[usize],
    sensing: &Sensing<'_>,
    seed: u64,
) -> Result<ObjectiveValue> {
    objective_impl(vae, phi, pattern, data, indices, sensing, seed, false)
}

/// Whole-split evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub recon_term: f64,
    pub kl_term: f64,
    /// Mean SSIM (imaging) or accuracy (recognition).
    pub metric: f64,
    pub confusion: Option<ConfusionMatrix>,
}

const EVAL_CHUNK: usize = 256;

/// Mean oracle loss over the full split, without the task metric. Equal to
/// `evaluate(..).loss`.
pub fn evaluate_loss(
    vae: &VaeConfig,
    phi: &DenseNetwork,
    pattern: &CodingPattern,
    data: &TaskData,
    geom: &SensingGeometry,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let oracle_vae = VaeConfig {
        measurement_mode: MeasurementMode::Oracle,
        ..vae.clone()
    };
    let sensing = Sensing::oracle(geom);
    let all: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        loss += vae_loss(&oracle_vae, phi, pattern, data, chunk, &sensing, seed)?.loss * chunk.len() as f64;
    }
    Ok(loss / data.len() as f64)
}

/// Evaluates the full split through the oracle with noise seeded by `seed`.
pub fn evaluate(
    vae: &VaeConfig,
    phi: &DenseNetwork,
    pattern: &CodingPattern,
    data: &TaskData,
    geom: &SensingGeometry,
    seed: u64,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let oracle_vae = VaeConfig {
        measurement_mode: MeasurementMode::Oracle,
        ..vae.clone()
    };
    let sensing = Sensing::oracle(geom);
    let n = data.len();
    let (mut loss, mut recon, mut kl) = (0.0, 0.0, 0.0);
    let mut ssim_sum = 0.0;
    let mut predictions = Vec::with_capacity(n);
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let v = vae_loss(&oracle_vae, phi, pattern, data, chunk, &sensing, seed)?;
        let w = chunk.len() as f64;
        loss += v.loss * w;
        recon += v.recon_term * w;
        kl += v.kl_term * w;
        for (c, &idx) in chunk.iter().enumerate() {
            let col = v.outputs.column(c);
            match vae.task {
                Task::Imaging => {
                    let pred = SceneGrid::new(data.width, data.height, col.iter().copied().collect(), None)?;
                    let truth = SceneGrid::new(
                        data.width,
                        data.height,
                        data.scenes.column(idx).iter().copied().collect(),
                        None,
                    )?;
                    ssim_sum += ssim(&pred, &truth)?;
                }
                Task::Recognition => predictions.push(col.argmax().0),
            }
        }
    }
    let nf = n as f64;
    let (metric, confusion) = match vae.task {
        Task::Imaging => (ssim_sum / nf, None),
        Task::Recognition => {
            let labels = data.labels().expect("checked by the objective");
            let (acc, cm) = classification_report(&predictions, labels, phi.output_dim())?;
            (acc, Some(cm))
        }
    };
    Ok(Evaluation {
        loss: loss / nf,
        recon_term: recon / nf,
        kl_term: kl / nf,
        metric,
        confusion,
    })
}
