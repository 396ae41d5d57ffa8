//! Stage I (decoder only, fixed code) and stage II (alternating r-SPSA on the
//! code and Adam on the decoder) training loops.

use std::fmt;

use rand::seq::SliceRandom;

use super::{evaluate, evaluate_loss, vae_loss, vae_objective, MeasurementMode, Sensing, Task, TaskData, VaeConfig};
use crate::coding::{calibrate_loss_scale, rspsa_step, Relaxation, SpsaSchedule};
use crate::error::{config_err, Error, Result};
use crate::nn::{adam_step, Activation, AdamState, DenseNetwork};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::rng::{derive_seed, rng_from, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub init_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub outer_iters: usize,
    pub spsa_steps_per_outer: usize,
    pub phi_epochs_per_outer: usize,
    pub stop_patience: usize,
    pub spsa_batch_size: usize,
    pub restore_best: bool,
    pub spsa: SpsaSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            learning_rates: vec![1e-3, 1e-3, 1e-4],
            init_std: 1e-3,
            epochs: 101,
            batch_size: 32,
            plateau_patience: 10,
            plateau_min_delta: 1e-4,
            outer_iters: 100,
            spsa_steps_per_outer: 5,
            phi_epochs_per_outer: 1,
            stop_patience: 100,
            spsa_batch_size: 256,
            restore_best: true,
            spsa: SpsaSchedule {
                a: 0.1,
                big_a: 50.0,
                c: 0.05,
                max_steps: 500,
                calibration_pairs: 4,
                ..SpsaSchedule::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.len() != self.hidden.len() + 1 {
            return Err(config_err(
                "train.learning_rates",
                format!(
                    "need {} rates for {} layers",
                    self.hidden.len() + 1,
                    self.hidden.len() + 1
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        if self.spsa_batch_size == 0 {
            return Err(config_err("train.spsa_batch_size", "must be positive"));
        }
        self.spsa.validate()
    }
}

/// Decoder `[2M] → hidden (relu) → output`, sigmoid over pixels for imaging,
/// softmax over classes for recognition.
pub fn build_phi(task: Task, rows: usize, output_dim: usize, cfg: &TrainConfig, seed: u64) -> Result<DenseNetwork> {
    cfg.validate()?;
    let mut sizes = vec![2 * rows];
    sizes.extend(&cfg.hidden);
    sizes.push(output_dim);
    let mut acts = vec![Activation::Relu; cfg.hidden.len()];
    acts.push(match task {
        Task::Imaging => Activation::Sigmoid,
        Task::Recognition => Activation::Softmax,
    });
    let mut rng = rng_from(seed, &[tag::PHI_INIT]);
    DenseNetwork::gaussian(&sizes, &acts, &cfg.learning_rates, cfg.init_std, &mut rng)
}

/// Decoder weights with their optimizer and learning-rate plateau state.
#[derive(Debug, Clone)]
pub struct PhiState {
    pub net: DenseNetwork,
    pub adam: AdamState,
    best_monitored: f64,
    since_best: usize,
}

impl PhiState {
    pub fn new(net: DenseNetwork) -> Self {
        let adam = AdamState::new(&net);
        Self {
            net,
            adam,
            best_monitored: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Restores the given layer rates and clears the optimizer moments and
    /// the plateau counter.
    pub fn restart(&mut self, learning_rates: &[f64]) -> Result<()> {
        crate::error::ensure_dim("learning rates", self.net.layers().len(), learning_rates.len())?;
        for (layer, &lr) in self.net.layers_mut().iter_mut().zip(learning_rates) {
            layer.learning_rate = lr;
        }
        self.adam = AdamState::new(&self.net);
        self.best_monitored = f64::INFINITY;
        self.since_best = 0;
        Ok(())
    }

    /// Halves every layer rate after `patience` epochs without an improvement
    /// of at least `min_delta` in the monitored loss.
    fn observe(&mut self, loss: f64, patience: usize, min_delta: f64) -> bool {
        if loss < self.best_monitored - min_delta {
            self.best_monitored = loss;
            self.since_best = 0;
            return false;
        }
        self.since_best += 1;
        if patience > 0 && self.since_best >= patience {
            self.net.halve_learning_rates();
            self.since_best = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    I,
    II,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
        })
    }
}

/// One decoder epoch. `train_loss` is the mean mini-batch loss of the epoch;
/// loss components and the metric are those of the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: Stage,
    pub outer_iter: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub recon_term: f64,
    pub kl_term: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Appends a record, enforcing stage order and increasing epochs within a stage.
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.stage < last.stage || (record.stage == last.stage && record.epoch <= last.epoch) {
                return Err(Error::Data(format!(
                    "log record (stage {}, epoch {}) out of order after (stage {}, epoch {})",
                    record.stage, record.epoch, last.stage, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn last_of(&self, stage: Stage) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.stage == stage)
    }

    pub fn first_of(&self, stage: Stage) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.stage == stage)
    }
}

/// Training data, the validation split that drives the plateau and stopping
/// rules, and the test split that is only reported.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a TaskData,
    pub val: &'a TaskData,
    pub test: &'a TaskData,
}

impl Splits<'_> {
    fn check(&self) -> Result<()> {
        for (name, d) in [("training", self.train), ("validation", self.val), ("test", self.test)] {
            if d.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
        }
        Ok(())
    }
}

struct EpochContext<'a, 'b> {
    vae: &'a VaeConfig,
    data: Splits<'a>,
    sensing: &'a Sensing<'b>,
    cfg: &'a TrainConfig,
    seed: u64,
}

impl EpochContext<'_, '_> {
    /// One pass of Adam over shuffled mini-batches (oracle measurements), then
    /// evaluation on the test split. Returns the log record.
    fn run(
        &self,
        phi: &mut PhiState,
        pattern: &CodingPattern,
        stage: Stage,
        outer_iter: usize,
        epoch: usize,
    ) -> Result<EpochRecord> {
        let oracle_vae = VaeConfig {
            measurement_mode: MeasurementMode::Oracle,
            ..self.vae.clone()
        };
        let stage_tag = stage as u64;
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut rng_from(self.seed, &[tag::SHUFFLE, stage_tag, epoch as u64]));
        let noise_seed = derive_seed(self.seed, &[tag::BATCH_NOISE, stage_tag, epoch as u64]);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(self.cfg.batch_size) {
            let v = vae_objective(
                &oracle_vae,
                &phi.net,
                pattern,
                self.data.train,
                batch,
                self.sensing,
                noise_seed,
            )?;
            if !v.loss.is_finite() {
                return Err(Error::Optimizer(format!(
                    "non-finite training loss in stage {stage} epoch {epoch}"
                )));
            }
            let grads = v.gradients.expect("objective computed gradients");
            adam_step(&mut phi.net, &grads, &mut phi.adam)?;
            total += v.loss;
            batches += 1;
        }
        let val_loss = self.validation_loss(&phi.net, pattern)?;
        let eval = evaluate(
            self.vae,
            &phi.net,
            pattern,
            self.data.test,
            self.sensing.geom,
            derive_seed(self.seed, &[tag::TEST_NOISE]),
        )?;
        if !val_loss.is_finite() || !eval.loss.is_finite() {
            return Err(Error::Optimizer(format!(
                "non-finite evaluation loss in stage {stage} epoch {epoch}"
            )));
        }
        phi.observe(val_loss, self.cfg.plateau_patience, self.cfg.plateau_min_delta);
        Ok(EpochRecord {
            stage,
            outer_iter,
            epoch,
            train_loss: total / batches as f64,
            val_loss,
            test_loss: eval.loss,
            recon_term: eval.recon_term,
            kl_term: eval.kl_term,
            metric: eval.metric,
        })
    }

    fn validation_loss(&self, net: &DenseNetwork, pattern: &CodingPattern) -> Result<f64> {
        let seed = derive_seed(self.seed, &[tag::TEST_NOISE, 1]);
        evaluate_loss(self.vae, net, pattern, self.data.val, self.sensing.geom, seed)
    }
}

/// Trains the decoder alone under a fixed random or PCA code.
#[allow(clippy::too_many_arguments)]
pub fn train_stage1(
    vae: &VaeConfig,
    phi: &mut PhiState,
    pattern: &CodingPattern,
    data: Splits<'_>,
    sensing: &Sensing<'_>,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<()> {
    if pattern.origin() == PatternOrigin::Learned {
        return Err(config_err("codes", "stage I expects a random or PCA code"));
    }
    data.check()?;
    cfg.validate()?;
    let ctx = EpochContext {
        vae,
        data,
        sensing,
        cfg,
        seed,
    };
    for epoch in 1..=cfg.epochs {
        let record = ctx.run(phi, pattern, Stage::I, 0, epoch)?;
        log.push(record)?;
    }
    Ok(())
}

/// Alternates `spsa_steps_per_outer` r-SPSA steps on the code with
/// `phi_epochs_per_outer` decoder epochs. The decoder restarts from the
/// configured learning rates with fresh Adam moments. SPSA losses are
/// evaluated at the current decoder on a seeded mini-batch shared by `L⁺` and
/// `L⁻`, divided by the calibrated loss scale. Stops once the stage-II
/// validation loss has not improved by `plateau_min_delta` for `stop_patience`
/// outer iterations; with `restore_best` the decoder and code with the lowest
/// validation loss (the warm start included) are returned. The code always comes back tagged
/// as learned.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2_joint(
    vae: &VaeConfig,
    phi: &mut PhiState,
    pattern: &mut CodingPattern,
    data: Splits<'_>,
    sensing: &Sensing<'_>,
    cfg: &TrainConfig,
    seed: u64,
    log: &mut TrainLog,
) -> Result<()> {
    data.check()?;
    cfg.validate()?;
    if cfg.outer_iters == 0 {
        return Ok(());
    }
    let train = data.train;
    let ctx = EpochContext {
        vae,
        data,
        sensing,
        cfg,
        seed,
    };
    phi.restart(&cfg.learning_rates)?;
    let mut relaxation = Relaxation::from_pattern(pattern, derive_seed(seed, &[tag::RELAXATION]));
    let spsa_seed = derive_seed(seed, &[tag::SPSA]);
    let batch_size = cfg.spsa_batch_size.min(train.len());
    let mut all: Vec<usize> = (0..train.len()).collect();
    let draw_batch = |all: &mut Vec<usize>, step: u64| {
        all.shuffle(&mut rng_from(seed, &[tag::SPSA_BATCH, step]));
        let noise_seed = derive_seed(seed, &[tag::SPSA_BATCH, tag::BATCH_NOISE, step]);
        (all[..batch_size].to_vec(), noise_seed)
    };
    let loss_scale = {
        let (batch, noise_seed) = draw_batch(&mut all, 0);
        let net = &phi.net;
        calibrate_loss_scale(
            |c| vae_loss(vae, net, c, train, &batch, sensing, noise_seed).map(|v| v.loss),
            &cfg.spsa,
            &relaxation,
            spsa_seed,
        )?
    };
    let mut best_loss = ctx.validation_loss(&phi.net, pattern)?;
    let mut best = (phi.net.clone(), pattern.clone());
    let mut best_stage2 = f64::INFINITY;
    let mut step = 0u64;
    let mut epoch = 0usize;
    let mut stall = 0usize;
    for outer in 1..=cfg.outer_iters {
        for _ in 0..cfg.spsa_steps_per_outer {
            if step as usize >= cfg.spsa.max_steps {
                break;
            }
            step += 1;
            let (batch, noise_seed) = draw_batch(&mut all, step);
            let net = &phi.net;
            *pattern = rspsa_step(
                |c| vae_loss(vae, net, c, train, &batch, sensing, noise_seed).map(|v| v.loss / loss_scale),
                &cfg.spsa,
                &mut relaxation,
                step,
                spsa_seed,
            )?;
        }
        let mut val_loss = f64::INFINITY;
        for _ in 0..cfg.phi_epochs_per_outer {
            epoch += 1;
            let record = ctx.run(phi, pattern, Stage::II, outer, epoch)?;
            val_loss = record.val_loss;
            log.push(record)?;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = (phi.net.clone(), pattern.clone());
        }
        if val_loss < best_stage2 - cfg.plateau_min_delta {
            best_stage2 = val_loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.stop_patience {
                break;
            }
        }
    }
    if cfg.restore_best {
        phi.net = best.0;
        *pattern = best.1;
    }
    *pattern = pattern.clone().with_origin(PatternOrigin::Learned);
    Ok(())
}
