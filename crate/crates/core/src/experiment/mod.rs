//! Experiment orchestration: configuration, the (strategy, M, seed) grid,
//! persistence of trained artifacts and CSV emission.

pub mod config;
pub mod persist;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::ExperimentConfig;
pub use persist::{decode_artifact, encode_artifact, load_artifact, save_artifact, Artifact};
pub use report::{aggregate, ExperimentRecord, ExperimentReport, SweepRow};

use crate::coding::{pca_patterns, random_pattern};
use crate::error::{config_err, Error, Result};
use crate::nn::DenseNetwork;
use crate::objective::{
    build_phi, calibrate_prior_std, default_decoder_noise_std, evaluate, train_stage1, train_stage2_joint, Evaluation,
    MeasurementMode, PhiState, Sensing, Splits, Task, TaskData, TrainLog, VaeConfig,
};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::physics::{calibrate_noise_std, SensingGeometry};
use crate::rng::{derive_seed, tag};
use crate::scenes::{make_splits, DataSplits, DatasetParams};
use crate::surrogate::{mann_fidelity_report, oracle_triples, train_mann, MeasurementSurrogate};

/// Rows of the random pattern used to set the noise level.
const NOISE_REFERENCE_ROWS: usize = 8;
/// Held-out patterns and scenes scored by the m-ANN fidelity report.
const FIDELITY_PATTERNS: usize = 8;
const FIDELITY_SCENES: usize = 50;

/// Geometry with calibrated noise, the dataset splits and their prepared
/// measurement data.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub geom: SensingGeometry,
    pub splits: DataSplits,
    pub train: TaskData,
    pub val: TaskData,
    pub test: TaskData,
}

impl Workspace {
    pub fn data(&self) -> Splits<'_> {
        Splits {
            train: &self.train,
            val: &self.val,
            test: &self.test,
        }
    }
}

fn dataset_params(cfg: &ExperimentConfig) -> DatasetParams {
    DatasetParams {
        width: cfg.geometry.scene_width,
        height: cfg.geometry.scene_height,
        ..cfg.dataset.clone()
    }
}

/// Builds the splits and sets the noise level to `noise_relative` × the median
/// noiseless magnitude over the training scenes under a seeded random pattern.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Workspace> {
    cfg.validate()?;
    let splits = make_splits(&dataset_params(cfg), cfg.dataset_seed)?;
    let geom = SensingGeometry::new(cfg.geometry.clone())?;
    let reference = random_pattern(
        NOISE_REFERENCE_ROWS,
        geom.n_atoms(),
        derive_seed(cfg.dataset_seed, &[tag::CALIBRATION]),
    )?;
    let noise_std = calibrate_noise_std(&geom, &reference, splits.train.scenes(), cfg.noise_relative)?;
    let geom = geom.with_noise_std(noise_std)?;
    let train = TaskData::new(&splits.train, &geom)?;
    let val = TaskData::new(&splits.val, &geom)?;
    let test = TaskData::new(&splits.test, &geom)?;
    Ok(Workspace {
        geom,
        splits,
        train,
        val,
        test,
    })
}

/// Trains the m-ANN on oracle triples from the training scenes and scores it
/// on held-out patterns and test scenes. Returns the surrogate and its loss curve.
pub fn train_surrogate(cfg: &ExperimentConfig, ws: &Workspace) -> Result<(MeasurementSurrogate, Vec<f64>)> {
    let seed = derive_seed(cfg.dataset_seed, &[tag::MANN]);
    let mut surrogate = MeasurementSurrogate::new(ws.geom.n_atoms(), ws.geom.n_pixels(), &cfg.mann, seed)?;
    let triples = oracle_triples(
        &ws.geom,
        ws.splits.train.scenes(),
        cfg.mann_triples,
        cfg.mann_rows_per_triple,
        seed,
    )?;
    let curve = train_mann(&mut surrogate, &triples, &cfg.mann, seed)?;
    let patterns = (0..FIDELITY_PATTERNS as u64)
        .map(|k| {
            random_pattern(
                cfg.mann_rows_per_triple,
                ws.geom.n_atoms(),
                derive_seed(seed, &[tag::TEST_NOISE, k]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let scenes = &ws.splits.test.scenes()[..FIDELITY_SCENES.min(ws.splits.test.len())];
    mann_fidelity_report(&mut surrogate, &ws.geom, &patterns, scenes)?;
    Ok((surrogate, curve))
}

/// Decoder, code and log after training one cell.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub phi: DenseNetwork,
    pub pattern: CodingPattern,
    pub vae: VaeConfig,
    pub log: TrainLog,
}

fn vae_config(cfg: &ExperimentConfig, ws: &Workspace, stage1_pattern: &CodingPattern) -> Result<VaeConfig> {
    let prior_std = match cfg.prior_std {
        Some(s) => s,
        None => calibrate_prior_std(&ws.geom, stage1_pattern, &ws.train)?,
    };
    let vae = VaeConfig {
        kl_weight: cfg.kl_weight,
        prior_std,
        decoder_noise_std: cfg
            .decoder_noise_std
            .unwrap_or_else(|| default_decoder_noise_std(cfg.task)),
        measurement_mode: cfg.measurement_mode,
        task: cfg.task,
    };
    vae.validate()?;
    Ok(vae)
}

fn output_dim(cfg: &ExperimentConfig, ws: &Workspace) -> usize {
    match cfg.task {
        Task::Imaging => ws.geom.n_pixels(),
        Task::Recognition => cfg.dataset.classes,
    }
}

/// Stage I under `pattern` (random or PCA).
pub fn train_fixed(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    sensing: &Sensing<'_>,
    pattern: CodingPattern,
    seed: u64,
) -> Result<TrainedCell> {
    let vae = vae_config(cfg, ws, &pattern)?;
    let mut phi = PhiState::new(build_phi(
        cfg.task,
        pattern.rows(),
        output_dim(cfg, ws),
        &cfg.train,
        seed,
    )?);
    let mut log = TrainLog::default();
    train_stage1(&vae, &mut phi, &pattern, ws.data(), sensing, &cfg.train, seed, &mut log)?;
    Ok(TrainedCell {
        phi: phi.net,
        pattern,
        vae,
        log,
    })
}

/// Stage II continuing from a stage-I cell.
pub fn train_joint(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    sensing: &Sensing<'_>,
    warm: &TrainedCell,
    seed: u64,
) -> Result<TrainedCell> {
    let mut cell = warm.clone();
    let mut phi = PhiState::new(cell.phi);
    train_stage2_joint(
        &cell.vae,
        &mut phi,
        &mut cell.pattern,
        ws.data(),
        sensing,
        &cfg.train,
        seed,
        &mut cell.log,
    )?;
    cell.phi = phi.net;
    Ok(cell)
}

fn cell_name(strategy: PatternOrigin, m: usize, seed: u64) -> String {
    format!("{strategy}_M{m}_seed{seed}")
}

/// Runs every (M, seed, strategy) cell in that nesting order. The learned
/// strategy continues from the random stage-I cell of the same (M, seed).
pub fn run_cells(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    surrogate: Option<&MeasurementSurrogate>,
) -> Result<(ExperimentReport, Vec<TrainedCell>)> {
    cfg.validate()?;
    if cfg.measurement_mode == MeasurementMode::Surrogate && !surrogate.is_some_and(|s| s.is_trained()) {
        return Err(config_err(
            "vae.measurement_mode",
            "surrogate mode needs a trained m-ANN",
        ));
    }
    let sensing = Sensing {
        geom: &ws.geom,
        surrogate,
    };
    let config_text = cfg.to_text();
    let config_hash = cfg.hash();
    let n_atoms = ws.geom.n_atoms();
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for &m in &cfg.m_list {
        let pca = if cfg.strategies.contains(&PatternOrigin::Pca) {
            Some(pca_patterns(ws.splits.train.scenes(), &ws.geom, m)?)
        } else {
            None
        };
        for &seed in &cfg.seeds {
            let mut random_cell: Option<(TrainedCell, f64)> = None;
            for &strategy in &cfg.strategies {
                let start = Instant::now();
                let cell = match strategy {
                    PatternOrigin::Random | PatternOrigin::Learned => {
                        if random_cell.is_none() {
                            let t = Instant::now();
                            let c = train_fixed(cfg, ws, &sensing, random_pattern(m, n_atoms, seed)?, seed)?;
                            random_cell = Some((c, t.elapsed().as_secs_f64()));
                        }
                        let (warm, warm_secs) = random_cell.as_ref().expect("random stage I just trained");
                        if strategy == PatternOrigin::Random {
                            (warm.clone(), *warm_secs)
                        } else {
                            let c = train_joint(cfg, ws, &sensing, warm, seed)?;
                            (c, warm_secs + start.elapsed().as_secs_f64())
                        }
                    }
                    PatternOrigin::Pca => {
                        let p = pca.clone().expect("PCA patterns built for this M");
                        let c = train_fixed(cfg, ws, &sensing, p, seed)?;
                        (c, start.elapsed().as_secs_f64())
                    }
                };
                let (cell, seconds) = cell;
                let eval = evaluate(
                    &cell.vae,
                    &cell.phi,
                    &cell.pattern,
                    &ws.test,
                    &ws.geom,
                    derive_seed(seed, &[tag::TEST_NOISE]),
                )?;
                let name = cell_name(strategy, m, seed);
                records.push(ExperimentRecord {
                    strategy,
                    m,
                    seed,
                    metric: eval.metric,
                    test_loss: eval.loss,
                    confusion: eval.confusion,
                    seconds,
                    config_hash: config_hash.clone(),
                    curve_file: format!("curves/{name}.csv"),
                    pattern: cell.pattern.clone(),
                    log: cell.log.clone(),
                });
                cells.push(cell);
            }
        }
    }
    let report = ExperimentReport {
        config_text,
        config_hash,
        surrogate_fidelity: surrogate.and_then(|s| s.fidelity),
        records,
    };
    Ok((report, cells))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::Io)
}

/// Writes the config, loss curves, summaries, trained artifacts and the report
/// under `dir`.
pub fn write_outputs(dir: &Path, report: &ExperimentReport, cells: &[TrainedCell], task: Task) -> Result<()> {
    create_dir(&dir.join("curves"))?;
    create_dir(&dir.join("artifacts"))?;
    fs::write(dir.join("config.txt"), &report.config_text)?;
    for (rec, cell) in report.records.iter().zip(cells) {
        fs::write(dir.join(&rec.curve_file), report::curve_csv(rec))?;
        let name = cell_name(rec.strategy, rec.m, rec.seed);
        save_artifact(&artifact_path(dir, &name, "phi"), &Artifact::Network(cell.phi.clone()))?;
        save_artifact(
            &artifact_path(dir, &name, "code"),
            &Artifact::Pattern(cell.pattern.clone()),
        )?;
    }
    fs::write(dir.join("summary.csv"), report::summary_csv(report))?;
    if task == Task::Recognition {
        fs::write(dir.join("confusion.csv"), report::confusion_csv(report))?;
    }
    save_artifact(&dir.join("report.iems"), &Artifact::Report(report.clone()))
}

/// `dir/artifacts/<strategy>_M<m>_seed<seed>.<kind>.iems`.
pub fn artifact_path(dir: &Path, cell: &str, kind: &str) -> PathBuf {
    dir.join("artifacts").join(format!("{cell}.{kind}.iems"))
}

pub fn cell_artifact_paths(dir: &Path, strategy: PatternOrigin, m: usize, seed: u64) -> (PathBuf, PathBuf) {
    let name = cell_name(strategy, m, seed);
    (artifact_path(dir, &name, "phi"), artifact_path(dir, &name, "code"))
}

/// Re-evaluates a saved cell on the test split. The prior scale is
/// recalibrated from the cell's stage-I code (the seed's random code for the
/// learned strategy).
pub fn evaluate_saved(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    dir: &Path,
    strategy: PatternOrigin,
    m: usize,
    seed: u64,
) -> Result<Evaluation> {
    let (phi_path, code_path) = cell_artifact_paths(dir, strategy, m, seed);
    let phi = match load_artifact(&phi_path)? {
        Artifact::Network(n) => n,
        other => {
            return Err(config_err(
                "eval",
                format!("{} holds a {}, not a network", phi_path.display(), other.kind()),
            ))
        }
    };
    let pattern = match load_artifact(&code_path)? {
        Artifact::Pattern(p) => p,
        other => {
            return Err(config_err(
                "eval",
                format!("{} holds a {}, not a pattern", code_path.display(), other.kind()),
            ))
        }
    };
    let stage1 = match strategy {
        PatternOrigin::Learned => random_pattern(m, ws.geom.n_atoms(), seed)?,
        _ => pattern.clone(),
    };
    let vae = vae_config(cfg, ws, &stage1)?;
    evaluate(
        &vae,
        &phi,
        &pattern,
        &ws.test,
        &ws.geom,
        derive_seed(seed, &[tag::TEST_NOISE]),
    )
}

/// Full pipeline: dataset → optional m-ANN → stage I → stage II (learned
/// only) → test evaluation, with every output written to `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    create_dir(&cfg.output_dir)?;
    let ws = prepare(cfg)?;
    let surrogate = if cfg.measurement_mode == MeasurementMode::Surrogate {
        let (s, _) = train_surrogate(cfg, &ws)?;
        save_artifact(&cfg.output_dir.join("mann.iems"), &Artifact::Surrogate(s.clone()))?;
        Some(s)
    } else {
        None
    };
    let (report, cells) = run_cells(cfg, &ws, surrogate.as_ref())?;
    write_outputs(&cfg.output_dir, &report, &cells, cfg.task)?;
    Ok(report)
}

/// Runs the experiment and writes `sweep.csv` with one row per (strategy, M).
pub fn sweep_patterns(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Vec<SweepRow>)> {
    if cfg.m_list.is_empty() {
        return Err(config_err("experiment.m_list", "the sweep needs at least one M"));
    }
    if cfg.seeds.len() < 2 {
        return Err(config_err(
            "experiment.seeds",
            "a sweep needs at least two seeds per point",
        ));
    }
    let report = run_experiment(cfg)?;
    let rows = aggregate(&report)?;
    fs::write(cfg.output_dir.join("sweep.csv"), report::sweep_csv(&rows))?;
    Ok((report, rows))
}
