//! `key=value` experiment configuration with dotted section keys.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. `auto` selects the calibrated prior scale or the task's
//! default decoder scale. Unknown and repeated keys are errors.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};
use crate::objective::{MeasurementMode, Task, TrainConfig};
use crate::pattern::PatternOrigin;
use crate::physics::GeometryParams;
use crate::scenes::DatasetParams;
use crate::surrogate::MannConfig;

/// Everything a run depends on. Scene size comes from the geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub geometry: GeometryParams,
    /// Measurement noise as a fraction of the median noiseless magnitude.
    pub noise_relative: f64,
    pub dataset: DatasetParams,
    pub dataset_seed: u64,
    pub task: Task,
    pub strategies: Vec<PatternOrigin>,
    pub m_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub kl_weight: f64,
    pub prior_std: Option<f64>,
    pub decoder_noise_std: Option<f64>,
    pub measurement_mode: MeasurementMode,
    pub train: TrainConfig,
    pub mann: MannConfig,
    pub mann_triples: usize,
    pub mann_rows_per_triple: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_task(Task::Imaging)
    }
}

impl ExperimentConfig {
    /// Defaults for a task. Recognition trains on a larger split drawn from
    /// ten persons (person 6 held out); everything else is shared.
    pub fn for_task(task: Task) -> Self {
        let dataset = match task {
            Task::Imaging => DatasetParams {
                n_train_per_class: 200,
                ..DatasetParams::default()
            },
            Task::Recognition => DatasetParams {
                n_train_per_class: 1000,
                train_persons: vec![1, 2, 3, 4, 5, 7, 8, 9, 10, 11],
                ..DatasetParams::default()
            },
        };
        Self {
            geometry: GeometryParams::default(),
            noise_relative: 1e-3,
            dataset,
            dataset_seed: 7,
            task,
            strategies: vec![PatternOrigin::Random, PatternOrigin::Pca, PatternOrigin::Learned],
            m_list: vec![3, 5, 9, 15, 20],
            seeds: (1..=10).collect(),
            output_dir: PathBuf::from("out"),
            kl_weight: 1e-2,
            prior_std: None,
            decoder_noise_std: None,
            measurement_mode: MeasurementMode::Oracle,
            train: TrainConfig::default(),
            mann: MannConfig::default(),
            mann_triples: 10_000,
            mann_rows_per_triple: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_list.is_empty() {
            return Err(config_err("experiment.m_list", "at least one M is required"));
        }
        if let Some(m) = self.m_list.iter().find(|&&m| m == 0) {
            return Err(config_err("experiment.m_list", format!("M must be positive, got {m}")));
        }
        if self.seeds.is_empty() {
            return Err(config_err("experiment.seeds", "at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(config_err("experiment.strategies", "at least one strategy is required"));
        }
        if !(self.noise_relative > 0.0 && self.noise_relative.is_finite()) {
            return Err(config_err("geometry.noise_relative", "must be positive"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(config_err("vae.kl_weight", "must be nonnegative"));
        }
        if self.prior_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(config_err("vae.prior_std", "must be positive or auto"));
        }
        if self.decoder_noise_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(config_err("vae.decoder_noise_std", "must be positive or auto"));
        }
        if self.mann_triples == 0 || self.mann_rows_per_triple == 0 {
            return Err(config_err(
                "mann.triples",
                "triple count and rows per triple must be positive",
            ));
        }
        self.train.validate()
    }

    /// Canonical text: every key in a fixed order, floats in shortest
    /// round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in fields() {
            out.push_str(f.key);
            out.push('=');
            out.push_str(&(f.get)(self));
            out.push('\n');
        }
        out
    }

    /// Parses `text` on top of the defaults of the task it names (or imaging).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                config_err(
                    format!("line {}", lineno + 1),
                    format!("expected key=value, got {line:?}"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(config_err(key, "key given more than once"));
            }
            pairs.push((key, value));
        }
        let task = match pairs.iter().find(|(k, _)| *k == "experiment.task") {
            Some((_, v)) => parse::<Task>("experiment.task", v)?,
            None => Task::Imaging,
        };
        let mut cfg = Self::for_task(task);
        let table = fields();
        for (key, value) in pairs {
            let field = table
                .iter()
                .find(|f| f.key == key)
                .ok_or_else(|| config_err(key, "unknown key"))?;
            (field.set)(&mut cfg, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// All keys in canonical order.
    pub fn keys() -> Vec<&'static str> {
        fields().iter().map(|f| f.key).collect()
    }
}

struct Field {
    key: &'static str,
    get: fn(&ExperimentConfig) -> String,
    set: fn(&mut ExperimentConfig, &str) -> Result<()>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| config_err(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_point(key: &str, value: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| config_err(key, "expected three comma-separated coordinates"))
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn floats(v: &[f64]) -> String {
    v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(",")
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), float)
}

macro_rules! field {
    ($key:literal, |$c:ident| $get:expr, |$m:ident, $v:ident| $set:expr) => {
        Field {
            key: $key,
            get: |$c: &ExperimentConfig| $get,
            set: |$m: &mut ExperimentConfig, $v: &str| {
                $set;
                Ok(())
            },
        }
    };
}

fn fields() -> Vec<Field> {
    vec![
        field!("geometry.atom_rows", |c| c.geometry.atom_rows.to_string(), |c, v| c
            .geometry
            .atom_rows =
            parse("geometry.atom_rows", v)?),
        field!("geometry.atom_cols", |c| c.geometry.atom_cols.to_string(), |c, v| c
            .geometry
            .atom_cols =
            parse("geometry.atom_cols", v)?),
        field!("geometry.atom_pitch", |c| float(c.geometry.atom_pitch), |c, v| c
            .geometry
            .atom_pitch =
            parse("geometry.atom_pitch", v)?),
        field!("geometry.wavelength", |c| float(c.geometry.wavelength), |c, v| c
            .geometry
            .wavelength =
            parse("geometry.wavelength", v)?),
        field!(
            "geometry.scene_width",
            |c| c.geometry.scene_width.to_string(),
            |c, v| c.geometry.scene_width = parse("geometry.scene_width", v)?
        ),
        field!(
            "geometry.scene_height",
            |c| c.geometry.scene_height.to_string(),
            |c, v| c.geometry.scene_height = parse("geometry.scene_height", v)?
        ),
        field!(
            "geometry.scene_extent_x",
            |c| float(c.geometry.scene_extent_x),
            |c, v| c.geometry.scene_extent_x = parse("geometry.scene_extent_x", v)?
        ),
        field!(
            "geometry.scene_extent_y",
            |c| float(c.geometry.scene_extent_y),
            |c, v| c.geometry.scene_extent_y = parse("geometry.scene_extent_y", v)?
        ),
        field!("geometry.standoff", |c| float(c.geometry.standoff), |c, v| c
            .geometry
            .standoff =
            parse("geometry.standoff", v)?),
        field!("geometry.tx", |c| floats(&c.geometry.tx), |c, v| c.geometry.tx =
            parse_point("geometry.tx", v)?),
        field!("geometry.rx", |c| floats(&c.geometry.rx), |c, v| c.geometry.rx =
            parse_point("geometry.rx", v)?),
        field!("geometry.noise_relative", |c| float(c.noise_relative), |c, v| c
            .noise_relative =
            parse("geometry.noise_relative", v)?),
        field!(
            "dataset.n_train_per_class",
            |c| c.dataset.n_train_per_class.to_string(),
            |c, v| c.dataset.n_train_per_class = parse("dataset.n_train_per_class", v)?
        ),
        field!(
            "dataset.n_val_per_class",
            |c| c.dataset.n_val_per_class.to_string(),
            |c, v| c.dataset.n_val_per_class = parse("dataset.n_val_per_class", v)?
        ),
        field!(
            "dataset.n_test_per_class",
            |c| c.dataset.n_test_per_class.to_string(),
            |c, v| c.dataset.n_test_per_class = parse("dataset.n_test_per_class", v)?
        ),
        field!("dataset.train_persons", |c| list(&c.dataset.train_persons), |c, v| c
            .dataset
            .train_persons =
            parse_list("dataset.train_persons", v)?),
        field!("dataset.test_persons", |c| list(&c.dataset.test_persons), |c, v| c
            .dataset
            .test_persons =
            parse_list("dataset.test_persons", v)?),
        field!("dataset.classes", |c| c.dataset.classes.to_string(), |c, v| c
            .dataset
            .classes =
            parse("dataset.classes", v)?),
        field!("dataset.seed", |c| c.dataset_seed.to_string(), |c, v| c.dataset_seed =
            parse("dataset.seed", v)?),
        field!("experiment.task", |c| c.task.to_string(), |c, v| c.task =
            parse("experiment.task", v)?),
        field!("experiment.strategies", |c| list(&c.strategies), |c, v| c.strategies =
            parse_list("experiment.strategies", v)?),
        field!("experiment.m_list", |c| list(&c.m_list), |c, v| c.m_list =
            parse_list("experiment.m_list", v)?),
        field!("experiment.seeds", |c| list(&c.seeds), |c, v| c.seeds =
            parse_list("experiment.seeds", v)?),
        field!(
            "experiment.output_dir",
            |c| c.output_dir.display().to_string(),
            |c, v| c.output_dir = PathBuf::from(v)
        ),
        field!("vae.kl_weight", |c| float(c.kl_weight), |c, v| c.kl_weight =
            parse("vae.kl_weight", v)?),
        field!("vae.prior_std", |c| auto(c.prior_std), |c, v| c.prior_std =
            parse_auto("vae.prior_std", v)?),
        field!("vae.decoder_noise_std", |c| auto(c.decoder_noise_std), |c, v| c
            .decoder_noise_std =
            parse_auto("vae.decoder_noise_std", v)?),
        field!("vae.measurement_mode", |c| c.measurement_mode.to_string(), |c, v| c
            .measurement_mode =
            parse("vae.measurement_mode", v)?),
        field!("train.hidden", |c| list(&c.train.hidden), |c, v| c.train.hidden =
            parse_list("train.hidden", v)?),
        field!("train.learning_rates", |c| floats(&c.train.learning_rates), |c, v| c
            .train
            .learning_rates =
            parse_list("train.learning_rates", v)?),
        field!("train.init_std", |c| float(c.train.init_std), |c, v| c.train.init_std =
            parse("train.init_std", v)?),
        field!("train.epochs", |c| c.train.epochs.to_string(), |c, v| c.train.epochs =
            parse("train.epochs", v)?),
        field!("train.batch_size", |c| c.train.batch_size.to_string(), |c, v| c
            .train
            .batch_size =
            parse("train.batch_size", v)?),
        field!(
            "train.plateau_patience",
            |c| c.train.plateau_patience.to_string(),
            |c, v| c.train.plateau_patience = parse("train.plateau_patience", v)?
        ),
        field!(
            "train.plateau_min_delta",
            |c| float(c.train.plateau_min_delta),
            |c, v| c.train.plateau_min_delta = parse("train.plateau_min_delta", v)?
        ),
        field!("train.outer_iters", |c| c.train.outer_iters.to_string(), |c, v| c
            .train
            .outer_iters =
            parse("train.outer_iters", v)?),
        field!(
            "train.spsa_steps_per_outer",
            |c| c.train.spsa_steps_per_outer.to_string(),
            |c, v| c.train.spsa_steps_per_outer = parse("train.spsa_steps_per_outer", v)?
        ),
        field!(
            "train.phi_epochs_per_outer",
            |c| c.train.phi_epochs_per_outer.to_string(),
            |c, v| c.train.phi_epochs_per_outer = parse("train.phi_epochs_per_outer", v)?
        ),
        field!("train.stop_patience", |c| c.train.stop_patience.to_string(), |c, v| c
            .train
            .stop_patience =
            parse("train.stop_patience", v)?),
        field!(
            "train.spsa_batch_size",
            |c| c.train.spsa_batch_size.to_string(),
            |c, v| c.train.spsa_batch_size = parse("train.spsa_batch_size", v)?
        ),
        field!("train.restore_best", |c| c.train.restore_best.to_string(), |c, v| c
            .train
            .restore_best =
            parse("train.restore_best", v)?),
        field!("spsa.a", |c| float(c.train.spsa.a), |c, v| c.train.spsa.a =
            parse("spsa.a", v)?),
        field!("spsa.big_a", |c| float(c.train.spsa.big_a), |c, v| c.train.spsa.big_a =
            parse("spsa.big_a", v)?),
        field!("spsa.alpha", |c| float(c.train.spsa.alpha), |c, v| c.train.spsa.alpha =
            parse("spsa.alpha", v)?),
        field!("spsa.c", |c| float(c.train.spsa.c), |c, v| c.train.spsa.c =
            parse("spsa.c", v)?),
        field!("spsa.gamma", |c| float(c.train.spsa.gamma), |c, v| c.train.spsa.gamma =
            parse("spsa.gamma", v)?),
        field!("spsa.pairs", |c| c.train.spsa.pairs.to_string(), |c, v| c
            .train
            .spsa
            .pairs =
            parse("spsa.pairs", v)?),
        field!("spsa.max_steps", |c| c.train.spsa.max_steps.to_string(), |c, v| c
            .train
            .spsa
            .max_steps =
            parse("spsa.max_steps", v)?),
        field!(
            "spsa.calibration_pairs",
            |c| c.train.spsa.calibration_pairs.to_string(),
            |c, v| c.train.spsa.calibration_pairs = parse("spsa.calibration_pairs", v)?
        ),
        field!("mann.hidden", |c| list(&c.mann.hidden), |c, v| c.mann.hidden =
            parse_list("mann.hidden", v)?),
        field!("mann.learning_rate", |c| float(c.mann.learning_rate), |c, v| c
            .mann
            .learning_rate =
            parse("mann.learning_rate", v)?),
        field!("mann.batch_size", |c| c.mann.batch_size.to_string(), |c, v| c
            .mann
            .batch_size =
            parse("mann.batch_size", v)?),
        field!("mann.epochs", |c| c.mann.epochs.to_string(), |c, v| c.mann.epochs =
            parse("mann.epochs", v)?),
        field!("mann.init_std", |c| float(c.mann.init_std), |c, v| c.mann.init_std =
            parse("mann.init_std", v)?),
        field!("mann.triples", |c| c.mann_triples.to_string(), |c, v| c.mann_triples =
            parse("mann.triples", v)?),
        field!(
            "mann.rows_per_triple",
            |c| c.mann_rows_per_triple.to_string(),
            |c, v| c.mann_rows_per_triple = parse("mann.rows_per_triple", v)?
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn canonical_text_round_trips() {
        for task in [Task::Imaging, Task::Recognition] {
            let mut cfg = ExperimentConfig::for_task(task);
            cfg.train.spsa.a = 0.1 + 0.2;
            cfg.prior_std = Some(3.7e-9);
            cfg.seeds = vec![u64::MAX, 0];
            let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn unknown_key_is_named() {
        match ExperimentConfig::from_text("spsa.aa=0.2\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "spsa.aa"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn repeated_key_rejected() {
        assert!(ExperimentConfig::from_text("spsa.a=0.2\nspsa.a=0.3\n").is_err());
    }

    #[test]
    fn bad_value_names_key() {
        match ExperimentConfig::from_text("# sweep\n\nexperiment.m_list=3,x\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "experiment.m_list"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_m_list_rejected() {
        assert!(matches!(
            ExperimentConfig::from_text("experiment.m_list=\n"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn task_selects_defaults_and_overrides_apply() {
        let cfg = ExperimentConfig::from_text("experiment.task=recognition\nspsa.a=0.2\nvae.prior_std=auto\n").unwrap();
        assert_eq!(cfg.task, Task::Recognition);
        assert_eq!(
            cfg.dataset.n_train_per_class,
            ExperimentConfig::for_task(Task::Recognition).dataset.n_train_per_class
        );
        assert_eq!(cfg.train.spsa.a, 0.2);
        assert_eq!(cfg.prior_std, None);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn every_key_appears_once() {
        let keys = ExperimentConfig::keys();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());
    }
}
