//! Run configuration: a JSON file whose fields are overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcnn::data::{load_csv_labeled, load_idx, split, synthetic, Dataset, SyntheticKind, SyntheticSpec};
use tcnn::train::{OptimizerConfig, Schedule, TrainConfig};
use tcnn::zoo::VariantId;

use crate::{Failure, Outcome};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub command: Option<String>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Option<VariantId>,
    pub seed: Option<u64>,
    /// Per-sample `[C, spatial...]`; taken from the data when absent.
    pub input_shape: Option<Vec<usize>>,
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `adam` or `sgd`.
    pub optimizer: Option<String>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    /// `none`, `exponential` or `multistep`.
    pub schedule: Option<String>,
    pub gamma: Option<f64>,
    pub milestones: Option<Vec<usize>>,
    pub factor: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `idx`, `csv` or `synthetic`.
    pub kind: Option<String>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub synthetic: Option<SyntheticKind>,
    pub samples: Option<usize>,
    pub classes: Option<usize>,
    pub separation: Option<f32>,
    /// Held-out fraction source when no test files are given.
    pub train_fraction: Option<f64>,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub seed: Option<u64>,
}

/// Overwrites `dst` when `src` is set.
pub fn merge<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
    if src.is_some() {
        *dst = src.clone();
    }
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<RunSpec, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(Outcome::Config, format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::new(Outcome::Config, format!("invalid config {}: {e}", path.display())))
    }

    /// Seed precedence: flag or file, then `TCNN_SEED`, then 0.
    pub fn resolve_seeds(&mut self, env_seed: Option<u64>) {
        let fallback = env_seed.unwrap_or(0);
        self.model.seed.get_or_insert(fallback);
        self.train.seed.get_or_insert(fallback);
        self.data.seed.get_or_insert(fallback);
    }
}

pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var("TCNN_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::new(Outcome::Config, format!("TCNN_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl TrainSection {
    pub fn to_config(&self) -> Result<TrainConfig, Failure> {
        let d = TrainConfig::default();
        let lr = self.lr.unwrap_or(d.optimizer.lr());
        let optimizer = match self.optimizer.as_deref().unwrap_or("adam") {
            "adam" => OptimizerConfig::adam(lr),
            "sgd" => OptimizerConfig::Sgd {
                lr,
                momentum: self.momentum.unwrap_or(0.9),
                weight_decay: self.weight_decay.unwrap_or(0.0),
            },
            other => return Err(config_error(format!("unknown optimizer {other:?} (adam, sgd)"))),
        };
        let schedule = match self.schedule.as_deref().unwrap_or("exponential") {
            "none" => Schedule::None,
            "exponential" => Schedule::Exponential { gamma: self.gamma.unwrap_or(0.9) },
            "multistep" => Schedule::MultiStep {
                milestones: self.milestones.clone().unwrap_or_default(),
                factor: self.factor.unwrap_or(0.1),
            },
            other => return Err(config_error(format!("unknown schedule {other:?} (none, exponential, multistep)"))),
        };
        let config = TrainConfig {
            optimizer,
            schedule,
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(0),
        };
        config.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(config)
    }
}

impl TrainSection {
    /// The section with every field filled from a resolved config.
    pub fn resolved(config: &TrainConfig) -> TrainSection {
        let mut t = TrainSection {
            lr: Some(config.optimizer.lr()),
            batch_size: Some(config.batch_size),
            epochs: Some(config.epochs),
            seed: Some(config.seed),
            ..TrainSection::default()
        };
        match &config.optimizer {
            OptimizerConfig::Adam { .. } => t.optimizer = Some("adam".into()),
            OptimizerConfig::Sgd { momentum, weight_decay, .. } => {
                t.optimizer = Some("sgd".into());
                t.momentum = Some(*momentum);
                t.weight_decay = Some(*weight_decay);
            }
        }
        match &config.schedule {
            Schedule::None => t.schedule = Some("none".into()),
            Schedule::Exponential { gamma } => {
                t.schedule = Some("exponential".into());
                t.gamma = Some(*gamma);
            }
            Schedule::MultiStep { milestones, factor } => {
                t.schedule = Some("multistep".into());
                t.milestones = Some(milestones.clone());
                t.factor = Some(*factor);
            }
        }
        t
    }
}

pub fn config_error(msg: impl Into<String>) -> Failure {
    Failure::new(Outcome::Config, msg)
}

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl DataSection {
    pub fn kind(&self) -> Result<&str, Failure> {
        if let Some(k) = self.kind.as_deref() {
            return Ok(k);
        }
        if self.train_images.is_some() || self.test_images.is_some() {
            Ok("idx")
        } else if self.train_csv.is_some() || self.test_csv.is_some() {
            Ok("csv")
        } else if self.synthetic.is_some() {
            Ok("synthetic")
        } else {
            Err(config_error("no data given (use --data with idx, csv or synthetic)"))
        }
    }

    fn need<'a>(&self, v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
        v.as_deref().ok_or_else(|| config_error(format!("{flag} is required for this data kind")))
    }

    fn synthetic_set(&self) -> Result<Dataset, Failure> {
        let kind = self.synthetic.unwrap_or(SyntheticKind::Blobs2d);
        let mut spec = SyntheticSpec::new(kind, self.samples.unwrap_or(500), self.classes.unwrap_or(3), self.seed.unwrap_or(0));
        if let Some(s) = self.separation {
            spec = spec.with_separation(s);
        }
        synthetic(&spec).map_err(|e| config_error(e.to_string()))
    }

    fn split_off(&self, ds: Dataset) -> Result<Splits, Failure> {
        let (train, test) =
            split(&ds, self.train_fraction.unwrap_or(0.8), self.seed.unwrap_or(0)).map_err(|e| config_error(e.to_string()))?;
        Ok(Splits { train, test })
    }

    /// Loads the training and test sets.
    pub fn load(&self) -> Result<Splits, Failure> {
        let splits = match self.kind()? {
            "idx" => {
                let train = load_idx(
                    self.need(&self.train_images, "--train-images")?,
                    self.need(&self.train_labels, "--train-labels")?,
                )?;
                match (&self.test_images, &self.test_labels) {
                    (Some(i), Some(l)) => Splits { train, test: load_idx(i, l)? },
                    (None, None) => self.split_off(train)?,
                    _ => return Err(config_error("--test-images and --test-labels go together")),
                }
            }
            "csv" => {
                let train = load_csv_labeled(self.need(&self.train_csv, "--train-csv")?)?;
                match &self.test_csv {
                    Some(t) => Splits { train, test: load_csv_labeled(t)? },
                    None => self.split_off(train)?,
                }
            }
            "synthetic" => self.split_off(self.synthetic_set()?)?,
            other => return Err(config_error(format!("unknown data kind {other:?} (idx, csv, synthetic)"))),
        };
        let limit = |ds: Dataset, n: Option<usize>| match n {
            Some(n) => ds.take(n).map_err(Failure::from),
            None => Ok(ds),
        };
        Ok(Splits {
            train: limit(splits.train, self.limit_train)?,
            test: limit(splits.test, self.limit_test)?,
        })
    }

    /// Loads only the evaluation set.
    pub fn load_test(&self) -> Result<Dataset, Failure> {
        let test = match self.kind()? {
            "idx" => load_idx(self.need(&self.test_images, "--test-images")?, self.need(&self.test_labels, "--test-labels")?)?,
            "csv" => load_csv_labeled(self.need(&self.test_csv, "--test-csv")?)?,
            _ => return self.load().map(|s| s.test),
        };
        match self.limit_test {
            Some(n) => Ok(test.take(n)?),
            None => Ok(test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_protocol() {
        let c = TrainSection::default().to_config().unwrap();
        assert_eq!(c, TrainConfig::default());
    }

    #[test]
    fn resolved_section_round_trips() {
        let t = TrainSection { optimizer: Some("sgd".into()), schedule: Some("multistep".into()), milestones: Some(vec![2, 4]), ..Default::default() };
        let c = t.to_config().unwrap();
        assert_eq!(TrainSection::resolved(&c).to_config().unwrap(), c);
    }

    #[test]
    fn merge_prefers_flags() {
        let mut file = Some(3);
        merge(&mut file, &Some(5));
        assert_eq!(file, Some(5));
        merge(&mut file, &None);
        assert_eq!(file, Some(5));
    }

    #[test]
    fn seeds_fall_back_to_the_environment_value() {
        let mut s = RunSpec::default();
        s.train.seed = Some(4);
        s.resolve_seeds(Some(9));
        assert_eq!((s.model.seed, s.train.seed, s.data.seed), (Some(9), Some(4), Some(9)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunSpec>(r#"{"train": {"epoch": 3}}"#).is_err());
        let s: RunSpec = serde_json::from_str(r#"{"model": {"variant": "C_ab"}, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(s.model.variant, Some(VariantId::CAb));
    }
}
