//! Config-driven experiment: scan, split, preprocess, train both extractors,
//! extract features, fit the ensemble, evaluate, persist.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{evaluate_ensemble, EvalReport};
use crate::datasets::{self, Layout, Manifest, SplitSpec};
use crate::error::Error;
use crate::featnet::{self, FeatNet, LabeledImage, NetConfig, Objective, TrainSpec};
use crate::preprocess::{self, FloatImage, PreprocessConfig};
use crate::stacker::{self, EnsembleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub root: PathBuf,
    pub layout: Layout,
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource {
            root: PathBuf::from("data"),
            layout: Layout::Cedar,
        }
    }
}

/// Model files to load instead of training an extractor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainedNets {
    pub signet: Option<PathBuf>,
    pub signetf: Option<PathBuf>,
}

/// Everything a run needs. `input_height`/`input_width` of both networks
/// are taken from the preprocessing output size, `num_writers` from the
/// training split, and the forgery head is enabled for signet-f only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub preprocess: PreprocessConfig,
    pub signet: NetConfig,
    pub signetf: NetConfig,
    pub train: TrainSpec,
    pub ensemble: EnsembleParams,
    pub split: SplitSpec,
    pub out_dir: PathBuf,
    pub pretrained: PretrainedNets,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            preprocess: PreprocessConfig::default(),
            signet: NetConfig::default(),
            signetf: NetConfig {
                forgery_head: true,
                seed: 1,
                ..NetConfig::default()
            },
            train: TrainSpec::default(),
            ensemble: EnsembleParams::default(),
            split: SplitSpec::default(),
            out_dir: PathBuf::from("out"),
            pretrained: PretrainedNets::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a TOML config. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset.root);
        fix(&mut cfg.out_dir);
        cfg.pretrained.signet.as_mut().map(fix);
        cfg.pretrained.signetf.as_mut().map(fix);
        Ok(cfg)
    }

    /// Applies one seed to the split and both networks (`seed`, `seed + 1`).
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.signet.seed = seed;
        self.signetf.seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.preprocess.validate()?;
        self.signet.validate()?;
        self.signetf.validate()?;
        self.train.validate()?;
        self.ensemble.gbt.validate()?;
        self.split.validate()?;
        if self.ensemble.oof_folds == 1 {
            return Err(Error::Config("ensemble.oof_folds must be 0 or >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Scan,
    Split,
    Preprocess,
    TrainExtractor,
    Extract,
    Train,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Scan => "scan",
            Stage::Split => "split",
            Stage::Preprocess => "preprocess",
            Stage::TrainExtractor => "train-extractor",
            Stage::Extract => "extract",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        })
    }
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: EvalReport,
    pub report_path: PathBuf,
    pub n_train: usize,
    pub combiner_converged: bool,
    /// Per-epoch training loss of each extractor; empty when loaded.
    pub signet_history: Vec<f64>,
    pub signetf_history: Vec<f64>,
}

/// Loads and preprocesses every image of `m`, in order.
pub fn preprocess_manifest(m: &Manifest, cfg: &PreprocessConfig) -> Result<Vec<FloatImage>, Error> {
    cfg.validate()?;
    m.samples()
        .par_iter()
        .map(|s| {
            preprocess::preprocess_pipeline(&s.path, cfg).map_err(|source| Error::Image {
                path: PathBuf::from(&s.path),
                source,
            })
        })
        .collect()
}

/// Contiguous class indices for the writer ids of `m`, in ascending id order.
pub fn writer_index(m: &Manifest) -> BTreeMap<u32, usize> {
    let mut ids: Vec<u32> = m.samples().iter().map(|s| s.writer_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().enumerate().map(|(i, w)| (w, i)).collect()
}

/// Trains one extractor on `images` (row-aligned with `m`). The signet
/// objective only sees genuine rows. Input size, writer count and forgery
/// head are filled in from the data and the objective.
pub fn train_extractor(
    base: &NetConfig,
    m: &Manifest,
    images: &[FloatImage],
    spec: &TrainSpec,
    objective: Objective,
) -> Result<(FeatNet, Vec<f64>), Error> {
    let rows: Vec<usize> = (0..m.len())
        .filter(|&i| objective == Objective::SignetF || !m.samples()[i].label.is_forged())
        .collect();
    let subset = m.select(&rows);
    let writers = writer_index(&subset);
    if writers.len() < 2 {
        return Err(Error::Config(format!(
            "{objective} extractor needs at least 2 writers in the training data, found {}",
            writers.len()
        )));
    }
    let first = images
        .first()
        .ok_or_else(|| Error::Config("no training images".into()))?;
    let mut cfg = base.clone();
    cfg.input_height = first.height();
    cfg.input_width = first.width();
    cfg.num_writers = writers.len();
    cfg.forgery_head = objective == Objective::SignetF;
    let samples: Vec<LabeledImage> = rows
        .iter()
        .map(|&i| {
            let s = &m.samples()[i];
            LabeledImage {
                image: images[i].clone(),
                writer: writers[&s.writer_id],
                forged: s.label.is_forged(),
            }
        })
        .collect();
    let net = featnet::init_network(&cfg)?;
    Ok(featnet::train_with_history(net, &samples, spec, objective)?)
}

fn obtain_net(
    pretrained: Option<&PathBuf>,
    base: &NetConfig,
    m: &Manifest,
    images: &[FloatImage],
    spec: &TrainSpec,
    objective: Objective,
) -> Result<(FeatNet, Vec<f64>), Error> {
    match pretrained {
        Some(path) => {
            let net = featnet::load_model(path)?;
            log::info!("loaded {objective} extractor from {}", path.display());
            Ok((net, Vec::new()))
        }
        None => train_extractor(base, m, images, spec, objective),
    }
}

fn write_with<E: Into<Error>>(
    path: &Path,
    f: impl FnOnce(&Path) -> Result<(), E>,
) -> Result<(), PipelineError> {
    f(path).map_err(Into::into).at(Stage::Write)
}

/// Runs the whole experiment and writes into `cfg.out_dir`:
/// `manifest.csv`, `train.csv`, `test.csv`, `signet.sfnt`, `signetf.sfnt`,
/// `{train,test}_{signet,signetf}.sftv`, `ensemble.sens` and `report.json`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    cfg.validate().at(Stage::Config)?;

    let manifest = datasets::scan_dataset(&cfg.dataset.root, cfg.dataset.layout).at(Stage::Scan)?;
    log::info!("scanned {} samples", manifest.len());
    let (train_m, test_m) = datasets::split_random(&manifest, &cfg.split).at(Stage::Split)?;
    log::info!("split: {} train, {} test", train_m.len(), test_m.len());

    let train_img = preprocess_manifest(&train_m, &cfg.preprocess).at(Stage::Preprocess)?;
    let test_img = preprocess_manifest(&test_m, &cfg.preprocess).at(Stage::Preprocess)?;

    let (signet, signet_history) = obtain_net(
        cfg.pretrained.signet.as_ref(),
        &cfg.signet,
        &train_m,
        &train_img,
        &cfg.train,
        Objective::Signet,
    )
    .at(Stage::TrainExtractor)?;
    let (signetf, signetf_history) = obtain_net(
        cfg.pretrained.signetf.as_ref(),
        &cfg.signetf,
        &train_m,
        &train_img,
        &cfg.train,
        Objective::SignetF,
    )
    .at(Stage::TrainExtractor)?;

    let extract = |net: &FeatNet, imgs: &[FloatImage]| -> Result<Array2<f64>, PipelineError> {
        featnet::extract_batch(net, imgs).at(Stage::Extract)
    };
    let tr_a = extract(&signet, &train_img)?;
    let tr_b = extract(&signetf, &train_img)?;
    let te_a = extract(&signet, &test_img)?;
    let te_b = extract(&signetf, &test_img)?;
    let y_train = train_m.labels();
    let y_test = test_m.labels();

    let fit = stacker::train_ensemble(&tr_a, &tr_b, &y_train, &cfg.ensemble).at(Stage::Train)?;
    let report = evaluate_ensemble(&fit.model, &te_a, &te_b, &y_test).at(Stage::Evaluate)?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out)
        .map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })
        .at(Stage::Write)?;
    write_with(&out.join("manifest.csv"), |p| datasets::write_manifest(&manifest, p))?;
    write_with(&out.join("train.csv"), |p| datasets::write_manifest(&train_m, p))?;
    write_with(&out.join("test.csv"), |p| datasets::write_manifest(&test_m, p))?;
    write_with(&out.join("signet.sfnt"), |p| featnet::save_model(&signet, p))?;
    write_with(&out.join("signetf.sfnt"), |p| featnet::save_model(&signetf, p))?;
    for (name, x, y) in [
        ("train_signet.sftv", &tr_a, &y_train),
        ("train_signetf.sftv", &tr_b, &y_train),
        ("test_signet.sftv", &te_a, &y_test),
        ("test_signetf.sftv", &te_b, &y_test),
    ] {
        write_with(&out.join(name), |p| datasets::write_features(x, y, p))?;
    }
    write_with(&out.join("ensemble.sens"), |p| stacker::save_ensemble(&fit.model, p))?;
    let report_path = out.join("report.json");
    write_with(&report_path, |p| {
        fs::write(p, report.to_json()).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    })?;

    Ok(RunArtifacts {
        report,
        report_path,
        n_train: train_m.len(),
        combiner_converged: fit.combiner_fit.converged,
        signet_history,
        signetf_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = RunConfig::from_toml_str(
            "out_dir = \"o\"\n[dataset]\nroot = \"d\"\nlayout = \"bhsig\"\n[split]\nseed = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.layout, Layout::Bhsig);
        assert_eq!(cfg.split.seed, 5);
        assert_eq!(cfg.split.test_fraction, 0.33);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn missing_dataset_fails_at_scan() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dataset: DatasetSource {
                root: dir.path().join("absent"),
                layout: Layout::Cedar,
            },
            out_dir: dir.path().join("out"),
            ..RunConfig::default()
        };
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Scan);
        assert!(matches!(
            err.source,
            Error::Dataset(datasets::DatasetError::MissingDirectory(_))
        ));
        assert!(err.to_string().starts_with("stage scan:"));
    }
}
