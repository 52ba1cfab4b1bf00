//! Signature corpora on disk: scanning, manifests, splits and feature files.

mod features;
mod manifest;
mod split;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{decode_features, encode_features, read_features, write_features};
pub use manifest::{read_manifest, write_manifest};
pub use split::{split_indices, split_random, test_size, SplitSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset directory not found: {0}")]
    MissingDirectory(PathBuf),
    #[error("cannot parse writer/label from file name: {0}")]
    UnparsableFilename(PathBuf),
    #[error("duplicate image path in manifest: {0}")]
    DuplicatePath(String),
    #[error("need at least 2 samples to split, have {0}")]
    TooFewSamples(usize),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("manifest line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("corrupt feature file: {0}")]
    CorruptFile(String),
    #[error("{rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Forged,
}

impl Label {
    /// 0 genuine, 1 forged.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Genuine => 0,
            Label::Forged => 1,
        }
    }

    pub fn is_forged(self) -> bool {
        self == Label::Forged
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureSample {
    pub path: String,
    pub writer_id: u32,
    pub label: Label,
    pub dataset_tag: String,
}

/// Ordered samples with unique image paths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    samples: Vec<SignatureSample>,
}

impl Manifest {
    pub fn new(samples: Vec<SignatureSample>) -> Result<Self, DatasetError> {
        let mut seen = std::collections::HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.path.as_str()) {
                return Err(DatasetError::DuplicatePath(s.path.clone()));
            }
        }
        Ok(Manifest { samples })
    }

    pub fn samples(&self) -> &[SignatureSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label.as_u8()).collect()
    }

    /// Sub-manifest with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Manifest {
        Manifest {
            samples: rows.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `full_org/original_<writer>_<n>.png`, `full_forg/forgeries_<writer>_<n>.png`.
    Cedar,
    /// One directory per writer holding `G-*` (genuine) and `F-*` (forged)
    /// images; BHSig-style `X-S-<writer>-G-<n>` names are accepted too.
    Bhsig,
    /// A manifest CSV (the root itself, or `manifest.csv` inside it).
    FlatManifest,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cedar" => Ok(Layout::Cedar),
            "bhsig" => Ok(Layout::Bhsig),
            "flat_manifest" | "flat-manifest" | "manifest" => Ok(Layout::FlatManifest),
            other => Err(format!("unknown layout `{other}` (cedar | bhsig | flat_manifest)")),
        }
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> &str {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("")
}

/// `original_7_12` → 7 for prefix `original`.
fn parse_cedar_name(path: &Path, prefix: &str) -> Result<u32, DatasetError> {
    let stem = file_stem(path);
    let rest = stem
        .strip_prefix(prefix)
        .and_then(|r| r.strip_prefix('_'))
        .ok_or_else(|| DatasetError::UnparsableFilename(path.to_path_buf()))?;
    let mut parts = rest.split('_');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(w), Some(i), None) if i.parse::<u32>().is_ok() => w
            .parse()
            .map_err(|_| DatasetError::UnparsableFilename(path.to_path_buf())),
        _ => Err(DatasetError::UnparsableFilename(path.to_path_buf())),
    }
}

fn scan_cedar(root: &Path, tag: &str) -> Result<Vec<SignatureSample>, DatasetError> {
    let mut samples = Vec::new();
    for (sub, prefix, label) in [
        ("full_org", "original", Label::Genuine),
        ("full_forg", "forgeries", Label::Forged),
    ] {
        let dir = root.join(sub);
        if !dir.is_dir() {
            continue;
        }
        for path in sorted_entries(&dir)? {
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            let writer_id = parse_cedar_name(&path, prefix)?;
            samples.push(SignatureSample {
                path: path.to_string_lossy().into_owned(),
                writer_id,
                label,
                dataset_tag: tag.to_string(),
            });
        }
    }
    Ok(samples)
}

fn trailing_number(s: &str) -> Option<u32> {
    let start = s.rfind(|c: char| !c.is_ascii_digit()).map_or(0, |i| i + 1);
    s[start..].parse().ok()
}

/// Label and (optional) writer id encoded in a BHSig-style file name.
fn parse_bhsig_name(stem: &str) -> Option<(Label, Option<u32>)> {
    if stem.starts_with("G-") {
        return Some((Label::Genuine, None));
    }
    if stem.starts_with("F-") {
        return Some((Label::Forged, None));
    }
    let tokens: Vec<&str> = stem.split('-').collect();
    let pos = tokens.iter().position(|t| *t == "G" || *t == "F")?;
    let label = if tokens[pos] == "G" {
        Label::Genuine
    } else {
        Label::Forged
    };
    let writer = pos.checked_sub(1).and_then(|p| tokens[p].parse().ok());
    Some((label, writer))
}

fn scan_bhsig(root: &Path, tag: &str) -> Result<Vec<SignatureSample>, DatasetError> {
    let mut samples = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let dir_writer = dir.file_name().and_then(|n| n.to_str()).and_then(trailing_number);
        for path in sorted_entries(&dir)? {
            if !path.is_file() || !is_image(&path) {
                continue;
            }
            let (label, name_writer) = parse_bhsig_name(file_stem(&path))
                .ok_or_else(|| DatasetError::UnparsableFilename(path.clone()))?;
            let writer_id = dir_writer
                .or(name_writer)
                .ok_or_else(|| DatasetError::UnparsableFilename(path.clone()))?;
            samples.push(SignatureSample {
                path: path.to_string_lossy().into_owned(),
                writer_id,
                label,
                dataset_tag: tag.to_string(),
            });
        }
    }
    Ok(samples)
}

/// Enumerates the signatures under `root`. Samples are ordered by writer,
/// then label, then path.
pub fn scan_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<Manifest, DatasetError> {
    let root = root.as_ref();
    if layout == Layout::FlatManifest {
        let csv = if root.is_dir() {
            root.join("manifest.csv")
        } else {
            root.to_path_buf()
        };
        if !csv.exists() {
            return Err(DatasetError::MissingDirectory(root.to_path_buf()));
        }
        return manifest::read_manifest_resolved(&csv);
    }
    if !root.is_dir() {
        return Err(DatasetError::MissingDirectory(root.to_path_buf()));
    }
    let tag = root
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string();
    let mut samples = match layout {
        Layout::Cedar => scan_cedar(root, &tag)?,
        Layout::Bhsig => scan_bhsig(root, &tag)?,
        Layout::FlatManifest => unreachable!(),
    };
    samples.sort_by(|a, b| {
        (a.writer_id, a.label, &a.path).cmp(&(b.writer_id, b.label, &b.path))
    });
    Manifest::new(samples)
}
