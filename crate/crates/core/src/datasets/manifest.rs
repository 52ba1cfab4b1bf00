//! Manifest CSV: header `path,writer_id,label,dataset_tag`, labels `genuine`
//! or `forged`, LF line endings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, DatasetError, Label, Manifest, SignatureSample};

#[derive(Serialize, Deserialize)]
struct Row {
    path: String,
    writer_id: u32,
    label: Label,
    dataset_tag: String,
}

pub fn write_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["path", "writer_id", "label", "dataset_tag"])
        .map_err(|e| csv_io(path, e))?;
    for s in m.samples() {
        w.serialize(Row {
            path: s.path.clone(),
            writer_id: s.writer_id,
            label: s.label,
            dataset_tag: s.dataset_tag.clone(),
        })
        .map_err(|e| csv_io(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn csv_io(path: &Path, e: csv::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Reads a manifest, keeping paths exactly as written.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
    read_rows(path.as_ref(), false)
}

/// Like [`read_manifest`], with relative image paths resolved against the
/// directory holding the CSV.
pub(crate) fn read_manifest_resolved(path: &Path) -> Result<Manifest, DatasetError> {
    read_rows(path, true)
}

fn read_rows(path: &Path, resolve: bool) -> Result<Manifest, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| parse_err(1, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["path", "writer_id", "label", "dataset_tag"] {
        return Err(DatasetError::Parse {
            line: 1,
            message: "expected header path,writer_id,label,dataset_tag".into(),
        });
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec.deserialize(Some(&header)).map_err(|e| parse_err(line, e))?;
        if row.path.is_empty() {
            return Err(DatasetError::Parse {
                line,
                message: "empty path".into(),
            });
        }
        let p = if resolve && Path::new(&row.path).is_relative() {
            base.join(&row.path).to_string_lossy().into_owned()
        } else {
            row.path
        };
        samples.push(SignatureSample {
            path: p,
            writer_id: row.writer_id,
            label: row.label,
            dataset_tag: row.dataset_tag,
        });
    }
    Manifest::new(samples)
}

fn parse_err(line: u64, e: csv::Error) -> DatasetError {
    DatasetError::Parse {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{scan_dataset, Layout};

    fn sample(path: &str, w: u32, label: Label) -> SignatureSample {
        SignatureSample {
            path: path.into(),
            writer_id: w,
            label,
            dataset_tag: "toy, with comma".into(),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = Manifest::new(vec![
            sample("a/b.png", 3, Label::Genuine),
            sample("c \"q\".png", 1, Label::Forged),
        ])
        .unwrap();
        write_manifest(&m, &p).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), m);
        assert!(!fs::read_to_string(&p).unwrap().contains('\r'));
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&Manifest::default(), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "path,writer_id,label,dataset_tag\n");
        assert!(read_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn bad_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "path,writer_id,label,dataset_tag\na.png,1,genuine,t\nb.png,1,maybe,t\n",
        )
        .unwrap();
        match read_manifest(&p) {
            Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_layout_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.csv"),
            "path,writer_id,label,dataset_tag\nimg/a.png,4,forged,t\n",
        )
        .unwrap();
        let m = scan_dataset(dir.path(), Layout::FlatManifest).unwrap();
        assert_eq!(m.samples()[0].path, dir.path().join("img/a.png").to_string_lossy());
        assert_eq!(m.samples()[0].label, Label::Forged);
    }
}
