//! Split files (`SPLIT<TAB>IMAGE_ID` per line, `#` comments) and registry
//! directories of `<dataset>.splits` files.

use std::fs;
use std::io;
use std::path::Path;

use mtsched_core::audit::{AuditError, CleanReport, DatasetSplits, ImageId, OverlapMatrix, Split};

pub const SPLITS_EXT: &str = "splits";

#[derive(Debug, thiserror::Error)]
pub enum SplitsError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: duplicate id `{id}` in {split}")]
    Duplicate {
        path: String,
        line: usize,
        id: String,
        split: &'static str,
    },
    #[error("{path}: empty dataset name")]
    EmptyName { path: String },
    #[error("{0}: no .splits files")]
    EmptyRegistry(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SplitsError + '_ {
    move |source| SplitsError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_splits(name: &str, text: &str, path: &str) -> Result<DatasetSplits, SplitsError> {
    if name.is_empty() {
        return Err(SplitsError::EmptyName { path: path.into() });
    }
    let mut ds = DatasetSplits::new(name);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let malformed = |msg: &str| SplitsError::Malformed {
            path: path.into(),
            line,
            msg: msg.into(),
        };
        let (split, id) = raw
            .split_once('\t')
            .ok_or_else(|| malformed("expected SPLIT<TAB>IMAGE_ID"))?;
        let split =
            Split::parse(split).ok_or_else(|| malformed("split must be train, val or test"))?;
        if id.contains('\t') {
            return Err(malformed("image id contains a tab"));
        }
        let id = ImageId::new(id).map_err(|_| malformed("empty image id"))?;
        if !ds.split_mut(split).insert(id.clone()) {
            return Err(SplitsError::Duplicate {
                path: path.into(),
                line,
                id: id.to_string(),
                split: split.as_str(),
            });
        }
    }
    Ok(ds)
}

/// Canonical text: splits in train, val, test order, ids sorted.
pub fn render_splits(ds: &DatasetSplits) -> String {
    let mut out = String::new();
    for split in Split::ALL {
        for id in ds.split(split) {
            out.push_str(split.as_str());
            out.push('\t');
            out.push_str(id.as_str());
            out.push('\n');
        }
    }
    out
}

/// Dataset name is the file stem.
pub fn load_splits(path: &Path) -> Result<DatasetSplits, SplitsError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    parse_splits(name, &text, &path.display().to_string())
}

pub fn save_splits(ds: &DatasetSplits, path: &Path) -> Result<(), SplitsError> {
    fs::write(path, render_splits(ds)).map_err(io_err(path))
}

/// Loads every `*.splits` file in `dir`, ordered by dataset name.
pub fn load_registry(dir: &Path) -> Result<Vec<DatasetSplits>, SplitsError> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == SPLITS_EXT) {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(SplitsError::EmptyRegistry(dir.display().to_string()));
    }
    paths.sort();
    paths.iter().map(|p| load_splits(p)).collect()
}

pub fn save_registry(registry: &[DatasetSplits], dir: &Path) -> Result<(), SplitsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for ds in registry {
        if ds.name.is_empty() {
            return Err(SplitsError::EmptyName {
                path: dir.display().to_string(),
            });
        }
        save_splits(ds, &dir.join(format!("{}.{SPLITS_EXT}", ds.name)))?;
    }
    Ok(())
}

/// Row dataset, then one column per dataset with exact percentages.
pub fn matrix_csv(m: &OverlapMatrix) -> String {
    let mut out = String::from("test_of");
    for t in &m.tasks {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (t, row) in m.tasks.iter().zip(&m.cells) {
        out.push_str(t);
        for c in row {
            out.push_str(&format!(",{}", c.value()));
        }
        out.push('\n');
    }
    out
}

pub fn clean_report_csv(r: &CleanReport) -> String {
    let mut out = String::from(
        "dataset,original_train_val,removed,removed_train,removed_val,percent_removed\n",
    );
    for e in &r.entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.name,
            e.original,
            e.removed,
            e.removed_train,
            e.removed_val,
            e.percent_removed()
        ));
    }
    out.push_str(&format!("# union_test_size={}\n", r.union_test_size));
    out
}
