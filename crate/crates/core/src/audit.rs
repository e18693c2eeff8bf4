//! Cross-dataset test-image contamination.
//!
//! A registry is a list of datasets, each with train/val/test image-id sets.
//! [`compute_overlap_matrix`] reports, for every ordered pair of datasets, the
//! share of the row dataset's test images that appear in the column dataset's
//! train or val split. [`clean_registry`] removes the union of all test sets
//! from every train and val split and leaves the test sets untouched.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("duplicate dataset name `{0}` in registry")]
    DuplicateName(String),
    #[error("dataset name is empty")]
    EmptyName,
    #[error("image id is empty")]
    EmptyId,
}

/// Opaque, case-sensitive image identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct ImageId(String);

impl ImageId {
    pub fn new(id: impl Into<String>) -> Result<Self, AuditError> {
        let id = id.into();
        if id.is_empty() {
            return Err(AuditError::EmptyId);
        }
        Ok(ImageId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplits {
    pub name: String,
    pub train: BTreeSet<ImageId>,
    pub val: BTreeSet<ImageId>,
    pub test: BTreeSet<ImageId>,
}

impl DatasetSplits {
    pub fn new(name: impl Into<String>) -> Self {
        DatasetSplits {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Builder used heavily in tests: ids given as string slices.
    pub fn with_ids(name: &str, train: &[&str], val: &[&str], test: &[&str]) -> Self {
        let set = |ids: &[&str]| ids.iter().map(|s| ImageId(String::from(*s))).collect();
        DatasetSplits {
            name: String::from(name),
            train: set(train),
            val: set(val),
            test: set(test),
        }
    }

    pub fn split(&self, split: Split) -> &BTreeSet<ImageId> {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut BTreeSet<ImageId> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn train_val(&self) -> BTreeSet<&ImageId> {
        self.train.iter().chain(self.val.iter()).collect()
    }

    fn in_train_val(&self, id: &ImageId) -> bool {
        self.train.contains(id) || self.val.contains(id)
    }
}

/// An exact percentage `100 * hits / total`; `total == 0` reads as 0%.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Percentage {
    pub hits: usize,
    pub total: usize,
}

impl Percentage {
    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.hits as f64 / self.total as f64
        }
    }

    pub fn is_zero(self) -> bool {
        self.hits == 0
    }

    /// Integer rendering used for display only.
    pub fn rounded(self) -> u32 {
        libm::round(self.value()) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub tasks: Vec<String>,
    /// `cells[r][c]`: row-task test images present in column-task train ∪ val.
    pub cells: Vec<Vec<Percentage>>,
}

impl OverlapMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<Percentage> {
        let r = self.tasks.iter().position(|t| t == row)?;
        let c = self.tasks.iter().position(|t| t == col)?;
        Some(self.cells[r][c])
    }

    pub fn is_all_zero(&self) -> bool {
        self.cells.iter().flatten().all(|p| p.is_zero())
    }
}

pub fn validate_registry(registry: &[DatasetSplits]) -> Result<(), AuditError> {
    if registry.is_empty() {
        return Err(AuditError::EmptyRegistry);
    }
    let mut seen = BTreeSet::new();
    for ds in registry {
        if ds.name.is_empty() {
            return Err(AuditError::EmptyName);
        }
        if !seen.insert(ds.name.as_str()) {
            return Err(AuditError::DuplicateName(ds.name.clone()));
        }
    }
    Ok(())
}

pub fn compute_overlap_matrix(registry: &[DatasetSplits]) -> Result<OverlapMatrix, AuditError> {
    validate_registry(registry)?;
    let cells = registry
        .iter()
        .map(|row| {
            registry
                .iter()
                .map(|col| Percentage {
                    hits: row.test.iter().filter(|id| col.in_train_val(id)).count(),
                    total: row.test.len(),
                })
                .collect()
        })
        .collect();
    Ok(OverlapMatrix {
        tasks: registry.iter().map(|d| d.name.clone()).collect(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanEntry {
    pub name: String,
    /// |train ∪ val| before cleaning.
    pub original: usize,
    pub removed: usize,
    pub removed_train: usize,
    pub removed_val: usize,
}

impl CleanEntry {
    pub fn percent_removed(&self) -> f64 {
        if self.original == 0 {
            0.0
        } else {
            100.0 * self.removed as f64 / self.original as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanReport {
    pub entries: Vec<CleanEntry>,
    pub union_test_size: usize,
}

impl CleanReport {
    pub fn total_removed(&self) -> usize {
        self.entries.iter().map(|e| e.removed).sum()
    }
}

/// Removes every test image of every dataset from all train and val splits.
pub fn clean_registry(
    registry: &[DatasetSplits],
) -> Result<(Vec<DatasetSplits>, CleanReport), AuditError> {
    validate_registry(registry)?;
    let union: BTreeSet<&ImageId> = registry.iter().flat_map(|d| d.test.iter()).collect();

    let mut cleaned = Vec::with_capacity(registry.len());
    let mut entries = Vec::with_capacity(registry.len());
    for ds in registry {
        let keep = |set: &BTreeSet<ImageId>| -> BTreeSet<ImageId> {
            set.iter()
                .filter(|id| !union.contains(id))
                .cloned()
                .collect()
        };
        let out = DatasetSplits {
            name: ds.name.clone(),
            train: keep(&ds.train),
            val: keep(&ds.val),
            test: ds.test.clone(),
        };
        let original = ds.train_val().len();
        let remaining = out.train_val().len();
        entries.push(CleanEntry {
            name: ds.name.clone(),
            original,
            removed: original - remaining,
            removed_train: ds.train.len() - out.train.len(),
            removed_val: ds.val.len() - out.val.len(),
        });
        cleaned.push(out);
    }
    Ok((
        cleaned,
        CleanReport {
            entries,
            union_test_size: union.len(),
        },
    ))
}
