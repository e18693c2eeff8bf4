use core::fmt;
use core::str::FromStr;

use alloc::string::String;

use crate::model::HeadKind;
use crate::sched::TaskGroup;

use super::scene::{GRID, N_COLORS, N_SHAPES};

/// Answers of the shared attribute-question head: colors then shapes.
pub const ATTRIBUTE_ANSWERS: usize = N_COLORS + N_SHAPES;
/// Answers of the location-question head: one per grid cell.
pub const CELL_ANSWERS: usize = GRID * GRID;
/// Region classes for masked-region reconstruction.
pub const REGION_CLASSES: usize = N_COLORS * N_SHAPES;
pub const RETRIEVAL_CANDIDATES: usize = 4;

/// The twelve synthetic task analogs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    Vqa,
    VgQa,
    Gqa,
    Coco,
    Flickr,
    RefCoco,
    RefCocoPlus,
    RefCocoG,
    Visual7w,
    GuessWhat,
    Nlvr,
    SnliVe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Vqa,
    Retrieval,
    Referring,
    PairVerification,
    Entailment,
}

impl TaskKind {
    pub const ALL: [TaskKind; 12] = [
        TaskKind::Vqa,
        TaskKind::VgQa,
        TaskKind::Gqa,
        TaskKind::Coco,
        TaskKind::Flickr,
        TaskKind::RefCoco,
        TaskKind::RefCocoPlus,
        TaskKind::RefCocoG,
        TaskKind::Visual7w,
        TaskKind::GuessWhat,
        TaskKind::Nlvr,
        TaskKind::SnliVe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Vqa => "vqa",
            TaskKind::VgQa => "vg_qa",
            TaskKind::Gqa => "gqa",
            TaskKind::Coco => "coco",
            TaskKind::Flickr => "flickr",
            TaskKind::RefCoco => "refcoco",
            TaskKind::RefCocoPlus => "refcoco_plus",
            TaskKind::RefCocoG => "refcocog",
            TaskKind::Visual7w => "visual7w",
            TaskKind::GuessWhat => "guesswhat",
            TaskKind::Nlvr => "nlvr",
            TaskKind::SnliVe => "snli_ve",
        }
    }

    pub fn family(self) -> Family {
        match self {
            TaskKind::Vqa | TaskKind::VgQa | TaskKind::Gqa => Family::Vqa,
            TaskKind::Coco | TaskKind::Flickr => Family::Retrieval,
            TaskKind::RefCoco
            | TaskKind::RefCocoPlus
            | TaskKind::RefCocoG
            | TaskKind::Visual7w
            | TaskKind::GuessWhat => Family::Referring,
            TaskKind::Nlvr => Family::PairVerification,
            TaskKind::SnliVe => Family::Entailment,
        }
    }

    pub fn group(self) -> TaskGroup {
        match self.family() {
            Family::Vqa => TaskGroup::G1,
            Family::Retrieval => TaskGroup::G2,
            Family::Referring => TaskGroup::G3,
            Family::PairVerification | Family::Entailment => TaskGroup::G4,
        }
    }

    /// Default head name; VQA/VG-QA, the retrieval tasks and the referring
    /// tasks each share one head.
    pub fn default_head(self) -> &'static str {
        match self {
            TaskKind::Vqa | TaskKind::VgQa => "vqa",
            TaskKind::Gqa => "gqa",
            TaskKind::Coco | TaskKind::Flickr => "retrieval",
            TaskKind::Nlvr => "nlvr",
            TaskKind::SnliVe => "snli_ve",
            _ => "referring",
        }
    }

    pub fn head_kind(self) -> HeadKind {
        match self {
            TaskKind::Vqa | TaskKind::VgQa => HeadKind::VocabVqa {
                answers: ATTRIBUTE_ANSWERS,
            },
            TaskKind::Gqa => HeadKind::VocabVqa {
                answers: CELL_ANSWERS,
            },
            TaskKind::Coco | TaskKind::Flickr => HeadKind::Retrieval,
            TaskKind::Nlvr => HeadKind::Verification {
                pairs: 2,
                classes: 2,
            },
            TaskKind::SnliVe => HeadKind::Verification {
                pairs: 1,
                classes: 3,
            },
            _ => HeadKind::Referring,
        }
    }

    /// Name of the headline metric.
    pub fn metric_name(self) -> &'static str {
        match self.family() {
            Family::Vqa => "vqa_acc",
            Family::Retrieval => "r@1",
            Family::Referring => "ref_acc",
            Family::PairVerification | Family::Entailment => "acc",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown task kind `{s}`"))
    }
}
