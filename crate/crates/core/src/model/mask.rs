use alloc::vec::Vec;

use rand::Rng as _;

use super::geometry::{iou, Region};
use crate::rng::rng_from;

pub const DEFAULT_MASK_RATE: f64 = 0.15;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;

/// Which words and regions are hidden for masked multi-modal modelling.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub masked_words: Vec<usize>,
    /// Seed-masked regions plus their co-masked neighbours, ascending.
    pub masked_regions: Vec<usize>,
    /// Regions drawn directly by the generator, before co-masking.
    pub seed_regions: Vec<usize>,
    pub seed: u64,
    pub mask_rate: f64,
    pub iou_threshold: f64,
}

impl MaskPlan {
    pub fn empty(seed: u64, mask_rate: f64, iou_threshold: f64) -> Self {
        MaskPlan {
            masked_words: Vec::new(),
            masked_regions: Vec::new(),
            seed_regions: Vec::new(),
            seed,
            mask_rate,
            iou_threshold,
        }
    }

    /// Number of tokens masked before co-masking.
    pub fn seed_masked_count(&self) -> usize {
        self.masked_words.len() + self.seed_regions.len()
    }

    pub fn is_word_masked(&self, j: usize) -> bool {
        self.masked_words.binary_search(&j).is_ok()
    }

    pub fn is_region_masked(&self, i: usize) -> bool {
        self.masked_regions.binary_search(&i).is_ok()
    }

    /// No unmasked region overlaps a seed-masked region above the threshold.
    pub fn is_closed(&self, regions: &[Region]) -> bool {
        (0..regions.len())
            .filter(|q| !self.is_region_masked(*q))
            .all(|q| {
                self.seed_regions
                    .iter()
                    .all(|&r| iou(&regions[r], &regions[q]) <= self.iou_threshold)
            })
    }
}

/// Draws each word and region independently with probability `mask_rate`,
/// then also masks every region whose IoU with a drawn region exceeds
/// `iou_threshold`.
pub fn build_mask_plan(
    regions: &[Region],
    n_words: usize,
    seed: u64,
    mask_rate: f64,
    iou_threshold: f64,
) -> MaskPlan {
    let mut rng = rng_from(seed);
    let p = mask_rate.clamp(0.0, 1.0);
    let masked_words: Vec<usize> = (0..n_words).filter(|_| rng.random_bool(p)).collect();
    let seed_regions: Vec<usize> = (0..regions.len()).filter(|_| rng.random_bool(p)).collect();
    let masked_regions = (0..regions.len())
        .filter(|&q| {
            seed_regions.contains(&q)
                || seed_regions
                    .iter()
                    .any(|&r| iou(&regions[r], &regions[q]) > iou_threshold)
        })
        .collect();
    MaskPlan {
        masked_words,
        masked_regions,
        seed_regions,
        seed,
        mask_rate,
        iou_threshold,
    }
}
