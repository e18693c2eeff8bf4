use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Region, RegionInput};
use crate::rng::{child_rng, derive_seed, rng_from};

pub const N_COLORS: usize = 4;
pub const N_SHAPES: usize = 4;
pub const GRID: usize = 3;
pub const CELL: f64 = 10.0;
/// Appearance part of a region feature; four normalised box coordinates follow.
pub const APPEARANCE_DIM: usize = 16;
pub const REGION_DIM: usize = APPEARANCE_DIM + 4;

/// Word list shared by every task template.
pub const WORDS: [&str; 32] = [
    "[MASK]", "red", "green", "blue", "yellow", "circle", "square", "triangle", "star", "top",
    "middle", "bottom", "left", "center", "right", "what", "color", "shape", "is", "the", "where",
    "which", "both", "not", "there", "a", "and", "one", "at", "it", "object", "images",
];

pub mod word {
    pub const MASK: usize = 0;
    pub const COLOR0: usize = 1;
    pub const SHAPE0: usize = 5;
    pub const ROW0: usize = 9;
    pub const COL0: usize = 12;
    pub const WHAT: usize = 15;
    pub const COLOR: usize = 16;
    pub const SHAPE: usize = 17;
    pub const IS: usize = 18;
    pub const THE: usize = 19;
    pub const WHERE: usize = 20;
    pub const WHICH: usize = 21;
    pub const BOTH: usize = 22;
    pub const NOT: usize = 23;
    pub const THERE: usize = 24;
    pub const A: usize = 25;
    pub const AND: usize = 26;
    pub const ONE: usize = 27;
    pub const AT: usize = 28;
    pub const IT: usize = 29;
    pub const OBJECT: usize = 30;
    pub const IMAGES: usize = 31;

    pub fn color(c: u8) -> usize {
        COLOR0 + c as usize
    }
    pub fn shape(s: u8) -> usize {
        SHAPE0 + s as usize
    }
    pub fn row(r: u8) -> usize {
        ROW0 + r as usize
    }
    pub fn col(c: u8) -> usize {
        COL0 + c as usize
    }
    pub fn is_attribute(w: usize) -> bool {
        (COLOR0..ROW0).contains(&w)
    }
}

pub const VOCAB_SIZE: usize = WORDS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Object {
    pub shape: u8,
    pub color: u8,
    /// Grid cell, `row * GRID + col`.
    pub cell: u8,
}

impl Object {
    pub fn row(&self) -> u8 {
        self.cell / GRID as u8
    }
    pub fn col(&self) -> u8 {
        self.cell % GRID as u8
    }
    /// Region-class label used as the masked-region reconstruction target.
    pub fn class(&self) -> usize {
        self.shape as usize * N_COLORS + self.color as usize
    }
}

/// A latent scene: a few objects on a grid, each with a unique
/// (color, shape) pair and a unique cell.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub seed: u64,
    pub grid: u8,
    pub objects: Vec<Object>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 2,
            max_objects: 4,
        }
    }
}

impl Scene {
    pub fn has(&self, color: u8, shape: u8) -> bool {
        self.objects
            .iter()
            .any(|o| o.color == color && o.shape == shape)
    }

    pub fn find(&self, color: u8, shape: u8) -> Option<usize> {
        self.objects
            .iter()
            .position(|o| o.color == color && o.shape == shape)
    }

    pub fn count_shape(&self, shape: u8) -> usize {
        self.objects.iter().filter(|o| o.shape == shape).count()
    }

    pub fn count_color(&self, color: u8) -> usize {
        self.objects.iter().filter(|o| o.color == color).count()
    }

    pub fn at_cell(&self, cell: u8) -> Option<usize> {
        self.objects.iter().position(|o| o.cell == cell)
    }

    /// Box of object `i`; jitter is a pure function of the scene seed.
    pub fn region(&self, i: usize) -> Region {
        let o = self.objects[i];
        let mut rng = child_rng(self.seed, 0xB0C5 + i as u64);
        let x0 = o.col() as f64 * CELL + rng.random_range(0.0..2.0);
        let y0 = o.row() as f64 * CELL + rng.random_range(0.0..2.0);
        let w = rng.random_range(6.0..9.0);
        let h = rng.random_range(6.0..9.0);
        Region {
            x_min: x0,
            y_min: y0,
            x_max: x0 + w,
            y_max: y0 + h,
        }
    }
}

pub fn gen_scene(seed: u64, cfg: &SceneConfig) -> Scene {
    let mut rng = rng_from(derive_seed(seed, 0x5CE4E));
    let lo = cfg.min_objects.clamp(1, GRID * GRID);
    let hi = cfg.max_objects.clamp(lo, GRID * GRID);
    let n = rng.random_range(lo..=hi);
    let mut cells: Vec<u8> = (0..(GRID * GRID) as u8).collect();
    cells.shuffle(&mut rng);
    let mut pairs: Vec<(u8, u8)> = (0..N_COLORS as u8)
        .flat_map(|c| (0..N_SHAPES as u8).map(move |s| (c, s)))
        .collect();
    pairs.shuffle(&mut rng);
    let objects = (0..n)
        .map(|i| Object {
            color: pairs[i].0,
            shape: pairs[i].1,
            cell: cells[i],
        })
        .collect();
    Scene {
        seed,
        grid: GRID as u8,
        objects,
    }
}

/// Fixed appearance vectors for each color and shape: the "visual world"
/// every task shares.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub color_vecs: Vec<Vec<f64>>,
    pub shape_vecs: Vec<Vec<f64>>,
    pub feature_noise: f64,
}

impl World {
    pub fn new(seed: u64, feature_noise: f64) -> Self {
        let mut rng = child_rng(seed, 0x3012D);
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    (0..APPEARANCE_DIM)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect::<Vec<f64>>()
                })
                .map(|v| {
                    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                    v.into_iter().map(|x| 2.0 * x / norm).collect()
                })
                .collect()
        };
        let color_vecs = draw(N_COLORS);
        let shape_vecs = draw(N_SHAPES);
        World {
            seed,
            color_vecs,
            shape_vecs,
            feature_noise,
        }
    }

    /// Region inputs in object order.
    pub fn regions(&self, scene: &Scene) -> Vec<RegionInput> {
        let scale = (GRID as f64) * CELL;
        (0..scene.objects.len())
            .map(|i| {
                let o = scene.objects[i];
                let mut rng = child_rng(derive_seed(scene.seed, self.seed), 0xFEA7 + i as u64);
                let region = scene.region(i);
                let mut features: Vec<f64> = (0..APPEARANCE_DIM)
                    .map(|k| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        self.color_vecs[o.color as usize][k]
                            + self.shape_vecs[o.shape as usize][k]
                            + self.feature_noise * n
                    })
                    .collect();
                features.extend([
                    region.x_min / scale,
                    region.y_min / scale,
                    region.x_max / scale,
                    region.y_max / scale,
                ]);
                RegionInput { features, region }
            })
            .collect()
    }
}
