#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mtsched::config::ExperimentConfig;

pub const TASKS: [&str; 4] = ["vqa", "flickr", "visual7w", "nlvr"];

/// Small four-task config that trains in well under a second.
pub fn small_config_text(seed: u64, max_iter: u64) -> String {
    let mut text = format!(
        "seed = {seed}\n\n[scheduler]\nmax_iter = {max_iter}\n\n[model]\ndim = 8\nhidden = 8\n\n\
         [benchmark]\nval_count = 24\ntest_count = 24\n\n[finetune]\niters = 20\n"
    );
    for (i, t) in TASKS.iter().enumerate() {
        text.push_str(&format!(
            "\n[[tasks]]\nname = \"{t}\"\ntarget_lr = {}\nbatch_size = 4\nsingle_task_iters = {max_iter}\ntrain_count = 32\n",
            0.05 * (i + 1) as f64
        ));
    }
    text
}

pub fn small_config(seed: u64, max_iter: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml(&small_config_text(seed, max_iter)).unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

pub fn headline() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/headline.toml");
    ExperimentConfig::load(&path).unwrap()
}
