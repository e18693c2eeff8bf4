pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod runlog;
pub mod splits_io;
