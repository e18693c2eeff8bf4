//! CSV reports over completed run logs.
//!
//! * `results.csv`: one row per (variant, split, task) plus group means and
//!   the all-task average.
//! * `table.csv`: test-split group means and average, one row per variant.
//! * `timeline.csv`: one row per step or validation record, with validation
//!   scores also divided by the best score of the task's group in that run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mtsched_core::bench::EvalResult;
use mtsched_core::sched::TaskGroup;

use crate::runlog::{LogError, Record, RunLog, LOG_FILE};

pub const RESULTS_FILE: &str = "results.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const TIMELINE_FILE: &str = "timeline.csv";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no run logs given")]
    Empty,
    #[error("{0}: no {LOG_FILE} here or in its subdirectories")]
    NoLog(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ReportRun {
    pub variant: String,
    pub log: RunLog,
}

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

/// Each path is a run directory, or a directory whose immediate
/// subdirectories are run directories (an ablation suite).
pub fn collect_runs(paths: &[PathBuf]) -> Result<Vec<(String, PathBuf)>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut out = Vec::new();
    for p in paths {
        if p.join(LOG_FILE).is_file() {
            out.push((dir_name(p), p.join(LOG_FILE)));
            continue;
        }
        let mut subs: Vec<PathBuf> = fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|s| s.join(LOG_FILE).is_file())
            .collect();
        if subs.is_empty() {
            return Err(ReportError::NoLog(p.display().to_string()));
        }
        subs.sort();
        out.extend(subs.into_iter().map(|s| (dir_name(&s), s.join(LOG_FILE))));
    }
    Ok(out)
}

pub fn load_runs(paths: &[PathBuf]) -> Result<Vec<ReportRun>, ReportError> {
    collect_runs(paths)?
        .into_iter()
        .map(|(variant, log)| {
            Ok(ReportRun {
                variant,
                log: RunLog::read_complete(&log)?,
            })
        })
        .collect()
}

fn push_eval(out: &mut String, variant: &str, run: &str, split: &str, e: &EvalResult) {
    for t in &e.tasks {
        let _ = writeln!(
            out,
            "{variant},{run},{split},{},{},{},{}",
            t.task, t.group, t.metric, t.value
        );
    }
    for g in &e.groups {
        let _ = writeln!(
            out,
            "{variant},{run},{split},group_mean,{},mean,{}",
            g.group, g.mean
        );
    }
    let _ = writeln!(
        out,
        "{variant},{run},{split},all_tasks,,average,{}",
        e.average
    );
}

pub fn results_csv(runs: &[ReportRun]) -> String {
    let mut out = String::from("variant,run,split,task,group,metric,value\n");
    for r in runs {
        if let Some((val, test, mt_vgc)) = r.log.final_record() {
            push_eval(&mut out, &r.variant, r.log.run_name(), "val", val);
            push_eval(&mut out, &r.variant, r.log.run_name(), "test", test);
            if let Some(m) = mt_vgc {
                let _ = writeln!(
                    out,
                    "{},{},test,mt_vgc,,mt_vgc,{m}",
                    r.variant,
                    r.log.run_name()
                );
            }
        }
    }
    out
}

/// Test-split group means; groups without tasks stay empty.
pub fn table_csv(runs: &[ReportRun]) -> String {
    let mut out = String::from("variant,G1,G2,G3,G4,average\n");
    for r in runs {
        let Some((_, test, _)) = r.log.final_record() else {
            continue;
        };
        out.push_str(&r.variant);
        for g in TaskGroup::ALL {
            out.push(',');
            if let Some(m) = test.group(g) {
                let _ = write!(out, "{m}");
            }
        }
        let _ = writeln!(out, ",{}", test.average);
    }
    out
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn timeline_csv(runs: &[ReportRun]) -> String {
    let mut out =
        String::from("variant,iteration,task,record,dsg_mode,loss,lr_multiplier,loss_scale,stepped,val_score,val_score_norm\n");
    for r in runs {
        let groups: BTreeMap<String, TaskGroup> = r
            .log
            .final_record()
            .map(|(_, test, _)| {
                test.tasks
                    .iter()
                    .map(|t| (t.task.clone(), t.group))
                    .collect()
            })
            .unwrap_or_default();
        let mut best: BTreeMap<Option<TaskGroup>, f64> = BTreeMap::new();
        for rec in r.log.validations() {
            if let Record::Validation { task, score, .. } = rec {
                let e = best
                    .entry(groups.get(task).copied())
                    .or_insert(f64::NEG_INFINITY);
                *e = e.max(*score);
            }
        }
        for rec in &r.log.records {
            match rec {
                Record::Step {
                    iteration,
                    task,
                    loss,
                    lr_multiplier,
                    loss_scale,
                    stepped,
                    mode,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "{},{iteration},{task},step,{},{},{lr_multiplier},{loss_scale},{stepped},,",
                        r.variant,
                        mode.as_str(),
                        opt(*loss)
                    );
                }
                Record::Validation {
                    iteration,
                    task,
                    score,
                    dsg_mode_after,
                    ..
                } => {
                    let b = best[&groups.get(task).copied()];
                    let norm = if b != 0.0 { score / b } else { 0.0 };
                    let _ = writeln!(
                        out,
                        "{},{iteration},{task},validation,{},,,,,{score},{norm}",
                        r.variant,
                        dsg_mode_after.as_str()
                    );
                }
                _ => {}
            }
        }
    }
    out
}

/// Writes the three CSVs into `out_dir`.
pub fn emit_report(paths: &[PathBuf], out_dir: &Path) -> Result<Vec<ReportRun>, ReportError> {
    let runs = load_runs(paths)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESULTS_FILE), results_csv(&runs))?;
    fs::write(out_dir.join(TABLE_FILE), table_csv(&runs))?;
    fs::write(out_dir.join(TIMELINE_FILE), timeline_csv(&runs))?;
    Ok(runs)
}
