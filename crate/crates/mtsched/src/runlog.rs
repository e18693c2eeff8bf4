//! Append-only JSON-lines run log. Field order is fixed by the record
//! structs, and every record is flushed as soon as it is written.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use mtsched_core::bench::EvalResult;
use mtsched_core::sched::{DsgMode, ScheduleEvent, Transition};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const LOG_FILE: &str = "run.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header {
        schema_version: u32,
        run: String,
        seed: u64,
        tasks: Vec<String>,
    },
    /// Masked-modelling warm start; numbered separately from the schedule.
    Pretrain {
        iteration: u64,
        masked_loss: f64,
        alignment_loss: f64,
    },
    Phase {
        name: String,
        start_iter: u64,
    },
    Step {
        iteration: u64,
        task: String,
        loss: Option<f64>,
        lr_multiplier: f64,
        loss_scale: f64,
        stepped: bool,
        reason: String,
        mode: DsgMode,
    },
    Validation {
        iteration: u64,
        task: String,
        epoch: u32,
        score: f64,
        dsg_mode_after: DsgMode,
        transition: Option<String>,
    },
    Final {
        val: EvalResult,
        test: EvalResult,
        mt_vgc: Option<f64>,
    },
    Abort {
        iteration: u64,
        task: String,
        error: String,
    },
}

impl Record {
    /// Converts a schedule event, naming tasks by index.
    pub fn from_event(ev: &ScheduleEvent, names: &[String]) -> Record {
        match ev {
            ScheduleEvent::Phase { name, start_iter } => Record::Phase {
                name: name.clone(),
                start_iter: *start_iter,
            },
            ScheduleEvent::Step {
                decision,
                loss,
                lr_multiplier,
                loss_scale,
                mode,
            } => Record::Step {
                iteration: decision.iteration,
                task: names[decision.task].clone(),
                loss: *loss,
                lr_multiplier: *lr_multiplier,
                loss_scale: *loss_scale,
                stepped: decision.stepped,
                reason: decision.reason.as_str().into(),
                mode: *mode,
            },
            ScheduleEvent::Validation {
                iteration,
                task,
                epoch,
                score,
                mode_after,
                transition,
            } => Record::Validation {
                iteration: *iteration,
                task: names[*task].clone(),
                epoch: *epoch,
                score: *score,
                dsg_mode_after: *mode_after,
                transition: transition.map(|t| {
                    match t {
                        Transition::Converged => "converged",
                        Transition::Diverged => "diverged",
                    }
                    .into()
                }),
            },
        }
    }
}

pub struct RunLogWriter<W: Write> {
    out: W,
    records: u64,
}

impl RunLogWriter<File> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(RunLogWriter::new(File::create(path)?))
    }
}

impl<W: Write> RunLogWriter<W> {
    pub fn new(out: W) -> Self {
        RunLogWriter { out, records: 0 }
    }

    pub fn write(&mut self, rec: &Record) -> io::Result<()> {
        let mut line = serde_json::to_vec(rec).map_err(io::Error::other)?;
        line.push(b'\n');
        self.out.write_all(&line)?;
        self.out.flush()?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: missing header")]
    NoHeader { path: String },
    #[error("{path}: schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { path: String, found: u32 },
    #[error("{path}: log is truncated (no final record)")]
    Truncated { path: String },
}

/// Parsed run log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<Record>,
}

impl RunLog {
    pub fn read(path: &Path) -> Result<Self, LogError> {
        let p = path.display().to_string();
        let f = File::open(path).map_err(|source| LogError::Io {
            path: p.clone(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|source| LogError::Io {
                path: p.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| LogError::Malformed {
                path: p.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        match records.first() {
            Some(Record::Header { schema_version, .. }) if *schema_version != SCHEMA_VERSION => {
                Err(LogError::Schema {
                    path: p,
                    found: *schema_version,
                })
            }
            Some(Record::Header { .. }) => Ok(RunLog { records }),
            _ => Err(LogError::NoHeader { path: p }),
        }
    }

    /// Reads a log that must have completed.
    pub fn read_complete(path: &Path) -> Result<Self, LogError> {
        let log = Self::read(path)?;
        if log.final_record().is_none() {
            return Err(LogError::Truncated {
                path: path.display().to_string(),
            });
        }
        Ok(log)
    }

    pub fn run_name(&self) -> &str {
        match &self.records[0] {
            Record::Header { run, .. } => run,
            _ => "",
        }
    }

    pub fn final_record(&self) -> Option<(&EvalResult, &EvalResult, Option<f64>)> {
        self.records.iter().rev().find_map(|r| match r {
            Record::Final { val, test, mt_vgc } => Some((val, test, *mt_vgc)),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &Record> {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Step { .. }))
    }

    pub fn validations(&self) -> impl Iterator<Item = &Record> {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Validation { .. }))
    }
}
