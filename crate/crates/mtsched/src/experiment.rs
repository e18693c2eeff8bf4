//! Single-task, multi-task and fine-tuning runs over the synthetic benchmark.

use std::fs;
use std::io;
use std::path::Path;

use mtsched_core::audit::Split;
use mtsched_core::bench::{
    aggregate_eval, BenchError, Benchmark, EvalResult, Family, Scene, SplitData, TaskKind,
    REGION_CLASSES, REGION_DIM, VOCAB_SIZE,
};
use mtsched_core::learner::{
    evaluate_task, masked_modelling_loss, mt_vgc_probe, train_step, Example, LearnError,
    PretrainExample,
};
use mtsched_core::model::{
    build_mask_plan, sgd_step, HeadKind, HeadSpec, ModelConfig, ModelParams, TaskBinding,
};
use mtsched_core::rng::{derive_seed, label_of, rng_from};
use mtsched_core::sched::{
    build_hyper_plan, run_schedule, CurriculumMode, RunError, SchedError, ScheduleOutcome,
    ScheduledTask, SchedulerConfig, StepContext, TaskCallbacks, TaskHyper,
};
use rand::seq::SliceRandom;

use crate::checkpoint::{self, CheckpointError, CHECKPOINT_FILE};
use crate::config::{ConfigError, ExperimentConfig, ResolvedTask, PRETRAIN_TASK};
use crate::manifest::{Manifest, MANIFEST_FILE};
use crate::runlog::{Record, RunLogWriter, LOG_FILE, SCHEMA_VERSION};

pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("scheduler: {0}")]
    Schedule(#[from] SchedError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the config: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("aborted at iteration {iteration} on task `{task}`: {reason}")]
    Aborted {
        iteration: u64,
        task: String,
        reason: String,
    },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::UnknownTask(_)
            | ExperimentError::Schedule(_)
            | ExperimentError::CheckpointMismatch(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunMode {
    SingleTask(String),
    MultiTask,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: String,
    pub val: EvalResult,
    pub test: EvalResult,
    pub mt_vgc: Option<f64>,
    pub params: ModelParams,
    /// Steps taken per scheduled task.
    pub step_counts: Vec<u64>,
}

/// Heads and bindings for every registered task (plus the pretraining head
/// when enabled).
pub fn model_layout(
    cfg: &ExperimentConfig,
    tasks: &[ResolvedTask],
) -> (Vec<HeadSpec>, Vec<TaskBinding>) {
    let mut heads: Vec<HeadSpec> = Vec::new();
    let mut bindings = Vec::new();
    for t in tasks {
        if !heads.iter().any(|h| h.name == t.head) {
            heads.push(HeadSpec {
                name: t.head.clone(),
                kind: t.kind.head_kind(),
            });
        }
        bindings.push(TaskBinding {
            task: t.name.clone(),
            head: t.head.clone(),
        });
    }
    if cfg.pretrain.enabled {
        heads.push(HeadSpec {
            name: PRETRAIN_TASK.into(),
            kind: HeadKind::Pretrain {
                region_classes: REGION_CLASSES,
            },
        });
        bindings.push(TaskBinding {
            task: PRETRAIN_TASK.into(),
            head: PRETRAIN_TASK.into(),
        });
    }
    (heads, bindings)
}

pub fn model_config(cfg: &ExperimentConfig) -> Result<ModelConfig, ConfigError> {
    let b = &cfg.benchmark;
    Ok(ModelConfig {
        vocab_size: VOCAB_SIZE,
        region_dim: REGION_DIM,
        dim: cfg.model.dim,
        hidden: cfg.model.hidden,
        max_words: (3 * b.max_objects).max(12),
        max_regions: b.max_objects,
        task_tokens: cfg.token_mode()?,
        init_scale: cfg.model.init_scale,
    })
}

pub fn init_model(cfg: &ExperimentConfig) -> Result<ModelParams, ExperimentError> {
    let tasks = cfg.resolved_tasks()?;
    let (heads, bindings) = model_layout(cfg, &tasks);
    ModelParams::init(
        model_config(cfg)?,
        &heads,
        &bindings,
        derive_seed(cfg.seed, label_of("init")),
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()).into())
}

/// Raw benchmark splits for every registered task.
pub struct TaskSplits {
    pub task: ResolvedTask,
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
}

pub fn generate_splits(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
) -> Result<Vec<TaskSplits>, ExperimentError> {
    cfg.resolved_tasks()?
        .into_iter()
        .map(|t| {
            let train = bench.split(&t.name, t.kind, Split::Train, t.train_count, t.label_noise)?;
            let val = bench.split(&t.name, t.kind, Split::Val, cfg.benchmark.val_count, 0.0)?;
            let test = bench.split(&t.name, t.kind, Split::Test, cfg.benchmark.test_count, 0.0)?;
            Ok(TaskSplits {
                task: t,
                train,
                val,
                test,
            })
        })
        .collect()
}

struct TaskData {
    task: ResolvedTask,
    train: Vec<Example>,
    val: Vec<Example>,
    test: Vec<Example>,
    test_scenes: Vec<Scene>,
}

fn examples(
    params: &ModelParams,
    bench: &Benchmark,
    name: &str,
    s: &SplitData,
) -> Result<Vec<Example>, LearnError> {
    s.instances
        .iter()
        .map(|i| Example::new(params, name, &bench.world, i))
        .collect()
}

fn prepare(
    params: &ModelParams,
    bench: &Benchmark,
    splits: &[TaskSplits],
) -> Result<Vec<TaskData>, LearnError> {
    splits
        .iter()
        .map(|s| {
            Ok(TaskData {
                task: s.task.clone(),
                train: examples(params, bench, &s.task.name, &s.train)?,
                val: examples(params, bench, &s.task.name, &s.val)?,
                test: examples(params, bench, &s.task.name, &s.test)?,
                test_scenes: s
                    .test
                    .instances
                    .iter()
                    .map(|i| i.scenes[0].clone())
                    .collect(),
            })
        })
        .collect()
}

/// Epoch-wise shuffled mini-batches.
struct Sampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl Sampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Sampler {
            n,
            batch: batch.min(n).max(1),
            seed,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        self.order
            .shuffle(&mut rng_from(derive_seed(self.seed, self.epoch)));
        self.epoch += 1;
        self.pos = 0;
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.n {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

#[derive(Debug)]
enum Failure {
    Learn(LearnError),
    Io(io::Error),
}

struct Trainer<'a> {
    params: &'a mut ModelParams,
    data: Vec<&'a TaskData>,
    samplers: Vec<Sampler>,
    head_lr_mult: f64,
}

impl TaskCallbacks for Trainer<'_> {
    type Error = Failure;

    fn train_step(&mut self, task: usize, ctx: &StepContext) -> Result<f64, Failure> {
        let d = self.data[task];
        let idx = self.samplers[task].next();
        let batch: Vec<&Example> = idx.iter().map(|&i| &d.train[i]).collect();
        train_step(
            self.params,
            &d.task.name,
            &batch,
            ctx.lr,
            ctx.loss_scale,
            self.head_lr_mult,
        )
        .map_err(Failure::Learn)
    }

    fn validate(&mut self, task: usize, _iteration: u64) -> Result<f64, Failure> {
        let d = self.data[task];
        let m = evaluate_task(self.params, &d.task.name, &d.val).map_err(Failure::Learn)?;
        Ok(100.0 * m.value)
    }
}

fn iters_per_epoch(t: &ResolvedTask) -> u64 {
    t.train_count.div_ceil(t.batch_size) as u64
}

fn evaluate(
    params: &ModelParams,
    data: &[&TaskData],
) -> Result<(EvalResult, EvalResult), ExperimentError> {
    let reg: Vec<(String, _)> = data
        .iter()
        .map(|d| (d.task.name.clone(), d.task.group))
        .collect();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for d in data {
        val.push(evaluate_task(params, &d.task.name, &d.val)?);
        test.push(evaluate_task(params, &d.task.name, &d.test)?);
    }
    Ok((aggregate_eval(&reg, &val)?, aggregate_eval(&reg, &test)?))
}

/// Question/referring consistency when a vocab-answer attribute task and a
/// referring task are both present.
fn probe(
    params: &ModelParams,
    bench: &Benchmark,
    data: &[&TaskData],
) -> Result<Option<f64>, ExperimentError> {
    let q = data.iter().find(|d| d.task.kind == TaskKind::Vqa);
    let r = data
        .iter()
        .find(|d| d.task.kind.family() == Family::Referring);
    match (q, r) {
        (Some(q), Some(r)) => Ok(Some(mt_vgc_probe(
            params,
            &bench.world,
            &q.task.name,
            &r.task.name,
            &q.test_scenes,
        )?)),
        _ => Ok(None),
    }
}

fn pretrain(
    cfg: &ExperimentConfig,
    params: &mut ModelParams,
    bench: &Benchmark,
    log: &mut RunLogWriter<fs::File>,
) -> Result<(), ExperimentError> {
    let p = &cfg.pretrain;
    let pairs = bench.pretrain_pairs(p.pairs);
    let examples = pairs
        .iter()
        .map(|x| PretrainExample::new(params, PRETRAIN_TASK, &bench.world, x))
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = if p.co_mask {
        cfg.model.iou_threshold
    } else {
        f64::INFINITY
    };
    let mask_seed = derive_seed(cfg.seed, label_of("mask"));
    let mut sampler = Sampler::new(
        examples.len(),
        p.batch_size,
        derive_seed(cfg.seed, label_of("pretrain-batches")),
    );
    for it in 1..=p.iters {
        let batch: Vec<PretrainExample> = sampler
            .next()
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let plans: Vec<_> = batch
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let seed = derive_seed(mask_seed, it * p.batch_size as u64 + k as u64);
                build_mask_plan(
                    &e.seq.boxes(),
                    e.seq.words.len(),
                    seed,
                    cfg.model.mask_rate,
                    threshold,
                )
            })
            .collect();
        let mut grads = params.grads();
        let loss = masked_modelling_loss(
            params,
            PRETRAIN_TASK,
            &batch,
            &plans,
            p.gate_on_negatives,
            1.0,
            Some(&mut grads),
        )
        .map_err(|e| ExperimentError::Aborted {
            iteration: it,
            task: PRETRAIN_TASK.into(),
            reason: e.to_string(),
        })?;
        sgd_step(&mut params.store, &grads, p.lr, None);
        log.write(&Record::Pretrain {
            iteration: it,
            masked_loss: loss.masked,
            alignment_loss: loss.alignment,
        })?;
    }
    Ok(())
}

/// Runs the stop-and-go schedule for `data` and logs every event.
fn schedule(
    sched: &SchedulerConfig,
    hyper: &[TaskHyper],
    params: &mut ModelParams,
    data: Vec<&TaskData>,
    seed: u64,
    head_lr_mult: f64,
    log: &mut RunLogWriter<fs::File>,
) -> Result<ScheduleOutcome, ExperimentError> {
    let tasks: Vec<ScheduledTask> = data
        .iter()
        .map(|d| ScheduledTask {
            name: d.task.name.clone(),
            group: d.task.group,
            iters_per_epoch: iters_per_epoch(&d.task),
        })
        .collect();
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    let plan = build_hyper_plan(hyper, sched.eta, sched.max_iter)?;
    let samplers = data
        .iter()
        .map(|d| {
            Sampler::new(
                d.train.len(),
                d.task.batch_size,
                derive_seed(seed, label_of(&d.task.name)),
            )
        })
        .collect();
    let mut trainer = Trainer {
        params,
        data,
        samplers,
        head_lr_mult,
    };
    let result = run_schedule(&tasks, sched, &plan, &mut trainer, &mut |ev| {
        log.write(&Record::from_event(ev, &names))
            .map_err(Failure::Io)
    });
    match result {
        Ok(out) => Ok(out),
        Err(RunError::Config(e)) => Err(e.into()),
        Err(RunError::Aborted {
            iteration,
            task,
            source,
        }) => {
            let reason = match source {
                Failure::Learn(e) => e.to_string(),
                Failure::Io(e) => return Err(e.into()),
            };
            log.write(&Record::Abort {
                iteration,
                task: names[task].clone(),
                error: reason.clone(),
            })?;
            Err(ExperimentError::Aborted {
                iteration,
                task: names[task].clone(),
                reason,
            })
        }
    }
}

fn single_task_scheduler(
    cfg: &ExperimentConfig,
    iters: u64,
) -> Result<SchedulerConfig, ExperimentError> {
    Ok(SchedulerConfig {
        max_iter: iters,
        curriculum: CurriculumMode::None,
        warm_group: None,
        warm_iters: 0,
        dsg_enabled: false,
        ..cfg.scheduler_config()?
    })
}

fn hyper_of(t: &ResolvedTask, single_task_iters: u64) -> TaskHyper {
    TaskHyper {
        name: t.name.clone(),
        target_lr: t.target_lr,
        batch_size: t.batch_size,
        single_task_iters,
    }
}

fn write_outputs(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    splits: &[TaskSplits],
) -> Result<(), ExperimentError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())?;
    let all: Vec<&SplitData> = splits
        .iter()
        .flat_map(|s| [&s.train, &s.val, &s.test])
        .collect();
    let manifest = Manifest::from_splits(cfg.seed, &all);
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?,
    )?;
    Ok(())
}

fn finish(
    out_dir: &Path,
    run: String,
    params: ModelParams,
    bench: &Benchmark,
    data: &[&TaskData],
    step_counts: Vec<u64>,
    log: &mut RunLogWriter<fs::File>,
) -> Result<RunOutput, ExperimentError> {
    let (val, test) = evaluate(&params, data)?;
    let mt_vgc = probe(&params, bench, data)?;
    log.write(&Record::Final {
        val: val.clone(),
        test: test.clone(),
        mt_vgc,
    })?;
    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &params)?;
    let summary = serde_json::json!({ "run": run, "val": val, "test": test, "mt_vgc": mt_vgc });
    fs::write(
        out_dir.join(EVAL_FILE),
        serde_json::to_string_pretty(&summary).map_err(io::Error::other)?,
    )?;
    Ok(RunOutput {
        run,
        val,
        test,
        mt_vgc,
        params,
        step_counts,
    })
}

fn header(run: &str, seed: u64, tasks: &[&TaskData]) -> Record {
    Record::Header {
        schema_version: SCHEMA_VERSION,
        run: run.into(),
        seed,
        tasks: tasks.iter().map(|d| d.task.name.clone()).collect(),
    }
}

/// Trains from a fresh initialisation and writes `run.jsonl`,
/// `checkpoint.bin`, `eval.json`, `config.toml` and `manifest.json` into
/// `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    mode: &RunMode,
    out_dir: &Path,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let tasks = cfg.resolved_tasks()?;
    if let RunMode::SingleTask(name) = mode {
        if !tasks.iter().any(|t| &t.name == name) {
            return Err(ExperimentError::UnknownTask(name.clone()));
        }
    }
    let bench = Benchmark::new(cfg.benchmark_config());
    let splits = generate_splits(cfg, &bench)?;
    write_outputs(out_dir, cfg, &splits)?;
    let mut params = init_model(cfg)?;
    let all = prepare(&params, &bench, &splits)?;
    let (run, data, sched, hyper): (String, Vec<&TaskData>, SchedulerConfig, Vec<TaskHyper>) =
        match mode {
            RunMode::MultiTask => (
                "multi_task".into(),
                all.iter().collect(),
                cfg.scheduler_config()?,
                all.iter()
                    .map(|d| hyper_of(&d.task, d.task.single_task_iters))
                    .collect(),
            ),
            RunMode::SingleTask(name) => {
                let d = all
                    .iter()
                    .find(|d| &d.task.name == name)
                    .expect("checked above");
                (
                    format!("single_task:{name}"),
                    vec![d],
                    single_task_scheduler(cfg, d.task.single_task_iters)?,
                    vec![hyper_of(&d.task, d.task.single_task_iters)],
                )
            }
        };
    let mut log = RunLogWriter::create(&out_dir.join(LOG_FILE))?;
    log.write(&header(&run, cfg.seed, &data))?;
    if cfg.pretrain.enabled {
        pretrain(cfg, &mut params, &bench, &mut log)?;
    }
    let seed = derive_seed(cfg.seed, label_of("batches"));
    let out = schedule(
        &sched,
        &hyper,
        &mut params,
        data.clone(),
        seed,
        cfg.model.head_lr_mult,
        &mut log,
    )?;
    finish(
        out_dir,
        run,
        params,
        &bench,
        &data,
        out.step_counts,
        &mut log,
    )
}

/// Checks that `params` carries `task` bound to a head shaped for it.
fn check_checkpoint_task(params: &ModelParams, task: &ResolvedTask) -> Result<(), ExperimentError> {
    let head = params.head_for_task(&task.name).map_err(|_| {
        ExperimentError::CheckpointMismatch(format!("no head for task `{}`", task.name))
    })?;
    let want = task.kind.head_kind();
    let mut tmp = ModelParams::zeros(
        params.config.clone(),
        &[HeadSpec {
            name: head.name.clone(),
            kind: want,
        }],
        &[],
    )
    .map_err(|e| ExperimentError::CheckpointMismatch(e.to_string()))?;
    tmp.heads.truncate(1);
    let expected: Vec<&Vec<usize>> = tmp.heads[0]
        .tensors
        .iter()
        .map(|&id| &tmp.store.get(id).shape)
        .collect();
    let got: Vec<&Vec<usize>> = head
        .tensors
        .iter()
        .map(|&id| &params.store.get(id).shape)
        .collect();
    if head.kind != want || expected != got {
        return Err(ExperimentError::CheckpointMismatch(format!(
            "head `{}` of task `{}` has the wrong shape",
            head.name, task.name
        )));
    }
    Ok(())
}

/// Single-task training of `task` starting from a multi-task checkpoint.
pub fn finetune_from(
    checkpoint_path: &Path,
    cfg: &ExperimentConfig,
    task: &str,
    out_dir: &Path,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let tasks = cfg.resolved_tasks()?;
    let t = tasks
        .iter()
        .find(|t| t.name == task)
        .ok_or_else(|| ExperimentError::UnknownTask(task.into()))?;
    let mut params = checkpoint::load(checkpoint_path)?;
    check_checkpoint_task(&params, t)?;
    let bench = Benchmark::new(cfg.benchmark_config());
    let splits: Vec<TaskSplits> = generate_splits(cfg, &bench)?
        .into_iter()
        .filter(|s| s.task.name == task)
        .collect();
    write_outputs(out_dir, cfg, &splits)?;
    let all = prepare(&params, &bench, &splits)?;
    let data: Vec<&TaskData> = all.iter().collect();
    let run = format!("finetune:{task}");
    let mut log = RunLogWriter::create(&out_dir.join(LOG_FILE))?;
    log.write(&header(&run, cfg.seed, &data))?;
    let iters = cfg.finetune.iters;
    let steps = if iters == 0 {
        vec![0]
    } else {
        let sched = single_task_scheduler(cfg, iters)?;
        let seed = derive_seed(cfg.seed, label_of("finetune-batches"));
        let hyper = TaskHyper {
            target_lr: t.target_lr * cfg.finetune.lr_scale,
            ..hyper_of(t, iters)
        };
        schedule(
            &sched,
            &[hyper],
            &mut params,
            data.clone(),
            seed,
            cfg.model.head_lr_mult,
            &mut log,
        )?
        .step_counts
    };
    finish(out_dir, run, params, &bench, &data, steps, &mut log)
}
