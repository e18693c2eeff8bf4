use alloc::string::String;
use alloc::vec::Vec;

use crate::sched::TaskGroup;

use super::BenchError;

/// Mean over instances of `min(#annotators agreeing with the prediction / 3, 1)`.
pub fn metric_vqa_soft_accuracy(
    predictions: &[usize],
    annotators: &[Vec<usize>],
    n_answers: usize,
) -> Result<f64, BenchError> {
    if predictions.is_empty() {
        return Err(BenchError::Empty);
    }
    if predictions.len() != annotators.len() {
        return Err(BenchError::LengthMismatch {
            expected: predictions.len(),
            got: annotators.len(),
        });
    }
    let mut total = 0.0;
    for (p, anns) in predictions.iter().zip(annotators) {
        if let Some(&bad) = core::iter::once(p).chain(anns).find(|&&a| a >= n_answers) {
            return Err(BenchError::UnknownAnswer(bad));
        }
        let agree = anns.iter().filter(|&&a| a == *p).count() as f64;
        total += libm::fmin(agree / 3.0, 1.0);
    }
    Ok(total / predictions.len() as f64)
}

/// Zero-based rank of `positive` in `row`, counting strictly higher scores
/// and equal scores at lower indices.
pub fn rank_of(row: &[f64], positive: usize) -> usize {
    let p = row[positive];
    row.iter()
        .enumerate()
        .filter(|&(j, &s)| s > p || (s == p && j < positive))
        .count()
}

/// Fraction of rows whose positive ranks within the top `k`.
pub fn metric_recall_at_k(
    scores: &[Vec<f64>],
    positives: &[usize],
    k: usize,
) -> Result<f64, BenchError> {
    if scores.is_empty() {
        return Err(BenchError::Empty);
    }
    if scores.len() != positives.len() {
        return Err(BenchError::LengthMismatch {
            expected: scores.len(),
            got: positives.len(),
        });
    }
    let mut hits = 0usize;
    for (row, &p) in scores.iter().zip(positives) {
        if k < 1 || k > row.len() {
            return Err(BenchError::BadK {
                k,
                candidates: row.len(),
            });
        }
        if p >= row.len() {
            return Err(BenchError::UnknownAnswer(p));
        }
        if rank_of(row, p) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// One question/referring-expression pair about the same image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrPair {
    /// Shared attribute-word count.
    pub d: u32,
    pub q_correct: bool,
    pub r_correct: bool,
}

/// `sum d * [q and r correct] / sum d`.
pub fn metric_mt_vgc(pairs: &[QrPair]) -> Result<f64, BenchError> {
    let den: u64 = pairs.iter().map(|p| u64::from(p.d)).sum();
    if den == 0 {
        return Err(BenchError::ZeroWeights);
    }
    let num: u64 = pairs
        .iter()
        .filter(|p| p.q_correct && p.r_correct)
        .map(|p| u64::from(p.d))
        .sum();
    Ok(num as f64 / den as f64)
}

/// Plain accuracy of index predictions.
pub fn accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64, BenchError> {
    if predictions.is_empty() {
        return Err(BenchError::Empty);
    }
    if predictions.len() != targets.len() {
        return Err(BenchError::LengthMismatch {
            expected: predictions.len(),
            got: targets.len(),
        });
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count() as f64
        / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskMetric {
    pub task: String,
    pub group: TaskGroup,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroupMean {
    pub group: TaskGroup,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    /// Headline metric per task, in registration order.
    pub tasks: Vec<TaskMetric>,
    /// Means for groups that have at least one task.
    pub groups: Vec<GroupMean>,
    /// Arithmetic mean of all headline metrics.
    pub average: f64,
}

impl EvalResult {
    pub fn task(&self, name: &str) -> Option<f64> {
        self.tasks.iter().find(|t| t.task == name).map(|t| t.value)
    }

    pub fn group(&self, g: TaskGroup) -> Option<f64> {
        self.groups.iter().find(|m| m.group == g).map(|m| m.mean)
    }
}

/// Group means and all-task mean over the headline metrics of `registered`
/// tasks (`(name, group)` in order).
pub fn aggregate_eval(
    registered: &[(String, TaskGroup)],
    metrics: &[TaskMetric],
) -> Result<EvalResult, BenchError> {
    if registered.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut tasks = Vec::with_capacity(registered.len());
    for (name, group) in registered {
        let mut found = metrics.iter().filter(|m| &m.task == name);
        let m = found
            .next()
            .ok_or_else(|| BenchError::MissingMetric(name.clone()))?;
        if found.next().is_some() {
            return Err(BenchError::DuplicateMetric(name.clone()));
        }
        tasks.push(TaskMetric {
            group: *group,
            ..m.clone()
        });
    }
    let mut groups = Vec::new();
    for g in TaskGroup::ALL {
        let vals: Vec<f64> = tasks
            .iter()
            .filter(|t| t.group == g)
            .map(|t| t.value)
            .collect();
        if !vals.is_empty() {
            groups.push(GroupMean {
                group: g,
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
            });
        }
    }
    let average = tasks.iter().map(|t| t.value).sum::<f64>() / tasks.len() as f64;
    Ok(EvalResult {
        tasks,
        groups,
        average,
    })
}
