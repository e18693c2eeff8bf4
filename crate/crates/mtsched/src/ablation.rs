//! Ablation suites: one multi-task run per variant of a shared base config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mtsched_core::bench::EvalResult;
use mtsched_core::sched::TaskGroup;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::experiment::{run_experiment, ExperimentError, RunMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    TokenGranularity,
    DsgDelta,
    Curriculum,
    DsgOnOff,
    GroupRemoval,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::TokenGranularity,
        Suite::DsgDelta,
        Suite::Curriculum,
        Suite::DsgOnOff,
        Suite::GroupRemoval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::TokenGranularity => "token_granularity",
            Suite::DsgDelta => "dsg_delta",
            Suite::Curriculum => "curriculum",
            Suite::DsgOnOff => "dsg_onoff",
            Suite::GroupRemoval => "group_removal",
        }
    }

    /// Flattened config keys (or key prefixes) a variant may change.
    pub fn swept_keys(self) -> &'static [&'static str] {
        match self {
            Suite::TokenGranularity => &["model.task_tokens"],
            Suite::DsgDelta => &["scheduler.delta"],
            Suite::Curriculum => &[
                "scheduler.curriculum",
                "scheduler.warm_group",
                "scheduler.warm_iters",
            ],
            Suite::DsgOnOff => &["scheduler.dsg"],
            Suite::GroupRemoval => &["tasks"],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = AblationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| AblationError::UnknownSuite(s.into()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("variant name `{0}` used twice")]
    VariantCollision(String),
    #[error("variant `{variant}` changes `{key}`, outside the keys swept by {suite}")]
    NotIsolated {
        suite: Suite,
        variant: String,
        key: String,
    },
    #[error("suite {suite}: {msg}")]
    Unsupported { suite: Suite, msg: String },
    #[error("variant `{variant}`: {source}")]
    Run {
        variant: String,
        source: ExperimentError,
    },
}

impl AblationError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AblationError::Run { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

fn unsupported<T>(suite: Suite, msg: impl Into<String>) -> Result<T, AblationError> {
    Err(AblationError::Unsupported {
        suite,
        msg: msg.into(),
    })
}

fn variant(
    name: &str,
    base: &ExperimentConfig,
    edit: impl FnOnce(&mut ExperimentConfig),
) -> Variant {
    let mut config = base.clone();
    edit(&mut config);
    Variant {
        name: name.into(),
        config,
    }
}

/// Variants of `suite` built from `base`.
pub fn suite_variants(
    suite: Suite,
    base: &ExperimentConfig,
) -> Result<Vec<Variant>, AblationError> {
    let groups: Vec<TaskGroup> = match base.resolved_tasks() {
        Ok(t) => t.iter().map(|t| t.group).collect(),
        Err(e) => return unsupported(suite, e.to_string()),
    };
    let out = match suite {
        Suite::TokenGranularity => ["per_dataset", "per_head", "none"]
            .into_iter()
            .map(|m| variant(m, base, |c| c.model.task_tokens = m.into()))
            .collect(),
        Suite::DsgDelta => [1u64, 4, 8, 16]
            .into_iter()
            .map(|d| variant(&format!("delta_{d}"), base, |c| c.scheduler.delta = d))
            .collect(),
        Suite::Curriculum => {
            let warm_iters = match base.scheduler.warm_iters {
                0 => (base.scheduler.max_iter / 5).max(1),
                w => w,
            };
            let mut v = vec![variant("none", base, |c| {
                c.scheduler.curriculum = "none".into();
                c.scheduler.warm_group = None;
                c.scheduler.warm_iters = 0;
            })];
            for (name, group) in [
                ("curriculum", TaskGroup::G4),
                ("anti_curriculum", TaskGroup::G1),
            ] {
                if !groups.contains(&group) {
                    return unsupported(suite, format!("{name} warms {group}, which has no tasks"));
                }
                v.push(variant(name, base, |c| {
                    c.scheduler.curriculum = name.into();
                    c.scheduler.warm_group = Some(group.as_str().into());
                    c.scheduler.warm_iters = warm_iters;
                }));
            }
            v
        }
        Suite::DsgOnOff => {
            vec![
                variant("dsg_on", base, |c| c.scheduler.dsg = true),
                variant("dsg_off", base, |c| c.scheduler.dsg = false),
            ]
        }
        Suite::GroupRemoval => {
            let mut v = vec![variant("all", base, |_| {})];
            for g in TaskGroup::ALL {
                if !groups.contains(&g) || groups.iter().all(|&x| x == g) {
                    continue;
                }
                v.push(variant(&format!("without_{g}"), base, |c| {
                    c.tasks = c
                        .tasks
                        .iter()
                        .zip(&groups)
                        .filter(|(_, &tg)| tg != g)
                        .map(|(t, _)| t.clone())
                        .collect();
                }));
            }
            if v.len() < 2 {
                return unsupported(suite, "needs tasks from at least two groups");
            }
            v
        }
    };
    Ok(out)
}

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, x, out);
            }
        }
        Value::Array(a) => {
            out.insert(format!("{prefix}.len"), a.len().to_string());
            for (i, x) in a.iter().enumerate() {
                flatten_into(&format!("{prefix}.{i}"), x, out);
            }
        }
        other => {
            out.insert(prefix.into(), other.to_string());
        }
    }
}

/// Dotted key -> JSON scalar text.
pub fn flatten_config(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let v = serde_json::to_value(cfg).expect("config serialises");
    flatten_into("", &v, &mut out);
    out
}

/// Keys whose values differ between `a` and `b` (missing counts as differing).
pub fn config_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Vec<String> {
    let (fa, fb) = (flatten_config(a), flatten_config(b));
    let mut keys: Vec<String> = fa.keys().chain(fb.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| fa.get(k) != fb.get(k))
        .collect()
}

fn is_swept(suite: Suite, key: &str) -> bool {
    suite.swept_keys().iter().any(|s| {
        key == *s
            || key
                .strip_prefix(s)
                .is_some_and(|rest| rest.starts_with('.'))
    })
}

/// Every pair of variants differs only at the suite's swept keys, and
/// variant names are unique.
pub fn check_isolation(suite: Suite, variants: &[Variant]) -> Result<(), AblationError> {
    for (i, v) in variants.iter().enumerate() {
        if variants[..i].iter().any(|o| o.name == v.name) {
            return Err(AblationError::VariantCollision(v.name.clone()));
        }
        for o in &variants[..i] {
            if let Some(key) = config_diff(&o.config, &v.config)
                .into_iter()
                .find(|k| !is_swept(suite, k))
            {
                return Err(AblationError::NotIsolated {
                    suite,
                    variant: v.name.clone(),
                    key,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: String,
    pub dir: PathBuf,
    pub test: EvalResult,
}

/// Runs every variant as a multi-task experiment under
/// `out_dir/<suite>/<variant>/`.
pub fn run_ablation(
    suite: Suite,
    base: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<VariantResult>, AblationError> {
    let variants = suite_variants(suite, base)?;
    check_isolation(suite, &variants)?;
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let dir = out_dir.join(suite.as_str()).join(&v.name);
        let run = run_experiment(&v.config, &RunMode::MultiTask, &dir).map_err(|source| {
            AblationError::Run {
                variant: v.name.clone(),
                source,
            }
        })?;
        out.push(VariantResult {
            variant: v.name,
            dir,
            test: run.test,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        let mut text = String::from("seed = 3\n");
        for t in ["vqa", "flickr", "visual7w", "nlvr"] {
            text.push_str(&format!(
                "[[tasks]]\nname = \"{t}\"\ntarget_lr = 0.1\nbatch_size = 4\nsingle_task_iters = 20\ntrain_count = 8\n"
            ));
        }
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn variant_lists() {
        let b = base();
        let names = |s| {
            suite_variants(s, &b)
                .unwrap()
                .into_iter()
                .map(|v| v.name)
                .collect::<Vec<_>>()
        };
        assert_eq!(
            names(Suite::DsgDelta),
            ["delta_1", "delta_4", "delta_8", "delta_16"]
        );
        assert_eq!(
            names(Suite::TokenGranularity),
            ["per_dataset", "per_head", "none"]
        );
        assert_eq!(
            names(Suite::Curriculum),
            ["none", "curriculum", "anti_curriculum"]
        );
        assert_eq!(names(Suite::DsgOnOff), ["dsg_on", "dsg_off"]);
        assert_eq!(
            names(Suite::GroupRemoval),
            [
                "all",
                "without_G1",
                "without_G2",
                "without_G3",
                "without_G4"
            ]
        );
    }

    #[test]
    fn group_removal_drops_only_that_group() {
        let v = suite_variants(Suite::GroupRemoval, &base()).unwrap();
        let g4 = v.iter().find(|v| v.name == "without_G4").unwrap();
        let names: Vec<_> = g4.config.tasks.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, ["vqa", "flickr", "visual7w"]);
    }

    #[test]
    fn every_suite_is_isolated() {
        let b = base();
        for s in Suite::ALL {
            let v = suite_variants(s, &b).unwrap();
            check_isolation(s, &v).unwrap();
        }
    }

    #[test]
    fn leaks_and_collisions_are_caught() {
        let b = base();
        let mut v = suite_variants(Suite::DsgDelta, &b).unwrap();
        v[2].config.model.dim = 7;
        assert!(matches!(
            check_isolation(Suite::DsgDelta, &v),
            Err(AblationError::NotIsolated { .. })
        ));
        let mut v = suite_variants(Suite::DsgDelta, &b).unwrap();
        v[1].name = "delta_1".into();
        assert!(matches!(
            check_isolation(Suite::DsgDelta, &v),
            Err(AblationError::VariantCollision(_))
        ));
    }

    #[test]
    fn diff_reports_swept_key() {
        let b = base();
        let v = suite_variants(Suite::DsgOnOff, &b).unwrap();
        assert_eq!(config_diff(&v[0].config, &v[1].config), ["scheduler.dsg"]);
    }

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
