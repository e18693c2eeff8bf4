use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use super::{SchedError, TaskGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CurriculumMode {
    None,
    /// Fast-converging group first.
    Curriculum,
    /// Slow-converging group first.
    AntiCurriculum,
}

impl CurriculumMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CurriculumMode::None => "none",
            CurriculumMode::Curriculum => "curriculum",
            CurriculumMode::AntiCurriculum => "anti_curriculum",
        }
    }
}

impl FromStr for CurriculumMode {
    type Err = SchedError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CurriculumMode::None),
            "curriculum" => Ok(CurriculumMode::Curriculum),
            "anti_curriculum" => Ok(CurriculumMode::AntiCurriculum),
            _ => Err(SchedError::InvalidConfig(format!(
                "unknown curriculum mode `{s}`"
            ))),
        }
    }
}

/// A contiguous block of iterations with a fixed active task set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase {
    pub name: String,
    /// First iteration of the phase (1-based).
    pub start_iter: u64,
    pub len: u64,
    /// Indices into the task list.
    pub active: Vec<usize>,
}

impl Phase {
    pub fn contains(&self, iteration: u64) -> bool {
        iteration >= self.start_iter && iteration < self.start_iter + self.len
    }
}

/// Splits `max_iter` iterations into phases. Without a curriculum there is a
/// single phase over all tasks; otherwise the warm group trains alone for
/// `warm_iters` iterations before all tasks join.
pub fn curriculum_phases(
    mode: CurriculumMode,
    groups: &[TaskGroup],
    warm_group: Option<TaskGroup>,
    warm_iters: u64,
    max_iter: u64,
) -> Result<Vec<Phase>, SchedError> {
    if groups.is_empty() {
        return Err(SchedError::NoTasks);
    }
    let all: Vec<usize> = (0..groups.len()).collect();
    if mode == CurriculumMode::None {
        return Ok(alloc::vec![Phase {
            name: "all".into(),
            start_iter: 1,
            len: max_iter,
            active: all
        }]);
    }
    let warm = warm_group
        .ok_or_else(|| SchedError::InvalidConfig("curriculum needs a warm_group".into()))?;
    let active: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == warm).collect();
    if active.is_empty() {
        return Err(SchedError::EmptyWarmGroup(warm));
    }
    if warm_iters == 0 || warm_iters >= max_iter {
        return Err(SchedError::InvalidConfig(format!(
            "warm_iters must be in 1..{max_iter}, got {warm_iters}"
        )));
    }
    Ok(alloc::vec![
        Phase {
            name: format!("warm:{warm}"),
            start_iter: 1,
            len: warm_iters,
            active
        },
        Phase {
            name: "all".into(),
            start_iter: warm_iters + 1,
            len: max_iter - warm_iters,
            active: all
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use TaskGroup::*;

    #[test]
    fn no_curriculum_single_phase() {
        let p = curriculum_phases(CurriculumMode::None, &[G1, G2], None, 0, 50).unwrap();
        assert_eq!(
            p,
            vec![Phase {
                name: "all".into(),
                start_iter: 1,
                len: 50,
                active: vec![0, 1]
            }]
        );
    }

    #[test]
    fn anti_curriculum_warms_g1() {
        let groups = [G1, G2, G3, G1, G4];
        let p = curriculum_phases(CurriculumMode::AntiCurriculum, &groups, Some(G1), 100, 1000)
            .unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].active, vec![0, 3]);
        assert_eq!((p[0].start_iter, p[0].len), (1, 100));
        assert_eq!((p[1].start_iter, p[1].len), (101, 900));
        assert_eq!(p[1].active, vec![0, 1, 2, 3, 4]);
        assert!(p[0].contains(100) && !p[0].contains(101));
    }

    #[test]
    fn empty_warm_group_errors() {
        let r = curriculum_phases(CurriculumMode::Curriculum, &[G1, G2], Some(G4), 10, 100);
        assert_eq!(r, Err(SchedError::EmptyWarmGroup(G4)));
        assert!(curriculum_phases(CurriculumMode::Curriculum, &[G1], None, 10, 100).is_err());
        assert!(curriculum_phases(CurriculumMode::Curriculum, &[G1], Some(G1), 100, 100).is_err());
    }

    #[test]
    fn parse_mode() {
        assert_eq!(
            "anti_curriculum".parse::<CurriculumMode>().unwrap(),
            CurriculumMode::AntiCurriculum
        );
        assert!("sideways".parse::<CurriculumMode>().is_err());
    }
}
