//! Synthetic task families and the curriculum schedule.
//!
//! A task hides a gold answer `y` in two noisy feature channels:
//!
//! ```text
//! sym = signal_sym * onehot(y) + noise_std * difficulty * N(0, I)
//! vis = signal_vis * onehot(y) + noise_std * difficulty * N(0, I)
//! ```
//!
//! The text mode's answer head reads only `sym` and the grounded mode's only
//! `vis`, so a family's two signal strengths decide which mode can answer it.
//! Contexts may also carry a one-hot task-type cue naming the family, which
//! only the mode head reads.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::ModeId;
use crate::policy::{answer_label, ContextFeatures, Demonstration, Dims};

pub const SYM_EASY: &str = "SYM-EASY";
pub const VIS_EASY: &str = "VIS-EASY";
pub const SYM_HARD: &str = "SYM-HARD";
pub const VIS_HARD: &str = "VIS-HARD";
pub const MIXED: &str = "MIXED";

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Invalid(String),
    #[error("unknown family {0:?}")]
    UnknownFamily(String),
    #[error("schedule exhausted: iteration {iteration} is past the total budget of {budget}")]
    ScheduleExhausted { iteration: usize, budget: usize },
    #[error("config parse error: {0}")]
    Parse(String),
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub name: String,
    pub signal_sym: f64,
    pub signal_vis: f64,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

impl FamilySpec {
    pub fn new(name: &str, signal_sym: f64, signal_vis: f64) -> Self {
        Self {
            name: name.to_string(),
            signal_sym,
            signal_vis,
            noise_std: 1.0,
        }
    }

    pub fn signal(&self, mode: ModeId) -> f64 {
        match mode {
            ModeId::Txt => self.signal_sym,
            ModeId::Grd => self.signal_vis,
        }
    }

    /// The mode whose channel carries the stronger signal, if they differ.
    pub fn preferred_mode(&self) -> Option<ModeId> {
        match self.signal_sym.partial_cmp(&self.signal_vis) {
            Some(std::cmp::Ordering::Greater) => Some(ModeId::Txt),
            Some(std::cmp::Ordering::Less) => Some(ModeId::Grd),
            _ => None,
        }
    }
}

/// Families plus the shared answer alphabet. Both channels have width `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub alphabet: usize,
    /// Append a one-hot family cue to every context.
    pub task_cue: bool,
    #[serde(rename = "family")]
    pub families: Vec<FamilySpec>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            alphabet: 4,
            task_cue: true,
            families: vec![
                FamilySpec::new(SYM_EASY, 2.0, 0.0),
                FamilySpec::new(VIS_EASY, 0.0, 2.0),
                FamilySpec::new(SYM_HARD, 1.0, 0.3),
                FamilySpec::new(VIS_HARD, 0.3, 1.0),
                FamilySpec::new(MIXED, 0.8, 0.8),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    /// Noise multiplier for every family in this phase.
    pub difficulty: f64,
    /// Number of iterations spent in this phase.
    pub budget: usize,
    /// Family name to sampling weight; weights sum to 1.
    pub mixture: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    #[serde(rename = "phase")]
    pub phases: Vec<Phase>,
}

impl Default for CurriculumSchedule {
    /// Binary easy mixture at difficulty 1.0 for 800 iterations, then all five
    /// families at difficulty 1.5 for 1200.
    fn default() -> Self {
        let uniform = |names: &[&str]| {
            names
                .iter()
                .map(|n| (n.to_string(), 1.0 / names.len() as f64))
                .collect()
        };
        Self {
            phases: vec![
                Phase {
                    name: "binary".into(),
                    difficulty: 1.0,
                    budget: 800,
                    mixture: uniform(&[SYM_EASY, VIS_EASY]),
                },
                Phase {
                    name: "diverse".into(),
                    difficulty: 1.5,
                    budget: 1200,
                    mixture: uniform(&[SYM_EASY, VIS_EASY, SYM_HARD, VIS_HARD, MIXED]),
                },
            ],
        }
    }
}

impl CurriculumSchedule {
    pub fn total_budget(&self) -> usize {
        self.phases.iter().map(|p| p.budget).sum()
    }

    /// The final phase alone, stretched over `iterations`.
    pub fn final_phase_only(&self, iterations: usize) -> Self {
        let mut last = self.phases.last().expect("validated schedule").clone();
        last.budget = iterations;
        Self { phases: vec![last] }
    }

    pub fn final_phase(&self) -> &Phase {
        self.phases.last().expect("validated schedule")
    }

    /// Index of the phase active at `iteration`.
    pub fn phase_index(&self, iteration: usize) -> Result<usize, EnvError> {
        let mut end = 0;
        for (i, p) in self.phases.iter().enumerate() {
            end += p.budget;
            if iteration < end {
                return Ok(i);
            }
        }
        Err(EnvError::ScheduleExhausted {
            iteration,
            budget: end,
        })
    }
}

/// A generated problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub family: String,
    pub family_index: usize,
    pub ctx: ContextFeatures,
    /// Answer index in `0..A`; its label is `gold + 1`.
    pub gold: usize,
    pub difficulty: f64,
}

impl Task {
    pub fn gold_label(&self) -> String {
        answer_label(self.gold)
    }
}

/// 1 iff `answer` is the gold answer index.
pub fn grade(task: &Task, answer: usize) -> f64 {
    if answer == task.gold {
        1.0
    } else {
        0.0
    }
}

/// Validated environment: families, alphabet and cue layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    config: EnvironmentConfig,
}

fn invalid(msg: impl Into<String>) -> EnvError {
    EnvError::Invalid(msg.into())
}

impl Environment {
    pub fn new(config: EnvironmentConfig) -> Result<Self, EnvError> {
        if config.alphabet < 2 {
            return Err(invalid(format!("alphabet must be at least 2, got {}", config.alphabet)));
        }
        if config.families.is_empty() {
            return Err(invalid("no families defined"));
        }
        for (i, f) in config.families.iter().enumerate() {
            if f.name.trim().is_empty() {
                return Err(invalid(format!("family {i} has an empty name")));
            }
            if config.families[..i].iter().any(|g| g.name == f.name) {
                return Err(invalid(format!("duplicate family {:?}", f.name)));
            }
            for (what, v) in [("signal_sym", f.signal_sym), ("signal_vis", f.signal_vis)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(invalid(format!("{}: {what} must be finite and non-negative, got {v}", f.name)));
                }
            }
            if !(f.noise_std > 0.0 && f.noise_std.is_finite()) {
                return Err(invalid(format!("{}: noise_std must be positive, got {}", f.name, f.noise_std)));
            }
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn families(&self) -> &[FamilySpec] {
        &self.config.families
    }

    pub fn dims(&self) -> Dims {
        Dims {
            alphabet: self.config.alphabet,
            sym: self.config.alphabet,
            vis: self.config.alphabet,
            cue: if self.config.task_cue {
                self.config.families.len()
            } else {
                0
            },
        }
    }

    pub fn family_index(&self, name: &str) -> Result<usize, EnvError> {
        self.config
            .families
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| EnvError::UnknownFamily(name.to_string()))
    }

    pub fn family(&self, name: &str) -> Result<&FamilySpec, EnvError> {
        Ok(&self.config.families[self.family_index(name)?])
    }

    /// Checks that every phase references known families with weights
    /// summing to one.
    pub fn validate_schedule(&self, schedule: &CurriculumSchedule) -> Result<(), EnvError> {
        if schedule.phases.is_empty() {
            return Err(invalid("schedule has no phases"));
        }
        for p in &schedule.phases {
            if p.budget == 0 {
                return Err(invalid(format!("phase {:?}: budget must be positive", p.name)));
            }
            if !(p.difficulty > 0.0 && p.difficulty.is_finite()) {
                return Err(invalid(format!("phase {:?}: difficulty must be positive, got {}", p.name, p.difficulty)));
            }
            if p.mixture.is_empty() {
                return Err(invalid(format!("phase {:?}: empty mixture", p.name)));
            }
            let mut total = 0.0;
            for (name, &w) in &p.mixture {
                self.family_index(name)?;
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(invalid(format!("phase {:?}: weight of {name} must be non-negative, got {w}", p.name)));
                }
                total += w;
            }
            if (total - 1.0).abs() > WEIGHT_TOL {
                return Err(invalid(format!("phase {:?}: mixture weights sum to {total}, not 1", p.name)));
            }
        }
        Ok(())
    }

    fn channel(&self, signal: f64, noise: f64, gold: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.config.alphabet)
            .map(|k| {
                let z: f64 = rng.sample(StandardNormal);
                let s = if k == gold { signal } else { 0.0 };
                s + noise * z
            })
            .collect()
    }

    /// Draws a task of the given family with a uniform gold answer.
    pub fn generate(&self, family_index: usize, difficulty: f64, rng: &mut impl Rng) -> Task {
        let spec = &self.config.families[family_index];
        let gold = rng.gen_range(0..self.config.alphabet);
        let noise = spec.noise_std * difficulty;
        let sym = self.channel(spec.signal_sym, noise, gold, rng);
        let vis = self.channel(spec.signal_vis, noise, gold, rng);
        let cue = if self.config.task_cue {
            (0..self.config.families.len())
                .map(|k| if k == family_index { 1.0 } else { 0.0 })
                .collect()
        } else {
            Vec::new()
        };
        Task {
            family: spec.name.clone(),
            family_index,
            ctx: ContextFeatures { sym, vis, cue },
            gold,
            difficulty,
        }
    }

    /// Draws a family from `phase`'s mixture, then a task from it.
    pub fn sample_from_phase(&self, phase: &Phase, rng: &mut impl Rng) -> Result<Task, EnvError> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = None;
        for (name, &w) in &phase.mixture {
            if w <= 0.0 {
                continue;
            }
            chosen = Some(name);
            acc += w;
            if u < acc {
                break;
            }
        }
        let name = chosen.ok_or_else(|| invalid(format!("phase {:?}: no positive weight", phase.name)))?;
        Ok(self.generate(self.family_index(name)?, phase.difficulty, rng))
    }

    /// The task for `iteration`, drawn from the phase active at that point.
    pub fn sample_task(
        &self,
        schedule: &CurriculumSchedule,
        iteration: usize,
        rng: &mut impl Rng,
    ) -> Result<Task, EnvError> {
        let phase = &schedule.phases[schedule.phase_index(iteration)?];
        self.sample_from_phase(phase, rng)
    }

    /// Demonstrations for `mode` on tasks from one family, labelled with the
    /// Bayes answer given only that mode's channel (its argmax).
    pub fn oracle_demonstrations(
        &self,
        family_index: usize,
        mode: ModeId,
        count: usize,
        difficulty: f64,
        rng: &mut impl Rng,
    ) -> Vec<Demonstration> {
        (0..count)
            .map(|_| {
                let task = self.generate(family_index, difficulty, rng);
                let answer = bayes_answer(&task.ctx, mode);
                Demonstration {
                    ctx: task.ctx,
                    mode,
                    answer,
                }
            })
            .collect()
    }
}

/// Argmax of the channel `mode` reads. Optimal under the generative model
/// whenever that channel's signal is positive.
pub fn bayes_answer(ctx: &ContextFeatures, mode: ModeId) -> usize {
    let channel = match mode {
        ModeId::Txt => &ctx.sym,
        ModeId::Grd => &ctx.vis,
    };
    channel
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentFile {
    environment: EnvironmentConfig,
    curriculum: CurriculumSchedule,
}

/// Parses and validates an `[environment]` + `[curriculum]` document.
pub fn from_toml(text: &str) -> Result<(Environment, CurriculumSchedule), EnvError> {
    let file: EnvironmentFile = toml::from_str(text).map_err(|e| EnvError::Parse(e.to_string()))?;
    let env = Environment::new(file.environment)?;
    env.validate_schedule(&file.curriculum)?;
    Ok((env, file.curriculum))
}
