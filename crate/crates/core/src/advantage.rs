//! Advantage estimation.
//!
//! Three pieces:
//!
//! * rollout-level advantages, the group-standardized rewards
//!   `A_j = (r_j - mean) / std` over all `2n` rollouts of a task;
//! * the mode-relative advantage: modelling each mode's rewards as a Gaussian
//!   and assuming independence, the probability that a grounded rollout
//!   out-scores a text rollout is `a_v = Phi((mu_v - mu_t) / sqrt(var_v + var_t))`
//!   and `a_t = 1 - a_v`;
//! * the token-level assignment: a rollout's prefix token receives its mode's
//!   relative advantage, every other token receives the rollout's `A_j`.
//!
//! Variances are population variances throughout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::ModeId;
use crate::policy::RolloutSequence;

/// Below this population std, rollout advantages are all zero.
pub const ROLLOUT_STD_EPS: f64 = 1e-8;
/// Below this combined variance, the mode comparison uses its limit rule.
pub const MODE_VAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdvantageError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("non-finite value {value} in {what}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    Misaligned { expected: usize, got: usize },
    #[error("group must hold exactly {n} rollouts per mode, found {txt} TXT and {grd} GRD")]
    Composition { n: usize, txt: usize, grd: usize },
}

/// Standard normal CDF. Saturates to exactly 0 or 1 beyond |x| = 8.
pub fn phi(x: f64) -> Result<f64, AdvantageError> {
    if !x.is_finite() {
        return Err(AdvantageError::NonFinite {
            what: "phi argument",
            value: x,
        });
    }
    Ok(if x > 8.0 {
        1.0
    } else if x < -8.0 {
        0.0
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    })
}

/// Mean and population variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn check_finite(what: &'static str, xs: &[f64]) -> Result<(), AdvantageError> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(&value) => Err(AdvantageError::NonFinite { what, value }),
        None => Ok(()),
    }
}

/// Group-standardized rewards. All zeros when the group has no spread.
pub fn rollout_advantages(rewards: &[f64]) -> Result<Vec<f64>, AdvantageError> {
    if rewards.is_empty() {
        return Err(AdvantageError::Empty("reward list"));
    }
    check_finite("rewards", rewards)?;
    let (mean, var) = mean_var(rewards);
    let std = var.sqrt();
    if std < ROLLOUT_STD_EPS {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Probability-of-outperforming advantages of the two modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeAdvantage {
    pub a_t: f64,
    pub a_v: f64,
}

impl ModeAdvantage {
    pub fn for_mode(&self, mode: ModeId) -> f64 {
        match mode {
            ModeId::Txt => self.a_t,
            ModeId::Grd => self.a_v,
        }
    }

    /// Prefix advantage for `mode`, optionally shifted so the two modes
    /// straddle zero.
    pub fn prefix_value(&self, mode: ModeId, centered: bool) -> f64 {
        let a = self.for_mode(mode);
        if centered {
            a - 0.5
        } else {
            a
        }
    }
}

pub fn mode_relative_advantage(
    rewards_t: &[f64],
    rewards_v: &[f64],
) -> Result<ModeAdvantage, AdvantageError> {
    if rewards_t.is_empty() {
        return Err(AdvantageError::Empty("TXT rewards"));
    }
    if rewards_v.is_empty() {
        return Err(AdvantageError::Empty("GRD rewards"));
    }
    check_finite("TXT rewards", rewards_t)?;
    check_finite("GRD rewards", rewards_v)?;
    let (mu_t, var_t) = mean_var(rewards_t);
    let (mu_v, var_v) = mean_var(rewards_v);
    let var = var_t + var_v;
    let a_v = if var < MODE_VAR_EPS {
        match mu_v.partial_cmp(&mu_t) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        }
    } else {
        phi((mu_v - mu_t) / var.sqrt())?
    };
    Ok(ModeAdvantage { a_t: 1.0 - a_v, a_v })
}

/// The `2n` rollouts sampled for one task together with their rewards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_id: u64,
    /// Rollouts per mode when prefixes were forced; `2n` is the group size.
    pub n: usize,
    pub rollouts: Vec<RolloutSequence>,
    pub rewards: Vec<f64>,
    pub prefix_forced: bool,
}

impl RolloutGroup {
    /// A prefix-forced group: the first `n` rollouts are TXT, the last `n` GRD.
    pub fn forced(
        task_id: u64,
        n: usize,
        rollouts: Vec<RolloutSequence>,
        rewards: Vec<f64>,
    ) -> Result<Self, AdvantageError> {
        let group = Self {
            task_id,
            n,
            rollouts,
            rewards,
            prefix_forced: true,
        };
        group.check_alignment()?;
        let ordered = group
            .rollouts
            .iter()
            .enumerate()
            .all(|(j, r)| r.mode == if j < n { ModeId::Txt } else { ModeId::Grd });
        if !ordered {
            let txt = group.count(ModeId::Txt);
            return Err(AdvantageError::Composition {
                n,
                txt,
                grd: group.rollouts.len() - txt,
            });
        }
        Ok(group)
    }

    /// A freely sampled group with no constraint on mode composition.
    pub fn free(
        task_id: u64,
        rollouts: Vec<RolloutSequence>,
        rewards: Vec<f64>,
    ) -> Result<Self, AdvantageError> {
        let group = Self {
            task_id,
            n: rollouts.len() / 2,
            rollouts,
            rewards,
            prefix_forced: false,
        };
        group.check_alignment()?;
        Ok(group)
    }

    fn check_alignment(&self) -> Result<(), AdvantageError> {
        if self.rollouts.is_empty() {
            return Err(AdvantageError::Empty("rollout group"));
        }
        if self.rewards.len() != self.rollouts.len() {
            return Err(AdvantageError::Misaligned {
                expected: self.rollouts.len(),
                got: self.rewards.len(),
            });
        }
        if self.prefix_forced && self.rollouts.len() != 2 * self.n {
            return Err(AdvantageError::Misaligned {
                expected: 2 * self.n,
                got: self.rollouts.len(),
            });
        }
        check_finite("rewards", &self.rewards)
    }

    pub fn count(&self, mode: ModeId) -> usize {
        self.rollouts.iter().filter(|r| r.mode == mode).count()
    }

    pub fn rewards_for(&self, mode: ModeId) -> Vec<f64> {
        self.rollouts
            .iter()
            .zip(&self.rewards)
            .filter(|(r, _)| r.mode == mode)
            .map(|(_, &x)| x)
            .collect()
    }

    /// Mode-relative advantage of the two sub-groups, if both are non-empty.
    pub fn mode_advantage(&self) -> Option<ModeAdvantage> {
        let t = self.rewards_for(ModeId::Txt);
        let v = self.rewards_for(ModeId::Grd);
        mode_relative_advantage(&t, &v).ok()
    }
}

/// Per-rollout, per-token advantages. Position 0 is the mode prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageAssignment {
    pub per_token: Vec<Vec<f64>>,
}

/// Prefix tokens get `a_t` or `a_v` by mode; all other tokens get the
/// rollout's own `A_j`.
pub fn assign_token_advantages(
    group: &RolloutGroup,
    a: &ModeAdvantage,
    rollout_adv: &[f64],
) -> Result<AdvantageAssignment, AdvantageError> {
    let prefix: Vec<f64> = group.rollouts.iter().map(|r| a.for_mode(r.mode)).collect();
    assign_with_prefix(group, &prefix, rollout_adv)
}

/// General form: the prefix token of rollout `j` receives `prefix_adv[j]`.
pub fn assign_with_prefix(
    group: &RolloutGroup,
    prefix_adv: &[f64],
    rollout_adv: &[f64],
) -> Result<AdvantageAssignment, AdvantageError> {
    let len = group.rollouts.len();
    for got in [prefix_adv.len(), rollout_adv.len()] {
        if got != len {
            return Err(AdvantageError::Misaligned { expected: len, got });
        }
    }
    let per_token = group
        .rollouts
        .iter()
        .zip(prefix_adv.iter().zip(rollout_adv))
        .map(|(seq, (&p, &a))| {
            let mut tokens = vec![a; seq.len()];
            tokens[0] = p;
            tokens
        })
        .collect();
    Ok(AdvantageAssignment { per_token })
}
