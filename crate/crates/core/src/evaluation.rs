//! Held-out evaluation: adaptive versus forced-mode accuracy, the
//! either-mode upper bound, grounded-mode proportions and the inference-time
//! mode-switch retry.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, EnvError, Phase, Task};
use crate::format::{parse_response, ModeId};
use crate::policy::{sample_rollout, softmax, Decoding, PolicyError, PolicyParameters, SamplingConfig};
use crate::reward::total_reward;
use crate::rng::{self, substream};

/// Answer reported when neither mode produces a parseable response.
pub const UNPARSEABLE_ANSWER: &str = "<unparseable>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMetrics {
    pub family: String,
    pub tasks: usize,
    pub accuracy_adaptive: f64,
    pub accuracy_txt: f64,
    pub accuracy_grd: f64,
    pub accuracy_upper_bound: f64,
    /// Share of tasks where greedy decoding picks the grounded mode.
    pub grd_proportion: f64,
    /// Mean probability of the grounded prefix under free sampling at the
    /// evaluation temperature.
    pub free_grd_proportion: f64,
    /// Share of tasks where the greedy mode is the family's preferred mode;
    /// absent when the family has none (or for the overall row).
    pub selection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub temperature: f64,
    pub overall: FamilyMetrics,
    pub families: Vec<FamilyMetrics>,
}

impl EvalReport {
    pub fn family(&self, name: &str) -> Option<&FamilyMetrics> {
        self.families.iter().find(|f| f.family == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Temperature at which `free_grd_proportion` is computed.
    pub temperature: f64,
    pub free_format_max_len: Option<usize>,
    pub seed: u64,
}

/// Outcome on one task.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TaskOutcome {
    adaptive: f64,
    txt: f64,
    grd: f64,
    chose_grd: bool,
    p_grd: f64,
    preferred_hit: Option<bool>,
}

fn score(params: &PolicyParameters, task: &Task, sampling: &SamplingConfig, forced: Option<ModeId>) -> Result<(ModeId, f64), PolicyError> {
    // Greedy decoding consumes no randomness.
    let mut unused = substream(0, rng::EVAL, 0);
    let seq = sample_rollout(params, &task.ctx, sampling, forced, &mut unused)?;
    Ok((seq.mode, total_reward(&seq.text, &task.gold_label(), 0.0).accuracy_component))
}

fn outcome(
    params: &PolicyParameters,
    task: &Task,
    preferred: Option<ModeId>,
    opts: &EvalOptions,
) -> Result<TaskOutcome, PolicyError> {
    let sampling = SamplingConfig {
        decoding: Decoding::Greedy,
        free_format_max_len: opts.free_format_max_len,
    };
    let (mode, adaptive) = score(params, task, &sampling, None)?;
    let (_, txt) = score(params, task, &sampling, Some(ModeId::Txt))?;
    let (_, grd) = score(params, task, &sampling, Some(ModeId::Grd))?;
    let z = params.mode_logits(&task.ctx)?;
    let p_grd = softmax(z.mapv(|v| v / opts.temperature).view())[ModeId::Grd.index()];
    Ok(TaskOutcome {
        adaptive,
        txt,
        grd,
        chose_grd: mode == ModeId::Grd,
        p_grd,
        preferred_hit: preferred.map(|m| m == mode),
    })
}

fn aggregate(family: String, outcomes: &[TaskOutcome]) -> FamilyMetrics {
    let n = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&TaskOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let hits: Vec<bool> = outcomes.iter().filter_map(|o| o.preferred_hit).collect();
    FamilyMetrics {
        family,
        tasks: outcomes.len(),
        accuracy_adaptive: mean(&|o| o.adaptive),
        accuracy_txt: mean(&|o| o.txt),
        accuracy_grd: mean(&|o| o.grd),
        accuracy_upper_bound: mean(&|o| o.txt.max(o.grd)),
        grd_proportion: mean(&|o| f64::from(u8::from(o.chose_grd))),
        free_grd_proportion: mean(&|o| o.p_grd),
        selection_rate: (hits.len() == outcomes.len() && !hits.is_empty())
            .then(|| hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64),
    }
}

/// Evaluates every task greedily, adaptively and with each forced prefix,
/// and aggregates per family (in environment order) and overall.
pub fn evaluate(
    params: &PolicyParameters,
    env: &Environment,
    tasks: &[Task],
    opts: &EvalOptions,
) -> Result<EvalReport, PolicyError> {
    if tasks.is_empty() {
        return Err(PolicyError::InvalidArgument("no evaluation tasks".into()));
    }
    if !(opts.temperature > 0.0) {
        return Err(PolicyError::InvalidArgument(format!("temperature must be positive, got {}", opts.temperature)));
    }
    let outcomes: Vec<TaskOutcome> = tasks
        .par_iter()
        .map(|t| {
            let preferred = env.families().get(t.family_index).and_then(|f| f.preferred_mode());
            outcome(params, t, preferred, opts)
        })
        .collect::<Result<_, _>>()?;

    let mut by_family: BTreeMap<usize, Vec<TaskOutcome>> = BTreeMap::new();
    for (t, o) in tasks.iter().zip(&outcomes) {
        by_family.entry(t.family_index).or_default().push(*o);
    }
    let families = by_family
        .into_iter()
        .map(|(i, os)| {
            let name = env.families().get(i).map_or_else(|| format!("family-{i}"), |f| f.name.clone());
            aggregate(name, &os)
        })
        .collect();
    let mut overall = aggregate("overall".into(), &outcomes);
    overall.selection_rate = None;
    Ok(EvalReport {
        seed: opts.seed,
        temperature: opts.temperature,
        overall,
        families,
    })
}

/// `count` held-out tasks from `phase`'s mixture on the evaluation stream.
pub fn eval_tasks(env: &Environment, phase: &Phase, count: usize, seed: u64) -> Result<Vec<Task>, EnvError> {
    let mut r = substream(seed, rng::EVAL, 1);
    (0..count).map(|_| env.sample_from_phase(phase, &mut r)).collect()
}

/// `count` held-out tasks of one family.
pub fn family_tasks(env: &Environment, family: &str, difficulty: f64, count: usize, seed: u64) -> Result<Vec<Task>, EnvError> {
    let idx = env.family_index(family)?;
    let mut r = substream(seed, rng::EVAL, 2 + idx as u64);
    Ok((0..count).map(|_| env.generate(idx, difficulty, &mut r)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchOutcome {
    pub answer: String,
    pub mode: ModeId,
    pub retried: bool,
    pub reward: f64,
}

/// Decodes with the policy's own mode choice; if that produces no
/// parseable answer within `max_len` body tokens, decodes once more with
/// the other mode forced. If both fail the answer is a sentinel graded 0.
pub fn infer_with_mode_switch(
    params: &PolicyParameters,
    task: &Task,
    max_len: usize,
    decoding: Decoding,
    rng: &mut impl Rng,
) -> Result<SwitchOutcome, PolicyError> {
    let sampling = SamplingConfig {
        decoding,
        free_format_max_len: Some(max_len),
    };
    let first = sample_rollout(params, &task.ctx, &sampling, None, rng)?;
    if let Ok(parsed) = parse_response(&first.text) {
        return Ok(SwitchOutcome {
            answer: parsed.answer().to_string(),
            mode: first.mode,
            retried: false,
            reward: total_reward(&first.text, &task.gold_label(), 0.0).accuracy_component,
        });
    }
    let other = first.mode.other();
    let second = sample_rollout(params, &task.ctx, &sampling, Some(other), rng)?;
    Ok(match parse_response(&second.text) {
        Ok(parsed) => SwitchOutcome {
            answer: parsed.answer().to_string(),
            mode: other,
            retried: true,
            reward: total_reward(&second.text, &task.gold_label(), 0.0).accuracy_component,
        },
        Err(_) => SwitchOutcome {
            answer: UNPARSEABLE_ANSWER.to_string(),
            mode: other,
            retried: true,
            reward: 0.0,
        },
    })
}

pub const EVAL_CSV_HEADER: [&str; 10] = [
    "family",
    "tasks",
    "accuracy_adaptive",
    "accuracy_txt",
    "accuracy_grd",
    "accuracy_upper_bound",
    "grd_proportion",
    "free_grd_proportion",
    "selection_rate",
    "seed",
];

/// One row per family followed by an `overall` row.
pub fn write_eval_csv(report: &EvalReport, sink: impl Write) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(EVAL_CSV_HEADER)?;
    for m in report.families.iter().chain(std::iter::once(&report.overall)) {
        w.serialize((
            &m.family,
            m.tasks,
            m.accuracy_adaptive,
            m.accuracy_txt,
            m.accuracy_grd,
            m.accuracy_upper_bound,
            m.grd_proportion,
            m.free_grd_proportion,
            m.selection_rate,
            report.seed,
        ))
        .map_err(std::io::Error::other)?;
    }
    w.flush()
}
