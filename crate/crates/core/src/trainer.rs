//! Group-relative training loop with prefix-guided exploration.
//!
//! Each iteration draws one task, samples a group of `2n` rollouts (either
//! `n` per forced prefix or `2n` free), scores them, assigns per-token
//! advantages according to the variant and takes one clipped-surrogate step.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    assign_with_prefix, mode_relative_advantage, rollout_advantages, AdvantageError, ModeAdvantage,
    RolloutGroup,
};
use crate::environment::{CurriculumSchedule, EnvError, Environment, Task};
use crate::format::ModeId;
use crate::policy::{
    sample_rollout, sft_step, softmax, surrogate_gradient, Decoding, Demonstration, Optimizer,
    PolicyError, PolicyParameters, SamplingConfig, SurrogateItem,
};
use crate::reward::total_reward;
use crate::rng::{self, substream};

/// Training variants. Only `Adagrpo` uses mode-relative prefix advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Forced prefixes, mode-relative advantage on prefix tokens.
    Adagrpo,
    /// Free sampling, rollout advantages everywhere (plain GRPO).
    GrpoFree,
    /// Forced prefixes, rollout advantages everywhere.
    PgexpOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Adagrpo, Variant::PgexpOnly, Variant::GrpoFree];

    pub fn prefix_forced(self) -> bool {
        !matches!(self, Variant::GrpoFree)
    }

    pub fn prefix_source(self) -> PrefixSource {
        match self {
            Variant::Adagrpo => PrefixSource::ModeRelative,
            Variant::GrpoFree | Variant::PgexpOnly => PrefixSource::Rollout,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Adagrpo => "ADAGRPO",
            Variant::GrpoFree => "GRPO_FREE",
            Variant::PgexpOnly => "PGEXP_ONLY",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Where a rollout's prefix-token advantage comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefixSource {
    /// `a_t` / `a_v` of the two mode sub-groups.
    ModeRelative,
    /// The rollout's own `A_j`, like every other token.
    Rollout,
}

/// Which snapshot the KL penalty pulls toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReference {
    /// The parameters training started from (the cold-start checkpoint).
    Initial,
    /// The previous iterate.
    OldPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Rollouts per mode; the group holds `2n`.
    pub n: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub variant: Variant,
    pub curriculum: bool,
    pub center_mode_advantage: bool,
    /// Format bonus weight of the reward.
    pub w_fmt: f64,
    /// Gradient steps per sampled group against the same old policy.
    pub inner_epochs: usize,
    pub kl_reference: KlReference,
    /// Emit think tokens from the policy, capped at this many body tokens.
    pub free_format_max_len: Option<usize>,
    /// Probe every this many iterations; 0 disables probes.
    pub probe_every: usize,
    /// Probe tasks per family.
    pub probe_tasks: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n: 4,
            clip_eps: 0.2,
            kl_coef: 0.04,
            temperature: 0.9,
            learning_rate: 0.05,
            momentum: 0.0,
            iterations: 2000,
            variant: Variant::Adagrpo,
            curriculum: true,
            center_mode_advantage: false,
            w_fmt: 0.0,
            inner_epochs: 1,
            kl_reference: KlReference::Initial,
            free_format_max_len: None,
            probe_every: 10,
            probe_tasks: 200,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad(format!("kl_coef must be non-negative, got {}", self.kl_coef));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.w_fmt >= 0.0 && self.w_fmt.is_finite()) {
            return bad(format!("w_fmt must be non-negative, got {}", self.w_fmt));
        }
        if self.inner_epochs < 1 {
            return bad("inner_epochs must be at least 1".into());
        }
        if self.free_format_max_len == Some(0) {
            return bad("free_format_max_len must be positive".into());
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            decoding: Decoding::Sample {
                temperature: self.temperature,
            },
            free_format_max_len: self.free_format_max_len,
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: StepError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Per-family probe statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyProbe {
    /// Expected free-sampling GRD probability at the training temperature.
    pub grd_prop: f64,
    /// Fraction of probe tasks whose greedy mode is the family's preferred
    /// mode; absent for families with no preferred mode.
    pub selection: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Mixture-weighted GRD probability under the active phase.
    pub grd_prop: f64,
    pub families: BTreeMap<String, FamilyProbe>,
}

/// A fixed set of held-out contexts per family used to monitor mode choice
/// without touching training.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    tasks: Vec<(String, Option<ModeId>, Vec<Task>)>,
    temperature: f64,
}

impl ProbeSet {
    /// `per_family` tasks for every family at `difficulty`.
    pub fn new(env: &Environment, per_family: usize, difficulty: f64, temperature: f64, seed: u64) -> Self {
        let tasks = env
            .families()
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut r = substream(seed, rng::PROBE, i as u64);
                let ts = (0..per_family).map(|_| env.generate(i, difficulty, &mut r)).collect();
                (f.name.clone(), f.preferred_mode(), ts)
            })
            .collect();
        Self { tasks, temperature }
    }

    pub fn run(&self, params: &PolicyParameters, mixture: &BTreeMap<String, f64>) -> Result<ProbeReport, PolicyError> {
        let mut families = BTreeMap::new();
        for (name, preferred, tasks) in &self.tasks {
            if tasks.is_empty() {
                continue;
            }
            let mut grd = 0.0;
            let mut hits = 0usize;
            for t in tasks {
                let z = params.mode_logits(&t.ctx)?;
                grd += softmax(z.mapv(|v| v / self.temperature).view())[ModeId::Grd.index()];
                let greedy = if z[ModeId::Grd.index()] > z[ModeId::Txt.index()] {
                    ModeId::Grd
                } else {
                    ModeId::Txt
                };
                hits += usize::from(Some(greedy) == *preferred);
            }
            let n = tasks.len() as f64;
            families.insert(
                name.clone(),
                FamilyProbe {
                    grd_prop: grd / n,
                    selection: preferred.map(|_| hits as f64 / n),
                },
            );
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (name, w) in mixture {
            if let Some(p) = families.get(name) {
                num += w * p.grd_prop;
                den += w;
            }
        }
        Ok(ProbeReport {
            grd_prop: if den > 0.0 { num / den } else { f64::NAN },
            families,
        })
    }
}

/// Everything monitored for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: String,
    pub phase_index: usize,
    pub family: String,
    pub modes: Vec<ModeId>,
    pub rewards: Vec<f64>,
    pub reward_txt: Option<f64>,
    pub reward_grd: Option<f64>,
    pub a_t: Option<f64>,
    pub a_v: Option<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grd_prop: Option<f64>,
    pub probe: Option<ProbeReport>,
}

/// Mean reward of the rollouts with the given mode, if any.
pub fn mode_mean(modes: &[ModeId], rewards: &[f64], mode: ModeId) -> Option<f64> {
    let sel: Vec<f64> = modes
        .iter()
        .zip(rewards)
        .filter(|(m, _)| **m == mode)
        .map(|(_, r)| *r)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Samples and scores the group for `task` from `sampler`.
pub fn sample_group(
    sampler: &PolicyParameters,
    task: &Task,
    task_id: u64,
    config: &TrainerConfig,
    rng: &mut impl Rng,
) -> Result<RolloutGroup, StepError> {
    let sampling = config.sampling();
    let gold = task.gold_label();
    let size = 2 * config.n;
    let mut rollouts = Vec::with_capacity(size);
    let mut rewards = Vec::with_capacity(size);
    for j in 0..size {
        let forced = config.variant.prefix_forced().then_some({
            if j < config.n {
                ModeId::Txt
            } else {
                ModeId::Grd
            }
        });
        let seq = sample_rollout(sampler, &task.ctx, &sampling, forced, rng)?;
        rewards.push(total_reward(&seq.text, &gold, config.w_fmt).total);
        rollouts.push(seq);
    }
    Ok(if config.variant.prefix_forced() {
        RolloutGroup::forced(task_id, config.n, rollouts, rewards)?
    } else {
        RolloutGroup::free(task_id, rollouts, rewards)?
    })
}

/// Per-rollout prefix advantages, joint rollout advantages and the
/// mode-relative advantage.
pub type GroupAdvantages = (Vec<f64>, Vec<f64>, Option<ModeAdvantage>);

/// Advantages for `group`; the mode-relative advantage is present only when
/// both modes occur.
pub fn group_advantages(
    group: &RolloutGroup,
    source: PrefixSource,
    centered: bool,
) -> Result<GroupAdvantages, AdvantageError> {
    let rollout_adv = rollout_advantages(&group.rewards)?;
    let t = group.rewards_for(ModeId::Txt);
    let v = group.rewards_for(ModeId::Grd);
    let mode_adv = if t.is_empty() || v.is_empty() {
        None
    } else {
        Some(mode_relative_advantage(&t, &v)?)
    };
    let prefix = match source {
        PrefixSource::Rollout => rollout_adv.clone(),
        PrefixSource::ModeRelative => {
            let a = mode_adv.ok_or(AdvantageError::Composition {
                n: group.n,
                txt: t.len(),
                grd: v.len(),
            })?;
            group
                .rollouts
                .iter()
                .map(|r| a.prefix_value(r.mode, centered))
                .collect()
        }
    };
    Ok((prefix, rollout_adv, mode_adv))
}

/// Result of applying one update to a scored group.
#[derive(Debug, Clone)]
pub struct UpdateOutput {
    pub params: PolicyParameters,
    pub objective: f64,
    pub grad_norm: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mode_advantage: Option<ModeAdvantage>,
}

/// Assigns advantages to `group` and takes `config.inner_epochs` surrogate
/// steps. Reported statistics come from the first step.
#[allow(clippy::too_many_arguments)]
pub fn update_on_group(
    params: &PolicyParameters,
    old_params: &PolicyParameters,
    ref_params: &PolicyParameters,
    task: &Task,
    group: &RolloutGroup,
    source: PrefixSource,
    config: &TrainerConfig,
    optimizer: &mut Optimizer,
) -> Result<UpdateOutput, StepError> {
    let (prefix, rollout_adv, mode_advantage) =
        group_advantages(group, source, config.center_mode_advantage)?;
    let assignment = assign_with_prefix(group, &prefix, &rollout_adv)?;
    let batch: Vec<SurrogateItem<'_>> = group
        .rollouts
        .iter()
        .zip(&assignment.per_token)
        .map(|(seq, adv)| SurrogateItem {
            ctx: &task.ctx,
            seq,
            advantages: adv,
        })
        .collect();
    let mut current = params.clone();
    let mut first = None;
    for _ in 0..config.inner_epochs {
        let out = surrogate_gradient(&current, old_params, ref_params, &batch, config.clip_eps, config.kl_coef)?;
        optimizer.step(&mut current, &out.gradient);
        first.get_or_insert((out.objective, out.gradient.norm(), out.kl, out.clip_fraction));
    }
    if !current.is_finite() {
        return Err(PolicyError::NonFinite("updated parameters".into()).into());
    }
    let (objective, grad_norm, kl, clip_fraction) = first.expect("at least one epoch");
    Ok(UpdateOutput {
        params: current,
        objective,
        grad_norm,
        kl,
        clip_fraction,
        mode_advantage,
    })
}

/// One sample-score-update step on `task`. Rollouts are drawn from
/// `old_params`.
#[allow(clippy::too_many_arguments)]
pub fn run_iteration(
    params: &PolicyParameters,
    old_params: &PolicyParameters,
    ref_params: &PolicyParameters,
    task: &Task,
    iteration: usize,
    config: &TrainerConfig,
    optimizer: &mut Optimizer,
    rng: &mut impl Rng,
) -> Result<(PolicyParameters, IterationRecord), TrainError> {
    let wrap = |source: StepError| TrainError::Iteration { iteration, source };
    let group = sample_group(old_params, task, iteration as u64, config, rng).map_err(wrap)?;
    let out = update_on_group(
        params,
        old_params,
        ref_params,
        task,
        &group,
        config.variant.prefix_source(),
        config,
        optimizer,
    )
    .map_err(wrap)?;
    let modes: Vec<ModeId> = group.rollouts.iter().map(|r| r.mode).collect();
    let record = IterationRecord {
        iteration,
        phase: String::new(),
        phase_index: 0,
        family: task.family.clone(),
        reward_txt: mode_mean(&modes, &group.rewards, ModeId::Txt),
        reward_grd: mode_mean(&modes, &group.rewards, ModeId::Grd),
        modes,
        rewards: group.rewards,
        a_t: out.mode_advantage.map(|a| a.a_t),
        a_v: out.mode_advantage.map(|a| a.a_v),
        objective: out.objective,
        grad_norm: out.grad_norm,
        kl: out.kl,
        clip_fraction: out.clip_fraction,
        grd_prop: None,
        probe: None,
    };
    Ok((out.params, record))
}

/// The schedule actually followed: the given one with the curriculum on,
/// otherwise its final phase from iteration 0.
pub fn effective_schedule(schedule: &CurriculumSchedule, config: &TrainerConfig) -> CurriculumSchedule {
    if config.curriculum {
        schedule.clone()
    } else {
        schedule.final_phase_only(config.iterations)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParameters,
    pub records: Vec<IterationRecord>,
}

/// Runs `config.iterations` updates from `initial`. The task of iteration
/// `i` and its rollouts come from sub-streams `(seed, "env", i)` and
/// `(seed, "policy", i)`, so runs are reproducible bit for bit. Every
/// record is passed to `on_record` as soon as it is produced.
pub fn train(
    env: &Environment,
    schedule: &CurriculumSchedule,
    config: &TrainerConfig,
    initial: &PolicyParameters,
    seed: u64,
    mut on_record: impl FnMut(&IterationRecord) -> std::io::Result<()>,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    env.validate_schedule(schedule)?;
    if initial.dims != env.dims() {
        return Err(TrainError::Config("initial parameters do not match the environment dims".into()));
    }
    let schedule = effective_schedule(schedule, config);
    if schedule.total_budget() < config.iterations {
        return Err(TrainError::Config(format!(
            "schedule budget {} is shorter than {} iterations",
            schedule.total_budget(),
            config.iterations
        )));
    }
    let probes = (config.probe_every > 0 && config.probe_tasks > 0).then(|| {
        ProbeSet::new(
            env,
            config.probe_tasks,
            schedule.final_phase().difficulty,
            config.temperature,
            seed,
        )
    });

    let reference = initial.clone();
    let mut params = initial.clone();
    let mut optimizer = Optimizer::new(config.learning_rate, config.momentum);
    let mut records = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let phase_index = schedule.phase_index(it)?;
        let phase = &schedule.phases[phase_index];
        let task = env.sample_from_phase(phase, &mut substream(seed, rng::ENV, it as u64))?;
        let old = params.clone();
        let ref_params = match config.kl_reference {
            KlReference::Initial => &reference,
            KlReference::OldPolicy => &old,
        };
        let mut policy_rng = substream(seed, rng::POLICY, it as u64);
        let (next, mut record) =
            run_iteration(&params, &old, ref_params, &task, it, config, &mut optimizer, &mut policy_rng)?;
        params = next;
        record.phase = phase.name.clone();
        record.phase_index = phase_index;
        let last = it + 1 == config.iterations;
        if let Some(p) = &probes {
            if (it + 1) % config.probe_every == 0 || last {
                let report = p.run(&params, &phase.mixture)?;
                record.grd_prop = Some(report.grd_prop);
                record.probe = Some(report);
            }
        }
        on_record(&record).map_err(|e| TrainError::Config(format!("record sink failed: {e}")))?;
        records.push(record);
    }
    Ok(TrainOutput { params, records })
}

/// First iteration (1-based count of completed updates) at which every
/// listed family's probe selection rate reaches `threshold`.
pub fn iterations_to_selection(records: &[IterationRecord], families: &[&str], threshold: f64) -> Option<usize> {
    records.iter().find_map(|r| {
        let probe = r.probe.as_ref()?;
        families
            .iter()
            .all(|f| {
                probe
                    .families
                    .get(*f)
                    .and_then(|p| p.selection)
                    .is_some_and(|s| s >= threshold)
            })
            .then_some(r.iteration + 1)
    })
}

/// Supervised cold start on oracle demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub enabled: bool,
    /// Size of the demonstration pool.
    pub demos: usize,
    /// Share of demonstrations in the grounded mode (0.5 for 1:1 mixing).
    pub grd_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub difficulty: f64,
    /// Families to draw demonstrations from; empty means all.
    pub families: Vec<String>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            demos: 2048,
            grd_fraction: 0.5,
            steps: 300,
            batch_size: 64,
            learning_rate: 0.1,
            difficulty: 1.0,
            families: Vec::new(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.grd_fraction) {
            return bad(format!("sft grd_fraction must be in [0, 1], got {}", self.grd_fraction));
        }
        if self.enabled {
            if self.demos == 0 || self.batch_size == 0 {
                return bad("sft demos and batch_size must be positive".into());
            }
            if !(self.learning_rate > 0.0) {
                return bad(format!("sft learning_rate must be positive, got {}", self.learning_rate));
            }
            if !(self.difficulty > 0.0) {
                return bad(format!("sft difficulty must be positive, got {}", self.difficulty));
            }
        }
        Ok(())
    }
}

/// The demonstration pool: families cycled evenly, exactly
/// `round(demos * grd_fraction)` grounded demonstrations.
pub fn demonstration_pool(env: &Environment, config: &SftConfig, seed: u64) -> Result<Vec<Demonstration>, TrainError> {
    let families: Vec<usize> = if config.families.is_empty() {
        (0..env.families().len()).collect()
    } else {
        config
            .families
            .iter()
            .map(|f| env.family_index(f))
            .collect::<Result<_, _>>()?
    };
    let n_grd = (config.demos as f64 * config.grd_fraction).round() as usize;
    let mut rng = substream(seed, rng::SFT, 0);
    let mut modes: Vec<ModeId> = (0..config.demos)
        .map(|i| if i < n_grd { ModeId::Grd } else { ModeId::Txt })
        .collect();
    modes.shuffle(&mut rng);
    Ok(modes
        .into_iter()
        .enumerate()
        .map(|(i, mode)| {
            let fam = families[i % families.len()];
            env.oracle_demonstrations(fam, mode, 1, config.difficulty, &mut rng)
                .pop()
                .expect("one demonstration")
        })
        .collect())
}

/// Zero-initialized parameters, then `config.steps` minibatch SFT steps.
pub fn cold_start(env: &Environment, config: &SftConfig, seed: u64) -> Result<PolicyParameters, TrainError> {
    config.validate()?;
    let mut params = PolicyParameters::zeros(env.dims());
    if !config.enabled || config.steps == 0 {
        return Ok(params);
    }
    let mut pool = demonstration_pool(env, config, seed)?;
    let mut rng = substream(seed, rng::SFT, 1);
    let batch = config.batch_size.min(pool.len());
    let mut cursor = pool.len();
    for _ in 0..config.steps {
        if cursor + batch > pool.len() {
            pool.shuffle(&mut rng);
            cursor = 0;
        }
        params = sft_step(&params, &pool[cursor..cursor + batch], config.learning_rate)?;
        cursor += batch;
    }
    Ok(params)
}

pub const METRICS_CSV_HEADER: [&str; 9] = [
    "iteration",
    "reward_txt",
    "reward_grd",
    "a_t",
    "a_v",
    "grd_prop",
    "objective",
    "grad_norm",
    "phase",
];

#[derive(Serialize)]
struct CsvRow<'a> {
    iteration: usize,
    reward_txt: Option<f64>,
    reward_grd: Option<f64>,
    a_t: Option<f64>,
    a_v: Option<f64>,
    grd_prop: Option<f64>,
    objective: f64,
    grad_norm: f64,
    phase: &'a str,
}

/// Streams records to a CSV file (fixed header, empty cells for absent
/// values) and a JSON-lines file (one full record per line).
pub struct MetricsWriter<C: Write, J: Write> {
    csv: csv::Writer<C>,
    jsonl: J,
}

impl<C: Write, J: Write> MetricsWriter<C, J> {
    pub fn new(csv_sink: C, jsonl: J) -> std::io::Result<Self> {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(csv_sink);
        csv.write_record(METRICS_CSV_HEADER)?;
        Ok(Self { csv, jsonl })
    }

    pub fn write(&mut self, r: &IterationRecord) -> std::io::Result<()> {
        self.csv
            .serialize(CsvRow {
                iteration: r.iteration,
                reward_txt: r.reward_txt,
                reward_grd: r.reward_grd,
                a_t: r.a_t,
                a_v: r.a_v,
                grd_prop: r.grd_prop,
                objective: r.objective,
                grad_norm: r.grad_norm,
                phase: &r.phase,
            })
            .map_err(std::io::Error::other)?;
        serde_json::to_writer(&mut self.jsonl, r)?;
        self.jsonl.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<(C, J)> {
        self.csv.flush()?;
        self.jsonl.flush()?;
        let csv = self.csv.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok((csv, self.jsonl))
    }
}
