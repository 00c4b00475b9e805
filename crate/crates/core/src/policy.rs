//! Linear-softmax autoregressive policy.
//!
//! A generation is a short sequence of decisions. The first decision picks the
//! mode prefix from the full context; the last picks an answer token from the
//! selected mode's answer head, which reads only that mode's feature channel.
//! With free-format decoding enabled, a run of think decisions (continue or
//! close) sits in between, so a generation can fail to reach its answer.
//!
//! Log-probabilities and gradients always use the temperature-1
//! distributions; temperature only affects sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{serialize, ModeId, ParsedResponse};

pub const CHECKPOINT_MAGIC: &str = "adagrpo-policy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const TXT_PLACEHOLDER: &str = "reasoning over the symbolic cues";
const GRD_PLACEHOLDER: &str = "region[0,0,10,10] inspected";
const THINK_WORD: &str = "step";

/// Think-head choice indices. Ties under greedy decoding resolve to `CLOSE`.
pub const THINK_CLOSE: usize = 0;
pub const THINK_CONTINUE: usize = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid token choice {choice} for {kind:?} (vocabulary of {size})")]
    InvalidToken {
        kind: StepKind,
        choice: usize,
        size: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Dimensions shared by the vocabulary, contexts and parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Answer alphabet size `A`.
    pub alphabet: usize,
    pub sym: usize,
    pub vis: usize,
    /// Task-type cue width; zero disables the cue channel.
    pub cue: usize,
}

impl Dims {
    pub fn mode_input(&self) -> usize {
        self.sym + self.vis + self.cue + 1
    }

    pub fn channel_input(&self, mode: ModeId) -> usize {
        match mode {
            ModeId::Txt => self.sym + 1,
            ModeId::Grd => self.vis + 1,
        }
    }
}

/// Token ids: the two prefixes, then `A` answers, then the two think tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    pub alphabet: usize,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        2 + self.alphabet + 2
    }

    pub fn prefix_ids(&self) -> std::ops::Range<usize> {
        0..2
    }

    pub fn answer_ids(&self) -> std::ops::Range<usize> {
        2..2 + self.alphabet
    }

    pub fn think_ids(&self) -> std::ops::Range<usize> {
        2 + self.alphabet..self.size()
    }

    pub fn token_id(&self, kind: StepKind, choice: usize) -> usize {
        match kind {
            StepKind::Mode => self.prefix_ids().start + choice,
            StepKind::Answer(_) => self.answer_ids().start + choice,
            StepKind::Think(_) => self.think_ids().start + choice,
        }
    }
}

/// Text label of answer index `i` (answers are labelled `1..=A`).
pub fn answer_label(i: usize) -> String {
    (i + 1).to_string()
}

/// Conditioning context: symbolic and visual channels plus an optional
/// task-type cue. A constant bias is appended by the heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFeatures {
    pub sym: Vec<f64>,
    pub vis: Vec<f64>,
    #[serde(default)]
    pub cue: Vec<f64>,
}

impl ContextFeatures {
    pub fn new(sym: Vec<f64>, vis: Vec<f64>, cue: Vec<f64>) -> Result<Self, PolicyError> {
        let ctx = Self { sym, vis, cue };
        if ctx.sym.iter().chain(&ctx.vis).chain(&ctx.cue).any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFinite("context features".into()));
        }
        Ok(ctx)
    }

    fn check(&self, dims: &Dims) -> Result<(), PolicyError> {
        for (what, expected, got) in [
            ("sym channel", dims.sym, self.sym.len()),
            ("vis channel", dims.vis, self.vis.len()),
            ("cue channel", dims.cue, self.cue.len()),
        ] {
            if expected != got {
                return Err(PolicyError::Shape { what, expected, got });
            }
        }
        Ok(())
    }

    /// `[sym, vis, cue, 1]`
    pub fn mode_input(&self) -> Array1<f64> {
        self.sym
            .iter()
            .chain(&self.vis)
            .chain(&self.cue)
            .copied()
            .chain(std::iter::once(1.0))
            .collect()
    }

    /// `[channel, 1]` for the channel the mode's answer head reads.
    pub fn channel_input(&self, mode: ModeId) -> Array1<f64> {
        let channel = match mode {
            ModeId::Txt => &self.sym,
            ModeId::Grd => &self.vis,
        };
        channel.iter().copied().chain(std::iter::once(1.0)).collect()
    }
}

/// Which head a decision is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Mode,
    Think(ModeId),
    Answer(ModeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub choice: usize,
    /// Log-probability under the sampling policy at temperature 1.
    pub logprob: f64,
}

/// One sampled generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSequence {
    pub mode: ModeId,
    /// Index of the answer token, `None` if decoding stopped before one.
    pub answer: Option<usize>,
    pub steps: Vec<Step>,
    pub text: String,
}

impl RolloutSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<usize> {
        self.steps
            .iter()
            .map(|s| vocab.token_id(s.kind, s.choice))
            .collect()
    }

    pub fn total_logprob(&self) -> f64 {
        self.steps.iter().map(|s| s.logprob).sum()
    }
}

/// Weights of all heads. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub dims: Dims,
    /// 2 x (sym + vis + cue + 1)
    pub mode: Array2<f64>,
    /// A x (sym + 1)
    pub answer_txt: Array2<f64>,
    /// A x (vis + 1)
    pub answer_grd: Array2<f64>,
    /// 2 modes x [close, continue]; only used by free-format decoding.
    pub think: Array2<f64>,
}

impl PolicyParameters {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            mode: Array2::zeros((2, dims.mode_input())),
            answer_txt: Array2::zeros((dims.alphabet, dims.sym + 1)),
            answer_grd: Array2::zeros((dims.alphabet, dims.vis + 1)),
            think: Array2::zeros((2, 2)),
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            alphabet: self.dims.alphabet,
        }
    }

    fn blocks(&self) -> [&Array2<f64>; 4] {
        [&self.mode, &self.answer_txt, &self.answer_grd, &self.think]
    }

    fn blocks_mut(&mut self) -> [&mut Array2<f64>; 4] {
        [
            &mut self.mode,
            &mut self.answer_txt,
            &mut self.answer_grd,
            &mut self.think,
        ]
    }

    pub fn answer_head(&self, mode: ModeId) -> &Array2<f64> {
        match mode {
            ModeId::Txt => &self.answer_txt,
            ModeId::Grd => &self.answer_grd,
        }
    }

    pub fn answer_head_mut(&mut self, mode: ModeId) -> &mut Array2<f64> {
        match mode {
            ModeId::Txt => &mut self.answer_txt,
            ModeId::Grd => &mut self.answer_grd,
        }
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// All weights in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), PolicyError> {
        if values.len() != self.num_params() {
            return Err(PolicyError::Shape {
                what: "flat parameter vector",
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for block in self.blocks_mut() {
            for (w, v) in block.iter_mut().zip(&mut it) {
                *w = *v;
            }
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &PolicyParameters, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.scaled_add(scale, src);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.mapv_inplace(|w| w * factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|w| w * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|w| w.is_finite()))
    }

    pub fn mode_logits(&self, ctx: &ContextFeatures) -> Result<Array1<f64>, PolicyError> {
        ctx.check(&self.dims)?;
        Ok(self.mode.dot(&ctx.mode_input()))
    }

    pub fn answer_logits(
        &self,
        mode: ModeId,
        ctx: &ContextFeatures,
    ) -> Result<Array1<f64>, PolicyError> {
        ctx.check(&self.dims)?;
        Ok(self.answer_head(mode).dot(&ctx.channel_input(mode)))
    }

    pub fn think_logits(&self, mode: ModeId) -> Array1<f64> {
        self.think.row(mode.index()).to_owned()
    }

    pub fn logits(&self, kind: StepKind, ctx: &ContextFeatures) -> Result<Array1<f64>, PolicyError> {
        match kind {
            StepKind::Mode => self.mode_logits(ctx),
            StepKind::Answer(m) => self.answer_logits(m, ctx),
            StepKind::Think(m) => Ok(self.think_logits(m)),
        }
    }

    /// Adds `outer(g, input)` to the block that produced the logits of `kind`.
    pub fn accumulate_logit_grad(&mut self, kind: StepKind, ctx: &ContextFeatures, g: ArrayView1<f64>) {
        let (block, input) = match kind {
            StepKind::Mode => (&mut self.mode, ctx.mode_input()),
            StepKind::Answer(m) => {
                let input = ctx.channel_input(m);
                (self.answer_head_mut(m), input)
            }
            StepKind::Think(m) => {
                let mut row = self.think.row_mut(m.index());
                row += &g;
                return;
            }
        };
        for (mut row, gi) in block.rows_mut().into_iter().zip(g.iter()) {
            row.scaled_add(*gi, &input);
        }
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|z| (z - max).exp());
    let sum = exp.sum();
    exp / sum
}

pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.mapv(|z| (z - max).exp()).sum().ln();
    logits.mapv(|z| z - lse)
}

/// First index of the maximum.
pub fn argmax(xs: ArrayView1<f64>) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Exact `KL(softmax(p) || softmax(q))`.
pub fn kl_categorical(p_logits: ArrayView1<f64>, q_logits: ArrayView1<f64>) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter()
        .zip(lq.iter())
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

/// Gradient of `KL(softmax(z) || softmax(q))` with respect to `z`.
fn kl_logit_grad(z: ArrayView1<f64>, q_logits: ArrayView1<f64>) -> (f64, Array1<f64>) {
    let lp = log_softmax(z);
    let lq = log_softmax(q_logits);
    let p = lp.mapv(f64::exp);
    let diff = &lp - &lq;
    let kl = (&p * &diff).sum();
    let grad = &p * &diff.mapv(|d| d - kl);
    (kl, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

impl Decoding {
    fn pick(&self, logits: ArrayView1<f64>, rng: &mut impl Rng) -> usize {
        match *self {
            Decoding::Greedy => argmax(logits),
            Decoding::Sample { temperature } => {
                let probs = softmax(logits.mapv(|z| z / temperature).view());
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                probs.len() - 1
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub decoding: Decoding,
    /// Emit think tokens from the policy, stopping after this many body
    /// tokens if no answer has been produced.
    pub free_format_max_len: Option<usize>,
}

impl SamplingConfig {
    pub fn sample(temperature: f64) -> Self {
        Self {
            decoding: Decoding::Sample { temperature },
            free_format_max_len: None,
        }
    }

    pub fn greedy() -> Self {
        Self {
            decoding: Decoding::Greedy,
            free_format_max_len: None,
        }
    }

    pub fn with_free_format(mut self, max_len: usize) -> Self {
        self.free_format_max_len = Some(max_len);
        self
    }
}

fn placeholder(mode: ModeId) -> &'static str {
    match mode {
        ModeId::Txt => TXT_PLACEHOLDER,
        ModeId::Grd => GRD_PLACEHOLDER,
    }
}

/// Samples one generation. A forced prefix still records the policy's own
/// log-probability of that prefix.
pub fn sample_rollout(
    params: &PolicyParameters,
    ctx: &ContextFeatures,
    config: &SamplingConfig,
    forced_prefix: Option<ModeId>,
    rng: &mut impl Rng,
) -> Result<RolloutSequence, PolicyError> {
    if let Decoding::Sample { temperature } = config.decoding {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
    }
    let mut steps = Vec::new();
    let mut emit = |kind: StepKind, forced: Option<usize>, rng: &mut _| -> Result<usize, PolicyError> {
        let logits = params.logits(kind, ctx)?;
        let choice = forced.unwrap_or_else(|| config.decoding.pick(logits.view(), rng));
        let logprob = log_softmax(logits.view())[choice];
        steps.push(Step { kind, choice, logprob });
        Ok(choice)
    };

    let mode_choice = emit(StepKind::Mode, forced_prefix.map(ModeId::index), rng)?;
    let mode = ModeId::from_index(mode_choice).expect("two-way head");

    let Some(max_len) = config.free_format_max_len else {
        let answer = emit(StepKind::Answer(mode), None, rng)?;
        let response = ParsedResponse::new(mode, placeholder(mode), answer_label(answer))
            .expect("placeholder text is tag-free");
        return Ok(RolloutSequence {
            mode,
            answer: Some(answer),
            steps,
            text: serialize(&response),
        });
    };

    let mut text = format!("{} <think>", mode.prefix());
    let mut words = 0usize;
    let mut body = 0usize;
    let mut answer = None;
    while body < max_len {
        let choice = emit(StepKind::Think(mode), None, rng)?;
        body += 1;
        if choice == THINK_CONTINUE {
            if words > 0 {
                text.push(' ');
            }
            text.push_str(THINK_WORD);
            words += 1;
            continue;
        }
        text.push_str("</think>");
        if body < max_len {
            let a = emit(StepKind::Answer(mode), None, rng)?;
            let _ = write!(text, " <answer>{}</answer>", answer_label(a));
            answer = Some(a);
        }
        break;
    }
    Ok(RolloutSequence {
        mode,
        answer,
        steps,
        text,
    })
}

fn check_choice(params: &PolicyParameters, step: &Step) -> Result<(), PolicyError> {
    let size = match step.kind {
        StepKind::Mode | StepKind::Think(_) => 2,
        StepKind::Answer(_) => params.dims.alphabet,
    };
    if step.choice >= size {
        return Err(PolicyError::InvalidToken {
            kind: step.kind,
            choice: step.choice,
            size,
        });
    }
    Ok(())
}

/// Per-token log-probabilities of `seq` under `params`.
pub fn sequence_logprob(
    params: &PolicyParameters,
    seq: &RolloutSequence,
    ctx: &ContextFeatures,
) -> Result<Vec<f64>, PolicyError> {
    seq.steps
        .iter()
        .map(|step| {
            check_choice(params, step)?;
            let logits = params.logits(step.kind, ctx)?;
            Ok(log_softmax(logits.view())[step.choice])
        })
        .collect()
}

/// Value of `min(r * A, clip(r, 1 - eps, 1 + eps) * A)` and its derivative
/// in `r`. The derivative is exactly zero wherever the clipped branch binds.
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// One rollout's contribution to the surrogate.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateItem<'a> {
    pub ctx: &'a ContextFeatures,
    pub seq: &'a RolloutSequence,
    /// Per-token advantages aligned with `seq.steps`.
    pub advantages: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct SurrogateOutput {
    pub objective: f64,
    pub gradient: PolicyParameters,
    /// Mean per-token KL to the reference, averaged like the objective.
    pub kl: f64,
    /// Fraction of tokens whose ratio path was clipped.
    pub clip_fraction: f64,
}

/// Clipped-surrogate objective with a per-token KL penalty, and its exact
/// gradient:
///
/// ```text
/// J = 1/B sum_j 1/|o_j| sum_t [ min(r A, clip(r) A) - kl_coef * KL(pi(.|s_t) || pi_ref(.|s_t)) ]
/// ```
///
/// with `r = pi(o_t|s_t) / pi_old(o_t|s_t)`.
pub fn surrogate_gradient(
    params: &PolicyParameters,
    old_params: &PolicyParameters,
    ref_params: &PolicyParameters,
    batch: &[SurrogateItem<'_>],
    clip_eps: f64,
    kl_coef: f64,
) -> Result<SurrogateOutput, PolicyError> {
    if !(clip_eps > 0.0) {
        return Err(PolicyError::InvalidArgument(format!("clip_eps must be positive, got {clip_eps}")));
    }
    if !(kl_coef >= 0.0) {
        return Err(PolicyError::InvalidArgument(format!("kl_coef must be non-negative, got {kl_coef}")));
    }
    if batch.is_empty() {
        return Err(PolicyError::InvalidArgument("empty batch".into()));
    }
    for p in [old_params, ref_params] {
        if p.dims != params.dims {
            return Err(PolicyError::InvalidArgument("parameter snapshots have different dims".into()));
        }
    }

    let mut gradient = PolicyParameters::zeros(params.dims);
    let mut objective = 0.0;
    let mut kl_total = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let batch_weight = 1.0 / batch.len() as f64;

    for (j, item) in batch.iter().enumerate() {
        if item.advantages.len() != item.seq.len() || item.seq.is_empty() {
            return Err(PolicyError::Shape {
                what: "per-token advantages",
                expected: item.seq.len(),
                got: item.advantages.len(),
            });
        }
        let w = batch_weight / item.seq.len() as f64;
        for (t, (step, &adv)) in item.seq.steps.iter().zip(item.advantages).enumerate() {
            check_choice(params, step)?;
            let z = params.logits(step.kind, item.ctx)?;
            let z_old = old_params.logits(step.kind, item.ctx)?;
            let z_ref = ref_params.logits(step.kind, item.ctx)?;

            let lp = log_softmax(z.view());
            let lp_old = log_softmax(z_old.view())[step.choice];
            let ratio = (lp[step.choice] - lp_old).exp();
            let (value, d_ratio) = clipped_term(ratio, adv, clip_eps);
            let (kl, kl_grad) = kl_logit_grad(z.view(), z_ref.view());

            if !(value.is_finite() && kl.is_finite() && ratio.is_finite()) {
                return Err(PolicyError::NonFinite(format!(
                    "rollout {j} token {t}: ratio={ratio}, term={value}, kl={kl}"
                )));
            }
            objective += w * (value - kl_coef * kl);
            kl_total += w * kl;
            tokens += 1;
            if d_ratio == 0.0 && adv != 0.0 {
                clipped += 1;
            }

            // d ratio / d z = ratio * (onehot - p)
            let mut g = lp.mapv(|l| -l.exp() * d_ratio * ratio);
            g[step.choice] += d_ratio * ratio;
            g.scaled_add(-kl_coef, &kl_grad);
            g *= w;
            gradient.accumulate_logit_grad(step.kind, item.ctx, g.view());
        }
    }
    if !gradient.is_finite() {
        return Err(PolicyError::NonFinite("surrogate gradient".into()));
    }
    Ok(SurrogateOutput {
        objective,
        gradient,
        kl: kl_total,
        clip_fraction: clipped as f64 / tokens as f64,
    })
}

/// A supervised example: context, demonstrated mode and answer index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub ctx: ContextFeatures,
    pub mode: ModeId,
    pub answer: usize,
}

impl Demonstration {
    fn steps(&self) -> [Step; 2] {
        [
            Step {
                kind: StepKind::Mode,
                choice: self.mode.index(),
                logprob: 0.0,
            },
            Step {
                kind: StepKind::Answer(self.mode),
                choice: self.answer,
                logprob: 0.0,
            },
        ]
    }
}

/// Mean over demonstrations of `-(log pi(mode) + log pi(answer | mode))`,
/// with its gradient.
pub fn sft_loss(
    params: &PolicyParameters,
    demos: &[Demonstration],
) -> Result<(f64, PolicyParameters), PolicyError> {
    if demos.is_empty() {
        return Err(PolicyError::InvalidArgument("empty demonstration batch".into()));
    }
    let mut grad = PolicyParameters::zeros(params.dims);
    let mut loss = 0.0;
    let w = 1.0 / demos.len() as f64;
    for demo in demos {
        for step in demo.steps() {
            check_choice(params, &step)?;
            let z = params.logits(step.kind, &demo.ctx)?;
            let lp = log_softmax(z.view());
            loss -= w * lp[step.choice];
            // d(-log p_c)/dz = p - onehot
            let mut g = lp.mapv(|l| w * l.exp());
            g[step.choice] -= w;
            grad.accumulate_logit_grad(step.kind, &demo.ctx, g.view());
        }
    }
    Ok((loss, grad))
}

/// One plain gradient step on the mean cross-entropy of both tokens.
pub fn sft_step(
    params: &PolicyParameters,
    demos: &[Demonstration],
    lr: f64,
) -> Result<PolicyParameters, PolicyError> {
    if !(lr > 0.0) {
        return Err(PolicyError::InvalidArgument(format!("lr must be positive, got {lr}")));
    }
    let (_, grad) = sft_loss(params, demos)?;
    let mut next = params.clone();
    next.add_scaled(&grad, -lr);
    Ok(next)
}

/// Fixed-step gradient optimizer with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<PolicyParameters>,
}

impl Optimizer {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    /// Moves `params` along `direction` (ascent when `direction` is an
    /// objective gradient).
    pub fn step(&mut self, params: &mut PolicyParameters, direction: &PolicyParameters) {
        if self.momentum == 0.0 {
            params.add_scaled(direction, self.lr);
            return;
        }
        let v = self
            .velocity
            .get_or_insert_with(|| PolicyParameters::zeros(params.dims));
        v.scale(self.momentum);
        v.add_scaled(direction, 1.0);
        params.add_scaled(v, self.lr);
    }
}

/// Text checkpoint:
///
/// ```text
/// adagrpo-policy-checkpoint v1
/// meta <key> <value>            (zero or more)
/// dims <alphabet> <sym> <vis> <cue>
/// matrix mode <rows> <cols>
/// <row-major values, one row per line>
/// matrix answer_txt <rows> <cols>
/// ...
/// matrix answer_grd <rows> <cols>
/// ...
/// matrix think 2 2
/// ...
/// end
/// ```
///
/// Values use Rust's shortest round-trip float formatting, so a save/load
/// cycle is exact.
pub fn to_checkpoint(params: &PolicyParameters, meta: &BTreeMap<String, String>) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
    for (k, v) in meta {
        let _ = writeln!(out, "meta {k} {}", v.replace('\n', " "));
    }
    let d = params.dims;
    let _ = writeln!(out, "dims {} {} {} {}", d.alphabet, d.sym, d.vis, d.cue);
    for (name, block) in CHECKPOINT_BLOCKS.iter().zip(params.blocks()) {
        let _ = writeln!(out, "matrix {name} {} {}", block.nrows(), block.ncols());
        for row in block.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

const CHECKPOINT_BLOCKS: [&str; 4] = ["mode", "answer_txt", "answer_grd", "think"];

pub fn from_checkpoint(text: &str) -> Result<(PolicyParameters, BTreeMap<String, String>), PolicyError> {
    let bad = |msg: String| PolicyError::Checkpoint(msg);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| bad(format!("unexpected end of file, expected {what}")))
    };

    let (_, header) = next("header")?;
    let expected_header = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
    if header.trim() != expected_header {
        return Err(bad(format!("bad header {header:?}, expected {expected_header:?}")));
    }

    let mut meta = BTreeMap::new();
    let (mut ln, mut line) = next("dims")?;
    while let Some(rest) = line.strip_prefix("meta ") {
        let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
        meta.insert(k.to_string(), v.to_string());
        (ln, line) = next("dims")?;
    }
    let dims_vals: Vec<usize> = line
        .strip_prefix("dims ")
        .ok_or_else(|| bad(format!("line {}: expected dims", ln + 1)))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("line {}: bad dimension {t:?}", ln + 1))))
        .collect::<Result<_, _>>()?;
    let [alphabet, sym, vis, cue] = dims_vals[..] else {
        return Err(bad(format!("line {}: dims needs 4 values", ln + 1)));
    };
    if alphabet == 0 {
        return Err(bad("alphabet must be positive".into()));
    }
    let mut params = PolicyParameters::zeros(Dims { alphabet, sym, vis, cue });

    for (name, block) in CHECKPOINT_BLOCKS.iter().zip(params.blocks_mut()) {
        let (ln, line) = next("matrix header")?;
        let expected = format!("matrix {name} {} {}", block.nrows(), block.ncols());
        if line.trim() != expected {
            return Err(bad(format!("line {}: expected {expected:?}, got {line:?}", ln + 1)));
        }
        for mut row in block.rows_mut() {
            let (ln, line) = next("matrix row")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("line {}: bad number {t:?}", ln + 1))))
                .collect::<Result<_, _>>()?;
            if vals.len() != row.len() || vals.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("line {}: expected {} finite values", ln + 1, row.len())));
            }
            row.assign(&Array1::from(vals));
        }
    }
    let (ln, line) = next("end")?;
    if line.trim() != "end" {
        return Err(bad(format!("line {}: expected end, got {line:?}", ln + 1)));
    }
    Ok((params, meta))
}
