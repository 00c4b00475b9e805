//! Mode-prefixed reasoning strings.
//!
//! Every response has the shape
//!
//! ```text
//! <prefix> <think>THINK</think> <answer>ANSWER</answer>
//! ```
//!
//! where `<prefix>` is `<text>` or `<ground>` and commits the generation to
//! one reasoning mode. Grounded reasoning annotates objects inline as
//! `label[x1,y1,x2,y2]`.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// Every literal that may not appear inside a think or answer segment.
const TAG_LITERALS: [&str; 6] = [
    ModeId::Txt.prefix(),
    ModeId::Grd.prefix(),
    THINK_OPEN,
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

/// Reasoning mode selected by the leading prefix token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeId {
    /// Text-only reasoning.
    #[serde(rename = "TXT")]
    Txt,
    /// Visually grounded reasoning with object coordinates.
    #[serde(rename = "GRD")]
    Grd,
}

impl ModeId {
    pub const ALL: [ModeId; 2] = [ModeId::Txt, ModeId::Grd];

    pub const fn prefix(self) -> &'static str {
        match self {
            ModeId::Txt => "<text>",
            ModeId::Grd => "<ground>",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<ModeId> {
        ModeId::ALL.into_iter().find(|m| m.prefix() == prefix)
    }

    /// Position of the mode in the prefix vocabulary (TXT = 0, GRD = 1).
    pub const fn index(self) -> usize {
        match self {
            ModeId::Txt => 0,
            ModeId::Grd => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<ModeId> {
        ModeId::ALL.get(index).copied()
    }

    pub const fn other(self) -> ModeId {
        match self {
            ModeId::Txt => ModeId::Grd,
            ModeId::Grd => ModeId::Txt,
        }
    }

    pub const fn label(self) -> &'static str {
        match self {
            ModeId::Txt => "TXT",
            ModeId::Grd => "GRD",
        }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A labelled bounding box `label[x1,y1,x2,y2]` found in grounded reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingSpan {
    pub label: String,
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("response does not start with a known mode prefix")]
    MissingModePrefix,
    #[error("response is missing <think>...</think> tags")]
    MissingThinkTags,
    #[error("response is missing <answer>...</answer> tags")]
    MissingAnswerTags,
    #[error("tags are out of order, repeated or nested")]
    TagsOutOfOrder,
    #[error("unexpected text outside the tagged segments at byte {offset}")]
    UnexpectedText { offset: usize },
}

/// A structurally valid response.
///
/// Grounding spans are derived from the think segment, never supplied
/// separately, so that a value always round-trips through its text form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    mode: ModeId,
    think: String,
    answer: String,
    grounding_spans: Vec<GroundingSpan>,
}

impl ParsedResponse {
    /// Fails with [`FormatError::TagsOutOfOrder`] if either segment contains
    /// a tag literal.
    pub fn new(
        mode: ModeId,
        think: impl Into<String>,
        answer: impl Into<String>,
    ) -> Result<Self, FormatError> {
        let think = think.into();
        let answer = answer.into();
        if contains_tag_literal(&think) || contains_tag_literal(&answer) {
            return Err(FormatError::TagsOutOfOrder);
        }
        let grounding_spans = match mode {
            ModeId::Grd => extract_grounding_spans(&think),
            ModeId::Txt => Vec::new(),
        };
        Ok(Self {
            mode,
            think,
            answer,
            grounding_spans,
        })
    }

    pub fn mode(&self) -> ModeId {
        self.mode
    }

    pub fn think(&self) -> &str {
        &self.think
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }

    pub fn grounding_spans(&self) -> &[GroundingSpan] {
        &self.grounding_spans
    }

    /// Same think and answer under the other prefix.
    pub fn with_mode(&self, mode: ModeId) -> Self {
        Self::new(mode, self.think.clone(), self.answer.clone())
            .expect("segments were already validated")
    }
}

fn contains_tag_literal(s: &str) -> bool {
    TAG_LITERALS.iter().any(|t| s.contains(t))
}

fn span_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"([A-Za-z0-9_]+)\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\]")
            .expect("static regex")
    })
}

/// Extracts every well-formed `label[i,i,i,i]` span. Malformed spans, including
/// coordinates that overflow `u32`, are left as plain text.
pub fn extract_grounding_spans(think: &str) -> Vec<GroundingSpan> {
    span_regex()
        .captures_iter(think)
        .filter_map(|caps| {
            let mut bbox = [0u32; 4];
            for (slot, i) in bbox.iter_mut().zip(2..6) {
                *slot = caps[i].parse().ok()?;
            }
            Some(GroundingSpan {
                label: caps[1].to_string(),
                bbox,
            })
        })
        .collect()
}

pub fn serialize(resp: &ParsedResponse) -> String {
    format!(
        "{} {THINK_OPEN}{}{THINK_CLOSE} {ANSWER_OPEN}{}{ANSWER_CLOSE}",
        resp.mode.prefix(),
        resp.think,
        resp.answer
    )
}

/// Parses a response, reporting the first structural rule it violates.
///
/// Whitespace between tags is free-form; segment contents are kept verbatim.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, FormatError> {
    let start = raw.len() - raw.trim_start().len();
    let body = &raw[start..];
    let mode = ModeId::ALL
        .into_iter()
        .find(|m| body.starts_with(m.prefix()))
        .ok_or(FormatError::MissingModePrefix)?;
    let rest_offset = start + mode.prefix().len();
    let rest = &raw[rest_offset..];

    let find_unique = |tag: &str| -> Result<Option<usize>, FormatError> {
        let mut hits = rest.match_indices(tag).map(|(i, _)| i);
        let first = hits.next();
        if hits.next().is_some() {
            return Err(FormatError::TagsOutOfOrder);
        }
        Ok(first)
    };
    let think_open = find_unique(THINK_OPEN)?;
    let think_close = find_unique(THINK_CLOSE)?;
    let (Some(think_open), Some(think_close)) = (think_open, think_close) else {
        return Err(FormatError::MissingThinkTags);
    };
    let answer_open = find_unique(ANSWER_OPEN)?;
    let answer_close = find_unique(ANSWER_CLOSE)?;
    let (Some(answer_open), Some(answer_close)) = (answer_open, answer_close) else {
        return Err(FormatError::MissingAnswerTags);
    };

    let think_start = think_open + THINK_OPEN.len();
    let answer_start = answer_open + ANSWER_OPEN.len();
    if !(think_start <= think_close
        && think_close + THINK_CLOSE.len() <= answer_open
        && answer_start <= answer_close)
    {
        return Err(FormatError::TagsOutOfOrder);
    }

    let gaps = [
        (0, think_open),
        (think_close + THINK_CLOSE.len(), answer_open),
        (answer_close + ANSWER_CLOSE.len(), rest.len()),
    ];
    for (from, to) in gaps {
        let gap = &rest[from..to];
        if let Some(pos) = gap.find(|c: char| !c.is_whitespace()) {
            return Err(FormatError::UnexpectedText {
                offset: rest_offset + from + pos,
            });
        }
    }

    ParsedResponse::new(
        mode,
        &rest[think_start..think_close],
        &rest[answer_start..answer_close],
    )
}

/// 1 if the response parses, 0 otherwise.
pub fn format_reward(raw: &str) -> f64 {
    if parse_response(raw).is_ok() {
        1.0
    } else {
        0.0
    }
}
