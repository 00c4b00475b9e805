//! Rule-based rewards. The same function scores every rollout regardless of
//! which mode produced it.

use serde::{Deserialize, Serialize};

use crate::format::parse_response;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_component: f64,
    pub accuracy_component: f64,
    pub total: f64,
}

/// Lowercases, trims, strips trailing punctuation and drops trailing
/// fractional zeros from decimal numerals (`"4.50"` becomes `"4.5"`).
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.trim().to_lowercase();
    let stripped = lowered
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim_end();
    canonical_numeral(stripped).unwrap_or_else(|| stripped.to_string())
}

fn canonical_numeral(s: &str) -> Option<String> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match digits.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (digits, None),
    };
    let all_digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int) || !frac.is_none_or(all_digits) {
        return None;
    }
    let frac = frac.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let sign = if s.starts_with('-') { "-" } else { "" };
    Some(if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    })
}

/// 1 iff the normalized prediction equals the normalized gold answer. An
/// empty gold answer never matches.
pub fn accuracy_reward(predicted: &str, gold: &str) -> f64 {
    let gold = normalize_answer(gold);
    if !gold.is_empty() && normalize_answer(predicted) == gold {
        1.0
    } else {
        0.0
    }
}

/// `total = accuracy * format + w_fmt * format`; accuracy is only scored
/// when the response is well formed.
pub fn total_reward(raw_response: &str, gold: &str, w_fmt: f64) -> RewardBreakdown {
    debug_assert!(w_fmt >= 0.0, "format weight must be non-negative");
    match parse_response(raw_response) {
        Ok(parsed) => {
            let accuracy = accuracy_reward(parsed.answer(), gold);
            RewardBreakdown {
                format_component: 1.0,
                accuracy_component: accuracy,
                total: accuracy + w_fmt,
            }
        }
        Err(_) => RewardBreakdown {
            format_component: 0.0,
            accuracy_component: 0.0,
            total: 0.0,
        },
    }
}
