//! Answer extraction and failure auditing.
//!
//! Extraction is deliberately permissive (the last valid integer anywhere in
//! the reply) while the strict-format check is deliberately rigid (one
//! integer, nothing else). The audit taxonomy classifies every reply into
//! exactly one category so that downstream reports can separate "wrong
//! number" from "did not produce a number" and attribute the latter to a
//! concrete failure shape.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::assay::Motif;
use crate::gateway::FinishReason;

/// One reply, fully analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub parsed: Option<i64>,
    pub strict_single_integer: bool,
    pub audit_category: AuditCategory,
}

/// Failure-shape taxonomy. Every reply maps to exactly one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCategory {
    /// Strictly formatted single integer.
    Clean,
    /// Enumerated counting language with a final integer.
    StepByStep,
    /// Empty or whitespace-only reply.
    BlankWhitespace,
    /// Output budget exhausted before any integer appeared.
    TokenLimitExhaustion,
    /// Reply dominated by the prompt's repeated motif.
    PromptEcho,
    /// An integer accompanied by other prose.
    ExtraProse,
    /// Fenced code or markdown markup.
    CodeMarkdown,
    /// Hidden-reasoning markup tags.
    ReasoningMarkup,
    /// No integer anywhere in a non-blank reply.
    NoParseableNumber,
    /// An integer with only adjacent symbols, e.g. `500$`.
    StrayPunctuation,
}

impl AuditCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditCategory::Clean => "clean",
            AuditCategory::StepByStep => "step_by_step",
            AuditCategory::BlankWhitespace => "blank_whitespace",
            AuditCategory::TokenLimitExhaustion => "token_limit_exhaustion",
            AuditCategory::PromptEcho => "prompt_echo",
            AuditCategory::ExtraProse => "extra_prose",
            AuditCategory::CodeMarkdown => "code_markdown",
            AuditCategory::ReasoningMarkup => "reasoning_markup",
            AuditCategory::NoParseableNumber => "no_parseable_number",
            AuditCategory::StrayPunctuation => "stray_punctuation",
        }
    }
}

impl std::fmt::Display for AuditCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

static STRICT_INTEGER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[+-]?[0-9]+\s*$").expect("static regex"));

/// True iff the reply is a single optionally-signed integer with nothing but
/// surrounding whitespace.
pub fn check_strict_format(text: &str) -> bool {
    STRICT_INTEGER.is_match(text)
}

/// A maximal ASCII digit run, possibly spliced across single commas
/// ("1,000" is one run), with byte bounds into the original text.
struct DigitRun {
    start: usize,
    end: usize,
    digits: String,
}

fn digit_runs(bytes: &[u8]) -> Vec<DigitRun> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        let mut digits = String::new();
        loop {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                digits.push(bytes[i] as char);
                i += 1;
            }
            // Splice "1,000": a single comma with digits on both sides.
            if i + 1 < bytes.len() && bytes[i] == b',' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                continue;
            }
            break;
        }
        runs.push(DigitRun { start, end: i, digits });
    }
    runs
}

/// Extracts the last valid integer in the reply: the rightmost maximal digit
/// run (splicing thousands separators) that is not embedded in a longer
/// alphanumeric token, with an optional directly preceding sign. Runs that
/// overflow `i64` are skipped.
pub fn extract_last_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    for run in digit_runs(bytes).into_iter().rev() {
        // A run flanked by a letter belongs to a token like "R003" or "4th".
        let before = run.start.checked_sub(1).map(|j| bytes[j]);
        let after = bytes.get(run.end).copied();
        if before.is_some_and(|b| b.is_ascii_alphabetic())
            || after.is_some_and(|b| b.is_ascii_alphabetic())
        {
            continue;
        }
        let negative = match before {
            Some(b @ (b'-' | b'+')) => {
                // The sign only binds if it is not itself trailing a word or
                // number ("3-4" is a range, not a signed 4).
                let before_sign = run.start.checked_sub(2).map(|j| bytes[j]);
                let binds = !before_sign.is_some_and(|c| c.is_ascii_alphanumeric());
                binds && b == b'-'
            }
            _ => false,
        };
        if let Ok(mag) = run.digits.parse::<i64>() {
            return Some(if negative { -mag } else { mag });
        }
        // Overflowed i64: not a valid integer, keep scanning left.
    }
    None
}

/// Fraction of the reply covered by repeated-motif runs (two or more items
/// joined by the delimiter, plus one trailing delimiter if present).
fn motif_echo_coverage(text: &str, motif: &Motif) -> f64 {
    if text.is_empty() || motif.item_display.is_empty() || motif.delimiter.is_empty() {
        return 0.0;
    }
    let item = motif.item_display.as_str();
    let delim = motif.delimiter.as_str();
    let bytes = text.as_bytes();
    let mut covered = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        if !text[i..].starts_with(item) {
            // Step over the whole character so the cursor stays on a UTF-8
            // boundary.
            i += text[i..].chars().next().map_or(1, char::len_utf8);
            continue;
        }
        let run_start = i;
        let mut j = i + item.len();
        let mut items = 1usize;
        while text[j..].starts_with(delim) && text[j + delim.len()..].starts_with(item) {
            j += delim.len() + item.len();
            items += 1;
        }
        if items >= 2 {
            if text[j..].starts_with(delim) {
                j += delim.len();
            }
            covered += j - run_start;
        }
        i = j.max(i + 1);
    }
    covered as f64 / text.len() as f64
}

const ECHO_COVERAGE_THRESHOLD: f64 = 0.8;

const STEP_MARKERS: &[&str] = &[
    "let me count",
    "i'll count",
    "i will count",
    "counting",
    "count by",
    "count each",
    "count them",
    "step by step",
    "step-by-step",
    "one by one",
    "groups of",
    "running total",
    "row 1",
];

const REASONING_TAGS: &[&str] = &["<think>", "</think>", "<reasoning>", "</reasoning>"];

fn has_step_language(lower: &str) -> bool {
    STEP_MARKERS.iter().any(|m| lower.contains(m))
}

/// True when the reply is a lone integer decorated only with symbols
/// (`500$`, `**42**`): exactly one digit run, no letters, and at least one
/// non-whitespace character outside the integer itself.
fn is_stray_punctuation(text: &str) -> bool {
    let bytes = text.as_bytes();
    if digit_runs(bytes).len() != 1 {
        return false;
    }
    if bytes.iter().any(|b| b.is_ascii_alphabetic()) || text.chars().any(|c| c.is_alphabetic()) {
        return false;
    }
    // Strict format would already have claimed a bare integer, so any
    // remaining non-digit, non-sign, non-whitespace character is stray.
    text.chars().any(|c| !c.is_ascii_digit() && !c.is_whitespace() && c != '+' && c != '-')
}

/// Assigns the audit category for one reply.
///
/// The cascade is ordered: a strict reply is clean no matter what else it
/// resembles; blank and budget-exhausted replies are claimed before content
/// checks; echo, code fences and reasoning tags are recognized whether or not
/// an integer is present; the remaining parsed replies split into
/// step-by-step counting, stray punctuation, and general extra prose.
///
/// The motif is needed for echo detection; pass the motif the prompt was
/// built with.
pub fn categorize(
    text: &str,
    parsed: Option<i64>,
    finish_reason: FinishReason,
    motif: &Motif,
) -> AuditCategory {
    if check_strict_format(text) {
        return AuditCategory::Clean;
    }
    if text.trim().is_empty() {
        return AuditCategory::BlankWhitespace;
    }
    if finish_reason == FinishReason::LengthCap && parsed.is_none() {
        return AuditCategory::TokenLimitExhaustion;
    }
    if motif_echo_coverage(text, motif) >= ECHO_COVERAGE_THRESHOLD {
        return AuditCategory::PromptEcho;
    }
    if text.contains("```") {
        return AuditCategory::CodeMarkdown;
    }
    let lower = text.to_lowercase();
    if REASONING_TAGS.iter().any(|t| lower.contains(t)) {
        return AuditCategory::ReasoningMarkup;
    }
    if parsed.is_some() {
        if has_step_language(&lower) {
            return AuditCategory::StepByStep;
        }
        if is_stray_punctuation(text) {
            return AuditCategory::StrayPunctuation;
        }
        return AuditCategory::ExtraProse;
    }
    AuditCategory::NoParseableNumber
}

/// Runs extraction, the strict check, and categorization in one pass.
pub fn analyze(text: &str, finish_reason: FinishReason, motif: &Motif) -> ParseOutcome {
    let parsed = extract_last_integer(text);
    let strict = check_strict_format(text);
    ParseOutcome {
        parsed,
        strict_single_integer: strict,
        audit_category: categorize(text, parsed, finish_reason, motif),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(text: &str) -> AuditCategory {
        categorize(text, extract_last_integer(text), FinishReason::Complete, &Motif::baseline())
    }

    #[test]
    fn extracts_last_integer_from_prose() {
        assert_eq!(extract_last_integer("The answer is 42."), Some(42));
        assert_eq!(extract_last_integer("I see 12 then 99 then 7"), Some(7));
        assert_eq!(extract_last_integer(""), None);
        assert_eq!(extract_last_integer("no numbers here"), None);
    }

    #[test]
    fn adjacent_symbols_do_not_block_extraction() {
        assert_eq!(extract_last_integer("500$"), Some(500));
        assert_eq!(extract_last_integer("**42**"), Some(42));
        assert_eq!(extract_last_integer("42."), Some(42));
    }

    #[test]
    fn runs_inside_alphanumeric_tokens_are_ignored() {
        assert_eq!(extract_last_integer("R003"), None);
        assert_eq!(extract_last_integer("record R003 holds 9"), Some(9));
        assert_eq!(extract_last_integer("4th"), None);
        assert_eq!(extract_last_integer("abc123def"), None);
    }

    #[test]
    fn thousands_separators_are_spliced() {
        assert_eq!(extract_last_integer("1,000"), Some(1000));
        assert_eq!(extract_last_integer("1,000,000"), Some(1_000_000));
        // The splice rule is purely local: any digit,digit pair merges.
        assert_eq!(extract_last_integer("12,34"), Some(1234));
        // A space after the comma keeps the runs separate.
        assert_eq!(extract_last_integer("1, 2, 3"), Some(3));
    }

    #[test]
    fn sign_binds_only_after_non_word_context() {
        assert_eq!(extract_last_integer("-1"), Some(-1));
        assert_eq!(extract_last_integer("(-5)"), Some(-5));
        assert_eq!(extract_last_integer("3-4"), Some(4));
        assert_eq!(extract_last_integer("+7"), Some(7));
        assert_eq!(extract_last_integer("x-5"), Some(5));
    }

    #[test]
    fn overflowing_runs_are_skipped() {
        assert_eq!(extract_last_integer("7 then 99999999999999999999999999"), Some(7));
        assert_eq!(extract_last_integer("99999999999999999999999999"), None);
    }

    #[test]
    fn non_ascii_numerals_are_unparsable() {
        assert_eq!(extract_last_integer("٤٢"), None);
        assert_eq!(extract_last_integer("四十二"), None);
        assert_eq!(cat("٤٢"), AuditCategory::NoParseableNumber);
    }

    #[test]
    fn strict_format_matches_signed_whitespace_padded_integers() {
        assert!(check_strict_format("42"));
        assert!(check_strict_format(" 42 "));
        assert!(check_strict_format("\n42\n"));
        assert!(check_strict_format("-1"));
        assert!(check_strict_format("+7"));
        assert!(!check_strict_format("42."));
        assert!(!check_strict_format("42 43"));
        assert!(!check_strict_format(""));
        assert!(!check_strict_format("answer: 42"));
    }

    #[test]
    fn clean_iff_strict() {
        for text in ["42", " 42 ", "-1", "42.", "the answer is 42", "", "500$"] {
            let o = analyze(text, FinishReason::Complete, &Motif::baseline());
            assert_eq!(
                o.audit_category == AuditCategory::Clean,
                o.strict_single_integer,
                "text {text:?}"
            );
        }
    }

    #[test]
    fn blank_and_whitespace_replies() {
        assert_eq!(cat(""), AuditCategory::BlankWhitespace);
        assert_eq!(cat("  \n\t"), AuditCategory::BlankWhitespace);
    }

    #[test]
    fn token_limit_requires_cap_and_no_integer() {
        let m = Motif::baseline();
        assert_eq!(
            categorize("I will now carefully cou", None, FinishReason::LengthCap, &m),
            AuditCategory::TokenLimitExhaustion
        );
        // With an integer present, a capped reply is still an answer.
        assert_eq!(
            categorize("partial work 12", Some(12), FinishReason::LengthCap, &m),
            AuditCategory::ExtraProse
        );
    }

    #[test]
    fn prompt_echo_dominated_reply() {
        let echoed = "a, ".repeat(40) + "a";
        assert_eq!(cat(&echoed), AuditCategory::PromptEcho);
        let echoed_trailing = format!("{}...", "a, ".repeat(18));
        assert_eq!(cat(&echoed_trailing), AuditCategory::PromptEcho);
    }

    #[test]
    fn echo_coverage_respects_motif() {
        let text = "b | b | b | b | b | b | b | b";
        let pipe = Motif::new("b", " | ");
        assert!(motif_echo_coverage(text, &pipe) > 0.99);
        assert_eq!(motif_echo_coverage(text, &Motif::baseline()), 0.0);
    }

    #[test]
    fn code_fences_and_reasoning_tags() {
        assert_eq!(cat("```python\nprint(30)\n```"), AuditCategory::CodeMarkdown);
        assert_eq!(cat("</think> there are 2"), AuditCategory::ReasoningMarkup);
        // Reasoning markup wins over step language inside the trace.
        assert_eq!(
            cat("</think> let me count step by step: 2"),
            AuditCategory::ReasoningMarkup
        );
    }

    #[test]
    fn step_by_step_needs_counting_language_and_an_integer() {
        assert_eq!(
            cat("I'll count each \"a\" in the sequence: a, a, a, a, a, a... 25"),
            AuditCategory::StepByStep
        );
        assert_eq!(cat("Let me count by groups of 10: total 415"), AuditCategory::StepByStep);
        // Counting language without any integer is not an answer.
        assert_eq!(cat("let me count them one by one"), AuditCategory::NoParseableNumber);
    }

    #[test]
    fn stray_punctuation_vs_extra_prose() {
        assert_eq!(cat("500$"), AuditCategory::StrayPunctuation);
        assert_eq!(cat("**42**"), AuditCategory::StrayPunctuation);
        assert_eq!(cat("32 Be sure to dominate your code."), AuditCategory::ExtraProse);
        assert_eq!(cat("The total comes to 313."), AuditCategory::ExtraProse);
        // Two integers with no letters: not a lone decorated integer.
        assert_eq!(cat("42 42"), AuditCategory::ExtraProse);
    }

    #[test]
    fn every_reply_gets_exactly_one_category() {
        // Totality spot-check over awkward inputs.
        for text in [
            "", " ", "a", "a, a", "-", "+", "--", "()", "¿?", "12,", ",12", "a1", "1a",
            "1,a", "🤖", "1 2 3", "-1-", "   7   ", "£", "£7", "7£",
        ] {
            let _ = cat(text);
        }
    }
}
