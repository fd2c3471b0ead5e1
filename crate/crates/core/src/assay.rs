//! Counting-assay construction: motifs, prompt bundles, jittered target
//! sampling, and the ladder parameter block.
//!
//! Prompt text is deterministic down to the byte for a given motif and count:
//! Unix newlines only, no trailing newline, and the item sequence is the item
//! display joined by the delimiter. Everything downstream (trial logs, replay,
//! the determinism guarantees of simulate runs) leans on that.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Instruction block sent as the system message for counting prompts.
pub const COUNTING_SYSTEM_TEXT: &str =
    "You count items exactly. Return only one integer with no words,\npunctuation, or explanation.";

/// Which assay family a prompt bundle belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssayKind {
    Counting,
    Nested,
    DualTask,
    AgentOp,
}

/// The repeated item and separator that make up a counting sequence.
///
/// `item_display` is what actually appears in the sequence; it defaults to
/// `item_label`, which is what the question text names. They only diverge if a
/// caller explicitly wants the question to name the items differently from how
/// they are rendered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub item_label: String,
    pub delimiter: String,
    pub item_display: String,
}

impl Motif {
    pub fn new(item_label: impl Into<String>, delimiter: impl Into<String>) -> Self {
        let item_label = item_label.into();
        let item_display = item_label.clone();
        Motif { item_label, delimiter: delimiter.into(), item_display }
    }

    pub fn with_display(mut self, display: impl Into<String>) -> Self {
        self.item_display = display.into();
        self
    }

    /// The default motif: item "a", comma-space delimiter.
    pub fn baseline() -> Self {
        Motif::new("a", ", ")
    }

    /// Renders `count` items joined by the delimiter.
    pub fn render_sequence(&self, count: u64) -> String {
        let mut out = String::with_capacity(
            self.item_display.len() * count as usize
                + self.delimiter.len() * count.saturating_sub(1) as usize,
        );
        for i in 0..count {
            if i > 0 {
                out.push_str(&self.delimiter);
            }
            out.push_str(&self.item_display);
        }
        out
    }
}

/// Perturbation class labels for the motif robustness suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationClass {
    Baseline,
    CharacterSubstitution,
    MultiCharacterToken,
    GreekCharacter,
    ChineseCharacter,
    DelimiterSubstitution,
}

/// The motif robustness suite: the baseline plus perturbations of the item
/// token (single substitute characters, a multi-character token, Greek and
/// Chinese item names) and of the delimiter (space, pipe, section sign).
pub fn motif_suite() -> Vec<(Motif, PerturbationClass)> {
    use PerturbationClass::*;
    vec![
        (Motif::new("a", ", "), Baseline),
        (Motif::new("b", ", "), CharacterSubstitution),
        (Motif::new("x", ", "), CharacterSubstitution),
        (Motif::new("aa", ", "), MultiCharacterToken),
        (Motif::new("α", ", "), GreekCharacter),
        (Motif::new("β", ", "), GreekCharacter),
        (Motif::new("汉", ", "), ChineseCharacter),
        (Motif::new("中", ", "), ChineseCharacter),
        (Motif::new("a", " "), DelimiterSubstitution),
        (Motif::new("a", " | "), DelimiterSubstitution),
        (Motif::new("a", " § "), DelimiterSubstitution),
    ]
}

/// A fully rendered prompt plus the metadata needed to score and replay it.
///
/// `trial_key` is a replay nonce derived from (run seed, tier, trial) by
/// whoever builds the bundle; synthetic oracles key their noise streams off it
/// so a batch replays identically at any parallelism. `tier_center` carries
/// the ladder tier's center length for white-box adversary oracles; remote
/// endpoints never see either field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    /// Single-message form for endpoints without a system role:
    /// system text, blank line, user text.
    pub inline_fallback_text: String,
    pub target_count: u64,
    pub motif: Motif,
    pub assay_kind: AssayKind,
    pub trial_key: u64,
    pub tier_center: Option<u64>,
}

impl PromptBundle {
    pub fn with_trial_key(mut self, key: u64) -> Self {
        self.trial_key = key;
        self
    }

    pub fn with_tier_center(mut self, center: u64) -> Self {
        self.tier_center = Some(center);
        self
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AssayError {
    #[error("target count must be at least 1")]
    ZeroCount,
    #[error("motif item label must not be empty")]
    EmptyItem,
    #[error("motif delimiter must not be empty")]
    EmptyDelimiter,
}

/// Builds the counting prompt for `count` occurrences of the motif item.
pub fn build_counting_prompt(motif: &Motif, count: u64) -> Result<PromptBundle, AssayError> {
    if count == 0 {
        return Err(AssayError::ZeroCount);
    }
    if motif.item_label.is_empty() || motif.item_display.is_empty() {
        return Err(AssayError::EmptyItem);
    }
    if motif.delimiter.is_empty() {
        return Err(AssayError::EmptyDelimiter);
    }
    let sequence = motif.render_sequence(count);
    let user_text = format!(
        "How many occurrences of \"{}\" are in this sequence?\n\n{}",
        motif.item_label, sequence
    );
    let inline_fallback_text = format!("{COUNTING_SYSTEM_TEXT}\n\n{user_text}");
    Ok(PromptBundle {
        system_text: COUNTING_SYSTEM_TEXT.to_string(),
        user_text,
        inline_fallback_text,
        target_count: count,
        motif: motif.clone(),
        assay_kind: AssayKind::Counting,
        trial_key: 0,
        tier_center: None,
    })
}

/// Rounds half-up to the nearest integer, clamped to at least 1.
pub fn round_half_up(x: f64) -> u64 {
    let r = (x + 0.5).floor();
    if r < 1.0 {
        1
    } else {
        r as u64
    }
}

/// Draws `k` target counts uniformly from `[center·(1-jitter), center·(1+jitter)]`,
/// rounded half-up, in draw order from the given stream.
pub fn sample_targets(center: u64, jitter: f64, k: u32, rng: &mut impl Rng) -> Vec<u64> {
    let c = center as f64;
    let (lo, hi) = (c * (1.0 - jitter), c * (1.0 + jitter));
    (0..k)
        .map(|_| {
            if jitter == 0.0 {
                center.max(1)
            } else {
                round_half_up(rng.random_range(lo..=hi))
            }
        })
        .collect()
}

/// Parameters for one adaptive ladder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderParams {
    /// Center length of the first tier.
    pub base_length: u64,
    /// Half-width of the relative jitter window around each tier center.
    pub jitter: f64,
    /// Trials per tier.
    pub trials_per_tier: u32,
    /// A tier is stable iff its normalized mean absolute error is strictly
    /// below this.
    pub stability_threshold: f64,
    /// Refinement stops once the bracket width is at most
    /// `max(1, refine_step_fraction · stable_lower)`.
    pub refine_step_fraction: f64,
    /// Largest tier center the ladder will ever evaluate.
    pub max_length: u64,
    /// Run seed; every random stream in the run derives from it.
    pub seed: u64,
}

impl Default for LadderParams {
    fn default() -> Self {
        LadderParams {
            base_length: 32,
            jitter: 0.2,
            trials_per_tier: 16,
            stability_threshold: 0.05,
            refine_step_fraction: 0.1,
            max_length: 20_000,
            seed: 7,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("base_length must be at least 1")]
    BaseLength,
    #[error("jitter must lie in [0, 1), got {0}")]
    Jitter(f64),
    #[error("trials_per_tier must be at least 1")]
    Trials,
    #[error("stability_threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("refine_step_fraction must lie in (0, 1], got {0}")]
    StepFraction(f64),
    #[error("max_length {max} must be at least base_length {base}")]
    MaxLength { max: u64, base: u64 },
}

impl LadderParams {
    /// Structural validation. The statistical guard against guess-passable
    /// configurations lives in the stats module and is run separately.
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.base_length < 1 {
            return Err(ParamError::BaseLength);
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(ParamError::Jitter(self.jitter));
        }
        if self.trials_per_tier < 1 {
            return Err(ParamError::Trials);
        }
        if self.stability_threshold <= 0.0 {
            return Err(ParamError::Threshold(self.stability_threshold));
        }
        if !(self.refine_step_fraction > 0.0 && self.refine_step_fraction <= 1.0) {
            return Err(ParamError::StepFraction(self.refine_step_fraction));
        }
        if self.max_length < self.base_length {
            return Err(ParamError::MaxLength { max: self.max_length, base: self.base_length });
        }
        Ok(())
    }
}
