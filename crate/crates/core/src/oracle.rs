//! Synthetic models with known ground truth.
//!
//! Each oracle implements [`SyntheticResponder`] and answers counting
//! prompts from the bundle's `target_count`, which is the simulation's
//! ground-truth channel: a real model would have to count the sequence, an
//! oracle simply knows the answer and degrades it according to its
//! configured failure profile. The one deliberate exception is
//! [`OptimalGuesser`], which is forbidden from touching `target_count` and
//! reads only the publicly announced `tier_center`, making it a white-box
//! adversary for the statistical gate.
//!
//! Oracle randomness is drawn from streams keyed by
//! `(seed, Oracle, trial_key, target)`, so a trial replays identically
//! regardless of batch ordering or parallelism.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assay::{round_half_up, Motif, PromptBundle};
use crate::gateway::{FinishReason, SyntheticReply, SyntheticResponder};
use crate::seeding::{rng_for, Domain};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("attractor set must not be empty")]
    NoAttractors,
    #[error("attractor weights must be positive, got {0}")]
    BadWeight(f64),
    #[error("guesser jitter must lie in [0, 1), got {0}")]
    BadAlpha(f64),
}

/// How a collapsed answer is rendered as text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    /// Bare integer.
    #[default]
    Plain,
    /// Integer wrapped in a sentence of commentary.
    Prose,
    /// No integer at all; the reply parrots the prompt's motif.
    Echo,
    /// Empty reply.
    Blank,
    /// Integer inside a fenced code block.
    CodeFence,
}

fn render(style: RenderStyle, answer: u64, motif: &Motif) -> SyntheticReply {
    match style {
        RenderStyle::Plain => SyntheticReply::complete(answer.to_string()),
        RenderStyle::Prose => SyntheticReply::complete(format!(
            "After careful review of the sequence, I count {answer} items in total."
        )),
        RenderStyle::Echo => {
            let run = answer.clamp(2, 40);
            SyntheticReply::complete(format!("{}{}", motif.render_sequence(run), motif.delimiter))
        }
        RenderStyle::Blank => SyntheticReply::complete(String::new()),
        RenderStyle::CodeFence => {
            SyntheticReply::complete(format!("```\ncount = {answer}\n```"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub value: u64,
    pub weight: f64,
}

/// Failure profile of the attractor-collapse oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Largest target answered exactly.
    pub true_capacity: u64,
    /// Width of the band above capacity where answers drift by a small
    /// random offset instead of collapsing.
    #[serde(default)]
    pub drift_band: u64,
    /// Weighted values the oracle falls onto beyond the drift band.
    pub attractors: Vec<Attractor>,
    #[serde(default)]
    pub collapse_style: RenderStyle,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            true_capacity: 300,
            drift_band: 50,
            attractors: vec![
                Attractor { value: 500, weight: 0.7 },
                Attractor { value: 1000, weight: 0.3 },
            ],
            collapse_style: RenderStyle::Plain,
        }
    }
}

/// Three-regime counter: exact up to capacity, small drift inside the band
/// above it, collapse onto a weighted attractor beyond that.
///
/// Exact and drifting answers are always rendered as bare integers; the
/// configured render style applies only to collapsed answers, mirroring the
/// way formatting discipline and accuracy tend to fail together.
#[derive(Debug, Clone)]
pub struct AttractorOracle {
    config: OracleConfig,
    seed: u64,
}

impl AttractorOracle {
    pub fn new(config: OracleConfig, seed: u64) -> Result<Self, OracleError> {
        if config.attractors.is_empty() {
            return Err(OracleError::NoAttractors);
        }
        if let Some(bad) = config.attractors.iter().find(|a| !(a.weight > 0.0)) {
            return Err(OracleError::BadWeight(bad.weight));
        }
        Ok(AttractorOracle { config, seed })
    }

    fn answer(&self, target: u64, trial_key: u64) -> (u64, bool) {
        if target <= self.config.true_capacity {
            return (target, false);
        }
        let mut rng = rng_for(self.seed, Domain::Oracle, trial_key, target);
        if target <= self.config.true_capacity + self.config.drift_band {
            let delta = rng.random_range(1..=3u64);
            let drifted = if rng.random::<bool>() {
                target + delta
            } else {
                target.saturating_sub(delta).max(1)
            };
            return (drifted, false);
        }
        (weighted_pick(&self.config.attractors, &mut rng), true)
    }
}

fn weighted_pick(attractors: &[Attractor], rng: &mut ChaCha8Rng) -> u64 {
    let total: f64 = attractors.iter().map(|a| a.weight).sum();
    let mut draw = rng.random::<f64>() * total;
    for a in attractors {
        if draw < a.weight {
            return a.value;
        }
        draw -= a.weight;
    }
    attractors.last().expect("non-empty checked at construction").value
}

impl SyntheticResponder for AttractorOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let (answer, collapsed) = self.answer(bundle.target_count, bundle.trial_key);
        if collapsed {
            render(self.config.collapse_style, answer, &bundle.motif)
        } else {
            SyntheticReply::complete(answer.to_string())
        }
    }
}

/// Counts correctly up to its capacity and then reports the capacity
/// itself: `min(target, capacity)`. The hardest case for boundary
/// refinement, since its error grows only as fast as the overshoot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatingOracle {
    pub true_capacity: u64,
}

impl SyntheticResponder for SaturatingOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        SyntheticReply::complete(bundle.target_count.min(self.true_capacity).to_string())
    }
}

/// White-box adversary that cannot count: it reads the announced tier
/// center and plays the error-minimizing fixed guess
/// `round(center · sqrt(1 - α²))`. It never reads `target_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalGuesser {
    pub alpha: f64,
}

impl OptimalGuesser {
    pub fn new(alpha: f64) -> Result<Self, OracleError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(OracleError::BadAlpha(alpha));
        }
        Ok(OptimalGuesser { alpha })
    }
}

impl SyntheticResponder for OptimalGuesser {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let guess = match bundle.tier_center {
            Some(center) => {
                round_half_up(center as f64 * (1.0 - self.alpha * self.alpha).sqrt())
            }
            // No public tier information to exploit.
            None => 0,
        };
        SyntheticReply::complete(guess.to_string())
    }
}

/// Replays canned replies for specific targets; targets without a script
/// are answered exactly. Used to drive fixed failure transcripts through
/// the full pipeline.
pub struct ScriptedOracle {
    replies: HashMap<u64, SyntheticReply>,
}

impl ScriptedOracle {
    pub fn new(replies: impl IntoIterator<Item = (u64, SyntheticReply)>) -> Self {
        ScriptedOracle { replies: replies.into_iter().collect() }
    }
}

impl SyntheticResponder for ScriptedOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        match self.replies.get(&bundle.target_count) {
            Some(reply) => reply.clone(),
            None => SyntheticReply::complete(bundle.target_count.to_string()),
        }
    }
}

/// Never finishes: every reply is integer-free filler truncated at the cap,
/// exercising the budget-doubling ladder end to end.
#[derive(Debug, Clone, Copy, Default)]
pub struct CapExhaustedOracle;

impl SyntheticResponder for CapExhaustedOracle {
    fn respond(&self, _bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let filler =
            "the items keep going and the sequence continues without a clear end ".repeat(8);
        SyntheticReply { text: filler, finish_reason: FinishReason::LengthCap }
    }
}

fn d_guesser_alpha() -> f64 {
    0.2
}

/// Declarative oracle selection, loadable from TOML config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Attractor(OracleConfig),
    Saturating {
        true_capacity: u64,
    },
    Guesser {
        #[serde(default = "d_guesser_alpha")]
        alpha: f64,
    },
    CapExhausted,
}

pub fn build_oracle(spec: &OracleSpec, seed: u64) -> Result<Arc<dyn SyntheticResponder>, OracleError> {
    Ok(match spec {
        OracleSpec::Attractor(config) => Arc::new(AttractorOracle::new(config.clone(), seed)?),
        OracleSpec::Saturating { true_capacity } => {
            Arc::new(SaturatingOracle { true_capacity: *true_capacity })
        }
        OracleSpec::Guesser { alpha } => Arc::new(OptimalGuesser::new(*alpha)?),
        OracleSpec::CapExhausted => Arc::new(CapExhaustedOracle),
    })
}
