//! Adaptive capacity ladder.
//!
//! A run walks tiers of increasing sequence length. Each tier draws K
//! jittered targets around its center L, queries the model once per target,
//! and scores the tier by normalized mean absolute error:
//! `nMAE = Σ|answer - target| / (K·L)`, with unparsable answers charged a
//! full L in the numerator. A tier is stable iff its nMAE is strictly below
//! the configured threshold.
//!
//! Phases: the start tier decides whether the model clears the floor at
//! all; doubling expands until the first unstable tier or the length cap;
//! bisection then shrinks the bracket until its width is at most
//! `max(1, stable_lower/10)`. The reported capacity is the final stable
//! lower bound. Runs that are stable at the length cap are censored and
//! carry `max_length + 1` as their upper sentinel; runs unstable at the
//! start tier report capacity zero.
//!
//! Every tier and trial is streamed to a [`TrialSink`] as it completes, and
//! a run can resume from persisted tier summaries: the decision path is
//! replayed from the checkpoint without re-querying, then evaluation picks
//! up where it stopped. Target draws come from streams keyed by
//! `(seed, Targets, tier_index, center)`, so a resumed or re-run ladder
//! sees identical targets.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::assay::{sample_targets, AssayKind, LadderParams, PromptBundle};
use crate::gateway::{FinishReason, Gateway, GatewayError};
use crate::parse::{analyze, AuditCategory};
use crate::seeding::{rng_for, Domain};
use crate::stats::validate_ladder_config;

/// Identity shared by every record a run produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunContext {
    pub run_id: String,
    pub model_id: String,
    /// RFC 3339. Derived from the seed in simulation mode so that replays
    /// are byte-identical; wall clock otherwise.
    pub timestamp: String,
}

impl RunContext {
    pub fn new(run_id: &str, model_id: &str, timestamp: &str) -> Self {
        RunContext {
            run_id: run_id.to_string(),
            model_id: model_id.to_string(),
            timestamp: timestamp.to_string(),
        }
    }

    /// Context whose identity is a pure function of its inputs.
    pub fn deterministic(label: &str, model_id: &str, seed: u64) -> Self {
        let ts = chrono::DateTime::from_timestamp((seed % 4_000_000_000) as i64, 0)
            .expect("seed-derived timestamp in range")
            .to_rfc3339();
        RunContext {
            run_id: format!("{label}-{seed:016x}"),
            model_id: model_id.to_string(),
            timestamp: ts,
        }
    }

    /// Context stamped with the current wall clock.
    pub fn wall_clock(label: &str, model_id: &str, seed: u64) -> Self {
        let now = chrono::Utc::now();
        RunContext {
            run_id: format!("{label}-{}-{seed:08x}", now.format("%Y%m%dT%H%M%S")),
            model_id: model_id.to_string(),
            timestamp: now.to_rfc3339(),
        }
    }
}

/// One model query, flattened for persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub run_id: String,
    pub model_id: String,
    pub timestamp: String,
    pub assay: AssayKind,
    pub motif_label: String,
    pub tier_index: u32,
    pub tier_center: u64,
    pub trial_index: u32,
    pub target: u64,
    pub response_text: String,
    pub parsed: Option<i64>,
    pub strict_format: bool,
    /// |parsed - target|; charged the full target when unparsable.
    pub abs_error: u64,
    pub audit_category: AuditCategory,
    pub finish_reason: FinishReason,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub attempts: u32,
    pub wall_time_ms: u64,
}

/// Tier summary: enough to replay the ladder's decision path on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierResult {
    pub tier_index: u32,
    pub center: u64,
    pub targets: Vec<u64>,
    pub nmae: f64,
    pub stable: bool,
    pub unparsable: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    /// Final stable lower bound; zero when the start tier already failed.
    pub capacity: u64,
    pub stable_lower: Option<u64>,
    /// Smallest center observed unstable. `max_length + 1` for censored
    /// runs (never observed unstable), `base_length` for below-minimum
    /// runs.
    pub unstable_upper: u64,
    pub below_minimum: bool,
    pub censored: bool,
    /// Input plus output tokens across every evaluated tier.
    pub total_tokens: u64,
    pub tiers: Vec<TierResult>,
}

/// Builds prompts for the ladder. The ladder owns `tier_center` and
/// `trial_key` on the returned bundle and overwrites them.
pub trait BundleSource: Sync {
    fn bundle(&self, target: u64, tier_index: u32, trial_index: u32) -> PromptBundle;
    fn assay(&self) -> AssayKind;
    fn motif_label(&self) -> String;
}

/// Receives records as they are produced; implementations append them to
/// durable storage so an interrupted run can resume.
pub trait TrialSink {
    fn record_trial(&mut self, trial: &TrialRecord) -> std::io::Result<()>;
    fn record_tier(&mut self, tier: &TierResult) -> std::io::Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl TrialSink for NullSink {
    fn record_trial(&mut self, _: &TrialRecord) -> std::io::Result<()> {
        Ok(())
    }
    fn record_tier(&mut self, _: &TierResult) -> std::io::Result<()> {
        Ok(())
    }
}

/// Collects records in memory; test and analysis helper.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub trials: Vec<TrialRecord>,
    pub tiers: Vec<TierResult>,
}

impl TrialSink for MemorySink {
    fn record_trial(&mut self, trial: &TrialRecord) -> std::io::Result<()> {
        self.trials.push(trial.clone());
        Ok(())
    }
    fn record_tier(&mut self, tier: &TierResult) -> std::io::Result<()> {
        self.tiers.push(tier.clone());
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LadderError {
    #[error("gateway closed mid-run")]
    Aborted,
    #[error(
        "checkpoint mismatch at tier {tier_index}: ladder expects center {expected}, \
         checkpoint has center {found}"
    )]
    ResumeMismatch { tier_index: u32, expected: u64, found: u64 },
    #[error("sink error: {0}")]
    Sink(#[from] std::io::Error),
    #[error("invalid ladder parameters: {0}")]
    Params(#[from] crate::assay::ParamError),
    #[error("ladder configuration rejected: {0}")]
    Config(#[from] crate::stats::ConfigRejection),
}

/// Bracket width at which refinement stops: the configured fraction of the
/// stable lower bound, but never below one.
pub fn width_limit(stable_lower: u64, refine_step_fraction: f64) -> u64 {
    ((stable_lower as f64 * refine_step_fraction) as u64).max(1)
}

fn trial_key(tier_index: u32, trial_index: u32) -> u64 {
    ((tier_index as u64) << 32) | trial_index as u64
}

/// Runs one tier: draws targets, queries the model in a batch, scores, and
/// streams records to the sink.
pub fn evaluate_tier(
    gateway: &Gateway,
    source: &dyn BundleSource,
    params: &LadderParams,
    ctx: &RunContext,
    sink: &mut dyn TrialSink,
    tier_index: u32,
    center: u64,
) -> Result<TierResult, LadderError> {
    let mut rng = rng_for(params.seed, Domain::Targets, tier_index as u64, center);
    let targets = sample_targets(center, params.jitter, params.trials_per_tier, &mut rng);
    let bundles: Vec<PromptBundle> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            source
                .bundle(t, tier_index, i as u32)
                .with_tier_center(center)
                .with_trial_key(trial_key(tier_index, i as u32))
        })
        .collect();
    let responses = gateway.run_batch(&bundles).map_err(|e| match e {
        GatewayError::Closed => LadderError::Aborted,
        other => LadderError::Sink(std::io::Error::other(other.to_string())),
    })?;

    let mut numerator = 0.0f64;
    let mut unparsable = 0u32;
    let mut input_tokens = 0u64;
    let mut output_tokens = 0u64;
    for (i, (bundle, resp)) in bundles.iter().zip(&responses).enumerate() {
        let outcome = analyze(&resp.text, resp.finish_reason, &bundle.motif);
        let target = bundle.target_count;
        let abs_error = match outcome.parsed {
            Some(x) => (x as i128 - target as i128).unsigned_abs().min(u64::MAX as u128) as u64,
            None => {
                unparsable += 1;
                target
            }
        };
        numerator += match outcome.parsed {
            Some(_) => abs_error as f64,
            // Unparsable trials are charged the full tier center.
            None => center as f64,
        };
        input_tokens += resp.input_tokens;
        output_tokens += resp.output_tokens;
        sink.record_trial(&TrialRecord {
            run_id: ctx.run_id.clone(),
            model_id: ctx.model_id.clone(),
            timestamp: ctx.timestamp.clone(),
            assay: source.assay(),
            motif_label: source.motif_label(),
            tier_index,
            tier_center: center,
            trial_index: i as u32,
            target,
            response_text: resp.text.clone(),
            parsed: outcome.parsed,
            strict_format: outcome.strict_single_integer,
            abs_error,
            audit_category: outcome.audit_category,
            finish_reason: resp.finish_reason,
            input_tokens: resp.input_tokens,
            output_tokens: resp.output_tokens,
            attempts: resp.attempts,
            wall_time_ms: resp.wall_time_ms,
        })?;
    }
    let k = targets.len() as f64;
    let nmae = numerator / (k * center as f64);
    Ok(TierResult {
        tier_index,
        center,
        targets,
        nmae,
        stable: nmae < params.stability_threshold,
        unparsable,
        input_tokens,
        output_tokens,
    })
}

struct Driver<'a> {
    gateway: &'a Gateway,
    source: &'a dyn BundleSource,
    params: &'a LadderParams,
    ctx: &'a RunContext,
    sink: &'a mut dyn TrialSink,
    pending: VecDeque<TierResult>,
    tiers: Vec<TierResult>,
    next_index: u32,
}

impl Driver<'_> {
    /// Evaluates (or replays from checkpoint) the tier at `center` and
    /// reports whether it was stable.
    fn run_tier(&mut self, center: u64) -> Result<bool, LadderError> {
        let tier_index = self.next_index;
        self.next_index += 1;
        if let Some(front) = self.pending.front() {
            if front.center != center || front.tier_index != tier_index {
                return Err(LadderError::ResumeMismatch {
                    tier_index,
                    expected: center,
                    found: front.center,
                });
            }
            let tier = self.pending.pop_front().expect("front just observed");
            let stable = tier.stable;
            self.tiers.push(tier);
            return Ok(stable);
        }
        let tier = evaluate_tier(
            self.gateway,
            self.source,
            self.params,
            self.ctx,
            self.sink,
            tier_index,
            center,
        )?;
        self.sink.record_tier(&tier)?;
        let stable = tier.stable;
        self.tiers.push(tier);
        Ok(stable)
    }
}

/// Runs the full ladder. `resume` holds tier summaries from an interrupted
/// run, in evaluation order; pass an empty slice for a fresh run.
pub fn run_ladder(
    gateway: &Gateway,
    source: &dyn BundleSource,
    params: &LadderParams,
    ctx: &RunContext,
    sink: &mut dyn TrialSink,
    resume: &[TierResult],
) -> Result<CapacityEstimate, LadderError> {
    params.validate()?;
    // Reject configurations a blind guesser could pass before spending any
    // queries on them.
    validate_ladder_config(params)?;

    let mut driver = Driver {
        gateway,
        source,
        params,
        ctx,
        sink,
        pending: resume.iter().cloned().collect(),
        tiers: Vec::new(),
        next_index: 0,
    };

    let mut lo = params.base_length;
    if !driver.run_tier(lo)? {
        let total = tier_tokens(&driver.tiers);
        return Ok(CapacityEstimate {
            capacity: 0,
            stable_lower: None,
            unstable_upper: params.base_length,
            below_minimum: true,
            censored: false,
            total_tokens: total,
            tiers: driver.tiers,
        });
    }

    // Doubling expansion until something breaks or the cap is reached.
    let mut hi: Option<u64> = None;
    let mut censored = false;
    loop {
        let next = lo.saturating_mul(2);
        if next > params.max_length {
            if lo >= params.max_length {
                censored = true;
                break;
            }
            if driver.run_tier(params.max_length)? {
                lo = params.max_length;
                censored = true;
            } else {
                hi = Some(params.max_length);
            }
            break;
        }
        if driver.run_tier(next)? {
            lo = next;
        } else {
            hi = Some(next);
            break;
        }
    }

    // Bisection down to the relative width limit.
    if let Some(mut h) = hi {
        while h - lo > width_limit(lo, params.refine_step_fraction) {
            let mid = lo + (h - lo) / 2;
            if driver.run_tier(mid)? {
                lo = mid;
            } else {
                h = mid;
            }
        }
        hi = Some(h);
    }

    let unstable_upper = if censored { params.max_length + 1 } else { hi.expect("refined bracket") };
    Ok(CapacityEstimate {
        capacity: lo,
        stable_lower: Some(lo),
        unstable_upper,
        below_minimum: false,
        censored,
        total_tokens: tier_tokens(&driver.tiers),
        tiers: driver.tiers,
    })
}

fn tier_tokens(tiers: &[TierResult]) -> u64 {
    tiers.iter().map(|t| t.input_tokens + t.output_tokens).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSweepResult {
    pub first_error: Option<u64>,
    pub checked: u64,
    /// Targets answered inexactly or unparsably.
    pub errors: Vec<u64>,
}

/// Exhaustive single-trial sweep over `from..=to`: one exact-match query
/// per target, no jitter, no thresholding. Locates the first length at
/// which the model's count is wrong.
pub fn dense_sweep(
    gateway: &Gateway,
    source: &dyn BundleSource,
    ctx: &RunContext,
    sink: &mut dyn TrialSink,
    from: u64,
    to: u64,
) -> Result<DenseSweepResult, LadderError> {
    let targets: Vec<u64> = (from..=to).collect();
    let bundles: Vec<PromptBundle> = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| source.bundle(t, i as u32, 0).with_trial_key(t))
        .collect();
    let responses = gateway.run_batch(&bundles).map_err(|e| match e {
        GatewayError::Closed => LadderError::Aborted,
        other => LadderError::Sink(std::io::Error::other(other.to_string())),
    })?;
    let mut errors = Vec::new();
    for (i, (bundle, resp)) in bundles.iter().zip(&responses).enumerate() {
        let outcome = analyze(&resp.text, resp.finish_reason, &bundle.motif);
        let target = bundle.target_count;
        let exact = outcome.parsed == Some(target as i64);
        if !exact {
            errors.push(target);
        }
        let abs_error = match outcome.parsed {
            Some(x) => (x as i128 - target as i128).unsigned_abs().min(u64::MAX as u128) as u64,
            None => target,
        };
        sink.record_trial(&TrialRecord {
            run_id: ctx.run_id.clone(),
            model_id: ctx.model_id.clone(),
            timestamp: ctx.timestamp.clone(),
            assay: source.assay(),
            motif_label: source.motif_label(),
            tier_index: i as u32,
            tier_center: target,
            trial_index: 0,
            target,
            response_text: resp.text.clone(),
            parsed: outcome.parsed,
            strict_format: outcome.strict_single_integer,
            abs_error,
            audit_category: outcome.audit_category,
            finish_reason: resp.finish_reason,
            input_tokens: resp.input_tokens,
            output_tokens: resp.output_tokens,
            attempts: resp.attempts,
            wall_time_ms: resp.wall_time_ms,
        })?;
    }
    Ok(DenseSweepResult { first_error: errors.first().copied(), checked: targets.len() as u64, errors })
}

/// Counting-assay source: fixed motif, targets straight from the ladder.
pub struct CountingSource {
    pub motif: crate::assay::Motif,
}

impl BundleSource for CountingSource {
    fn bundle(&self, target: u64, _tier_index: u32, _trial_index: u32) -> PromptBundle {
        crate::assay::build_counting_prompt(&self.motif, target)
            .expect("ladder targets are nonzero and motifs validated")
    }
    fn assay(&self) -> AssayKind {
        AssayKind::Counting
    }
    fn motif_label(&self) -> String {
        format!("{}|{}", self.motif.item_label, self.motif.delimiter)
    }
}
