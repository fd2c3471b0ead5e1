//! Guessing bounds: what error a blind guesser can achieve against jittered
//! targets, and whether a ladder configuration can tell guessing from
//! counting.
//!
//! Targets are uniform on `[L(1-α), L(1+α)]`. A guesser that cannot count
//! must commit to one answer `c` per tier; its best play minimizes the
//! expected absolute percentage error, which has a closed form. The module
//! exposes that closed form, an independent quadrature route used to
//! cross-check it, a Monte Carlo batch simulator, and the configuration gate
//! that rejects thresholds a guesser could slip under.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::assay::LadderParams;
use crate::seeding::{rng_for, Domain};
use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("jitter must lie in (0, 1) for guessing analysis, got {0}")]
    DegenerateJitter(f64),
    #[error("guess must be positive, got {0}")]
    NonPositiveGuess(f64),
    #[error("center length must be positive")]
    NonPositiveCenter,
    #[error("at least {min} Monte Carlo batches required, got {got}")]
    TooFewBatches { min: u64, got: u64 },
    #[error("trials per batch must be at least 1")]
    NoTrials,
}

/// Optimal fixed guess against targets uniform on `[L(1-α), L(1+α)]`:
/// the geometric mean of the interval bounds, `L·sqrt(1-α²)`.
pub fn optimal_guess(center: f64, alpha: f64) -> f64 {
    center * (1.0 - alpha * alpha).sqrt()
}

/// Expected absolute percentage error of a fixed guess `c`, in closed form.
///
/// With `a = L(1-α)`, `b = L(1+α)` and density `1/(b-a)`:
/// inside the interval the integral of `|c-x|/x` splits at the kink,
/// giving `c·ln(c²/(ab)) + a + b - 2c`; outside it collapses to
/// `±(c·ln(b/a) - (b-a))`.
pub fn expected_mape(center: f64, alpha: f64, guess: f64) -> Result<f64, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::DegenerateJitter(alpha));
    }
    if center <= 0.0 {
        return Err(StatsError::NonPositiveCenter);
    }
    if guess <= 0.0 {
        return Err(StatsError::NonPositiveGuess(guess));
    }
    let (a, b) = (center * (1.0 - alpha), center * (1.0 + alpha));
    let width = b - a;
    let raw = if guess <= a {
        width - guess * (b / a).ln()
    } else if guess >= b {
        guess * (b / a).ln() - width
    } else {
        guess * (guess * guess / (a * b)).ln() + a + b - 2.0 * guess
    };
    Ok(raw / width)
}

/// Quadrature route for the same expectation: adaptive Simpson on `|c-x|/x`,
/// split at the kink, to absolute error below 1e-8. Kept as an independent
/// check on the closed form.
pub fn expected_mape_quadrature(center: f64, alpha: f64, guess: f64) -> Result<f64, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::DegenerateJitter(alpha));
    }
    if center <= 0.0 {
        return Err(StatsError::NonPositiveCenter);
    }
    if guess <= 0.0 {
        return Err(StatsError::NonPositiveGuess(guess));
    }
    let (a, b) = (center * (1.0 - alpha), center * (1.0 + alpha));
    let f = |x: f64| (guess - x).abs() / x;
    let mut total = 0.0;
    if guess > a && guess < b {
        total += adaptive_simpson(&f, a, guess, 5e-10);
        total += adaptive_simpson(&f, guess, b, 5e-10);
    } else {
        total += adaptive_simpson(&f, a, b, 1e-9);
    }
    Ok(total / (b - a))
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, left, eps / 2.0, depth - 1)
                + recurse(f, m, b, right, eps / 2.0, depth - 1)
        }
    }
    recurse(f, a, b, simpson(f, a, b), eps, 40)
}

/// Per-trial guessing-error distribution characteristics for one jitter
/// level, under the optimal fixed guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessBound {
    pub alpha: f64,
    /// `c*/L`: the optimal guess as a fraction of the tier center.
    pub optimal_guess_factor: f64,
    /// Mean per-trial absolute percentage error under the optimal guess:
    /// `(1 - sqrt(1-α²))/α`.
    pub expected_mape: f64,
    /// Standard deviation of the per-trial absolute percentage error under
    /// the optimal guess.
    pub mape_stddev: f64,
}

impl GuessBound {
    pub fn for_alpha(alpha: f64) -> Result<Self, StatsError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(StatsError::DegenerateJitter(alpha));
        }
        let factor = (1.0 - alpha * alpha).sqrt();
        let mean = (1.0 - factor) / alpha;
        // Second moment of (c*-X)/X with L=1: the expectation is scale
        // invariant, so unit center loses nothing.
        let (a, b) = (1.0 - alpha, 1.0 + alpha);
        let c = factor;
        let m2 = (c * c * (1.0 / a - 1.0 / b) - 2.0 * c * (b / a).ln() + (b - a)) / (b - a);
        let var = (m2 - mean * mean).max(0.0);
        Ok(GuessBound {
            alpha,
            optimal_guess_factor: factor,
            expected_mape: mean,
            mape_stddev: var.sqrt(),
        })
    }

    /// Normal-approximation z-score of a K-trial batch mean against the
    /// stability threshold: `(τ - μ) / (σ/√K)`.
    pub fn z_score(&self, trials_per_tier: u32, threshold: f64) -> f64 {
        (threshold - self.expected_mape) / (self.mape_stddev / (trials_per_tier as f64).sqrt())
    }

    /// Probability that a K-trial batch of optimal guesses passes the
    /// threshold. Exact for K = 1; central-limit approximation otherwise.
    pub fn false_positive_rate(&self, trials_per_tier: u32, threshold: f64) -> f64 {
        if trials_per_tier == 1 {
            return single_trial_pass_rate(self.alpha, threshold);
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        normal.cdf(self.z_score(trials_per_tier, threshold))
    }
}

/// Exact probability that one optimally-guessed trial lands within the
/// threshold: the measure of `{x : |c*-x|/x < τ}` inside the jitter window.
pub fn single_trial_pass_rate(alpha: f64, threshold: f64) -> f64 {
    let (a, b) = (1.0 - alpha, 1.0 + alpha);
    let c = (1.0 - alpha * alpha).sqrt();
    let lo = (c / (1.0 + threshold)).max(a);
    // With a threshold of one or more, overshoot can never fail: |c-x| < x
    // for every x in the window, so only the undershoot bound remains.
    let hi = if threshold >= 1.0 { b } else { (c / (1.0 - threshold)).min(b) };
    ((hi - lo) / (b - a)).max(0.0)
}

/// Monte Carlo summary over simulated guessing batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub alpha: f64,
    pub trials_per_batch: u32,
    pub threshold: f64,
    pub batches: u64,
    /// Empirical mean of the per-trial absolute percentage error.
    pub mape_mean: f64,
    /// Empirical standard deviation of the per-trial error.
    pub mape_stddev: f64,
    /// Fraction of batches whose mean error fell below the threshold.
    pub batch_pass_rate: f64,
    /// `(τ - mean) / (stddev/√K)` from the empirical moments.
    pub z_score: f64,
}

/// Compensated (Kahan) accumulator; keeps the reduction order-independent
/// enough that sharded partial sums agree to full precision.
#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

const MIN_BATCHES: u64 = 10_000;

/// Simulates `batches` independent tiers of `trials_per_batch` optimally
/// guessed trials each, with continuous targets, and reports the empirical
/// error distribution and batch pass rate.
///
/// Batch `i` draws from the stream `(seed, MonteCarlo, i)`, so results do not
/// depend on iteration order and shards recombine exactly.
pub fn guessing_batch_stats(
    alpha: f64,
    trials_per_batch: u32,
    threshold: f64,
    batches: u64,
    seed: u64,
) -> Result<BatchStats, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::DegenerateJitter(alpha));
    }
    if trials_per_batch == 0 {
        return Err(StatsError::NoTrials);
    }
    if batches < MIN_BATCHES {
        return Err(StatsError::TooFewBatches { min: MIN_BATCHES, got: batches });
    }
    let (a, b) = (1.0 - alpha, 1.0 + alpha);
    let guess = (1.0 - alpha * alpha).sqrt();
    let mut sum = Kahan::default();
    let mut sum_sq = Kahan::default();
    let mut passes: u64 = 0;
    for batch in 0..batches {
        let mut rng = rng_for(seed, Domain::MonteCarlo, batch, 0);
        let mut batch_sum = 0.0;
        for _ in 0..trials_per_batch {
            let x: f64 = rng.random_range(a..=b);
            let mape = (guess - x).abs() / x;
            batch_sum += mape;
            sum.add(mape);
            sum_sq.add(mape * mape);
        }
        if batch_sum / (trials_per_batch as f64) < threshold {
            passes += 1;
        }
    }
    let n = (batches * trials_per_batch as u64) as f64;
    let mean = sum.sum / n;
    let var = (sum_sq.sum / n - mean * mean).max(0.0);
    let stddev = var.sqrt();
    Ok(BatchStats {
        alpha,
        trials_per_batch,
        threshold,
        batches,
        mape_mean: mean,
        mape_stddev: stddev,
        batch_pass_rate: passes as f64 / batches as f64,
        z_score: (threshold - mean) / (stddev / (trials_per_batch as f64).sqrt()),
    })
}

/// What the configuration gate found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigCheck {
    pub bound: GuessBound,
    pub z_score: f64,
    /// Estimated probability that a blind guesser passes one tier.
    pub false_positive_rate: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigRejection {
    #[error(
        "threshold {threshold} admits guessing: a blind guesser's tier error is \
         {mean:.4} ± {stddev:.4}/√{trials}, implying a false-positive rate of \
         {false_positive_rate:.3} per tier; lower the threshold below {bound:.4} \
         or raise trials per tier"
    )]
    GuessPassable {
        threshold: f64,
        mean: f64,
        stddev: f64,
        trials: u32,
        false_positive_rate: f64,
        bound: f64,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Rejects ladder configurations whose stability threshold a blind guesser
/// could pass: requires `τ < μ(α) - 2σ(α)/√K`.
pub fn validate_ladder_config(params: &LadderParams) -> Result<ConfigCheck, ConfigRejection> {
    let bound = GuessBound::for_alpha(params.jitter)?;
    let k = params.trials_per_tier;
    let tau = params.stability_threshold;
    let guard = bound.expected_mape - 2.0 * bound.mape_stddev / (k as f64).sqrt();
    let fp = bound.false_positive_rate(k, tau);
    if tau >= guard {
        return Err(ConfigRejection::GuessPassable {
            threshold: tau,
            mean: bound.expected_mape,
            stddev: bound.mape_stddev,
            trials: k,
            false_positive_rate: fp,
            bound: guard,
        });
    }
    Ok(ConfigCheck { bound, z_score: bound.z_score(k, tau), false_positive_rate: fp })
}
