//! Dual-task battery: counting under a concurrent demand.
//!
//! Every trial asks for a count over a plain item sequence, and the
//! condition decides what else shares the context window:
//!
//! * `plain_count`: nothing else; the control condition.
//! * `benchmark`: a reasoning question that must also be answered.
//! * `irrelevant_filler`: inert pseudo-code the model is told to ignore,
//!   length-matched to the paired benchmark question within ten percent so
//!   that mere context length is controlled for.
//! * `secondary_count`: a second counting task over a different marker.
//!
//! Replies are a single JSON object `{"count": N, "answer": S}`. Scoring is
//! a pure function over trial outcomes; live gateway runs and recorded
//! fixtures share it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assay::{AssayKind, Motif, PromptBundle};
use crate::battery::{find_json_object, value_as_i64, BatteryError};
use crate::gateway::{estimate_tokens, Gateway, GatewayError, SyntheticReply, SyntheticResponder};
use crate::ladder::RunContext;
use crate::seeding::{rng_for, Domain};

pub const DUAL_SYSTEM_TEXT: &str = "You complete every part of the task exactly. Reply with a \
single JSON object of the\nform {\"count\": <integer>, \"answer\": <string>} and nothing else.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualCondition {
    PlainCount,
    Benchmark,
    IrrelevantFiller,
    SecondaryCount,
}

impl DualCondition {
    pub const ALL: [DualCondition; 4] = [
        DualCondition::PlainCount,
        DualCondition::Benchmark,
        DualCondition::IrrelevantFiller,
        DualCondition::SecondaryCount,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DualCondition::PlainCount => "plain_count",
            DualCondition::Benchmark => "benchmark",
            DualCondition::IrrelevantFiller => "irrelevant_filler",
            DualCondition::SecondaryCount => "secondary_count",
        }
    }

    fn index(&self) -> u64 {
        DualCondition::ALL.iter().position(|c| c == self).expect("member of ALL") as u64
    }
}

/// One secondary question, loaded from a JSONL task file. The questions are
/// stand-ins written for this harness, keyed by the category they emulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub id: String,
    pub category: String,
    pub question: String,
    pub answer: String,
}

/// Reads one JSON object per line; blank lines are ignored. Errors carry
/// the 1-based line number.
pub fn load_benchmark_tasks(path: &std::path::Path) -> Result<Vec<BenchmarkTask>, BatteryError> {
    let text = std::fs::read_to_string(path).map_err(|e| BatteryError::TaskFileIo {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: BenchmarkTask =
            serde_json::from_str(line).map_err(|e| BatteryError::TaskFile {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        tasks.push(task);
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub seed: u64,
    pub trials_per_condition: u32,
    pub count_min: u64,
    pub count_max: u64,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig { seed: 23, trials_per_condition: 6, count_min: 32, count_max: 96 }
    }
}

/// Everything needed to build and later score one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrialPlan {
    pub condition: DualCondition,
    pub trial: u32,
    pub count_target: u64,
    pub secondary_target: Option<u64>,
    pub task: Option<BenchmarkTask>,
    /// Token length the filler must match (the paired task's question).
    pub filler_tokens: Option<u64>,
}

/// Lays out the full grid of trials deterministically from the seed.
pub fn plan_trials(config: &DualConfig, tasks: &[BenchmarkTask]) -> Vec<DualTrialPlan> {
    let mut plans = Vec::new();
    for condition in DualCondition::ALL {
        for trial in 0..config.trials_per_condition {
            let mut rng = rng_for(config.seed, Domain::DualTask, condition.index(), trial as u64);
            let count_target = rng.random_range(config.count_min..=config.count_max);
            let secondary_target = (condition == DualCondition::SecondaryCount)
                .then(|| rng.random_range(config.count_min..=config.count_max));
            let paired_task = tasks.get(trial as usize % tasks.len().max(1)).cloned();
            let (task, filler_tokens) = match condition {
                DualCondition::Benchmark => (paired_task, None),
                DualCondition::IrrelevantFiller => {
                    (None, paired_task.map(|t| estimate_tokens(&t.question)))
                }
                _ => (None, None),
            };
            plans.push(DualTrialPlan {
                condition,
                trial,
                count_target,
                secondary_target,
                task,
                filler_tokens,
            });
        }
    }
    plans
}

/// Inert pseudo-code sized to land within ten percent of `target_tokens`.
/// Lines are short so the match stays tight even for small targets.
pub fn build_filler(target_tokens: u64) -> String {
    let mut out = String::from("// reference material\n");
    let mut i = 0u64;
    while estimate_tokens(&out) < target_tokens {
        out.push_str(&format!("x ^= {} * 31;\n", i % 97));
        i += 1;
    }
    out
}

pub fn build_dual_prompt(plan: &DualTrialPlan) -> PromptBundle {
    let motif = Motif::baseline();
    let sequence = motif.render_sequence(plan.count_target);
    let user_text = match plan.condition {
        DualCondition::PlainCount => format!(
            "Count the occurrences of \"a\" in the sequence below and put the total in \
             \"count\".\nPut \"none\" in \"answer\".\n\nSequence:\n{sequence}"
        ),
        DualCondition::Benchmark => {
            let task = plan.task.as_ref().expect("benchmark plan carries a task");
            format!(
                "Count the occurrences of \"a\" in the sequence below and put the total in \
                 \"count\".\nAlso answer the following question and put your final answer in \
                 \"answer\".\n\nQuestion ({}): {}\n\nSequence:\n{sequence}",
                task.category, task.question
            )
        }
        DualCondition::IrrelevantFiller => {
            let filler = build_filler(plan.filler_tokens.unwrap_or(60));
            format!(
                "Count the occurrences of \"a\" in the sequence below and put the total in \
                 \"count\".\nPut \"none\" in \"answer\". The reference material is irrelevant; \
                 ignore it.\n\nReference material:\n{filler}\nSequence:\n{sequence}"
            )
        }
        DualCondition::SecondaryCount => {
            let second = Motif::new("b", ", ")
                .render_sequence(plan.secondary_target.expect("secondary plan carries a target"));
            format!(
                "Count the occurrences of \"a\" in the first sequence and put the total in \
                 \"count\".\nCount the occurrences of \"b\" in the second sequence and put that \
                 total in \"answer\".\n\nSequence:\n{sequence}\n\nSecond sequence:\n{second}"
            )
        }
    };
    let inline = format!("{DUAL_SYSTEM_TEXT}\n\n{user_text}");
    PromptBundle {
        system_text: DUAL_SYSTEM_TEXT.to_string(),
        user_text,
        inline_fallback_text: inline,
        target_count: plan.count_target,
        motif,
        assay_kind: AssayKind::DualTask,
        trial_key: (plan.condition.index() << 32) | plan.trial as u64,
        tier_center: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualParse {
    pub count: Option<i64>,
    pub answer: Option<String>,
    pub strict_json: bool,
}

pub fn parse_dual_response(text: &str) -> DualParse {
    match find_json_object(text) {
        Some((v, strict)) => DualParse {
            count: v.get("count").and_then(value_as_i64),
            answer: v.get("answer").map(|a| match a {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            }),
            strict_json: strict,
        },
        None => DualParse { count: None, answer: None, strict_json: false },
    }
}

fn normalize_answer(s: &str) -> String {
    s.trim().trim_end_matches('.').split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTrialOutcome {
    pub condition: DualCondition,
    pub trial: u32,
    pub count_target: u64,
    pub secondary_target: Option<u64>,
    pub parsed_count: Option<i64>,
    /// |parsed - target|; the full target when the count is unparsable.
    pub count_abs_error: u64,
    pub count_exact: bool,
    pub answer_correct: Option<bool>,
    pub strict_json: bool,
    pub output_tokens: u64,
}

/// Scores one reply against its plan.
pub fn score_dual_trial(
    plan: &DualTrialPlan,
    text: &str,
    output_tokens: u64,
) -> DualTrialOutcome {
    let parsed = parse_dual_response(text);
    let count_abs_error = match parsed.count {
        Some(c) => (c as i128 - plan.count_target as i128).unsigned_abs() as u64,
        None => plan.count_target,
    };
    let answer_correct = match plan.condition {
        DualCondition::Benchmark => {
            let task = plan.task.as_ref().expect("benchmark plan carries a task");
            Some(
                parsed
                    .answer
                    .as_deref()
                    .map(|a| normalize_answer(a) == normalize_answer(&task.answer))
                    .unwrap_or(false),
            )
        }
        DualCondition::SecondaryCount => {
            let target = plan.secondary_target.expect("secondary plan carries a target") as i64;
            Some(
                parsed
                    .answer
                    .as_deref()
                    .and_then(|a| a.trim().parse::<i64>().ok())
                    .map(|n| n == target)
                    .unwrap_or(false),
            )
        }
        _ => None,
    };
    DualTrialOutcome {
        condition: plan.condition,
        trial: plan.trial,
        count_target: plan.count_target,
        secondary_target: plan.secondary_target,
        parsed_count: parsed.count,
        count_abs_error,
        count_exact: parsed.count == Some(plan.count_target as i64),
        answer_correct,
        strict_json: parsed.strict_json,
        output_tokens,
    }
}

/// Truncated centered moving average: element i averages the window
/// `[max(0, i-2), min(n-1, i+2)]`, so interior windows hold five points and
/// the edges shrink to three.
pub fn smooth_curve(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(n.saturating_sub(1));
            let window = &values[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCurvePoint {
    pub count_target: u64,
    pub normalized_error: f64,
    pub smoothed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualConditionReport {
    pub condition: DualCondition,
    pub trials: u32,
    pub parse_rate: f64,
    pub strict_json_rate: f64,
    pub count_exact_rate: f64,
    pub mean_normalized_count_error: f64,
    pub answer_accuracy: Option<f64>,
    pub mean_output_tokens: f64,
    /// Per-trial error over count targets, sorted by target, with the
    /// truncated five-point smoothing applied.
    pub curve: Vec<DualCurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    pub conditions: Vec<DualConditionReport>,
}

impl DualReport {
    pub fn condition(&self, c: DualCondition) -> Option<&DualConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }
}

/// Aggregates outcomes into per-condition reports. Pure; shared by live
/// runs and fixtures.
pub fn score_dual_outcomes(outcomes: &[DualTrialOutcome]) -> DualReport {
    let mut conditions = Vec::new();
    for condition in DualCondition::ALL {
        let rows: Vec<&DualTrialOutcome> =
            outcomes.iter().filter(|o| o.condition == condition).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let parse_rate = rows.iter().filter(|o| o.parsed_count.is_some()).count() as f64 / n;
        let strict_rate = rows.iter().filter(|o| o.strict_json).count() as f64 / n;
        let exact_rate = rows.iter().filter(|o| o.count_exact).count() as f64 / n;
        let mean_err = rows
            .iter()
            .map(|o| o.count_abs_error as f64 / o.count_target as f64)
            .sum::<f64>()
            / n;
        let with_answer: Vec<bool> = rows.iter().filter_map(|o| o.answer_correct).collect();
        let answer_accuracy = (!with_answer.is_empty())
            .then(|| with_answer.iter().filter(|&&b| b).count() as f64 / with_answer.len() as f64);
        let mean_tokens = rows.iter().map(|o| o.output_tokens as f64).sum::<f64>() / n;
        let mut by_count: Vec<(u64, f64)> = rows
            .iter()
            .map(|o| (o.count_target, o.count_abs_error as f64 / o.count_target as f64))
            .collect();
        by_count.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let raw: Vec<f64> = by_count.iter().map(|&(_, e)| e).collect();
        let smoothed = smooth_curve(&raw);
        let curve = by_count
            .iter()
            .zip(&smoothed)
            .map(|(&(count_target, normalized_error), &smoothed_error)| DualCurvePoint {
                count_target,
                normalized_error,
                smoothed_error,
            })
            .collect();
        conditions.push(DualConditionReport {
            condition,
            trials: rows.len() as u32,
            parse_rate,
            strict_json_rate: strict_rate,
            count_exact_rate: exact_rate,
            mean_normalized_count_error: mean_err,
            answer_accuracy,
            mean_output_tokens: mean_tokens,
            curve,
        });
    }
    DualReport { conditions }
}

/// Runs the full grid through the gateway and scores it.
pub fn run_dual_battery(
    gateway: &Gateway,
    config: &DualConfig,
    tasks: &[BenchmarkTask],
    _ctx: &RunContext,
) -> Result<(Vec<DualTrialOutcome>, DualReport), BatteryError> {
    if tasks.is_empty() {
        return Err(BatteryError::NoTasks);
    }
    let plans = plan_trials(config, tasks);
    let bundles: Vec<PromptBundle> = plans.iter().map(build_dual_prompt).collect();
    let responses = gateway.run_batch(&bundles).map_err(|e| match e {
        GatewayError::Closed => BatteryError::Aborted,
        other => BatteryError::Config(other.to_string()),
    })?;
    let outcomes: Vec<DualTrialOutcome> = plans
        .iter()
        .zip(&responses)
        .map(|(plan, resp)| score_dual_trial(plan, &resp.text, resp.output_tokens))
        .collect();
    let report = score_dual_outcomes(&outcomes);
    Ok((outcomes, report))
}

/// Synthetic model whose counting capacity shrinks under concurrent load.
/// Infers the condition from the prompt text, counts exactly up to the
/// applicable capacity, and saturates beyond it. Benchmark questions are
/// answered with a fixed wrong answer, since knowing them is not this
/// oracle's job; the secondary sequence is genuinely recounted from the
/// prompt.
#[derive(Debug, Clone, Copy)]
pub struct DualLoadOracle {
    pub plain_capacity: u64,
    pub loaded_capacity: u64,
}

impl SyntheticResponder for DualLoadOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let user = &bundle.user_text;
        let loaded = user.contains("Second sequence:")
            || user.contains("Reference material:")
            || user.contains("Question (");
        let cap = if loaded { self.loaded_capacity } else { self.plain_capacity };
        let count = bundle.target_count.min(cap);
        let answer = if let Some(at) = user.find("Second sequence:\n") {
            let second = &user[at + "Second sequence:\n".len()..];
            let b_count = second.split(", ").filter(|p| p.trim() == "b").count() as u64;
            b_count.min(cap).to_string()
        } else if user.contains("Question (") {
            "unknown".to_string()
        } else {
            "none".to_string()
        };
        SyntheticReply::complete(format!("{{\"count\": {count}, \"answer\": \"{answer}\"}}"))
    }
}

/// Load-graded variant of [`DualLoadOracle`]: counting capacity depends on
/// how demanding the concurrent task is, with a genuine benchmark question
/// costing more than the matched filler and secondary-count controls.
#[derive(Debug, Clone, Copy)]
pub struct GradedDualOracle {
    pub plain_capacity: u64,
    /// Applies to the matched controls (filler, secondary count).
    pub control_capacity: u64,
    /// Applies when a benchmark question rides along.
    pub benchmark_capacity: u64,
}

impl SyntheticResponder for GradedDualOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let user = &bundle.user_text;
        let cap = if user.contains("Question (") {
            self.benchmark_capacity
        } else if user.contains("Second sequence:") || user.contains("Reference material:") {
            self.control_capacity
        } else {
            self.plain_capacity
        };
        let count = bundle.target_count.min(cap);
        let answer = if let Some(at) = user.find("Second sequence:\n") {
            let second = &user[at + "Second sequence:\n".len()..];
            let b_count = second.split(", ").filter(|p| p.trim() == "b").count() as u64;
            b_count.min(cap).to_string()
        } else if user.contains("Question (") {
            "unknown".to_string()
        } else {
            "none".to_string()
        };
        SyntheticReply::complete(format!("{{\"count\": {count}, \"answer\": \"{answer}\"}}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ModelEndpoint;
    use std::io::Write;
    use std::sync::Arc;

    fn sample_tasks() -> Vec<BenchmarkTask> {
        vec![
            BenchmarkTask {
                id: "t1".into(),
                category: "BBH".into(),
                question: "If a sorted list of nine numbers has median 12 and the four smallest \
                           are removed, which position holds 12 now?"
                    .into(),
                answer: "first".into(),
            },
            BenchmarkTask {
                id: "t2".into(),
                category: "MATH-500".into(),
                question: "What is the sum of the first ten positive odd integers?".into(),
                answer: "100".into(),
            },
        ]
    }

    #[test]
    fn plans_cover_the_grid_deterministically() {
        let cfg = DualConfig::default();
        let tasks = sample_tasks();
        let plans = plan_trials(&cfg, &tasks);
        assert_eq!(plans.len(), 24);
        for p in &plans {
            assert!((32..=96).contains(&p.count_target), "{}", p.count_target);
            match p.condition {
                DualCondition::Benchmark => assert!(p.task.is_some()),
                DualCondition::IrrelevantFiller => assert!(p.filler_tokens.is_some()),
                DualCondition::SecondaryCount => assert!(p.secondary_target.is_some()),
                DualCondition::PlainCount => {
                    assert!(p.task.is_none() && p.secondary_target.is_none())
                }
            }
        }
        assert_eq!(plans, plan_trials(&cfg, &tasks));
    }

    #[test]
    fn prompts_embed_the_right_number_of_items() {
        let tasks = sample_tasks();
        let plans = plan_trials(&DualConfig::default(), &tasks);
        for plan in &plans {
            let bundle = build_dual_prompt(plan);
            let seq = bundle
                .user_text
                .split("Sequence:\n")
                .nth(1)
                .unwrap()
                .split("\n\nSecond sequence:")
                .next()
                .unwrap();
            let items = seq.split(", ").filter(|p| *p == "a").count() as u64;
            assert_eq!(items, plan.count_target, "{:?}", plan.condition);
            if plan.condition == DualCondition::SecondaryCount {
                let second = bundle.user_text.split("Second sequence:\n").nth(1).unwrap();
                let b = second.split(", ").filter(|p| *p == "b").count() as u64;
                assert_eq!(b, plan.secondary_target.unwrap());
            }
        }
    }

    #[test]
    fn filler_length_matches_its_target() {
        for target in [40u64, 80, 200, 500] {
            let filler = build_filler(target);
            let got = estimate_tokens(&filler);
            let slack = (target as f64 * 0.1).max(4.0);
            assert!(
                (got as f64 - target as f64).abs() <= slack,
                "target {target}, got {got}"
            );
        }
    }

    #[test]
    fn filler_condition_prompt_is_length_matched_to_benchmark() {
        let tasks = sample_tasks();
        let plans = plan_trials(&DualConfig::default(), &tasks);
        let filler_plan =
            plans.iter().find(|p| p.condition == DualCondition::IrrelevantFiller).unwrap();
        let paired = &tasks[filler_plan.trial as usize % tasks.len()];
        assert_eq!(filler_plan.filler_tokens, Some(estimate_tokens(&paired.question)));
    }

    #[test]
    fn dual_parse_handles_strict_and_wrapped_replies() {
        let strict = parse_dual_response(r#"{"count": 64, "answer": "none"}"#);
        assert_eq!(strict.count, Some(64));
        assert_eq!(strict.answer.as_deref(), Some("none"));
        assert!(strict.strict_json);

        let wrapped =
            parse_dual_response("Here you go:\n```json\n{\"count\": \"41\", \"answer\": 7}\n```");
        assert_eq!(wrapped.count, Some(41));
        assert_eq!(wrapped.answer.as_deref(), Some("7"));
        assert!(!wrapped.strict_json);

        let broken = parse_dual_response("I counted 12 of them");
        assert_eq!(broken.count, None);
        assert!(!broken.strict_json);
    }

    #[test]
    fn smoothing_matches_hand_computed_windows() {
        let smoothed = smooth_curve(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let expected = [2.0, 2.5, 3.0, 4.0, 4.5, 5.0];
        for (got, want) in smoothed.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{smoothed:?}");
        }
        assert_eq!(smooth_curve(&[7.0]), vec![7.0]);
        assert_eq!(smooth_curve(&[]), Vec::<f64>::new());
    }

    #[test]
    fn unparsable_count_is_charged_the_target()
    {
        let plan = DualTrialPlan {
            condition: DualCondition::PlainCount,
            trial: 0,
            count_target: 50,
            secondary_target: None,
            task: None,
            filler_tokens: None,
        };
        let outcome = score_dual_trial(&plan, "no json here", 10);
        assert_eq!(outcome.count_abs_error, 50);
        assert!(!outcome.count_exact);
        assert_eq!(outcome.parsed_count, None);
    }

    #[test]
    fn load_oracle_counts_exactly_without_load() {
        let oracle = DualLoadOracle { plain_capacity: 200, loaded_capacity: 48 };
        let plan = DualTrialPlan {
            condition: DualCondition::PlainCount,
            trial: 0,
            count_target: 90,
            secondary_target: None,
            task: None,
            filler_tokens: None,
        };
        let reply = oracle.respond(&build_dual_prompt(&plan), 2048);
        let parsed = parse_dual_response(&reply.text);
        assert_eq!(parsed.count, Some(90));
        assert!(parsed.strict_json);
    }

    #[test]
    fn load_oracle_recounts_the_secondary_sequence() {
        let oracle = DualLoadOracle { plain_capacity: 200, loaded_capacity: 200 };
        let plan = DualTrialPlan {
            condition: DualCondition::SecondaryCount,
            trial: 0,
            count_target: 40,
            secondary_target: Some(33),
            task: None,
            filler_tokens: None,
        };
        let reply = oracle.respond(&build_dual_prompt(&plan), 2048);
        let parsed = parse_dual_response(&reply.text);
        assert_eq!(parsed.count, Some(40));
        assert_eq!(parsed.answer.as_deref(), Some("33"));
    }

    #[test]
    fn battery_shows_interference_under_load() {
        let mut ep = ModelEndpoint::synthetic("dual-oracle");
        ep.parallelism = 4;
        ep.initial_output_cap = 2048;
        ep.retry_output_cap = 8192;
        let gw = Gateway::new(
            ep,
            Some(Arc::new(DualLoadOracle { plain_capacity: 200, loaded_capacity: 48 })),
        )
        .unwrap();
        let tasks = sample_tasks();
        let ctx = RunContext::deterministic("dual", "dual-oracle", 23);
        let (outcomes, report) =
            run_dual_battery(&gw, &DualConfig::default(), &tasks, &ctx).unwrap();
        assert_eq!(outcomes.len(), 24);
        let plain = report.condition(DualCondition::PlainCount).unwrap();
        assert_eq!(plain.count_exact_rate, 1.0);
        assert_eq!(plain.parse_rate, 1.0);
        assert_eq!(plain.strict_json_rate, 1.0);
        assert!(plain.mean_normalized_count_error < 1e-12);
        for cond in [
            DualCondition::Benchmark,
            DualCondition::IrrelevantFiller,
            DualCondition::SecondaryCount,
        ] {
            let loaded = report.condition(cond).unwrap();
            assert!(
                loaded.mean_normalized_count_error > plain.mean_normalized_count_error,
                "{cond:?} should degrade under load"
            );
            assert_eq!(loaded.curve.len(), 6);
        }
        // Benchmark answers are wrong by construction; secondary recounts
        // succeed whenever the target is inside the loaded capacity.
        let bench = report.condition(DualCondition::Benchmark).unwrap();
        assert_eq!(bench.answer_accuracy, Some(0.0));
        let secondary = report.condition(DualCondition::SecondaryCount).unwrap();
        assert!(secondary.answer_accuracy.is_some());
    }

    #[test]
    fn graded_oracle_ranks_benchmark_load_above_the_controls() {
        let mut ep = ModelEndpoint::synthetic("graded-oracle");
        ep.parallelism = 4;
        let gw = Gateway::new(
            ep,
            Some(Arc::new(GradedDualOracle {
                plain_capacity: 200,
                control_capacity: 90,
                benchmark_capacity: 25,
            })),
        )
        .unwrap();
        let ctx = RunContext::deterministic("dual", "graded-oracle", 23);
        let (_, report) = run_dual_battery(&gw, &DualConfig::default(), &sample_tasks(), &ctx).unwrap();
        let plain = report.condition(DualCondition::PlainCount).unwrap();
        assert!(plain.mean_normalized_count_error < 1e-12);
        let bench = report.condition(DualCondition::Benchmark).unwrap();
        // Capacity 25 against targets of at least 32 puts every benchmark
        // error above 7/32, while the controls stay at or below 6/96, so
        // the benchmark curve sits strictly above both control curves at
        // every point, raw and smoothed alike.
        let bench_floor = bench
            .curve
            .iter()
            .flat_map(|p| [p.normalized_error, p.smoothed_error])
            .fold(f64::INFINITY, f64::min);
        for cond in [DualCondition::IrrelevantFiller, DualCondition::SecondaryCount] {
            let control = report.condition(cond).unwrap();
            let ceiling = control
                .curve
                .iter()
                .flat_map(|p| [p.normalized_error, p.smoothed_error])
                .fold(0.0, f64::max);
            assert!(
                bench_floor > ceiling,
                "{cond:?}: benchmark floor {bench_floor} vs control ceiling {ceiling}"
            );
            assert!(bench.mean_normalized_count_error > control.mean_normalized_count_error);
        }
    }

    #[test]
    fn task_file_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","category":"BBH","question":"q","answer":"x"}}"#).unwrap();
        writeln!(f, "{{broken").unwrap();
        drop(f);
        match load_benchmark_tasks(&path) {
            Err(BatteryError::TaskFile { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
        let missing = load_benchmark_tasks(&dir.path().join("nope.jsonl"));
        assert!(matches!(missing, Err(BatteryError::TaskFileIo { .. })));
    }

    #[test]
    fn well_formed_task_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, r#"{{"id":"a","category":"BBH","question":"q1","answer":"x"}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id":"b","category":"MMLU-Pro","question":"q2","answer":"y"}}"#).unwrap();
        drop(f);
        let tasks = load_benchmark_tasks(&path).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[1].category, "MMLU-Pro");
    }

    #[test]
    fn empty_task_list_is_rejected_by_the_battery() {
        let gw = Gateway::new(
            ModelEndpoint::synthetic("m"),
            Some(Arc::new(DualLoadOracle { plain_capacity: 10, loaded_capacity: 10 })),
        )
        .unwrap();
        let ctx = RunContext::deterministic("dual", "m", 23);
        let err = run_dual_battery(&gw, &DualConfig::default(), &[], &ctx).unwrap_err();
        assert!(matches!(err, BatteryError::NoTasks));
    }
}
