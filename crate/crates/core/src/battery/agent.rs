//! Agent-operation battery: a small procedural task under growing counting
//! and copying load.
//!
//! The embedded task is fixed and easy: three account balances, six signed
//! transactions, a flag list, and a decision rule (halt on negative net
//! total, escalate on two or more flagged transactions, continue
//! otherwise). Load comes from audit markers, short random tokens whose
//! number walks a geometric ladder. Conditions:
//!
//! * `baseline`: the procedure alone, no markers.
//! * `count_insert`: marker lines interleaved with the transaction log;
//!   the reply must include their count alongside the procedure's outputs.
//! * `copy_externalize`: no procedure; the marker sequence must be written
//!   back verbatim as a scratch file block.
//! * `copy_then_agent`: verbatim copy first, then the procedure.
//!
//! Scoring is a pure function over per-trial outcomes, so live runs and
//! recorded fixtures share it. Besides the usual rates it locates two
//! thresholds on the ladder: the highest level where every trial succeeded
//! and the lowest level where every trial failed. The two need not be
//! adjacent, and isolated successes above the first all-fail level are
//! preserved rather than smoothed away.

use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::assay::{AssayKind, Motif, PromptBundle};
use crate::battery::{find_json_object, value_as_i64, BatteryError};
use crate::gateway::{Gateway, GatewayError, SyntheticReply, SyntheticResponder};
use crate::ladder::RunContext;
use crate::seeding::{rng_for, Domain};

pub const AGENT_SYSTEM_TEXT: &str = "You are an operations assistant. Follow the procedure \
exactly and reply only in the\nrequested format.";

/// The canonical marker ladder: twenty levels spanning 50 to 1000, drawn
/// once from the geometric grid with up to twenty percent jitter per level
/// and pinned here so every run and fixture shares the same x-axis.
pub const MARKER_LEVELS: [u64; 20] = [
    50, 57, 69, 80, 91, 109, 127, 159, 196, 199, 245, 251, 303, 354, 391, 460, 533, 625, 731, 999,
];

/// Draws a fresh twenty-level ladder: geometric from 50 to 1000 with ±20%
/// per-level jitter, sorted, and nudged strictly increasing.
pub fn sample_marker_levels(seed: u64) -> Vec<u64> {
    let mut rng = rng_for(seed, Domain::Agent, 0, 0);
    let ratio = (1000.0f64 / 50.0).powf(1.0 / 19.0);
    let mut levels: Vec<u64> = (0..20)
        .map(|i| {
            let base = 50.0 * ratio.powi(i);
            let jitter: f64 = rng.random_range(0.8..=1.2);
            (base * jitter).round() as u64
        })
        .collect();
    levels.sort_unstable();
    for i in 1..levels.len() {
        if levels[i] <= levels[i - 1] {
            levels[i] = levels[i - 1] + 1;
        }
    }
    levels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentCondition {
    Baseline,
    CountInsert,
    CopyExternalize,
    CopyThenAgent,
}

impl AgentCondition {
    pub const ALL: [AgentCondition; 4] = [
        AgentCondition::Baseline,
        AgentCondition::CountInsert,
        AgentCondition::CopyExternalize,
        AgentCondition::CopyThenAgent,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentCondition::Baseline => "baseline",
            AgentCondition::CountInsert => "count_insert",
            AgentCondition::CopyExternalize => "copy_externalize",
            AgentCondition::CopyThenAgent => "copy_then_agent",
        }
    }

    fn index(&self) -> u64 {
        AgentCondition::ALL.iter().position(|c| c == self).expect("member of ALL") as u64
    }

    pub fn has_agent_task(&self) -> bool {
        !matches!(self, AgentCondition::CopyExternalize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: String,
    pub account: char,
    pub amount: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentScenario {
    pub initial: [(char, i64); 3],
    pub transactions: Vec<Transaction>,
    pub flagged: Vec<String>,
}

impl AgentScenario {
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        let initial = [
            ('A', rng.random_range(100..=900)),
            ('B', rng.random_range(100..=900)),
            ('C', rng.random_range(100..=900)),
        ];
        let transactions = (1..=6)
            .map(|i| {
                let amount = loop {
                    let a: i64 = rng.random_range(-500..=500);
                    if a != 0 {
                        break a;
                    }
                };
                let account = ['A', 'B', 'C'][rng.random_range(0..3)];
                Transaction { id: format!("T{i}"), account, amount }
            })
            .collect();
        let k = rng.random_range(1..=3usize);
        let mut ids: Vec<u32> = (1..=6).collect();
        ids.shuffle(rng);
        let mut flagged: Vec<String> = ids[..k].iter().map(|i| format!("T{i}")).collect();
        flagged.sort();
        AgentScenario { initial, transactions, flagged }
    }

    pub fn net_total(&self) -> i64 {
        self.initial.iter().map(|(_, b)| b).sum::<i64>()
            + self.transactions.iter().map(|t| t.amount).sum::<i64>()
    }

    pub fn next_action(&self) -> &'static str {
        if self.net_total() < 0 {
            "halt"
        } else if self.flagged.len() >= 2 {
            "escalate"
        } else {
            "continue"
        }
    }
}

fn render_transaction(t: &Transaction) -> String {
    let sign = if t.amount >= 0 { "+" } else { "-" };
    format!("{}: {} {}{}", t.id, t.account, sign, t.amount.abs())
}

const PROCEDURE_TEXT: &str = "Procedure: compute the net total: the sum of all initial balances \
plus all transaction\namounts. If the net total is negative, the next action is \"halt\". \
Otherwise, if two or\nmore transactions are flagged, the next action is \"escalate\". Otherwise \
the next action\nis \"continue\".";

fn render_scenario(s: &AgentScenario, marker_lines: Option<&[String]>) -> String {
    let balances = format!(
        "Initial balances: {}={}, {}={}, {}={}.",
        s.initial[0].0, s.initial[0].1, s.initial[1].0, s.initial[1].1, s.initial[2].0,
        s.initial[2].1
    );
    let log = match marker_lines {
        None => {
            let lines: Vec<String> = s.transactions.iter().map(render_transaction).collect();
            format!("Transaction log:\n{}", lines.join("\n"))
        }
        Some(markers) => {
            // Spread the six transactions evenly through the marker lines.
            let n = markers.len();
            let mut lines: Vec<String> = markers.to_vec();
            for (j, t) in s.transactions.iter().enumerate() {
                let at = ((j + 1) * n / 7 + j).min(lines.len());
                lines.insert(at, render_transaction(t));
            }
            format!("Transaction log (audit markers interleaved):\n{}", lines.join("\n"))
        }
    };
    let flagged = format!("Flagged transaction ids: {}.", s.flagged.join(", "));
    format!("{balances}\n{log}\n{flagged}\n\n{PROCEDURE_TEXT}")
}

/// Random marker tokens: one lowercase letter plus one digit each.
pub fn marker_sequence(count: u64, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..count)
        .map(|_| {
            let a = (b'a' + rng.random_range(0..26u8)) as char;
            let d = (b'0' + rng.random_range(0..10u8)) as char;
            [a, d].iter().collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub seed: u64,
    pub levels: Vec<u64>,
    pub trials_per_level: u32,
    pub copy_trials_per_level: u32,
    pub baseline_trials: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            seed: 17,
            levels: MARKER_LEVELS.to_vec(),
            trials_per_level: 6,
            copy_trials_per_level: 1,
            baseline_trials: 6,
        }
    }
}

/// Ground truth for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPlan {
    pub condition: AgentCondition,
    /// Marker count; zero for the baseline.
    pub level: u64,
    pub trial: u32,
    pub scenario: Option<AgentScenario>,
    pub tokens: Option<Vec<String>>,
}

impl AgentPlan {
    pub fn sequence(&self) -> Option<String> {
        self.tokens.as_ref().map(|t| t.join(", "))
    }
}

pub fn plan_agent_trials(config: &AgentConfig) -> Vec<AgentPlan> {
    let mut plans = Vec::new();
    let mut push = |condition: AgentCondition, level_idx: u64, level: u64, trial: u32| {
        let key = (condition.index() << 32) | (level_idx << 8) | trial as u64;
        let mut rng = rng_for(config.seed, Domain::Agent, key, level);
        let scenario = condition.has_agent_task().then(|| AgentScenario::sample(&mut rng));
        let tokens = (condition != AgentCondition::Baseline)
            .then(|| marker_sequence(level, &mut rng));
        plans.push(AgentPlan { condition, level, trial, scenario, tokens });
    };
    for trial in 0..config.baseline_trials {
        push(AgentCondition::Baseline, 0, 0, trial);
    }
    for (li, &level) in config.levels.iter().enumerate() {
        for trial in 0..config.trials_per_level {
            push(AgentCondition::CountInsert, li as u64 + 1, level, trial);
        }
    }
    for (li, &level) in config.levels.iter().enumerate() {
        for trial in 0..config.copy_trials_per_level {
            push(AgentCondition::CopyExternalize, li as u64 + 1, level, trial);
        }
    }
    for (li, &level) in config.levels.iter().enumerate() {
        for trial in 0..config.trials_per_level {
            push(AgentCondition::CopyThenAgent, li as u64 + 1, level, trial);
        }
    }
    plans
}

const FILE_HEADER: &str = "FILE scratch/marker_sequence.txt";

pub fn build_agent_prompt(plan: &AgentPlan) -> PromptBundle {
    let user_text = match plan.condition {
        AgentCondition::Baseline => {
            let scenario = plan.scenario.as_ref().expect("baseline carries a scenario");
            format!(
                "{}\n\nReply with a single JSON object of the form\n{{\"net_total\": <integer>, \
                 \"next_action\": \"continue\"|\"escalate\"|\"halt\"}}",
                render_scenario(scenario, None)
            )
        }
        AgentCondition::CountInsert => {
            let scenario = plan.scenario.as_ref().expect("count_insert carries a scenario");
            let marker_lines: Vec<String> = plan
                .tokens
                .as_ref()
                .expect("count_insert carries tokens")
                .iter()
                .map(|t| format!("m: {t}"))
                .collect();
            format!(
                "{}\n\nAlso count the audit marker lines (lines beginning \"m:\").\n\nReply with \
                 a single JSON object of the form\n{{\"marker_count\": <integer>, \"net_total\": \
                 <integer>, \"next_action\": \"continue\"|\"escalate\"|\"halt\"}}",
                render_scenario(scenario, Some(&marker_lines))
            )
        }
        AgentCondition::CopyExternalize => {
            format!(
                "Audit marker sequence:\n{}\n\nWrite the marker sequence to \
                 scratch/marker_sequence.txt exactly as given.\n\nReply in exactly this \
                 format:\n{FILE_HEADER}\n<the marker sequence exactly as given>\nEND",
                plan.sequence().expect("copy carries tokens")
            )
        }
        AgentCondition::CopyThenAgent => {
            let scenario = plan.scenario.as_ref().expect("copy_then_agent carries a scenario");
            format!(
                "Audit marker sequence:\n{}\n\n{}\n\nFirst write the marker sequence to \
                 scratch/marker_sequence.txt exactly as given, then carry out the \
                 procedure.\n\nReply in exactly this format:\n{FILE_HEADER}\n<the marker \
                 sequence exactly as given>\nEND\n{{\"net_total\": <integer>, \"next_action\": \
                 \"continue\"|\"escalate\"|\"halt\"}}",
                plan.sequence().expect("copy carries tokens"),
                render_scenario(scenario, None)
            )
        }
    };
    let inline = format!("{AGENT_SYSTEM_TEXT}\n\n{user_text}");
    PromptBundle {
        system_text: AGENT_SYSTEM_TEXT.to_string(),
        user_text,
        inline_fallback_text: inline,
        target_count: plan.level,
        motif: Motif::new("m", ", "),
        assay_kind: AssayKind::AgentOp,
        trial_key: (plan.condition.index() << 32) | plan.trial as u64,
        tier_center: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParse {
    pub marker_count: Option<i64>,
    pub net_total: Option<i64>,
    pub next_action: Option<String>,
    pub copied: Option<String>,
    pub strict: bool,
}

fn extract_file_block(text: &str) -> Option<(&str, &str, &str)> {
    let header = format!("{FILE_HEADER}\n");
    let start = text.find(&header)?;
    let body_start = start + header.len();
    let end_rel = text[body_start..].find("\nEND")?;
    let copied = &text[body_start..body_start + end_rel];
    let before = &text[..start];
    let after = &text[body_start + end_rel + "\nEND".len()..];
    Some((copied, before, after))
}

pub fn parse_agent_response(text: &str, condition: AgentCondition) -> AgentParse {
    let block = extract_file_block(text);
    let json_domain = match (condition, &block) {
        (AgentCondition::CopyThenAgent, Some((_, _, after))) => *after,
        _ => text,
    };
    let json = find_json_object(json_domain);
    let (marker_count, net_total, next_action) = match &json {
        Some((v, _)) => (
            v.get("marker_count").and_then(value_as_i64),
            v.get("net_total").and_then(value_as_i64),
            v.get("next_action").and_then(|a| a.as_str()).map(str::to_string),
        ),
        None => (None, None, None),
    };
    let strict = match condition {
        AgentCondition::Baseline | AgentCondition::CountInsert => {
            json.as_ref().is_some_and(|(_, s)| *s)
        }
        AgentCondition::CopyExternalize => block
            .as_ref()
            .is_some_and(|(_, before, after)| before.trim().is_empty() && after.trim().is_empty()),
        AgentCondition::CopyThenAgent => block.as_ref().is_some_and(|(_, before, after)| {
            before.trim().is_empty()
                && serde_json::from_str::<serde_json::Value>(after.trim())
                    .map(|v| v.is_object())
                    .unwrap_or(false)
        }),
    };
    AgentParse {
        marker_count,
        net_total,
        next_action,
        copied: block.map(|(c, _, _)| c.to_string()),
        strict,
    }
}

/// One scored trial; the unit the report aggregates and fixtures encode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTrialOutcome {
    pub condition: AgentCondition,
    pub level: u64,
    pub trial: u32,
    /// The condition's primary field came back at all.
    pub parsed: bool,
    /// The reply followed the requested format exactly.
    pub strict: bool,
    /// Count matched the level, or the copy was verbatim; for the baseline,
    /// the procedure's fields were right.
    pub exact: bool,
    /// Both procedure fields correct; None where there is no procedure.
    pub agent_correct: Option<bool>,
}

pub fn score_agent_trial(plan: &AgentPlan, text: &str) -> AgentTrialOutcome {
    let parse = parse_agent_response(text, plan.condition);
    let agent_correct = plan.scenario.as_ref().map(|s| {
        parse.net_total == Some(s.net_total())
            && parse.next_action.as_deref() == Some(s.next_action())
    });
    let parsed = match plan.condition {
        AgentCondition::Baseline => parse.net_total.is_some(),
        AgentCondition::CountInsert => parse.marker_count.is_some(),
        AgentCondition::CopyExternalize | AgentCondition::CopyThenAgent => parse.copied.is_some(),
    };
    let exact = match plan.condition {
        AgentCondition::Baseline => agent_correct.unwrap_or(false),
        AgentCondition::CountInsert => parse.marker_count == Some(plan.level as i64),
        AgentCondition::CopyExternalize | AgentCondition::CopyThenAgent => {
            parse.copied.as_deref() == plan.sequence().as_deref()
        }
    };
    AgentTrialOutcome {
        condition: plan.condition,
        level: plan.level,
        trial: plan.trial,
        parsed,
        strict: parse.strict,
        exact,
        agent_correct,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u64,
    pub trials: u32,
    pub exact: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConditionReport {
    pub condition: AgentCondition,
    pub trials: u32,
    pub parse_rate: f64,
    pub strict_rate: f64,
    pub exact_rate: f64,
    pub agent_rate: Option<f64>,
    /// Highest level at which every trial was exact.
    pub last_full_success: Option<u64>,
    /// Lowest level at which no trial was exact.
    pub first_all_fail: Option<u64>,
    pub per_level: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBatteryReport {
    pub conditions: Vec<AgentConditionReport>,
}

impl AgentBatteryReport {
    pub fn condition(&self, c: AgentCondition) -> Option<&AgentConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }
}

/// Aggregates outcomes into per-condition reports. Pure; shared by live
/// runs and fixtures.
pub fn score_agent_outcomes(outcomes: &[AgentTrialOutcome]) -> AgentBatteryReport {
    let mut conditions = Vec::new();
    for condition in AgentCondition::ALL {
        let rows: Vec<&AgentTrialOutcome> =
            outcomes.iter().filter(|o| o.condition == condition).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let mut levels: Vec<u64> = rows.iter().map(|o| o.level).collect();
        levels.sort_unstable();
        levels.dedup();
        let per_level: Vec<LevelSummary> = levels
            .iter()
            .map(|&level| {
                let at: Vec<&&AgentTrialOutcome> =
                    rows.iter().filter(|o| o.level == level).collect();
                LevelSummary {
                    level,
                    trials: at.len() as u32,
                    exact: at.iter().filter(|o| o.exact).count() as u32,
                }
            })
            .collect();
        let last_full_success = per_level
            .iter()
            .filter(|l| l.exact == l.trials && l.trials > 0)
            .map(|l| l.level)
            .max();
        let first_all_fail =
            per_level.iter().filter(|l| l.exact == 0).map(|l| l.level).min();
        let with_agent: Vec<bool> = rows.iter().filter_map(|o| o.agent_correct).collect();
        let agent_rate = (!with_agent.is_empty())
            .then(|| with_agent.iter().filter(|&&b| b).count() as f64 / with_agent.len() as f64);
        conditions.push(AgentConditionReport {
            condition,
            trials: rows.len() as u32,
            parse_rate: rows.iter().filter(|o| o.parsed).count() as f64 / n,
            strict_rate: rows.iter().filter(|o| o.strict).count() as f64 / n,
            exact_rate: rows.iter().filter(|o| o.exact).count() as f64 / n,
            agent_rate,
            last_full_success,
            first_all_fail,
            per_level,
        });
    }
    AgentBatteryReport { conditions }
}

/// Runs the full battery through the gateway and scores it.
pub fn run_agent_battery(
    gateway: &Gateway,
    config: &AgentConfig,
    _ctx: &RunContext,
) -> Result<(Vec<AgentTrialOutcome>, AgentBatteryReport), BatteryError> {
    let plans = plan_agent_trials(config);
    let bundles: Vec<PromptBundle> = plans.iter().map(build_agent_prompt).collect();
    let responses = gateway.run_batch(&bundles).map_err(|e| match e {
        GatewayError::Closed => BatteryError::Aborted,
        other => BatteryError::Config(other.to_string()),
    })?;
    let outcomes: Vec<AgentTrialOutcome> = plans
        .iter()
        .zip(&responses)
        .map(|(plan, resp)| score_agent_trial(plan, &resp.text))
        .collect();
    let report = score_agent_outcomes(&outcomes);
    Ok((outcomes, report))
}

static BALANCES_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"A=(-?\d+), B=(-?\d+), C=(-?\d+)").expect("static regex"));
static TXN_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^T\d: [ABC] ([+-]\d+)$").expect("static regex"));
static FLAG_ID_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"T\d").expect("static regex"));

/// Re-derives the procedure's ground truth from prompt text alone. Public
/// because it doubles as an independent check on the prompt generator.
pub fn scenario_from_prompt(user_text: &str) -> Option<(i64, &'static str)> {
    let caps = BALANCES_RE.captures(user_text)?;
    let mut net: i64 = 0;
    for i in 1..=3 {
        net += caps.get(i)?.as_str().parse::<i64>().ok()?;
    }
    let mut txns = 0;
    for m in TXN_RE.captures_iter(user_text) {
        net += m.get(1)?.as_str().parse::<i64>().ok()?;
        txns += 1;
    }
    if txns == 0 {
        return None;
    }
    let flagged_line =
        user_text.lines().find(|l| l.starts_with("Flagged transaction ids:"))?;
    let flagged = FLAG_ID_RE.find_iter(flagged_line).count();
    let action = if net < 0 {
        "halt"
    } else if flagged >= 2 {
        "escalate"
    } else {
        "continue"
    };
    Some((net, action))
}

/// Synthetic model for the agent battery. Counts marker lines and copies
/// token sequences from its own prompt, exactly up to the respective
/// capacity; the procedure is recomputed from the prompt and optionally
/// sabotaged above a marker threshold to model interference.
#[derive(Debug, Clone, Copy)]
pub struct AgentOracle {
    pub count_capacity: u64,
    pub copy_capacity: u64,
    /// Procedure fields go wrong when the marker load exceeds this.
    pub agent_fail_above: Option<u64>,
}

impl AgentOracle {
    pub fn unlimited() -> Self {
        AgentOracle { count_capacity: u64::MAX, copy_capacity: u64::MAX, agent_fail_above: None }
    }
}

impl SyntheticResponder for AgentOracle {
    fn respond(&self, bundle: &PromptBundle, _output_cap: u32) -> SyntheticReply {
        let user = &bundle.user_text;
        let condition = if user.contains(FILE_HEADER) {
            if user.contains("net_total") {
                AgentCondition::CopyThenAgent
            } else {
                AgentCondition::CopyExternalize
            }
        } else if user.contains("marker_count") {
            AgentCondition::CountInsert
        } else {
            AgentCondition::Baseline
        };

        let tokens: Vec<String> = match condition {
            AgentCondition::CountInsert => user
                .lines()
                .filter(|l| l.starts_with("m: "))
                .map(|l| l["m: ".len()..].to_string())
                .collect(),
            AgentCondition::CopyExternalize | AgentCondition::CopyThenAgent => user
                .split("Audit marker sequence:\n")
                .nth(1)
                .and_then(|rest| rest.split("\n\n").next())
                .map(|seq| seq.split(", ").map(str::to_string).collect())
                .unwrap_or_default(),
            AgentCondition::Baseline => Vec::new(),
        };
        let n = tokens.len() as u64;

        let agent_fields = scenario_from_prompt(user).map(|(net, action)| {
            if self.agent_fail_above.is_some_and(|th| n > th) {
                (net + 7, if action == "continue" { "escalate" } else { "continue" })
            } else {
                (net, action)
            }
        });

        match condition {
            AgentCondition::Baseline => {
                let (net, action) = agent_fields.expect("baseline prompt carries the procedure");
                SyntheticReply::complete(format!(
                    "{{\"net_total\": {net}, \"next_action\": \"{action}\"}}"
                ))
            }
            AgentCondition::CountInsert => {
                let (net, action) = agent_fields.expect("prompt carries the procedure");
                let count = n.min(self.count_capacity);
                SyntheticReply::complete(format!(
                    "{{\"marker_count\": {count}, \"net_total\": {net}, \"next_action\": \
                     \"{action}\"}}"
                ))
            }
            AgentCondition::CopyExternalize | AgentCondition::CopyThenAgent => {
                let kept = tokens
                    .iter()
                    .take(self.copy_capacity.min(n) as usize)
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ");
                let mut reply = format!("{FILE_HEADER}\n{kept}\nEND");
                if condition == AgentCondition::CopyThenAgent {
                    let (net, action) = agent_fields.expect("prompt carries the procedure");
                    reply.push_str(&format!(
                        "\n{{\"net_total\": {net}, \"next_action\": \"{action}\"}}"
                    ));
                }
                SyntheticReply::complete(reply)
            }
        }
    }
}

/// Per-level outcome counts, the unit recorded fixtures are written in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub level: u64,
    pub trials: u32,
    pub parsed: u32,
    pub strict: u32,
    pub exact: u32,
    #[serde(default)]
    pub agent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAllocation {
    pub model: String,
    pub condition: AgentCondition,
    pub rows: Vec<AllocationRow>,
}

/// Expands per-level counts into individual trial outcomes, validating the
/// containment every count table must satisfy.
pub fn expand_allocation(
    allocation: &ConditionAllocation,
) -> Result<Vec<AgentTrialOutcome>, BatteryError> {
    let mut outcomes = Vec::new();
    for row in &allocation.rows {
        let bad = |what: &str| {
            Err(BatteryError::Config(format!(
                "{} {} level {}: {what}",
                allocation.model,
                allocation.condition.as_str(),
                row.level
            )))
        };
        if row.parsed > row.trials {
            return bad("parsed exceeds trials");
        }
        if row.strict > row.parsed {
            return bad("strict exceeds parsed");
        }
        if row.exact > row.parsed {
            return bad("exact exceeds parsed");
        }
        if row.agent.is_some_and(|a| a > row.parsed) {
            return bad("agent exceeds parsed");
        }
        for trial in 0..row.trials {
            outcomes.push(AgentTrialOutcome {
                condition: allocation.condition,
                level: row.level,
                trial,
                parsed: trial < row.parsed,
                strict: trial < row.strict,
                exact: trial < row.exact,
                agent_correct: row.agent.map(|a| trial < a),
            });
        }
    }
    Ok(outcomes)
}
