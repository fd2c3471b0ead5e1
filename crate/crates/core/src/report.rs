//! Run persistence and analytics.
//!
//! A run writes into one directory: `config.json` (manifest), then
//! `trials.jsonl` and `tiers.jsonl` appended line by line as evaluation
//! proceeds, and finally `estimate.json`, `summary.csv`, and `trace.svg`
//! when it completes. Appending and flushing per record means an
//! interrupted run keeps everything it paid for; [`RunStore::resume`]
//! reloads the tier summaries so the ladder can replay its decision path
//! without re-querying.
//!
//! The emitters are deterministic: rendering the same estimate twice
//! produces byte-identical CSV and SVG, so re-running a report never dirties
//! a checked-in artifact.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::assay::{AssayKind, LadderParams};
use crate::ladder::{CapacityEstimate, RunContext, TierResult, TrialRecord, TrialSink};

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const TIERS_FILE: &str = "tiers.jsonl";
pub const MANIFEST_FILE: &str = "config.json";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRACE_FILE: &str = "trace.svg";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("report rendering failed: {0}")]
    Render(String),
    #[error("{0}")]
    Insufficient(String),
}

fn io_err(path: &Path, source: std::io::Error) -> ReportError {
    ReportError::Io { path: path.display().to_string(), source }
}

/// Everything needed to reproduce a run, written before the first query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub context: RunContext,
    pub assay: AssayKind,
    pub motif_label: String,
    pub params: LadderParams,
}

fn assay_name(kind: AssayKind) -> &'static str {
    match kind {
        AssayKind::Counting => "counting",
        AssayKind::Nested => "nested",
        AssayKind::DualTask => "dual_task",
        AssayKind::AgentOp => "agent_op",
    }
}

/// Append-only persistence for one run directory.
pub struct RunStore {
    dir: PathBuf,
    manifest: RunManifest,
    trials: BufWriter<File>,
    tiers: BufWriter<File>,
}

impl RunStore {
    /// Starts a fresh run directory, writing the manifest immediately.
    pub fn create(dir: impl AsRef<Path>, manifest: RunManifest) -> Result<Self, ReportError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ReportError::Render(e.to_string()))?;
        fs::write(&manifest_path, body + "\n").map_err(|e| io_err(&manifest_path, e))?;
        let open = |name: &str| -> Result<BufWriter<File>, ReportError> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            Ok(BufWriter::new(file))
        };
        let trials = open(TRIALS_FILE)?;
        let tiers = open(TIERS_FILE)?;
        Ok(RunStore { dir, manifest, trials, tiers })
    }

    /// Reopens an interrupted run directory for appending and returns the
    /// tier summaries recorded so far, in evaluation order, for replay.
    /// A tier that was mid-flight when the run died has no summary line, so
    /// it re-evaluates on resume; its trial lines are then appended a second
    /// time, which downstream readers must tolerate (the tier summaries,
    /// not the trial log, drive the ladder).
    pub fn resume(dir: impl AsRef<Path>) -> Result<(Self, Vec<TierResult>), ReportError> {
        let dir = dir.as_ref().to_path_buf();
        let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let tiers: Vec<TierResult> = read_jsonl(&dir.join(TIERS_FILE))?;
        let open = |name: &str| -> Result<BufWriter<File>, ReportError> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            Ok(BufWriter::new(file))
        };
        let trials_w = open(TRIALS_FILE)?;
        let tiers_w = open(TIERS_FILE)?;
        Ok((RunStore { dir, manifest, trials: trials_w, tiers: tiers_w }, tiers))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Seals the run: writes the estimate and renders the derived reports.
    pub fn finish(mut self, estimate: &CapacityEstimate) -> Result<(), ReportError> {
        self.trials.flush().map_err(|e| io_err(&self.dir.join(TRIALS_FILE), e))?;
        self.tiers.flush().map_err(|e| io_err(&self.dir.join(TIERS_FILE), e))?;
        let est_path = self.dir.join(ESTIMATE_FILE);
        let body = serde_json::to_string_pretty(estimate)
            .map_err(|e| ReportError::Render(e.to_string()))?;
        fs::write(&est_path, body + "\n").map_err(|e| io_err(&est_path, e))?;
        emit_reports(&self.dir, &self.manifest, estimate)
    }
}

impl TrialSink for RunStore {
    fn record_trial(&mut self, trial: &TrialRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(trial).map_err(std::io::Error::other)?;
        self.trials.write_all(line.as_bytes())?;
        self.trials.write_all(b"\n")?;
        self.trials.flush()
    }

    fn record_tier(&mut self, tier: &TierResult) -> std::io::Result<()> {
        let line = serde_json::to_string(tier).map_err(std::io::Error::other)?;
        self.tiers.write_all(line.as_bytes())?;
        self.tiers.write_all(b"\n")?;
        self.tiers.flush()
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&body).map_err(|e| ReportError::Malformed {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a JSONL file, reporting the 1-based line number of the first
/// malformed record. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ReportError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub trials: Vec<TrialRecord>,
    pub tiers: Vec<TierResult>,
    /// Absent while the run is still in flight.
    pub estimate: Option<CapacityEstimate>,
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<LoadedRun, ReportError> {
    let dir = dir.as_ref();
    let manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let trials = read_jsonl(&dir.join(TRIALS_FILE))?;
    let tiers = read_jsonl(&dir.join(TIERS_FILE))?;
    let est_path = dir.join(ESTIMATE_FILE);
    let estimate = if est_path.exists() { Some(read_json(&est_path)?) } else { None };
    Ok(LoadedRun { manifest, trials, tiers, estimate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub value: i64,
    pub count: u64,
    /// Share of the parsed post-boundary answers.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerHistogram {
    /// Post-boundary trials considered.
    pub considered: u64,
    /// How many of those parsed to an integer at all.
    pub parsed: u64,
    /// Distinct answers, most frequent first (value breaks ties).
    pub bins: Vec<HistogramBin>,
}

/// Tallies what the model answers once targets exceed the instability
/// boundary. Heavy mass on a handful of values far from any target is the
/// signature of collapse onto preferred numbers rather than noisy counting.
pub fn attractor_histogram(trials: &[TrialRecord], boundary: u64) -> AnswerHistogram {
    let mut considered = 0u64;
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    for t in trials {
        if t.target <= boundary {
            continue;
        }
        considered += 1;
        if let Some(v) = t.parsed {
            *counts.entry(v).or_default() += 1;
        }
    }
    let parsed: u64 = counts.values().sum();
    let denom = parsed.max(1) as f64;
    let mut bins: Vec<HistogramBin> = counts
        .into_iter()
        .map(|(value, count)| HistogramBin { value, count, fraction: count as f64 / denom })
        .collect();
    bins.sort_by(|a, b| b.count.cmp(&a.count).then(a.value.cmp(&b.value)));
    AnswerHistogram { considered, parsed, bins }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityWindow {
    pub label: String,
    pub stable_lower: u64,
    pub unstable_upper: u64,
    pub censored: bool,
}

/// Capacity windows across runs, with floor failures kept out of the
/// overlay (they have no bracket to draw) and listed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOverlay {
    pub windows: Vec<CapacityWindow>,
    pub below_minimum: Vec<String>,
}

pub fn boundary_overlay<'a>(
    runs: impl IntoIterator<Item = (&'a str, &'a CapacityEstimate)>,
) -> BoundaryOverlay {
    let mut windows = Vec::new();
    let mut below = Vec::new();
    for (label, est) in runs {
        match est.stable_lower {
            Some(lo) if !est.below_minimum => windows.push(CapacityWindow {
                label: label.to_string(),
                stable_lower: lo,
                unstable_upper: est.unstable_upper,
                censored: est.censored,
            }),
            _ => below.push(label.to_string()),
        }
    }
    BoundaryOverlay { windows, below_minimum: below }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub label: String,
    pub capacity: u64,
    pub total_tokens: u64,
    /// Sum of every target presented across all tiers.
    pub items_presented: u64,
    pub tokens_per_item: f64,
    /// More than twice the cheapest run's cost per item.
    pub flagged: bool,
}

/// Cost-per-item comparison across runs of the same assay. A run burning
/// more than twice the tokens per presented item of the cheapest run is
/// flagged as off the frontier.
pub fn efficiency_frontier<'a>(
    runs: impl IntoIterator<Item = (&'a str, &'a CapacityEstimate)>,
) -> Vec<EfficiencyPoint> {
    let mut points: Vec<EfficiencyPoint> = runs
        .into_iter()
        .map(|(label, est)| {
            let items: u64 = est.tiers.iter().flat_map(|t| t.targets.iter()).sum();
            EfficiencyPoint {
                label: label.to_string(),
                capacity: capacity_value(est),
                total_tokens: est.total_tokens,
                items_presented: items,
                tokens_per_item: est.total_tokens as f64 / items.max(1) as f64,
                flagged: false,
            }
        })
        .collect();
    let cheapest = points.iter().map(|p| p.tokens_per_item).fold(f64::INFINITY, f64::min);
    for p in &mut points {
        p.flagged = p.tokens_per_item > 2.0 * cheapest;
    }
    points
}

/// Scalar capacity used in cross-run comparisons: zero when the run failed
/// the floor tier.
pub fn capacity_value(est: &CapacityEstimate) -> u64 {
    if est.below_minimum {
        0
    } else {
        est.capacity
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    /// Pearson correlation between ln(1 + capacity) and the score.
    pub pearson_log: f64,
    /// Spearman rank correlation with average ranks over ties.
    pub spearman: f64,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ReportError> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(ReportError::Insufficient(
            "correlation undefined: one variable is constant".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// 1-based ranks, with tied values sharing their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Correlates per-model capacities against an external per-model score.
/// Capacities go in raw (zero for floor failures); the Pearson coefficient
/// is computed on ln(1 + capacity) to tame the geometric spread, and the
/// Spearman coefficient on average ranks so ties are handled exactly.
pub fn correlate_capacity(rows: &[(u64, f64)]) -> Result<CorrelationReport, ReportError> {
    if rows.len() < 3 {
        return Err(ReportError::Insufficient(format!(
            "need at least 3 paired observations, got {}",
            rows.len()
        )));
    }
    let caps: Vec<f64> = rows.iter().map(|(c, _)| (1.0 + *c as f64).ln()).collect();
    let scores: Vec<f64> = rows.iter().map(|(_, s)| *s).collect();
    let pearson_log = pearson(&caps, &scores)?;
    let spearman = pearson(&average_ranks(&caps), &average_ranks(&scores))?;
    Ok(CorrelationReport { n: rows.len(), pearson_log, spearman })
}

/// Per-category tallies over a trial log, most frequent first.
pub fn audit_breakdown(trials: &[TrialRecord]) -> Vec<(crate::parse::AuditCategory, u64)> {
    let mut counts: BTreeMap<&'static str, (crate::parse::AuditCategory, u64)> = BTreeMap::new();
    for t in trials {
        counts.entry(t.audit_category.as_str()).or_insert((t.audit_category, 0)).1 += 1;
    }
    let mut out: Vec<(crate::parse::AuditCategory, u64)> =
        counts.into_values().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.as_str().cmp(b.0.as_str())));
    out
}

/// Writes `summary.csv` and `trace.svg` into the run directory.
pub fn emit_reports(
    dir: &Path,
    manifest: &RunManifest,
    estimate: &CapacityEstimate,
) -> Result<(), ReportError> {
    let csv_path = dir.join(SUMMARY_FILE);
    fs::write(&csv_path, render_summary_csv(manifest, estimate)?)
        .map_err(|e| io_err(&csv_path, e))?;
    let svg_path = dir.join(TRACE_FILE);
    fs::write(&svg_path, render_trace_svg(manifest, estimate))
        .map_err(|e| io_err(&svg_path, e))?;
    Ok(())
}

/// One row per tier, in evaluation order. Deterministic: the same estimate
/// renders to identical bytes.
pub fn render_summary_csv(
    manifest: &RunManifest,
    estimate: &CapacityEstimate,
) -> Result<String, ReportError> {
    let render = |e: csv::Error| ReportError::Render(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run_id",
        "model_id",
        "assay",
        "motif",
        "tier_index",
        "center",
        "nmae",
        "stable",
        "unparsable",
        "input_tokens",
        "output_tokens",
    ])
    .map_err(render)?;
    for t in &estimate.tiers {
        w.write_record([
            manifest.context.run_id.as_str(),
            manifest.context.model_id.as_str(),
            assay_name(manifest.assay),
            manifest.motif_label.as_str(),
            &t.tier_index.to_string(),
            &t.center.to_string(),
            &format!("{:.6}", t.nmae),
            if t.stable { "true" } else { "false" },
            &t.unparsable.to_string(),
            &t.input_tokens.to_string(),
            &t.output_tokens.to_string(),
        ])
        .map_err(render)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ReportError::Render(e.to_string()))
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the search trace: tier centers in evaluation order on a log
/// scale, stable tiers and unstable tiers in different colors, and the
/// final capacity window as a shaded band. Pure string assembly, no
/// graphics dependency, byte-identical across calls.
pub fn render_trace_svg(manifest: &RunManifest, estimate: &CapacityEstimate) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 616.0;
    const TOP: f64 = 56.0;
    const BOTTOM: f64 = 316.0;
    const STABLE_COLOR: &str = "#2a7f62";
    const UNSTABLE_COLOR: &str = "#c04a3a";

    let tiers = &estimate.tiers;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W:.0} {H:.0}\" \
         font-family=\"monospace\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{W:.0}\" height=\"{H:.0}\" fill=\"#ffffff\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{LEFT:.0}\" y=\"22\" font-size=\"13\" fill=\"#222222\">{} / {}</text>\n",
        xml_escape(&manifest.context.run_id),
        xml_escape(&manifest.context.model_id)
    ));
    let verdict = if estimate.below_minimum {
        format!("below minimum: unstable at the {} floor", estimate.unstable_upper)
    } else if estimate.censored {
        format!("capacity at least {} (censored at the length cap)", estimate.capacity)
    } else {
        format!(
            "capacity {} (window {} to {})",
            estimate.capacity,
            estimate.stable_lower.unwrap_or(0),
            estimate.unstable_upper
        )
    };
    s.push_str(&format!(
        "<text x=\"{LEFT:.0}\" y=\"40\" font-size=\"12\" fill=\"#555555\">{}</text>\n",
        xml_escape(&verdict)
    ));

    if tiers.is_empty() {
        s.push_str("<text x=\"70\" y=\"180\" font-size=\"12\" fill=\"#555555\">no tiers \
                    evaluated</text>\n</svg>\n");
        return s;
    }

    let min_c = tiers.iter().map(|t| t.center).min().expect("nonempty").max(1) as f64;
    let max_c = tiers.iter().map(|t| t.center).max().expect("nonempty") as f64;
    let lo_ln = (min_c * 0.8).ln();
    let hi_ln = (max_c * 1.25).ln();
    let y_of = |c: f64| BOTTOM - (c.ln() - lo_ln) / (hi_ln - lo_ln) * (BOTTOM - TOP);
    let x_of = |i: usize| {
        if tiers.len() <= 1 {
            (LEFT + RIGHT) / 2.0
        } else {
            LEFT + i as f64 / (tiers.len() - 1) as f64 * (RIGHT - LEFT)
        }
    };

    // Gridlines at powers of ten inside the y range.
    for p in 0..=9u32 {
        let v = 10f64.powi(p as i32);
        if v.ln() < lo_ln || v.ln() > hi_ln {
            continue;
        }
        let y = y_of(v);
        s.push_str(&format!(
            "<line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{RIGHT:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#888888\" \
             text-anchor=\"end\">{}</text>\n",
            LEFT - 6.0,
            y + 3.0,
            v as u64
        ));
    }

    // Final window band.
    if let (Some(lo), false) = (estimate.stable_lower, estimate.below_minimum) {
        let y_top = y_of(estimate.unstable_upper as f64);
        let y_bot = y_of(lo as f64);
        s.push_str(&format!(
            "<rect x=\"{LEFT:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
             fill=\"{STABLE_COLOR}\" fill-opacity=\"0.12\"/>\n",
            y_top,
            RIGHT - LEFT,
            (y_bot - y_top).max(1.0)
        ));
    }

    // Search path.
    let pts: Vec<String> = tiers
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{:.2},{:.2}", x_of(i), y_of(t.center as f64)))
        .collect();
    if pts.len() > 1 {
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1\"/>\n",
            pts.join(" ")
        ));
    }
    for (i, t) in tiers.iter().enumerate() {
        let color = if t.stable { STABLE_COLOR } else { UNSTABLE_COLOR };
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"><title>tier {}: center \
             {}, nmae {:.3}</title></circle>\n",
            x_of(i),
            y_of(t.center as f64),
            t.tier_index,
            t.center,
            t.nmae
        ));
    }

    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#555555\" \
         text-anchor=\"middle\">tiers in evaluation order</text>\n",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 24.0
    ));
    s.push_str("</svg>\n");
    s
}
