//! Run configuration: the TOML file schema, flag overrides, and resolution
//! into the concrete objects the subcommands drive.
//!
//! Everything here is plain data. Secrets never appear: remote endpoints
//! carry only the *name* of the environment variable holding the key, and
//! the resolved configuration echoed into each run directory contains
//! nothing that was not already in the config file or on the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use scc_core::assay::{AssayKind, LadderParams, Motif};
use scc_core::battery::agent::{sample_marker_levels, AgentConfig, AgentOracle, MARKER_LEVELS};
use scc_core::battery::dual::{DualConfig, DualLoadOracle, GradedDualOracle};
use scc_core::gateway::{EndpointKind, Gateway, ModelEndpoint, SyntheticResponder};
use scc_core::nested::NestedSaturatingOracle;
use scc_core::oracle::{build_oracle, Attractor, OracleConfig, OracleSpec, RenderStyle};
use serde::{Deserialize, Serialize};

/// Which measurement a run performs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum AssayChoice {
    /// Homogeneous-sequence counting ladder.
    #[default]
    Count,
    /// Nested key-path counting ladder.
    Nested,
    /// Dual-task battery: counting under concurrent load.
    Dual,
    /// Agent-operation battery: procedure fidelity under marker load.
    Agent,
    /// Exhaustive single-trial sweep over a target range.
    Sweep,
}

impl AssayChoice {
    pub fn name(self) -> &'static str {
        match self {
            AssayChoice::Count => "count",
            AssayChoice::Nested => "nested",
            AssayChoice::Dual => "dual",
            AssayChoice::Agent => "agent",
            AssayChoice::Sweep => "sweep",
        }
    }

    /// The record-level assay tag for runs that go through the ladder store.
    pub fn assay_kind(self) -> AssayKind {
        match self {
            AssayChoice::Nested => AssayKind::Nested,
            AssayChoice::Dual => AssayKind::DualTask,
            AssayChoice::Agent => AssayKind::AgentOp,
            _ => AssayKind::Counting,
        }
    }
}

/// Top-level TOML config file. Every field is optional; flags override.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Run label; the run id is derived from it and the seed.
    pub label: Option<String>,
    /// Model identifier sent to the endpoint and stamped on every record.
    pub model: Option<String>,
    pub endpoint: Option<EndpointSection>,
    pub assay: Option<AssaySection>,
    pub ladder: Option<LadderSection>,
    pub oracle: Option<OracleChoice>,
    pub output: Option<OutputSection>,
    pub dual: Option<DualSection>,
    pub agent: Option<AgentSection>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    /// Preset name filling in base_url and auth_env_var (openai, openrouter,
    /// deepseek, together, local). Explicit fields win over the preset.
    pub provider: Option<String>,
    pub base_url: Option<String>,
    /// Name of the environment variable holding the bearer token. The value
    /// is read per request by the gateway and never written anywhere.
    pub auth_env_var: Option<String>,
    /// Fold the system text into the user message for endpoints that reject
    /// system roles.
    pub inline_system: Option<bool>,
    pub parallelism: Option<u32>,
    pub initial_output_cap: Option<u32>,
    pub retry_output_cap: Option<u32>,
    pub preflight_probes: Option<u32>,
    pub request_timeout_secs: Option<u64>,
    pub retry_backoff_ms: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssaySection {
    pub kind: Option<AssayChoice>,
    /// Counting motif item, e.g. "a".
    pub item: Option<String>,
    /// Counting motif delimiter, e.g. ", ".
    pub delimiter: Option<String>,
    pub sweep_from: Option<u64>,
    pub sweep_to: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub base_length: Option<u64>,
    pub jitter: Option<f64>,
    pub trials_per_tier: Option<u32>,
    pub stability_threshold: Option<f64>,
    pub refine_step_fraction: Option<f64>,
    pub max_length: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualSection {
    pub seed: Option<u64>,
    pub trials_per_condition: Option<u32>,
    pub count_min: Option<u64>,
    pub count_max: Option<u64>,
    /// JSONL file of benchmark tasks (id, category, question, answer).
    pub tasks_file: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub seed: Option<u64>,
    /// Explicit marker levels; wins over `sampled_levels`.
    pub levels: Option<Vec<u64>>,
    /// Draw a fresh geometric level grid from the seed instead of the
    /// pinned default grid.
    pub sampled_levels: Option<bool>,
    pub trials_per_level: Option<u32>,
    pub copy_trials_per_level: Option<u32>,
    pub baseline_trials: Option<u32>,
}

fn default_guesser_alpha() -> f64 {
    0.2
}

fn unlimited() -> u64 {
    u64::MAX
}

/// Synthetic model stand-in selection, from config files or the compact
/// `--oracle` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleChoice {
    /// Exact up to capacity, drift band above, collapse onto attractors.
    Attractor(OracleConfig),
    /// Answers `min(target, capacity)`.
    Saturating { true_capacity: u64 },
    /// Ignores the prompt and plays the optimal fixed guess.
    Guesser {
        #[serde(default = "default_guesser_alpha")]
        alpha: f64,
    },
    /// Burns the whole output budget without ever answering.
    CapExhausted,
    /// Actually performs the nested key-path task, saturating at capacity.
    NestedSaturating { true_capacity: u64 },
    /// Counts exactly up to a capacity that shrinks when the prompt carries
    /// a concurrent task.
    DualLoad { plain_capacity: u64, loaded_capacity: u64 },
    /// Like dual_load, but a benchmark question costs more capacity than
    /// the matched controls.
    DualGraded { plain_capacity: u64, control_capacity: u64, benchmark_capacity: u64 },
    /// Follows the operations procedure; counting, copying, and the
    /// procedure itself degrade past their own limits.
    AgentOps {
        #[serde(default = "unlimited")]
        count_capacity: u64,
        #[serde(default = "unlimited")]
        copy_capacity: u64,
        #[serde(default)]
        agent_fail_above: Option<u64>,
    },
}

/// Collapse values far outside any jitter window, so a failed tier is
/// unmistakable in the error metric.
const FAR_ATTRACTORS: [Attractor; 2] = [
    Attractor { value: 17, weight: 0.5 },
    Attractor { value: 9_999_999, weight: 0.5 },
];

impl OracleChoice {
    pub fn kind_name(&self) -> &'static str {
        match self {
            OracleChoice::Attractor(_) => "attractor",
            OracleChoice::Saturating { .. } => "saturating",
            OracleChoice::Guesser { .. } => "guesser",
            OracleChoice::CapExhausted => "cap-exhausted",
            OracleChoice::NestedSaturating { .. } => "nested-saturating",
            OracleChoice::DualLoad { .. } => "dual-load",
            OracleChoice::DualGraded { .. } => "dual-graded",
            OracleChoice::AgentOps { .. } => "agent-ops",
        }
    }

    pub fn build(&self, seed: u64) -> Result<Arc<dyn SyntheticResponder>> {
        let spec = match self {
            OracleChoice::Attractor(config) => Some(OracleSpec::Attractor(config.clone())),
            OracleChoice::Saturating { true_capacity } => {
                Some(OracleSpec::Saturating { true_capacity: *true_capacity })
            }
            OracleChoice::Guesser { alpha } => Some(OracleSpec::Guesser { alpha: *alpha }),
            OracleChoice::CapExhausted => Some(OracleSpec::CapExhausted),
            _ => None,
        };
        if let Some(spec) = spec {
            return build_oracle(&spec, seed).map_err(|e| anyhow!("oracle: {e}"));
        }
        Ok(match *self {
            OracleChoice::NestedSaturating { true_capacity } => {
                Arc::new(NestedSaturatingOracle { true_capacity })
            }
            OracleChoice::DualLoad { plain_capacity, loaded_capacity } => {
                Arc::new(DualLoadOracle { plain_capacity, loaded_capacity })
            }
            OracleChoice::DualGraded { plain_capacity, control_capacity, benchmark_capacity } => {
                Arc::new(GradedDualOracle { plain_capacity, control_capacity, benchmark_capacity })
            }
            OracleChoice::AgentOps { count_capacity, copy_capacity, agent_fail_above } => {
                Arc::new(AgentOracle { count_capacity, copy_capacity, agent_fail_above })
            }
            _ => unreachable!("handled above"),
        })
    }
}

/// Parses the compact `--oracle` flag: `saturating:500`, `attractor:26`,
/// `guesser`, `guesser:0.25`, `cap-exhausted`, `nested-saturating:416`,
/// `dual-load:500,150`, `agent-ops`, `agent-ops:250,300[,199]`.
pub fn parse_oracle_flag(s: &str) -> Result<OracleChoice> {
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k.trim(), Some(r.trim())),
        None => (s.trim(), None),
    };
    let one = |what: &str| -> Result<u64> {
        rest.ok_or_else(|| anyhow!("oracle '{kind}' needs :<{what}>"))?
            .parse::<u64>()
            .with_context(|| format!("oracle '{kind}': bad {what}"))
    };
    let nums = || -> Result<Vec<u64>> {
        rest.unwrap_or("")
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<u64>().with_context(|| format!("oracle '{kind}': bad number '{p}'")))
            .collect()
    };
    match kind {
        "saturating" => Ok(OracleChoice::Saturating { true_capacity: one("capacity")? }),
        "nested-saturating" | "nested_saturating" => {
            Ok(OracleChoice::NestedSaturating { true_capacity: one("capacity")? })
        }
        "attractor" => Ok(OracleChoice::Attractor(OracleConfig {
            true_capacity: one("capacity")?,
            drift_band: 0,
            attractors: FAR_ATTRACTORS.to_vec(),
            collapse_style: RenderStyle::Plain,
        })),
        "guesser" => {
            let alpha = match rest {
                Some(r) => r.parse::<f64>().with_context(|| format!("oracle guesser: bad alpha '{r}'"))?,
                None => default_guesser_alpha(),
            };
            Ok(OracleChoice::Guesser { alpha })
        }
        "cap-exhausted" | "cap_exhausted" => {
            if rest.is_some() {
                return Err(anyhow!("oracle 'cap-exhausted' takes no argument"));
            }
            Ok(OracleChoice::CapExhausted)
        }
        "dual-load" | "dual_load" => {
            let v = nums()?;
            if v.len() != 2 {
                return Err(anyhow!("oracle 'dual-load' needs :<plain>,<loaded>"));
            }
            Ok(OracleChoice::DualLoad { plain_capacity: v[0], loaded_capacity: v[1] })
        }
        "dual-graded" | "dual_graded" => {
            let v = nums()?;
            if v.len() != 3 {
                return Err(anyhow!("oracle 'dual-graded' needs :<plain>,<control>,<benchmark>"));
            }
            Ok(OracleChoice::DualGraded {
                plain_capacity: v[0],
                control_capacity: v[1],
                benchmark_capacity: v[2],
            })
        }
        "agent-ops" | "agent_ops" => {
            let v = nums()?;
            match v.len() {
                0 => Ok(OracleChoice::AgentOps {
                    count_capacity: u64::MAX,
                    copy_capacity: u64::MAX,
                    agent_fail_above: None,
                }),
                2 | 3 => Ok(OracleChoice::AgentOps {
                    count_capacity: v[0],
                    copy_capacity: v[1],
                    agent_fail_above: v.get(2).copied(),
                }),
                _ => Err(anyhow!("oracle 'agent-ops' takes 0, 2, or 3 numbers")),
            }
        }
        other => Err(anyhow!(
            "unknown oracle '{other}'; expected saturating:<n>, attractor:<n>, guesser[:alpha], \
             cap-exhausted, nested-saturating:<n>, dual-load:<plain>,<loaded>, \
             dual-graded:<plain>,<control>,<benchmark>, or agent-ops[:count,copy[,fail-above]]"
        )),
    }
}

fn provider_defaults(name: &str) -> Option<(&'static str, &'static str)> {
    match name {
        "openai" => Some(("https://api.openai.com/v1", "OPENAI_API_KEY")),
        "openrouter" => Some(("https://openrouter.ai/api/v1", "OPENROUTER_API_KEY")),
        "deepseek" => Some(("https://api.deepseek.com", "DEEPSEEK_API_KEY")),
        "together" => Some(("https://api.together.xyz/v1", "TOGETHER_API_KEY")),
        "local" => Some(("http://localhost:8000/v1", "LOCAL_API_KEY")),
        _ => None,
    }
}

/// Flag-level overrides shared by `run` and `simulate`.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub model: Option<String>,
    pub provider: Option<String>,
    pub assay: Option<AssayChoice>,
    pub seed: Option<u64>,
    pub max_length: Option<u64>,
    pub out: Option<PathBuf>,
    pub oracle: Option<String>,
    pub parallelism: Option<u32>,
    pub label: Option<String>,
    pub sweep_from: Option<u64>,
    pub sweep_to: Option<u64>,
}

/// Fully-resolved run plan; serialized verbatim into the run directory so
/// every run embeds the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedRun {
    pub label: String,
    pub model: String,
    pub assay: AssayChoice,
    pub motif_item: String,
    pub motif_delimiter: String,
    pub sweep_from: u64,
    pub sweep_to: u64,
    pub params: LadderParams,
    pub parallelism: u32,
    pub endpoint: Option<ModelEndpoint>,
    pub oracle: Option<OracleChoice>,
    pub out_root: PathBuf,
    pub dual: DualConfig,
    pub dual_tasks_file: PathBuf,
    pub agent: AgentConfig,
}

impl ResolvedRun {
    pub fn motif(&self) -> Motif {
        Motif::new(&self.motif_item, &self.motif_delimiter)
    }

    /// Builds the gateway: a synthetic one when an oracle is selected, the
    /// remote endpoint otherwise.
    pub fn gateway(&self) -> Result<Gateway> {
        if let Some(choice) = &self.oracle {
            let responder = choice.build(self.params.seed)?;
            let mut endpoint = ModelEndpoint::synthetic(&self.model);
            endpoint.parallelism = self.parallelism;
            return Gateway::new(endpoint, Some(responder)).map_err(|e| anyhow!("gateway: {e}"));
        }
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| anyhow!("no endpoint configured; add [endpoint] or pass --oracle"))?;
        Gateway::new(endpoint, None).map_err(|e| anyhow!("gateway: {e}"))
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&body).with_context(|| format!("parsing config {}", path.display()))
}

/// Merges the config file and flags into a concrete run plan. Pure data
/// resolution; parameter validation happens in the subcommands so the
/// error can carry the right exit code.
pub fn resolve(file: FileConfig, ov: &Overrides, default_label: &str) -> Result<ResolvedRun> {
    let lad = file.ladder.unwrap_or_default();
    let d = LadderParams::default();
    let params = LadderParams {
        base_length: lad.base_length.unwrap_or(d.base_length),
        jitter: lad.jitter.unwrap_or(d.jitter),
        trials_per_tier: lad.trials_per_tier.unwrap_or(d.trials_per_tier),
        stability_threshold: lad.stability_threshold.unwrap_or(d.stability_threshold),
        refine_step_fraction: lad.refine_step_fraction.unwrap_or(d.refine_step_fraction),
        max_length: ov.max_length.or(lad.max_length).unwrap_or(d.max_length),
        seed: ov.seed.or(lad.seed).unwrap_or(d.seed),
    };

    let asec = file.assay.unwrap_or_default();
    let assay = ov.assay.or(asec.kind).unwrap_or_default();
    let motif_item = asec.item.unwrap_or_else(|| "a".to_string());
    let motif_delimiter = asec.delimiter.unwrap_or_else(|| ", ".to_string());
    let sweep_from = ov.sweep_from.or(asec.sweep_from).unwrap_or(1);
    let sweep_to = ov.sweep_to.or(asec.sweep_to).unwrap_or(40);
    if sweep_from == 0 || sweep_to < sweep_from {
        return Err(anyhow!("bad sweep range [{sweep_from}, {sweep_to}]"));
    }

    let oracle = match &ov.oracle {
        Some(flag) => Some(parse_oracle_flag(flag)?),
        None => file.oracle,
    };

    let model = ov
        .model
        .clone()
        .or(file.model)
        .or_else(|| oracle.as_ref().map(|o| format!("synthetic-{}", o.kind_name())))
        .ok_or_else(|| anyhow!("no model configured; pass --model or set it in the config"))?;

    let esec = file.endpoint.unwrap_or_default();
    let parallelism = ov.parallelism.or(esec.parallelism).unwrap_or(15);
    let endpoint = if oracle.is_some() {
        None
    } else {
        Some(build_endpoint(&model, &esec, ov.provider.as_deref(), parallelism)?)
    };

    let dsec = file.dual.unwrap_or_default();
    let dd = DualConfig::default();
    let dual = DualConfig {
        seed: dsec.seed.or(ov.seed).unwrap_or(dd.seed),
        trials_per_condition: dsec.trials_per_condition.unwrap_or(dd.trials_per_condition),
        count_min: dsec.count_min.unwrap_or(dd.count_min),
        count_max: dsec.count_max.unwrap_or(dd.count_max),
    };
    let dual_tasks_file = dsec
        .tasks_file
        .unwrap_or_else(|| PathBuf::from("data/fixtures/benchmark_tasks.jsonl"));

    let gsec = file.agent.unwrap_or_default();
    let ad = AgentConfig::default();
    let agent_seed = gsec.seed.or(ov.seed).unwrap_or(ad.seed);
    let levels = match (gsec.levels, gsec.sampled_levels) {
        (Some(v), _) => v,
        (None, Some(true)) => sample_marker_levels(agent_seed),
        _ => MARKER_LEVELS.to_vec(),
    };
    let agent = AgentConfig {
        seed: agent_seed,
        levels,
        trials_per_level: gsec.trials_per_level.unwrap_or(ad.trials_per_level),
        copy_trials_per_level: gsec.copy_trials_per_level.unwrap_or(ad.copy_trials_per_level),
        baseline_trials: gsec.baseline_trials.unwrap_or(ad.baseline_trials),
    };

    Ok(ResolvedRun {
        label: ov.label.clone().or(file.label).unwrap_or_else(|| default_label.to_string()),
        model,
        assay,
        motif_item,
        motif_delimiter,
        sweep_from,
        sweep_to,
        params,
        parallelism,
        endpoint,
        oracle,
        out_root: ov
            .out
            .clone()
            .or(file.output.and_then(|o| o.dir))
            .unwrap_or_else(|| PathBuf::from("runs")),
        dual,
        dual_tasks_file,
        agent,
    })
}

fn build_endpoint(
    model: &str,
    section: &EndpointSection,
    provider_flag: Option<&str>,
    parallelism: u32,
) -> Result<ModelEndpoint> {
    let provider = provider_flag.or(section.provider.as_deref());
    let preset = provider.map(|p| {
        provider_defaults(p).ok_or_else(|| {
            anyhow!("unknown provider '{p}'; set endpoint.base_url and endpoint.auth_env_var instead")
        })
    });
    let preset = match preset {
        Some(r) => Some(r?),
        None => None,
    };
    let base_url = section
        .base_url
        .clone()
        .or_else(|| preset.map(|(url, _)| url.to_string()))
        .ok_or_else(|| anyhow!("endpoint has no base_url; set one or pick a --provider"))?;
    let auth_env_var = section
        .auth_env_var
        .clone()
        .or_else(|| preset.map(|(_, var)| var.to_string()))
        .ok_or_else(|| anyhow!("endpoint has no auth_env_var; set one or pick a --provider"))?;
    let mut ep = ModelEndpoint::remote(model, &base_url, &auth_env_var);
    if section.inline_system == Some(true) {
        ep.kind = EndpointKind::RemoteChatInlineSystem;
    }
    ep.parallelism = parallelism;
    if let Some(v) = section.initial_output_cap {
        ep.initial_output_cap = v;
    }
    if let Some(v) = section.retry_output_cap {
        ep.retry_output_cap = v;
    }
    if let Some(v) = section.preflight_probes {
        ep.preflight_probes = v;
    }
    if let Some(v) = section.request_timeout_secs {
        ep.request_timeout_secs = v;
    }
    if let Some(v) = section.retry_backoff_ms {
        ep.retry_backoff_ms = v;
    }
    Ok(ep)
}
