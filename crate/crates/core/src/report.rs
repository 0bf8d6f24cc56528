//! Benchmark runs and the documents they write.
//!
//! A run writes three files into its output directory:
//!
//! * `report.json`, the full [`Report`];
//! * `rows.csv`, one line per environment and agent;
//! * `manifest.json`, the configuration echo needed to repeat the run.
//!
//! Every JSON document carries `schema_version` and validates against the
//! matching schema under `schemas/`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RawConfig, RunConfig, Target};
use crate::environments::EnvSpec;
use crate::interaction::SpaceConfig;
use crate::machine::vm::MachineConfig;
use crate::upsilon::{
    build_ensemble, estimate_upsilon, machine_sensitivity, opcode_permutations, pairwise, Dedup, EnvRow,
    MachineRow, PairComparison, UpsilonError, UpsilonEstimate, WeightScheme,
};
use crate::valuation::{estimate_value, ValuationError, ValuationParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "upsilon";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");
pub const MANIFEST_SCHEMA: &str = include_str!("../schemas/manifest.schema.json");
pub const SENSITIVITY_SCHEMA: &str = include_str!("../schemas/sensitivity.schema.json");
pub const STUDY_SCHEMA: &str = include_str!("../schemas/study.schema.json");

pub const CSV_HEADER: [&str; 7] = ["program_id", "length_bits", "weight", "agent", "value_mean", "value_ci", "episodes"];

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Upsilon(#[from] UpsilonError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Tool {
    pub fn current() -> Self {
        Self { name: TOOL_NAME.into(), version: TOOL_VERSION.into() }
    }
}

/// What the agents were scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSummary {
    /// `ensemble` or the name of a built-in environment.
    pub kind: String,
    pub max_length_bits: Option<u32>,
    pub dedup: Option<Dedup>,
    pub weight_scheme: Option<WeightScheme>,
    pub renormalized: bool,
    pub sample_size: Option<u64>,
    pub program_count: u64,
    pub environment_count: u64,
    pub kraft_sum: Option<f64>,
    pub total_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub upsilon: f64,
    pub ci_half_width: f64,
    pub episodes_failed: u64,
    pub timeouts: u64,
    pub budget_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub program_id: String,
    pub program: String,
    pub length_bits: u32,
    pub weight: f64,
    pub agent: String,
    pub value_mean: f64,
    pub value_ci: f64,
    /// Episodes that completed and entered the mean.
    pub episodes: u64,
    pub episodes_failed: u64,
    pub truncation_bound: f64,
    pub budget_violations: u64,
    pub timeouts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: Tool,
    pub seed: u64,
    pub space: SpaceConfig,
    pub machine: MachineConfig,
    pub environment: EnvironmentSummary,
    pub valuation: ValuationParams,
    pub agents: Vec<AgentSummary>,
    pub comparisons: Vec<PairComparison>,
    pub rows: Vec<Row>,
}

/// Enough to repeat a run: the configuration file as read and as parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: Tool,
    pub seed: u64,
    pub config_text: String,
    pub config: RawConfig,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(config_text: &str, config: &RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: Tool::current(),
            seed: config.seed,
            config_text: config_text.to_string(),
            config: config.raw.clone(),
            outputs: vec!["report.json".into(), "rows.csv".into(), "manifest.json".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub schema_version: u32,
    pub tool: Tool,
    pub seed: u64,
    pub max_length_bits: u32,
    pub valuation: ValuationParams,
    pub machines: Vec<MachineRow>,
    /// Every machine ranks the agents like the first one.
    pub ordering_preserved: bool,
}

fn summarize(estimates: &[UpsilonEstimate]) -> (Vec<AgentSummary>, Vec<Row>) {
    let agents = estimates
        .iter()
        .map(|u| AgentSummary {
            agent: u.agent.clone(),
            upsilon: u.upsilon,
            ci_half_width: u.ci_half_width,
            episodes_failed: u.episodes_failed,
            timeouts: u.timeouts,
            budget_violations: u.rows.iter().map(|r| r.estimate.budget_violations).sum(),
        })
        .collect();
    let mut rows = Vec::new();
    for u in estimates {
        for r in &u.rows {
            let e = r.estimate;
            rows.push(Row {
                program_id: r.program_id.clone(),
                program: r.program.clone(),
                length_bits: r.length_bits,
                weight: r.weight,
                agent: u.agent.clone(),
                value_mean: e.mean,
                value_ci: e.ci_half_width,
                episodes: e.episodes_used,
                episodes_failed: e.episodes_failed,
                truncation_bound: e.truncation_bound,
                budget_violations: e.budget_violations,
                timeouts: e.timeouts,
            });
        }
    }
    (agents, rows)
}

fn native_estimate(
    agent: &crate::agents::AgentSpec,
    env: &EnvSpec,
    params: &ValuationParams,
) -> Result<UpsilonEstimate, ValuationError> {
    let run = estimate_value(agent, env, params, 0)?;
    let e = run.estimate;
    Ok(UpsilonEstimate {
        agent: agent.to_string(),
        upsilon: e.mean,
        ci_half_width: e.ci_half_width,
        rows: vec![EnvRow { program_id: env.label(), program: String::new(), length_bits: 0, weight: 1.0, estimate: e }],
        episodes_failed: e.episodes_failed,
        timeouts: e.timeouts,
        episode_values: vec![run.episode_values],
    })
}

/// Score every configured agent and compare every pair.
pub fn run(config: &RunConfig) -> Result<Report, RunError> {
    let params = &config.valuation;
    let (environment, estimates, weights) = match &config.target {
        Target::Ensemble(spec) => {
            let ens = build_ensemble(spec, &config.machine, config.space, config.seed)?;
            log::info!("{} environments from {} programs", ens.members.len(), ens.program_count);
            let estimates = config
                .agents
                .iter()
                .map(|a| {
                    log::info!("scoring {a}");
                    estimate_upsilon(a, &ens, params)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let summary = EnvironmentSummary {
                kind: "ensemble".into(),
                max_length_bits: Some(spec.max_length_bits),
                dedup: Some(spec.dedup),
                weight_scheme: Some(spec.weight_scheme),
                renormalized: spec.renormalize,
                sample_size: spec.sample_size,
                program_count: ens.program_count,
                environment_count: ens.members.len() as u64,
                kraft_sum: Some(ens.kraft_sum),
                total_weight: ens.total_weight(),
            };
            (summary, estimates, ens.members.iter().map(|m| m.weight).collect::<Vec<_>>())
        }
        Target::Native(env) => {
            let estimates = config
                .agents
                .iter()
                .map(|a| native_estimate(a, env, params))
                .collect::<Result<Vec<_>, _>>()?;
            let summary = EnvironmentSummary {
                kind: env.label(),
                max_length_bits: None,
                dedup: None,
                weight_scheme: None,
                renormalized: true,
                sample_size: None,
                program_count: 0,
                environment_count: 1,
                kraft_sum: None,
                total_weight: 1.0,
            };
            (summary, estimates, vec![1.0])
        }
    };
    let comparisons = pairwise(&estimates, &weights, params, config.bootstrap_resamples);
    let (agents, rows) = summarize(&estimates);
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool: Tool::current(),
        seed: config.seed,
        space: config.space,
        machine: config.machine,
        environment,
        valuation: *params,
        agents,
        comparisons,
        rows,
    })
}

/// Score the configured agents under the canonical table and
/// `permutations - 1` shuffles of it.
pub fn run_sensitivity(config: &RunConfig, permutations: usize) -> Result<SensitivityReport, RunError> {
    let Target::Ensemble(spec) = &config.target else {
        return Err(ConfigError::Invalid { key: "environment", message: "sensitivity needs an ensemble".into() }.into());
    };
    let machines: Vec<MachineConfig> = opcode_permutations(permutations, config.seed)
        .into_iter()
        .map(|t| config.machine.with_table(t))
        .collect();
    let rows = machine_sensitivity(&config.agents, spec, &machines, config.space, &config.valuation)?;
    Ok(SensitivityReport {
        schema_version: SCHEMA_VERSION,
        tool: Tool::current(),
        seed: config.seed,
        max_length_bits: spec.max_length_bits,
        valuation: config.valuation,
        ordering_preserved: rows.iter().all(|r| r.ordering_preserved),
        machines: rows,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_csv<W: Write>(report: &Report, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.serialize((&r.program_id, r.length_bits, r.weight, &r.agent, r.value_mean, r.value_ci, r.episodes))?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(report: &Report) -> String {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Write { path: path.into(), source })
}

pub fn create_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Write { path: dir.into(), source })
}

pub fn write_outputs(dir: &Path, report: &Report, manifest: &Manifest) -> Result<(), RunError> {
    create_dir(dir)?;
    write_file(&dir.join("report.json"), &to_json(report))?;
    write_file(&dir.join("rows.csv"), &csv_string(report))?;
    write_file(&dir.join("manifest.json"), &to_json(manifest))
}

/// Parse, resolve and run a configuration file, writing all outputs.
pub fn run_benchmark(config_path: &Path) -> Result<Report, RunError> {
    let text = fs::read_to_string(config_path)
        .map_err(|source| ConfigError::Read { path: config_path.into(), source })?;
    let config = RawConfig::parse(&text)?.resolve()?;
    let report = run(&config)?;
    write_outputs(&config.output_dir, &report, &Manifest::new(&text, &config))?;
    Ok(report)
}
