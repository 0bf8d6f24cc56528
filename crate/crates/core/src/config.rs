//! Run configuration: one flat TOML file of documented keys.
//!
//! ```toml
//! seed = 7                        # required
//! agents = ["random", "basic", "2back"]
//! external = ["mine=python3 my_agent.py"]
//! max_length_bits = 24
//! dedup_horizon = 8
//! episodes = 100
//! ```
//!
//! Every key other than `seed` has a default; unknown keys are rejected. See
//! [`RawConfig`] for the full list.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentSpec, DEFAULT_EPSILON};
use crate::environments::{make_constant_env, make_copy_env, make_pattern_env, EnvSpec};
use crate::external::{ExternalEndpoint, DEFAULT_TIMEOUT_MS};
use crate::interaction::SpaceConfig;
use crate::machine::program::OpcodeTable;
use crate::machine::vm::MachineConfig;
use crate::upsilon::{Dedup, EnsembleSpec, WeightScheme, DEFAULT_BOOTSTRAP_RESAMPLES};
use crate::valuation::{ValuationMode, ValuationParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, message: message.into() }
}

/// The file as written. All keys are optional except `seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// Master seed for every random stream.
    pub seed: Option<u64>,
    /// Directory for report.json, rows.csv and manifest.json.
    pub output_dir: Option<PathBuf>,
    /// Built-in agents: `random`, `basic`, `<k>back`, `opt`, `pi1`, `pi2`.
    pub agents: Option<Vec<String>>,
    /// External agents as `name=command arg ...`, split on whitespace.
    pub external: Option<Vec<String>>,
    pub external_timeout_ms: Option<u64>,
    /// Exploration rate of the learning agents.
    pub epsilon: Option<f64>,

    pub actions: Option<u32>,
    pub observations: Option<u32>,
    pub reward_denominator: Option<u32>,

    pub step_budget: Option<u64>,
    pub tape_length: Option<usize>,
    pub cell_modulus: Option<u32>,
    /// Nine instruction mnemonics in code order, e.g. `"><+-[],?."`.
    pub opcode_table: Option<String>,

    /// `ensemble` (default), `copy`, `constant` or `pattern`.
    pub environment: Option<String>,
    pub constant_schedule: Option<Vec<u32>>,
    pub pattern_period: Option<u32>,

    pub max_length_bits: Option<u32>,
    /// `signature` (default) or `none`.
    pub dedup: Option<String>,
    pub dedup_horizon: Option<u32>,
    /// `length` (default) or `kt`.
    pub weight_scheme: Option<String>,
    pub renormalize: Option<bool>,
    pub sample_size: Option<u64>,

    /// `summable` (default), `discounted` or `harmonic`.
    pub mode: Option<String>,
    pub gamma: Option<f64>,
    pub horizon: Option<u64>,
    pub episodes: Option<u64>,
    pub truncation_epsilon: Option<f64>,
    pub confidence: Option<f64>,
    pub bootstrap_resamples: Option<u32>,
}

/// What the agents are scored on.
#[derive(Debug, Clone)]
pub enum Target {
    Ensemble(EnsembleSpec),
    Native(EnvSpec),
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub agents: Vec<AgentSpec>,
    pub space: SpaceConfig,
    pub machine: MachineConfig,
    pub target: Target,
    pub valuation: ValuationParams,
    pub bootstrap_resamples: u32,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let seed = self.seed.ok_or_else(|| invalid("seed", "a seed is required"))?;
        let defaults = SpaceConfig::default();
        let space = SpaceConfig::new(
            self.actions.unwrap_or(defaults.action_count),
            self.observations.unwrap_or(defaults.observation_count),
            self.reward_denominator.unwrap_or(defaults.reward_denominator),
        )
        .map_err(|e| invalid("actions/observations/reward_denominator", e.to_string()))?;

        let table = match &self.opcode_table {
            Some(s) => s.parse::<OpcodeTable>().map_err(|e| invalid("opcode_table", e.to_string()))?,
            None => OpcodeTable::canonical(),
        };
        let d = MachineConfig::default();
        let machine = MachineConfig {
            step_budget_per_cycle: self.step_budget.unwrap_or(d.step_budget_per_cycle),
            tape_length: self.tape_length.unwrap_or(d.tape_length),
            cell_modulus: self.cell_modulus.unwrap_or(d.cell_modulus),
            opcode_table: table,
        };
        machine.validate().map_err(|e| invalid("step_budget/tape_length/cell_modulus", e.to_string()))?;

        let epsilon = self.epsilon.unwrap_or(DEFAULT_EPSILON);
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(invalid("epsilon", "must lie in [0, 1]"));
        }
        let names = self.agents.clone().unwrap_or_else(|| vec!["random".into(), "basic".into(), "2back".into()]);
        let mut agents = Vec::new();
        for n in &names {
            let a: AgentSpec = n.parse().map_err(|_| ConfigError::UnknownAgent(n.clone()))?;
            agents.push(a.with_epsilon(epsilon));
        }
        let timeout = Duration::from_millis(self.external_timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS));
        if timeout.is_zero() {
            return Err(invalid("external_timeout_ms", "must be positive"));
        }
        for entry in self.external.iter().flatten() {
            let (name, command) = entry
                .split_once('=')
                .ok_or_else(|| invalid("external", format!("expected name=command, got {entry:?}")))?;
            let command: Vec<String> = command.split_whitespace().map(str::to_string).collect();
            if name.trim().is_empty() || command.is_empty() {
                return Err(invalid("external", format!("expected name=command, got {entry:?}")));
            }
            agents.push(AgentSpec::External(Arc::new(ExternalEndpoint::new(name.trim(), command, timeout))));
        }
        if agents.is_empty() {
            return Err(invalid("agents", "at least one agent is required"));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &agents {
            if !seen.insert(a.to_string()) {
                return Err(invalid("agents", format!("{a} is listed twice")));
            }
        }

        let mode = match self.mode.as_deref().unwrap_or("summable") {
            "summable" => ValuationMode::Summable,
            "harmonic" => ValuationMode::Harmonic,
            "discounted" => ValuationMode::Discounted {
                gamma: self.gamma.ok_or_else(|| invalid("gamma", "required in discounted mode"))?,
            },
            other => return Err(invalid("mode", format!("unknown mode {other:?}"))),
        };
        if self.gamma.is_some() && !matches!(mode, ValuationMode::Discounted { .. }) {
            return Err(invalid("gamma", "only meaningful in discounted mode"));
        }
        let mut valuation = ValuationParams::new(mode, seed);
        if let Some(h) = self.horizon {
            valuation.horizon = h;
        }
        if let Some(n) = self.episodes {
            valuation.episodes = n;
        }
        if let Some(e) = self.truncation_epsilon {
            valuation.truncation_epsilon = e;
        }
        if let Some(c) = self.confidence {
            valuation.confidence = c;
        }
        valuation.validate().map_err(|e| invalid("valuation", e.to_string()))?;

        let target = match self.environment.as_deref().unwrap_or("ensemble") {
            "ensemble" => {
                let horizon = self.dedup_horizon.unwrap_or(crate::upsilon::DEFAULT_DEDUP_HORIZON);
                let dedup = match self.dedup.as_deref().unwrap_or("signature") {
                    "signature" => Dedup::Signature { horizon },
                    "none" => Dedup::None,
                    other => return Err(invalid("dedup", format!("unknown dedup mode {other:?}"))),
                };
                let weight_scheme = match self.weight_scheme.as_deref().unwrap_or("length") {
                    "length" => WeightScheme::Length,
                    "kt" => WeightScheme::Kt,
                    other => return Err(invalid("weight_scheme", format!("unknown scheme {other:?}"))),
                };
                let spec = EnsembleSpec {
                    max_length_bits: self.max_length_bits.unwrap_or(crate::upsilon::DEFAULT_MAX_LENGTH_BITS),
                    dedup,
                    weight_scheme,
                    renormalize: self.renormalize.unwrap_or(true),
                    sample_size: self.sample_size,
                };
                if spec.max_length_bits == 0 || spec.max_length_bits > 120 {
                    return Err(invalid("max_length_bits", "must lie in 1..=120"));
                }
                if horizon == 0 {
                    return Err(invalid("dedup_horizon", "must be at least 1"));
                }
                if spec.sample_size == Some(0) {
                    return Err(invalid("sample_size", "must be at least 1"));
                }
                Target::Ensemble(spec)
            }
            "copy" => Target::Native(EnvSpec::Native(
                make_copy_env(space).map_err(|e| invalid("environment", e.to_string()))?,
            )),
            "constant" => {
                let schedule = self.constant_schedule.clone().unwrap_or_default();
                let env = make_constant_env(schedule, space, true).map_err(|e| invalid("constant_schedule", e.to_string()))?;
                Target::Native(EnvSpec::Native(env))
            }
            "pattern" => {
                let env = make_pattern_env(self.pattern_period.unwrap_or(2), space)
                    .map_err(|e| invalid("pattern_period", e.to_string()))?;
                Target::Native(EnvSpec::Native(env))
            }
            other => return Err(invalid("environment", format!("unknown environment {other:?}"))),
        };
        if let Target::Native(env) = &target {
            if valuation.mode == ValuationMode::Summable && !env.summable() {
                return Err(invalid("mode", "this environment has no reward budget; use discounted or harmonic"));
            }
        }

        let bootstrap_resamples = self.bootstrap_resamples.unwrap_or(DEFAULT_BOOTSTRAP_RESAMPLES);
        if bootstrap_resamples == 0 {
            return Err(invalid("bootstrap_resamples", "must be at least 1"));
        }
        Ok(RunConfig {
            raw: self.clone(),
            seed,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("upsilon-report")),
            agents,
            space,
            machine,
            target,
            valuation,
            bootstrap_resamples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<RunConfig, ConfigError> {
        RawConfig::parse(text)?.resolve()
    }

    #[test]
    fn minimal_config() {
        let c = resolve("seed = 3").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.agents.iter().map(ToString::to_string).collect::<Vec<_>>(), ["random", "basic", "2back"]);
        assert!(matches!(c.target, Target::Ensemble(s) if s == EnsembleSpec::default()));
        assert_eq!(c.valuation.mode, ValuationMode::Summable);
    }

    #[test]
    fn seed_is_required() {
        let e = resolve("episodes = 3").unwrap_err();
        assert!(e.to_string().contains("seed"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = resolve("seed = 1\nepisodez = 3").unwrap_err();
        assert!(matches!(e, ConfigError::Parse(_)));
        assert!(e.to_string().contains("episodez"));
    }

    #[test]
    fn unknown_agent_is_named() {
        let e = resolve("seed = 1\nagents = [\"random\", \"oracle\"]").unwrap_err();
        assert!(e.to_string().contains("oracle"));
    }

    #[test]
    fn external_agents() {
        let c = resolve("seed = 1\nagents = []\nexternal = [\"mine=python3 agent.py --fast\"]\nexternal_timeout_ms = 50").unwrap();
        let AgentSpec::External(e) = &c.agents[0] else { panic!() };
        assert_eq!(e.name(), "mine");
        assert_eq!(e.command(), ["python3", "agent.py", "--fast"]);
        assert_eq!(e.timeout(), Duration::from_millis(50));
        assert!(resolve("seed = 1\nexternal = [\"nocommand\"]").is_err());
    }

    #[test]
    fn native_targets() {
        let c = resolve("seed = 1\nenvironment = \"constant\"\nconstant_schedule = [255]").unwrap();
        assert!(matches!(c.target, Target::Native(_)));
        assert!(resolve("seed = 1\nenvironment = \"constant\"\nconstant_schedule = [200, 100]").is_err());
        assert!(resolve("seed = 1\nenvironment = \"copy\"").is_err());
        assert!(resolve("seed = 1\nenvironment = \"copy\"\nmode = \"discounted\"\ngamma = 0.9").is_ok());
    }

    #[test]
    fn invalid_values() {
        for bad in [
            "seed = 1\nmode = \"discounted\"",
            "seed = 1\ngamma = 0.5",
            "seed = 1\nmode = \"discounted\"\ngamma = 1.5",
            "seed = 1\nepisodes = 0",
            "seed = 1\nopcode_table = \"><+\"",
            "seed = 1\nactions = 0",
            "seed = 1\ndedup = \"maybe\"",
            "seed = 1\nagents = [\"basic\", \"basic\"]",
            "seed = -1",
        ] {
            assert!(resolve(bad).is_err(), "{bad}");
        }
    }
}
