//! The three-agent comparison on the copy environment.
//!
//! `opt` always plays 1, `pi1` plays uniformly at random and `pi2` plays 0
//! for 100 cycles, then 1 until cycle 5000, then uniformly. On the copy
//! environment `pi1` wins the short term, `pi2` the medium term and the two
//! tie in the limit. The study measures the per-cycle reward curves and the
//! discounted values over a grid of discount factors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, Scripted, PHASED_FIRST_SWITCH, PHASED_SECOND_SWITCH};
use crate::environments::{make_copy_env, EnvSpec};
use crate::interaction::SpaceConfig;
use crate::report::{create_dir, to_json, write_file, RunError, Tool, SCHEMA_VERSION};
use crate::stats::mean;
use crate::valuation::{estimate_value, per_cycle_reward_profile, ValuationError, ValuationMode, ValuationParams};

/// Phase means closer than this are reported as a tie.
pub const TIE_TOLERANCE: f64 = 0.02;

pub const STUDY_AGENTS: [Scripted; 3] = [Scripted::Optimal, Scripted::Uniform, Scripted::Phased];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyParams {
    pub seed: u64,
    /// Length of the reward curves.
    pub cycles: u64,
    pub episodes: u64,
    pub gammas: Vec<f64>,
    pub discount_episodes: u64,
    pub discount_horizon: u64,
    pub truncation_epsilon: f64,
}

impl StudyParams {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cycles: 6000,
            episodes: 10_000,
            gammas: vec![0.5, 0.9, 0.99, 0.999],
            discount_episodes: 1000,
            discount_horizon: 20_000,
            truncation_epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMean {
    pub agent: String,
    pub mean: f64,
}

/// Mean reward per cycle over an inclusive range of reward cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub first_cycle: u64,
    pub last_cycle: u64,
    pub means: Vec<AgentMean>,
    /// `pi1`, `pi2` or `tie`.
    pub leader: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedRow {
    pub gamma: f64,
    pub agent: String,
    pub value_mean: f64,
    pub value_ci: f64,
    pub episodes: u64,
    pub truncation_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub tool: Tool,
    pub params: StudyParams,
    pub phases: Vec<Phase>,
    pub discounted: Vec<DiscountedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub report: StudyReport,
    /// Per agent, the mean reward of cycles `1..=cycles`.
    pub profiles: Vec<(String, Vec<f64>)>,
}

impl Study {
    /// Mean reward of `agent` at reward cycle `k` (1-based).
    pub fn reward_at(&self, agent: &str, k: u64) -> Option<f64> {
        let (_, p) = self.profiles.iter().find(|(a, _)| a == agent)?;
        p.get(usize::try_from(k).ok()?.checked_sub(1)?).copied()
    }
}

fn phase(name: &str, first: u64, last: u64, profiles: &[(String, Vec<f64>)]) -> Phase {
    let means: Vec<AgentMean> = profiles
        .iter()
        .map(|(agent, p)| AgentMean { agent: agent.clone(), mean: mean(&p[(first - 1) as usize..last as usize]) })
        .collect();
    let of = |a: &str| means.iter().find(|m| m.agent == a).map_or(0.0, |m| m.mean);
    let (p1, p2) = (of("pi1"), of("pi2"));
    let leader = if (p1 - p2).abs() <= TIE_TOLERANCE {
        "tie"
    } else if p1 > p2 {
        "pi1"
    } else {
        "pi2"
    };
    let statement = match leader {
        "tie" => format!("cycles {first}-{last}: pi1 and pi2 tie ({p1:.4} vs {p2:.4})"),
        _ => {
            let (hi, lo) = if p1 > p2 { (p1, p2) } else { (p2, p1) };
            let other = if leader == "pi1" { "pi2" } else { "pi1" };
            format!("cycles {first}-{last}: {leader} beats {other} ({hi:.4} vs {lo:.4})")
        }
    };
    Phase { name: name.into(), first_cycle: first, last_cycle: last, means, leader: leader.into(), statement }
}

pub fn copy_env() -> EnvSpec {
    EnvSpec::Native(make_copy_env(SpaceConfig::default()).expect("default spaces are binary"))
}

pub fn run_example_study(params: &StudyParams) -> Result<Study, ValuationError> {
    let short_end = PHASED_FIRST_SWITCH + 1;
    let medium_end = PHASED_SECOND_SWITCH + 1;
    if params.cycles <= medium_end {
        return Err(ValuationError::InvalidParams(format!("the study needs more than {medium_end} cycles")));
    }
    let env = copy_env();
    let mut profiles = Vec::new();
    for kind in STUDY_AGENTS {
        let agent = AgentSpec::Scripted(kind);
        let p = per_cycle_reward_profile(&agent, &env, params.cycles, params.episodes, params.seed)?;
        profiles.push((agent.to_string(), p));
    }
    let phases = vec![
        phase("short", 2, short_end, &profiles),
        phase("medium", short_end + 1, medium_end, &profiles),
        phase("long", medium_end + 1, params.cycles, &profiles),
    ];
    let mut discounted = Vec::new();
    for &gamma in &params.gammas {
        let vp = ValuationParams {
            horizon: params.discount_horizon,
            episodes: params.discount_episodes,
            truncation_epsilon: params.truncation_epsilon,
            ..ValuationParams::new(ValuationMode::Discounted { gamma }, params.seed)
        };
        for kind in STUDY_AGENTS {
            let agent = AgentSpec::Scripted(kind);
            let e = estimate_value(&agent, &env, &vp, 0)?.estimate;
            discounted.push(DiscountedRow {
                gamma,
                agent: agent.to_string(),
                value_mean: e.mean,
                value_ci: e.ci_half_width,
                episodes: e.episodes_used,
                truncation_bound: e.truncation_bound,
            });
        }
    }
    Ok(Study {
        report: StudyReport { schema_version: SCHEMA_VERSION, tool: Tool::current(), params: params.clone(), phases, discounted },
        profiles,
    })
}

/// `cycle,opt,pi1,pi2`
pub fn profile_csv(study: &Study) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cycle".to_string()];
    header.extend(study.profiles.iter().map(|(a, _)| a.clone()));
    w.write_record(&header).expect("writing to memory");
    let len = study.profiles.first().map_or(0, |(_, p)| p.len());
    for k in 0..len {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(study.profiles.iter().map(|(_, p)| p[k].to_string()));
        w.write_record(&rec).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

pub fn discounted_csv(study: &Study) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gamma", "agent", "value_mean", "value_ci", "episodes", "truncation_bound"])
        .expect("writing to memory");
    for r in &study.report.discounted {
        w.serialize((r.gamma, &r.agent, r.value_mean, r.value_ci, r.episodes, r.truncation_bound))
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

/// Writes `study.json`, `profile.csv` and `discounted.csv`.
pub fn write_study(dir: &Path, study: &Study) -> Result<(), RunError> {
    create_dir(dir)?;
    write_file(&dir.join("study.json"), &to_json(&study.report))?;
    write_file(&dir.join("profile.csv"), &profile_csv(study))?;
    write_file(&dir.join("discounted.csv"), &discounted_csv(study))
}
