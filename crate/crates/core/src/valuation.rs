//! Value of one agent in one environment, estimated by seeded rollouts.
//!
//! Three weightings are supported: geometric discounting normalised by
//! `Γ = γ / (1 - γ)`, harmonic weights `1/t²` normalised by `π²/6`, and the
//! plain total reward of a reward-summable environment. Infinite sums are cut
//! at a horizon and the mass that cut can ignore is reported alongside the
//! estimate.

use std::f64::consts::PI;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, AgentSpec};
use crate::environments::{EnvSpec, Environment};
use crate::interaction::{Action, History, Percept};
use crate::seeding::{stream, StreamRng, AGENT_STREAM, ENV_STREAM};
use crate::stats::{mean_half_width, CompensatedSum};

pub const DEFAULT_HORIZON: u64 = 1000;
pub const DEFAULT_EPISODES: u64 = 100;
pub const DEFAULT_TRUNCATION_EPSILON: f64 = 1e-3;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValuationMode {
    Discounted { gamma: f64 },
    Harmonic,
    Summable,
}

impl ValuationMode {
    pub fn name(&self) -> &'static str {
        match self {
            ValuationMode::Discounted { .. } => "discounted",
            ValuationMode::Harmonic => "harmonic",
            ValuationMode::Summable => "summable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationParams {
    pub mode: ValuationMode,
    /// Largest number of cycles in one episode (`T_max`).
    pub horizon: u64,
    pub episodes: u64,
    pub truncation_epsilon: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl ValuationParams {
    pub fn new(mode: ValuationMode, seed: u64) -> Self {
        Self {
            mode,
            horizon: DEFAULT_HORIZON,
            episodes: DEFAULT_EPISODES,
            truncation_epsilon: DEFAULT_TRUNCATION_EPSILON,
            confidence: DEFAULT_CONFIDENCE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ValuationError> {
        let bad = |m: &str| Err(ValuationError::InvalidParams(m.to_string()));
        if let ValuationMode::Discounted { gamma } = self.mode {
            if !(gamma > 0.0 && gamma < 1.0) {
                return bad("gamma must lie in (0, 1)");
            }
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if !(self.truncation_epsilon > 0.0 && self.truncation_epsilon < 1.0) {
            return bad("truncation epsilon must lie in (0, 1)");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        Ok(())
    }

    /// Cycles rolled out per episode and the weight mass beyond them.
    pub fn cutoff(&self) -> (u64, f64) {
        let eps = self.truncation_epsilon;
        match self.mode {
            ValuationMode::Discounted { gamma } => {
                let t = ((eps.ln() / gamma.ln()).ceil() as u64).clamp(1, self.horizon);
                (t, gamma.powf(t as f64))
            }
            ValuationMode::Harmonic => {
                let t = ((6.0 / (PI * PI * eps)).ceil() as u64).clamp(1, self.horizon);
                (t, 6.0 / (PI * PI * t as f64))
            }
            ValuationMode::Summable => (self.horizon, eps),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValuationError {
    #[error("invalid valuation parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} mode, got {found}")]
    ModeMismatch { expected: &'static str, found: &'static str },
    #[error("environment {0} has no reward budget and cannot be valued in summable mode")]
    NotSummable(String),
    #[error("cannot start agent: {0}")]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub ci_half_width: f64,
    pub episodes_used: u64,
    pub episodes_failed: u64,
    /// Upper bound on the value the horizon cut could have missed.
    pub truncation_bound: f64,
    /// Episodes whose total reward numerator exceeded the budget.
    pub budget_violations: u64,
    /// Cycles in which an external agent was replaced by a uniform action.
    pub timeouts: u64,
}

/// One episode's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Episode {
    pub value: f64,
    pub total_reward: u64,
    pub cycles: u64,
    /// Budget left when the horizon cut the episode off, if it did.
    pub budget_left_at_horizon: Option<u32>,
    pub timeouts: u64,
}

/// An estimate together with the per-episode values it came from; `None`
/// marks a failed episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationRun {
    pub estimate: ValueEstimate,
    pub episode_values: Vec<Option<f64>>,
}

/// Percept and total summary of a finished rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub cycles: u64,
    pub total_reward: u64,
    pub timeouts: u64,
    pub stopped_early: bool,
}

/// Interact for at most `max_cycles` cycles. `visit` sees each percept and
/// may end the episode; the agent acts after every percept it is shown, so
/// it also learns from the last one.
pub fn rollout(
    env: &mut dyn Environment,
    agent: &mut dyn Agent,
    rng: &mut StreamRng,
    max_cycles: u64,
    episode: u64,
    mut visit: impl FnMut(u64, Percept, &dyn Environment) -> ControlFlow<()>,
) -> Result<Rollout, AgentError> {
    let space = env.space();
    let mut history = History::windowed(space, agent.memory_depth().max(1));
    agent.begin_episode(episode)?;
    let mut action: Option<Action> = None;
    let mut total = 0u64;
    for k in 1..=max_cycles {
        let p = env.step(action);
        history
            .push_percept(p)
            .unwrap_or_else(|e| panic!("environment broke the protocol: {e}"));
        total += u64::from(p.reward);
        agent.observe(&history);
        let flow = visit(k, p, &*env);
        let a = agent.act(&history, rng)?;
        history.push_action(a).map_err(|e| AgentError::Protocol(e.to_string()))?;
        action = Some(a);
        if flow.is_break() {
            return Ok(Rollout { cycles: k, total_reward: total, timeouts: agent.timeouts(), stopped_early: true });
        }
    }
    Ok(Rollout { cycles: max_cycles, total_reward: total, timeouts: agent.timeouts(), stopped_early: false })
}

fn episode_streams(seed: u64, env_id: u64, episode: u64) -> (StreamRng, StreamRng) {
    (stream(seed, &[ENV_STREAM, env_id, episode]), stream(seed, &[AGENT_STREAM, env_id, episode]))
}

/// Run one episode under `params`.
pub fn run_episode(
    agent: &AgentSpec,
    env: &EnvSpec,
    params: &ValuationParams,
    env_id: u64,
    episode: u64,
) -> Result<Episode, AgentError> {
    let (env_rng, mut agent_rng) = episode_streams(params.seed, env_id, episode);
    let mut e = env.spawn(env_rng);
    let mut a = agent.spawn(env.space())?;
    let d = f64::from(env.space().reward_denominator);
    let (cycles, _) = params.cutoff();
    let mut acc = CompensatedSum::default();
    let stop_below = params.truncation_epsilon * d;
    let r = match params.mode {
        ValuationMode::Discounted { gamma } => {
            // weight of cycle i is γ^i / Γ = (1 - γ) γ^(i-1)
            let mut w = 1.0 - gamma;
            rollout(&mut *e, &mut *a, &mut agent_rng, cycles, episode, |_, p, env| {
                acc.add(w * f64::from(p.reward) / d);
                w *= gamma;
                if env.halted() {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?
        }
        ValuationMode::Harmonic => {
            let norm = 6.0 / (PI * PI);
            rollout(&mut *e, &mut *a, &mut agent_rng, cycles, episode, |k, p, env| {
                let t = k as f64;
                acc.add(norm / (t * t) * f64::from(p.reward) / d);
                if env.halted() {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?
        }
        ValuationMode::Summable => rollout(&mut *e, &mut *a, &mut agent_rng, cycles, episode, |_, _, env| {
            let low = env.remaining_budget().is_some_and(|b| f64::from(b) < stop_below);
            if env.halted() || low {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })?,
    };
    let value = match params.mode {
        ValuationMode::Summable => r.total_reward as f64 / d,
        _ => acc.value(),
    };
    Ok(Episode {
        value,
        total_reward: r.total_reward,
        cycles: r.cycles,
        budget_left_at_horizon: if r.stopped_early { None } else { e.remaining_budget() },
        timeouts: r.timeouts,
    })
}

/// Estimate the value with `params.episodes` episodes. Episodes run in
/// parallel and are reduced in episode order.
pub fn estimate_value(
    agent: &AgentSpec,
    env: &EnvSpec,
    params: &ValuationParams,
    env_id: u64,
) -> Result<ValuationRun, ValuationError> {
    params.validate()?;
    if params.mode == ValuationMode::Summable && !env.summable() {
        return Err(ValuationError::NotSummable(env.label()));
    }
    // surface spawn errors once instead of as failed episodes
    drop(agent.spawn(env.space())?);
    let outcomes: Vec<Result<Episode, AgentError>> = (0..params.episodes)
        .into_par_iter()
        .map(|i| run_episode(agent, env, params, env_id, i))
        .collect();
    Ok(summarize(params, env, &outcomes))
}

fn summarize(params: &ValuationParams, env: &EnvSpec, outcomes: &[Result<Episode, AgentError>]) -> ValuationRun {
    let d = env.space().reward_denominator;
    let mut values = Vec::with_capacity(outcomes.len());
    let mut episode_values = Vec::with_capacity(outcomes.len());
    let mut left = CompensatedSum::default();
    let (mut failed, mut violations, mut timeouts) = (0, 0, 0);
    for o in outcomes {
        match o {
            Ok(ep) => {
                values.push(ep.value);
                episode_values.push(Some(ep.value));
                timeouts += ep.timeouts;
                if env.summable() && ep.total_reward > u64::from(d) {
                    violations += 1;
                }
                if let Some(b) = ep.budget_left_at_horizon {
                    left.add(f64::from(b) / f64::from(d));
                }
            }
            Err(e) => {
                log::warn!("episode failed in {}: {e}", env.label());
                failed += 1;
                episode_values.push(None);
            }
        }
    }
    let n = values.len() as u64;
    let mean = if values.is_empty() { 0.0 } else { values.iter().copied().collect::<CompensatedSum>().value() / n as f64 };
    let (_, tail) = params.cutoff();
    let truncation_bound = match params.mode {
        ValuationMode::Summable if n > 0 => tail + left.value() / n as f64,
        _ => tail,
    };
    ValuationRun {
        estimate: ValueEstimate {
            mean,
            ci_half_width: mean_half_width(&values, params.confidence),
            episodes_used: n,
            episodes_failed: failed,
            truncation_bound,
            budget_violations: violations,
            timeouts,
        },
        episode_values,
    }
}

fn require(params: &ValuationParams, expected: &'static str) -> Result<(), ValuationError> {
    if params.mode.name() == expected {
        Ok(())
    } else {
        Err(ValuationError::ModeMismatch { expected, found: params.mode.name() })
    }
}

pub fn discounted_value(agent: &AgentSpec, env: &EnvSpec, params: &ValuationParams) -> Result<ValueEstimate, ValuationError> {
    require(params, "discounted")?;
    Ok(estimate_value(agent, env, params, 0)?.estimate)
}

pub fn harmonic_value(agent: &AgentSpec, env: &EnvSpec, params: &ValuationParams) -> Result<ValueEstimate, ValuationError> {
    require(params, "harmonic")?;
    Ok(estimate_value(agent, env, params, 0)?.estimate)
}

pub fn summable_value(agent: &AgentSpec, env: &EnvSpec, params: &ValuationParams) -> Result<ValueEstimate, ValuationError> {
    require(params, "summable")?;
    Ok(estimate_value(agent, env, params, 0)?.estimate)
}

/// `Γ = Σ_{i>=1} γ^i = γ / (1 - γ)`.
pub fn gamma_norm(gamma: f64) -> Result<f64, ValuationError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(gamma / (1.0 - gamma))
    } else {
        Err(ValuationError::InvalidParams("gamma must lie in (0, 1)".into()))
    }
}

/// Mean reward of cycles `1..=cycles` over `episodes` rollouts. Failed
/// episodes are left out of the average.
pub fn per_cycle_reward_profile(
    agent: &AgentSpec,
    env: &EnvSpec,
    cycles: u64,
    episodes: u64,
    seed: u64,
) -> Result<Vec<f64>, ValuationError> {
    if cycles == 0 || episodes == 0 {
        return Err(ValuationError::InvalidParams("cycles and episodes must be at least 1".into()));
    }
    drop(agent.spawn(env.space())?);
    let len = cycles as usize;
    let (sums, ok) = (0..episodes)
        .into_par_iter()
        .fold(
            || (vec![0u64; len], 0u64),
            |(mut sums, ok), i| {
                let (env_rng, mut agent_rng) = episode_streams(seed, 0, i);
                let mut e = env.spawn(env_rng);
                let Ok(mut a) = agent.spawn(env.space()) else { return (sums, ok) };
                let mut local = vec![0u64; len];
                let r = rollout(&mut *e, &mut *a, &mut agent_rng, cycles, i, |k, p, _| {
                    local[(k - 1) as usize] = u64::from(p.reward);
                    ControlFlow::Continue(())
                });
                if r.is_ok() {
                    sums.iter_mut().zip(&local).for_each(|(s, l)| *s += l);
                    (sums, ok + 1)
                } else {
                    (sums, ok)
                }
            },
        )
        .reduce(
            || (vec![0u64; len], 0),
            |(mut a, n), (b, m)| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                (a, n + m)
            },
        );
    let d = f64::from(env.space().reward_denominator);
    Ok(sums.iter().map(|&s| if ok == 0 { 0.0 } else { s as f64 / (ok as f64 * d) }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Scripted;
    use crate::environments::{make_constant_env, make_copy_env, make_pattern_env};
    use crate::interaction::SpaceConfig;
    use crate::machine::program::{EnvProgram, OpcodeTable};
    use crate::machine::vm::MachineConfig;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn copy() -> EnvSpec {
        EnvSpec::Native(make_copy_env(SpaceConfig::default()).unwrap())
    }

    fn constant(schedule: Vec<u32>) -> EnvSpec {
        EnvSpec::Native(make_constant_env(schedule, SpaceConfig::default(), true).unwrap())
    }

    fn program(src: &str) -> EnvSpec {
        let m = MachineConfig::default();
        EnvSpec::Program {
            program: Arc::new(EnvProgram::from_mnemonics(src, &OpcodeTable::canonical()).unwrap()),
            machine: m,
            space: SpaceConfig::default(),
        }
    }

    const OPT: AgentSpec = AgentSpec::Scripted(Scripted::Optimal);

    fn discounted(gamma: f64, episodes: u64, eps: f64) -> ValuationParams {
        ValuationParams {
            episodes,
            truncation_epsilon: eps,
            horizon: 1_000_000,
            ..ValuationParams::new(ValuationMode::Discounted { gamma }, 1)
        }
    }

    #[test]
    fn gamma_norm_values() {
        assert_eq!(gamma_norm(0.5).unwrap(), 1.0);
        assert!((gamma_norm(0.9).unwrap() - 9.0).abs() < 1e-12);
        assert!(gamma_norm(1.0).is_err());
        assert!(gamma_norm(0.0).is_err());
    }

    #[test]
    fn optimal_agent_on_copy_discounted() {
        let v = discounted_value(&OPT, &copy(), &discounted(0.9, 1, 1e-15)).unwrap();
        assert!((v.mean - 0.9).abs() < 1e-12, "{}", v.mean);
        assert_eq!(v.ci_half_width, 0.0);
        assert!(v.truncation_bound <= 1e-15);
    }

    #[test]
    fn deterministic_pairs_match_closed_form_with_one_episode() {
        let v = discounted_value(&OPT, &copy(), &discounted(0.5, 1, 1e-12)).unwrap();
        // (1/Γ) Σ_{i=2}^{T} 0.5^i with Γ = 1 is 0.5 - 0.5^T
        assert!((v.mean - 0.5).abs() <= 1e-12);
        let zero = AgentSpec::Scripted(Scripted::Phased);
        let v = discounted_value(&zero, &copy(), &discounted(0.5, 1, 1e-12)).unwrap();
        assert_eq!(v.mean, 0.0);
    }

    #[test]
    fn uniform_agent_on_copy_discounted() {
        let v = discounted_value(&AgentSpec::Scripted(Scripted::Uniform), &copy(), &discounted(0.9, 2000, 1e-6)).unwrap();
        assert!((v.mean - 0.45).abs() < 0.02, "{}", v.mean);
        assert!(v.ci_half_width > 0.0);
    }

    #[test]
    fn harmonic_value_of_optimal_agent() {
        let p = ValuationParams {
            episodes: 1,
            truncation_epsilon: 1e-7,
            horizon: u64::MAX,
            ..ValuationParams::new(ValuationMode::Harmonic, 1)
        };
        let v = harmonic_value(&OPT, &copy(), &p).unwrap();
        let exact = 1.0 - 6.0 / (PI * PI);
        assert!((v.mean - exact).abs() < 1e-6, "{}", v.mean);
        assert!(v.truncation_bound <= 1e-7);
    }

    #[test]
    fn harmonic_weights_quarter_when_age_doubles() {
        for t in 1..100u64 {
            let w = |t: u64| 1.0 / (t as f64 * t as f64);
            assert!((w(2 * t) / w(t) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_environments_are_worth_nothing() {
        for mode in [ValuationMode::Discounted { gamma: 0.9 }, ValuationMode::Harmonic, ValuationMode::Summable] {
            let p = ValuationParams::new(mode, 3);
            for env in [constant(vec![]), program("")] {
                let v = estimate_value(&AgentSpec::Random, &env, &p, 0).unwrap().estimate;
                assert_eq!(v.mean, 0.0);
            }
        }
    }

    #[test]
    fn jackpot_is_worth_one_to_everyone() {
        let p = ValuationParams::new(ValuationMode::Summable, 3);
        for agent in [AgentSpec::Random, OPT, "basic".parse().unwrap()] {
            let v = summable_value(&agent, &constant(vec![255]), &p).unwrap();
            assert_eq!(v.mean, 1.0);
            assert_eq!(v.ci_half_width, 0.0);
            assert_eq!(v.budget_violations, 0);
        }
    }

    #[test]
    fn pattern_environment_with_always_correct_agent() {
        let env = EnvSpec::Native(make_pattern_env(1, SpaceConfig::default()).unwrap());
        let mut p = ValuationParams::new(ValuationMode::Summable, 3);
        p.episodes = 1;
        let v = summable_value(&OPT, &env, &p).unwrap();
        // payout 1 on each of the cycles 3..=257
        assert_eq!(v.mean, 255.0 / 255.0);
    }

    #[test]
    fn mode_and_summability_checks() {
        let p = ValuationParams::new(ValuationMode::Summable, 1);
        assert!(matches!(summable_value(&OPT, &copy(), &p), Err(ValuationError::NotSummable(_))));
        assert!(matches!(discounted_value(&OPT, &copy(), &p), Err(ValuationError::ModeMismatch { .. })));
        let mut bad = p;
        bad.episodes = 0;
        assert!(bad.validate().is_err());
        let bad = ValuationParams::new(ValuationMode::Discounted { gamma: 1.0 }, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn estimates_are_reproducible() {
        let p = ValuationParams::new(ValuationMode::Summable, 42);
        let env = program("?.,<.");
        let a = estimate_value(&"2back".parse().unwrap(), &env, &p, 5).unwrap();
        let b = estimate_value(&"2back".parse().unwrap(), &env, &p, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimate.mean.to_bits(), b.estimate.mean.to_bits());
    }

    #[test]
    fn profile_of_scripted_agents() {
        let prof = per_cycle_reward_profile(&AgentSpec::Scripted(Scripted::Phased), &copy(), 5010, 3, 1).unwrap();
        assert_eq!(prof[0], 0.0);
        assert!(prof[1..101].iter().all(|&x| x == 0.0));
        assert!(prof[101..5001].iter().all(|&x| x == 1.0));
        let prof = per_cycle_reward_profile(&OPT, &copy(), 10, 2, 1).unwrap();
        assert_eq!(prof, [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn ci_covers_true_value_often_enough() {
        // 200 independent-seed repetitions at N = 200 each
        let hits = (0..200u64)
            .into_par_iter()
            .filter(|&s| {
                let p = ValuationParams { seed: 1000 + s, ..discounted(0.9, 200, 1e-6) };
                let v = discounted_value(&AgentSpec::Scripted(Scripted::Uniform), &copy(), &p).unwrap();
                (v.mean - 0.45).abs() <= v.ci_half_width
            })
            .count();
        assert!(hits >= 180, "{hits} of 200");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gamma_norm_identity(g in 0.001f64..0.999) {
            prop_assert!((gamma_norm(g).unwrap() * (1.0 - g) / g - 1.0).abs() < 1e-12);
        }

        #[test]
        fn estimates_stay_in_range(src in "[><+\\-,?.]{0,6}", seed in any::<u64>(), agent in 0usize..4) {
            let agent: AgentSpec = ["random", "basic", "2back", "opt"][agent].parse().unwrap();
            let env = program(&src);
            for mode in [ValuationMode::Summable, ValuationMode::Discounted { gamma: 0.95 }, ValuationMode::Harmonic] {
                let p = ValuationParams { episodes: 4, horizon: 300, ..ValuationParams::new(mode, seed) };
                let v = estimate_value(&agent, &env, &p, 0).unwrap().estimate;
                prop_assert!(v.mean >= 0.0);
                prop_assert!(v.mean <= 1.0 + 2f64.powi(-20));
                prop_assert_eq!(v.budget_violations, 0);
            }
        }
    }
}
