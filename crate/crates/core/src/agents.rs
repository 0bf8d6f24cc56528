//! Reference agents and the agent interface.
//!
//! An agent is a distribution over actions given the history. Built-in agents
//! expose that distribution through [`Agent::policy`]; sampling always uses
//! one uniform draw from the agent's own stream, so agents with the same
//! distributions take the same actions under the same seed.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::external::{ExternalAgent, ExternalEndpoint};
use crate::interaction::{Action, History, SpaceConfig};
use crate::seeding::StreamRng;

pub const DEFAULT_EPSILON: f64 = 0.10;

/// Phase boundaries of the piecewise scripted agent.
pub const PHASED_FIRST_SWITCH: u64 = 100;
pub const PHASED_SECOND_SWITCH: u64 = 5000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent {0} has no explicit policy")]
    NoPolicy(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Action probabilities at a history that expects an action, if the
    /// agent can state them.
    fn policy(&self, history: &History) -> Option<Vec<f64>>;

    fn act(&mut self, history: &History, rng: &mut StreamRng) -> Result<Action, AgentError> {
        let dist = self.policy(history).ok_or_else(|| AgentError::NoPolicy(self.name().to_string()))?;
        Ok(sample(&dist, rng))
    }

    /// Called after every new percept, before `act`.
    fn observe(&mut self, _history: &History) {}

    /// Number of most recent cycles the agent reads.
    fn memory_depth(&self) -> usize {
        1
    }

    fn begin_episode(&mut self, _episode: u64) -> Result<(), AgentError> {
        Ok(())
    }

    /// Cycles in which the agent failed to answer in time and a uniform
    /// action was substituted.
    fn timeouts(&self) -> u64 {
        0
    }
}

/// Inverse-CDF sampling with a single uniform draw.
pub fn sample(dist: &[f64], rng: &mut StreamRng) -> Action {
    let u: f64 = rng.gen();
    let total: f64 = dist.iter().sum();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u * total < acc {
            return Action::new(i as u32);
        }
    }
    // rounding left u just past the last bucket
    let last = dist.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    Action::new(last as u32)
}

fn uniform(space: SpaceConfig) -> Vec<f64> {
    vec![1.0 / f64::from(space.action_count); space.action_count as usize]
}

fn point_mass(space: SpaceConfig, index: u32) -> Vec<f64> {
    let mut d = vec![0.0; space.action_count as usize];
    d[index as usize] = 1.0;
    d
}

/// Uniformly random actions at every history.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    space: SpaceConfig,
}

impl RandomAgent {
    pub fn new(space: SpaceConfig) -> Self {
        Self { space }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn policy(&self, _history: &History) -> Option<Vec<f64>> {
        Some(uniform(self.space))
    }
}

/// Running reward total and count for one action under one key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActionStats {
    pub reward_sum: u64,
    pub count: u64,
}

impl ActionStats {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.reward_sum as f64 / self.count as f64)
    }
}

/// Epsilon-greedy learner on the next-cycle reward, keyed by the history key
/// of a given depth. Depth 0 keys on the current observation alone.
#[derive(Debug, Clone)]
pub struct TableAgent {
    name: String,
    space: SpaceConfig,
    depth: usize,
    epsilon: f64,
    table: HashMap<Vec<u8>, Vec<ActionStats>>,
    pending: Option<(Vec<u8>, u32)>,
}

impl TableAgent {
    pub fn basic(space: SpaceConfig, epsilon: f64) -> Self {
        Self::with_name("basic".into(), space, 0, epsilon)
    }

    pub fn kback(space: SpaceConfig, k: usize, epsilon: f64) -> Self {
        Self::with_name(format!("{k}back"), space, k, epsilon)
    }

    fn with_name(name: String, space: SpaceConfig, depth: usize, epsilon: f64) -> Self {
        Self { name, space, depth, epsilon, table: HashMap::new(), pending: None }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn table(&self) -> &HashMap<Vec<u8>, Vec<ActionStats>> {
        &self.table
    }

    /// Greedy action for a key with statistics: untried actions first, then
    /// the highest mean, ties to the lowest index. Means are compared
    /// exactly by cross-multiplication.
    fn greedy(stats: &[ActionStats]) -> u32 {
        if let Some(i) = stats.iter().position(|s| s.count == 0) {
            return i as u32;
        }
        let mut best = 0;
        for (i, s) in stats.iter().enumerate().skip(1) {
            let b = &stats[best];
            if u128::from(s.reward_sum) * u128::from(b.count) > u128::from(b.reward_sum) * u128::from(s.count) {
                best = i;
            }
        }
        best as u32
    }
}

impl Agent for TableAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn policy(&self, history: &History) -> Option<Vec<f64>> {
        let Some(stats) = self.table.get(&history.key(self.depth)) else {
            return Some(uniform(self.space));
        };
        let n = f64::from(self.space.action_count);
        let mut d = vec![self.epsilon / n; self.space.action_count as usize];
        d[Self::greedy(stats) as usize] += 1.0 - self.epsilon;
        Some(d)
    }

    fn act(&mut self, history: &History, rng: &mut StreamRng) -> Result<Action, AgentError> {
        let dist = self.policy(history).expect("table agents always have a policy");
        let a = sample(&dist, rng);
        self.pending = Some((history.key(self.depth), a.index()));
        Ok(a)
    }

    fn observe(&mut self, history: &History) {
        let Some((key, a)) = self.pending.take() else {
            return;
        };
        let r = history.last_percept().map_or(0, |p| p.reward);
        let n = self.space.action_count as usize;
        let s = &mut self.table.entry(key).or_insert_with(|| vec![ActionStats::default(); n])[a as usize];
        s.reward_sum += u64::from(r);
        s.count += 1;
    }

    fn memory_depth(&self) -> usize {
        self.depth + 1
    }
}

/// The three scripted agents of the worked copy-environment example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scripted {
    /// Always action 1.
    Optimal,
    /// Uniform over both actions.
    Uniform,
    /// Action 0 for `k <= 100`, action 1 for `100 < k <= 5000`, uniform after.
    Phased,
}

#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    kind: Scripted,
    space: SpaceConfig,
}

impl ScriptedAgent {
    /// Scripted agents need a binary action space.
    pub fn new(kind: Scripted, space: SpaceConfig) -> Option<Self> {
        (space.action_count == 2).then_some(Self { kind, space })
    }
}

/// `(optimal, uniform, phased)` over binary actions.
pub fn scripted_agents(space: SpaceConfig) -> Option<(ScriptedAgent, ScriptedAgent, ScriptedAgent)> {
    Some((
        ScriptedAgent::new(Scripted::Optimal, space)?,
        ScriptedAgent::new(Scripted::Uniform, space)?,
        ScriptedAgent::new(Scripted::Phased, space)?,
    ))
}

impl Agent for ScriptedAgent {
    fn name(&self) -> &str {
        match self.kind {
            Scripted::Optimal => "opt",
            Scripted::Uniform => "pi1",
            Scripted::Phased => "pi2",
        }
    }

    fn policy(&self, history: &History) -> Option<Vec<f64>> {
        let k = history.cycle_count();
        Some(match self.kind {
            Scripted::Optimal => point_mass(self.space, 1),
            Scripted::Uniform => uniform(self.space),
            Scripted::Phased if k <= PHASED_FIRST_SWITCH => point_mass(self.space, 0),
            Scripted::Phased if k <= PHASED_SECOND_SWITCH => point_mass(self.space, 1),
            Scripted::Phased => uniform(self.space),
        })
    }
}

/// A named agent recipe; every episode gets a fresh instance.
#[derive(Debug, Clone)]
pub enum AgentSpec {
    Random,
    Basic { epsilon: f64 },
    KBack { k: usize, epsilon: f64 },
    Scripted(Scripted),
    External(Arc<ExternalEndpoint>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown agent {0:?}")]
pub struct UnknownAgent(pub String);

impl FromStr for AgentSpec {
    type Err = UnknownAgent;

    /// `random`, `basic`, `<k>back` (e.g. `2back`), `opt`, `pi1`, `pi2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let eps = DEFAULT_EPSILON;
        Ok(match s {
            "random" => AgentSpec::Random,
            "basic" => AgentSpec::Basic { epsilon: eps },
            "opt" => AgentSpec::Scripted(Scripted::Optimal),
            "pi1" => AgentSpec::Scripted(Scripted::Uniform),
            "pi2" => AgentSpec::Scripted(Scripted::Phased),
            _ => {
                let k = s
                    .strip_suffix("back")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| UnknownAgent(s.to_string()))?;
                AgentSpec::KBack { k, epsilon: eps }
            }
        })
    }
}

impl fmt::Display for AgentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentSpec::Random => f.write_str("random"),
            AgentSpec::Basic { .. } => f.write_str("basic"),
            AgentSpec::KBack { k, .. } => write!(f, "{k}back"),
            AgentSpec::Scripted(Scripted::Optimal) => f.write_str("opt"),
            AgentSpec::Scripted(Scripted::Uniform) => f.write_str("pi1"),
            AgentSpec::Scripted(Scripted::Phased) => f.write_str("pi2"),
            AgentSpec::External(e) => f.write_str(e.name()),
        }
    }
}

impl AgentSpec {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        match self {
            AgentSpec::Basic { .. } => AgentSpec::Basic { epsilon },
            AgentSpec::KBack { k, .. } => AgentSpec::KBack { k, epsilon },
            other => other,
        }
    }

    pub fn spawn(&self, space: SpaceConfig) -> Result<Box<dyn Agent>, AgentError> {
        Ok(match self {
            AgentSpec::Random => Box::new(RandomAgent::new(space)),
            AgentSpec::Basic { epsilon } => Box::new(TableAgent::basic(space, *epsilon)),
            AgentSpec::KBack { k, epsilon } => Box::new(TableAgent::kback(space, *k, *epsilon)),
            AgentSpec::Scripted(kind) => Box::new(
                ScriptedAgent::new(*kind, space)
                    .ok_or_else(|| AgentError::Protocol("scripted agents need 2 actions".into()))?,
            ),
            AgentSpec::External(e) => Box::new(ExternalAgent::new(e.clone(), space)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::Percept;
    use crate::seeding::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn space() -> SpaceConfig {
        SpaceConfig::default()
    }

    fn at_cycle(k: u64) -> History {
        let mut h = History::windowed(space(), 1);
        for j in 1..=k {
            h.push_percept(Percept::NULL).unwrap();
            if j < k {
                h.push_action(Action::new(0)).unwrap();
            }
        }
        h
    }

    #[test]
    fn random_is_uniform() {
        let a = RandomAgent::new(space());
        assert_eq!(a.policy(&at_cycle(1)), Some(vec![0.5, 0.5]));
        let mut rng = stream(3, &[]);
        let mut ones = 0;
        let n = 100_000;
        for _ in 0..n {
            ones += sample(&[0.5, 0.5], &mut rng).index();
        }
        assert!((f64::from(ones) / f64::from(n) - 0.5).abs() < 0.01);
    }

    #[test]
    fn phased_boundaries() {
        let (opt, _, pi2) = scripted_agents(space()).unwrap();
        assert_eq!(pi2.policy(&at_cycle(100)), Some(vec![1.0, 0.0]));
        assert_eq!(pi2.policy(&at_cycle(101)), Some(vec![0.0, 1.0]));
        assert_eq!(pi2.policy(&at_cycle(5000)), Some(vec![0.0, 1.0]));
        assert_eq!(pi2.policy(&at_cycle(5001)), Some(vec![0.5, 0.5]));
        assert_eq!(opt.policy(&at_cycle(7)), Some(vec![0.0, 1.0]));
        assert!(scripted_agents(SpaceConfig::new(3, 2, 255).unwrap()).is_none());
    }

    #[test]
    fn fresh_learner_is_uniform() {
        let a = TableAgent::basic(space(), 0.1);
        assert_eq!(a.policy(&at_cycle(1)), Some(vec![0.5, 0.5]));
    }

    /// Rewards 1 for action 1 and 0 for action 0, deterministically.
    fn feed(agent: &mut TableAgent, actions: &[u32]) -> History {
        let s = SpaceConfig::new(2, 2, 1).unwrap();
        let mut h = History::new(s);
        h.push_percept(Percept::NULL).unwrap();
        agent.observe(&h);
        for &a in actions {
            agent.pending = Some((h.key(agent.depth), a));
            h.push_action(Action::new(a)).unwrap();
            h.push_percept(Percept::new(0, a)).unwrap();
            agent.observe(&h);
        }
        h
    }

    #[test]
    fn greedy_mass_after_both_actions() {
        let s = SpaceConfig::new(2, 2, 1).unwrap();
        let mut a = TableAgent::basic(s, 0.1);
        let h = feed(&mut a, &[0, 1]);
        let d = a.policy(&h).unwrap();
        assert!((d[1] - 0.95).abs() < 1e-15);
        assert!((d[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn untried_action_is_preferred() {
        let s = SpaceConfig::new(2, 2, 1).unwrap();
        let mut a = TableAgent::basic(s, 0.1);
        let h = feed(&mut a, &[1]);
        // action 1 paid 1, action 0 is untried
        assert!((a.policy(&h).unwrap()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let stats = [ActionStats { reward_sum: 2, count: 4 }, ActionStats { reward_sum: 1, count: 2 }];
        assert_eq!(TableAgent::greedy(&stats), 0);
        let stats = [ActionStats { reward_sum: 2, count: 4 }, ActionStats { reward_sum: 2, count: 3 }];
        assert_eq!(TableAgent::greedy(&stats), 1);
    }

    #[test]
    fn parse_agent_names() {
        assert!(matches!("random".parse(), Ok(AgentSpec::Random)));
        assert!(matches!("2back".parse(), Ok(AgentSpec::KBack { k: 2, .. })));
        assert!(matches!("0back".parse(), Ok(AgentSpec::KBack { k: 0, .. })));
        assert_eq!("oracle".parse::<AgentSpec>().unwrap_err(), UnknownAgent("oracle".into()));
        assert!("back".parse::<AgentSpec>().is_err());
        for n in ["random", "basic", "3back", "opt", "pi1", "pi2"] {
            assert_eq!(n.parse::<AgentSpec>().unwrap().to_string(), n);
        }
    }

    /// Every history over {0,1} observations and actions, D = 1, with at
    /// most `cycles` percepts, ending with a percept.
    fn histories(cycles: usize) -> Vec<History> {
        let s = SpaceConfig::new(2, 2, 1).unwrap();
        let mut out = Vec::new();
        let mut frontier = vec![History::new(s)];
        for _ in 0..cycles {
            let mut next = Vec::new();
            for h in &frontier {
                let bases: Vec<History> = if h.is_empty() {
                    vec![h.clone()]
                } else {
                    (0..2).map(|a| h.clone().append_action(Action::new(a)).unwrap()).collect()
                };
                for b in bases {
                    for o in 0..2 {
                        for r in 0..2 {
                            next.push(b.clone().append_percept(Percept::new(o, r)).unwrap());
                        }
                    }
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    #[test]
    fn zero_back_equals_basic_everywhere() {
        let s = SpaceConfig::new(2, 2, 1).unwrap();
        for h in histories(4) {
            let mut basic = TableAgent::basic(s, 0.1);
            let mut zero = TableAgent::kback(s, 0, 0.1);
            // train both on the history's own past, then compare at its end
            let k = h.cycle_count();
            let mut replay = History::new(s);
            for j in 1..=k {
                replay.push_percept(h.percept(j).unwrap()).unwrap();
                basic.observe(&replay);
                zero.observe(&replay);
                assert_eq!(basic.policy(&replay), zero.policy(&replay));
                if j < k {
                    let a = h.action(j).unwrap();
                    basic.pending = Some((replay.key(0), a.index()));
                    zero.pending = Some((replay.key(0), a.index()));
                    replay.push_action(a).unwrap();
                }
            }
        }
    }

    #[test]
    fn zero_back_and_basic_act_identically() {
        let s = SpaceConfig::default();
        let mut basic = TableAgent::basic(s, 0.1);
        let mut zero = TableAgent::kback(s, 0, 0.1);
        let (mut r1, mut r2) = (stream(9, &[1]), stream(9, &[1]));
        let mut h = History::new(s);
        for k in 0..500u32 {
            h.push_percept(Percept::new(k % 2, (k * 37) % 256)).unwrap();
            basic.observe(&h);
            zero.observe(&h);
            let a = basic.act(&h, &mut r1).unwrap();
            assert_eq!(a, zero.act(&h, &mut r2).unwrap());
            h.push_action(a).unwrap();
        }
    }

    /// Recompute the table directly from a logged interaction.
    fn replay_table(h: &History, depth: usize) -> HashMap<Vec<u8>, Vec<ActionStats>> {
        let s = h.space();
        let mut t: HashMap<Vec<u8>, Vec<ActionStats>> = HashMap::new();
        let mut prefix = History::new(s);
        for j in 1..=h.cycle_count() {
            prefix.push_percept(h.percept(j).unwrap()).unwrap();
            if let Some(a) = h.action(j) {
                let key = prefix.key(depth);
                let r = h.percept(j + 1).map(|p| p.reward);
                if let Some(r) = r {
                    let e = t.entry(key).or_insert_with(|| vec![ActionStats::default(); s.action_count as usize]);
                    e[a.index() as usize].reward_sum += u64::from(r);
                    e[a.index() as usize].count += 1;
                }
                prefix.push_action(a).unwrap();
            }
        }
        t
    }

    proptest! {
        #[test]
        fn policies_are_normalized(depth in 0usize..3, eps in 0.0f64..1.0, seed in any::<u64>()) {
            let s = SpaceConfig::new(3, 2, 4).unwrap();
            let mut agent = TableAgent::kback(s, depth, eps);
            let mut rng = stream(seed, &[]);
            let mut env_rng = stream(seed, &[1]);
            let mut h = History::new(s);
            for _ in 0..60 {
                h.push_percept(Percept::new(env_rng.gen_range(0..2), env_rng.gen_range(0..5))).unwrap();
                agent.observe(&h);
                let d = agent.policy(&h).unwrap();
                prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 2f64.powi(-40));
                prop_assert!(d.iter().all(|&p| p >= 0.0));
                let a = agent.act(&h, &mut rng).unwrap();
                h.push_action(a).unwrap();
            }
            for kind in [Scripted::Optimal, Scripted::Uniform, Scripted::Phased] {
                let sa = ScriptedAgent::new(kind, SpaceConfig::default()).unwrap();
                let d = sa.policy(&at_cycle(1 + seed % 6000)).unwrap();
                prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 2f64.powi(-40));
            }
        }

        #[test]
        fn table_matches_replay(depth in 0usize..3, seed in any::<u64>()) {
            let s = SpaceConfig::new(2, 2, 3).unwrap();
            let mut agent = TableAgent::kback(s, depth, 0.3);
            let mut rng = stream(seed, &[]);
            let mut env_rng = stream(seed, &[1]);
            let mut h = History::new(s);
            for _ in 0..80 {
                h.push_percept(Percept::new(env_rng.gen_range(0..2), env_rng.gen_range(0..4))).unwrap();
                agent.observe(&h);
                let a = agent.act(&h, &mut rng).unwrap();
                h.push_action(a).unwrap();
            }
            let expected = replay_table(&h, depth);
            prop_assert_eq!(agent.table(), &expected);
        }
    }
}
