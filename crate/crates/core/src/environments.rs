//! The environment interface, hand-written environments and reference-machine
//! fixtures that reproduce some of them.

use std::sync::Arc;

use thiserror::Error;

use crate::interaction::{Action, Percept, SpaceConfig};
use crate::machine::program::{EnvProgram, OpcodeTable};
use crate::machine::vm::{EnvProcess, MachineConfig, RewardBudget};
use crate::seeding::StreamRng;

/// An interactive process producing one percept per cycle.
pub trait Environment: Send {
    fn space(&self) -> SpaceConfig;

    /// Advance one cycle. `action` is `None` exactly on the first cycle.
    fn step(&mut self, action: Option<Action>) -> Percept;

    /// Reward numerator still available, or `None` when no budget applies.
    fn remaining_budget(&self) -> Option<u32>;

    /// True once every future percept is known to be null.
    fn halted(&self) -> bool {
        false
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("the copy environment needs exactly 2 actions, got {0}")]
    NonBinaryActions(u32),
    #[error("schedule sums to {total}, over the budget of {budget}")]
    OverBudget { total: u64, budget: u32 },
    #[error("schedule entry {value} exceeds the reward denominator {denominator}")]
    RewardTooLarge { value: u32, denominator: u32 },
    #[error("pattern period must be at least 1")]
    ZeroPeriod,
    #[error("pattern entry {value} is not a valid action for {count} actions")]
    PatternAction { value: u32, count: u32 },
    #[error("pattern payout must be between 1 and the reward denominator")]
    BadPayout,
    #[error("unknown fixture {0:?}")]
    UnknownFixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Rule {
    Copy,
    Constant(Vec<u32>),
    Pattern { targets: Vec<u32>, payout: u32, last_paying_cycle: u64 },
}

/// A hand-written environment. A freshly made value is in its initial state;
/// clone it to get an independent instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeEnvironment {
    name: String,
    space: SpaceConfig,
    rule: Rule,
    budget: Option<u32>,
    cycle: u64,
    previous: Option<u32>,
    last: Option<u32>,
}

impl NativeEnvironment {
    fn new(name: impl Into<String>, space: SpaceConfig, rule: Rule, summable: bool) -> Self {
        Self {
            name: name.into(),
            space,
            rule,
            budget: summable.then_some(space.reward_denominator),
            cycle: 0,
            previous: None,
            last: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn summable(&self) -> bool {
        self.budget.is_some()
    }

    /// Largest total reward numerator any agent can collect, if finite.
    pub fn max_total_reward(&self) -> Option<u64> {
        match &self.rule {
            Rule::Copy => None,
            Rule::Constant(s) => Some(s.iter().map(|&r| u64::from(r)).sum()),
            Rule::Pattern { payout, last_paying_cycle, .. } => {
                Some(u64::from(*payout) * last_paying_cycle.saturating_sub(2))
            }
        }
    }

    fn raw_reward(&self, k: u64) -> u32 {
        match &self.rule {
            Rule::Copy => self.last.map_or(0, |a| a * self.space.reward_denominator),
            Rule::Constant(s) => s.get((k - 1) as usize).copied().unwrap_or(0),
            Rule::Pattern { targets, payout, last_paying_cycle } => {
                if k < 3 || k > *last_paying_cycle {
                    return 0;
                }
                let p = targets.len() as u64;
                let target = |j: u64| targets[((j - 1) % p) as usize];
                let hit = self.previous == Some(target(k - 2)) && self.last == Some(target(k - 1));
                if hit {
                    *payout
                } else {
                    0
                }
            }
        }
    }
}

impl Environment for NativeEnvironment {
    fn space(&self) -> SpaceConfig {
        self.space
    }

    fn step(&mut self, action: Option<Action>) -> Percept {
        if let Some(a) = action {
            self.previous = self.last;
            self.last = Some(a.index());
        }
        self.cycle += 1;
        let raw = self.raw_reward(self.cycle);
        let reward = match self.budget.as_mut() {
            Some(left) => {
                let r = raw.min(*left);
                *left -= r;
                r
            }
            None => raw,
        };
        Percept::new(0, reward)
    }

    fn remaining_budget(&self) -> Option<u32> {
        self.budget
    }

    fn halted(&self) -> bool {
        match &self.rule {
            Rule::Copy => false,
            Rule::Constant(s) => self.cycle >= s.len() as u64,
            Rule::Pattern { last_paying_cycle, .. } => self.cycle >= *last_paying_cycle,
        }
    }
}

/// Reward equals the previous action: `r_1 = 0`, `r_k = D * a_{k-1}`. The
/// observation space is the single symbol 0. No reward budget applies.
pub fn make_copy_env(cfg: SpaceConfig) -> Result<NativeEnvironment, EnvError> {
    if cfg.action_count != 2 {
        return Err(EnvError::NonBinaryActions(cfg.action_count));
    }
    let space = SpaceConfig { observation_count: 1, ..cfg };
    Ok(NativeEnvironment::new("copy", space, Rule::Copy, false))
}

/// Emits `schedule` whatever the agent does, then zeros.
pub fn make_constant_env(
    schedule: Vec<u32>,
    cfg: SpaceConfig,
    summable: bool,
) -> Result<NativeEnvironment, EnvError> {
    if let Some(&value) = schedule.iter().find(|&&r| r > cfg.reward_denominator) {
        return Err(EnvError::RewardTooLarge { value, denominator: cfg.reward_denominator });
    }
    let total: u64 = schedule.iter().map(|&r| u64::from(r)).sum();
    if summable && total > u64::from(cfg.reward_denominator) {
        return Err(EnvError::OverBudget { total, budget: cfg.reward_denominator });
    }
    Ok(NativeEnvironment::new("constant", cfg, Rule::Constant(schedule), summable))
}

/// Pays `payout` at cycle `k >= 3` when `a_{k-2}` and `a_{k-1}` both equal
/// the periodic target `t_j = targets[(j - 1) mod P]`. Paying cycles stop
/// after `floor(D / payout) + 2`, so the lifetime total never exceeds `D`.
pub fn make_pattern_env_with(
    targets: Vec<u32>,
    payout: u32,
    cfg: SpaceConfig,
) -> Result<NativeEnvironment, EnvError> {
    if targets.is_empty() {
        return Err(EnvError::ZeroPeriod);
    }
    if let Some(&value) = targets.iter().find(|&&t| t >= cfg.action_count) {
        return Err(EnvError::PatternAction { value, count: cfg.action_count });
    }
    if payout == 0 || payout > cfg.reward_denominator {
        return Err(EnvError::BadPayout);
    }
    let last_paying_cycle = u64::from(cfg.reward_denominator / payout) + 2;
    let space = SpaceConfig { observation_count: 1, ..cfg };
    let rule = Rule::Pattern { targets, payout, last_paying_cycle };
    Ok(NativeEnvironment::new("pattern", space, rule, true))
}

/// Target `t_j = 1` when `j - 1` is a multiple of `period`, else 0, with a
/// payout of one numerator unit. Period 1 targets the pair `(1, 1)`; period 2
/// alternates `1, 0, 1, 0, ...`.
pub fn make_pattern_env(period: u32, cfg: SpaceConfig) -> Result<NativeEnvironment, EnvError> {
    if period == 0 {
        return Err(EnvError::ZeroPeriod);
    }
    let targets = (0..period).map(|i| u32::from(i == 0)).collect();
    make_pattern_env_with(targets, 1, cfg)
}

/// A reference-machine program paired with the native environment it
/// reproduces.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub program: EnvProgram,
    pub native: NativeEnvironment,
    /// Number of actions over which the two forms are checked to agree.
    pub horizon: u32,
    pub budget: RewardBudget,
}

pub const FIXTURE_NAMES: [&str; 3] = ["copy", "zero", "jackpot"];

/// Fixtures assume the default machine and `D = 255`.
pub fn compile_fixture(name: &str) -> Result<Fixture, EnvError> {
    let table = OpcodeTable::canonical();
    let space = SpaceConfig::default();
    let asm = |src: &str| EnvProgram::from_mnemonics(src, &table).expect("fixture source is valid");
    let fixture = match name {
        // cell 0 holds the observation, cell 1 the reward, cell 2 a loop flag;
        // each pass clears cell 1, sets it to -a (= D when a = 1) and yields
        "copy" => Fixture {
            name: "copy",
            program: asm(".>>+[<<,>[+]<[>-<-].>>]"),
            native: make_copy_env(space)?,
            horizon: 10,
            budget: RewardBudget::Unbounded,
        },
        "zero" => Fixture {
            name: "zero",
            program: asm(""),
            native: make_constant_env(Vec::new(), space, true)?,
            horizon: 10,
            budget: RewardBudget::Summable,
        },
        // cell 0 wraps to 255 and is read as the reward from the last cell
        "jackpot" => Fixture {
            name: "jackpot",
            program: asm("-<."),
            native: make_constant_env(vec![space.reward_denominator], space, true)?,
            horizon: 10,
            budget: RewardBudget::Summable,
        },
        other => return Err(EnvError::UnknownFixture(other.to_string())),
    };
    Ok(fixture)
}

impl Fixture {
    pub fn vm_process(&self, rng: StreamRng) -> EnvProcess {
        EnvProcess::new(
            Arc::new(self.program.clone()),
            &MachineConfig::default(),
            self.native.space(),
            rng,
            self.budget,
        )
    }
}

/// Everything needed to start a fresh instance of an environment.
#[derive(Debug, Clone)]
pub enum EnvSpec {
    Program {
        program: Arc<EnvProgram>,
        machine: MachineConfig,
        space: SpaceConfig,
    },
    Native(NativeEnvironment),
}

impl EnvSpec {
    pub fn spawn(&self, rng: StreamRng) -> Box<dyn Environment> {
        match self {
            EnvSpec::Program { program, machine, space } => Box::new(EnvProcess::new(
                program.clone(),
                machine,
                *space,
                rng,
                RewardBudget::Summable,
            )),
            EnvSpec::Native(n) => Box::new(n.clone()),
        }
    }

    pub fn space(&self) -> SpaceConfig {
        match self {
            EnvSpec::Program { space, .. } => *space,
            EnvSpec::Native(n) => n.space(),
        }
    }

    pub fn summable(&self) -> bool {
        match self {
            EnvSpec::Program { .. } => true,
            EnvSpec::Native(n) => n.summable(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EnvSpec::Program { program, .. } => program.label(),
            EnvSpec::Native(n) => n.name().to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;

    fn run(env: &mut dyn Environment, actions: &[u32]) -> Vec<Percept> {
        let mut out = vec![env.step(None)];
        for &a in actions {
            out.push(env.step(Some(Action::new(a))));
        }
        out
    }

    fn rewards(env: &mut dyn Environment, actions: &[u32]) -> Vec<u32> {
        run(env, actions).iter().map(|p| p.reward).collect()
    }

    #[test]
    fn copy_rewards_previous_action() {
        let s = SpaceConfig::default();
        let mut e = make_copy_env(s).unwrap();
        assert_eq!(rewards(&mut e, &[1, 1, 1]), vec![0, 255, 255, 255]);
        let mut e = make_copy_env(s).unwrap();
        assert_eq!(rewards(&mut e, &[0, 0]), vec![0, 0, 0]);
        let mut e = make_copy_env(s).unwrap();
        assert!(run(&mut e, &[1, 0, 1]).iter().all(|p| p.observation == 0));
        assert_eq!(e.space().observation_count, 1);
        assert_eq!(e.remaining_budget(), None);
    }

    #[test]
    fn copy_needs_binary_actions() {
        let s = SpaceConfig::new(3, 2, 255).unwrap();
        assert_eq!(make_copy_env(s), Err(EnvError::NonBinaryActions(3)));
    }

    #[test]
    fn constant_schedules() {
        let s = SpaceConfig::default();
        let mut e = make_constant_env(vec![255], s, true).unwrap();
        assert_eq!(rewards(&mut e, &[0, 1, 0]), vec![255, 0, 0, 0]);
        let mut e = make_constant_env(vec![], s, true).unwrap();
        assert_eq!(rewards(&mut e, &[1, 1]), vec![0, 0, 0]);
        assert!(e.halted());
        let mut e = make_constant_env(vec![127, 128], s, true).unwrap();
        assert_eq!(rewards(&mut e, &[1, 1]), vec![127, 128, 0]);
        assert_eq!(e.remaining_budget(), Some(0));
        assert_eq!(
            make_constant_env(vec![200, 100], s, true),
            Err(EnvError::OverBudget { total: 300, budget: 255 })
        );
        assert!(make_constant_env(vec![200, 100], s, false).is_ok());
        assert!(make_constant_env(vec![256], s, false).is_err());
    }

    #[test]
    fn pattern_target_pair_forever() {
        let s = SpaceConfig::default();
        let mut e = make_pattern_env(1, s).unwrap();
        let total: u64 = rewards(&mut e, &vec![1; 1000]).iter().map(|&r| u64::from(r)).sum();
        // payout 1 on cycles 3..=257 by direct summation
        let expected: u64 = (3..=257u64).map(|_| 1).sum();
        assert_eq!(total, expected);
        assert_eq!(Some(total), e.max_total_reward());
        assert!(total <= 255);
    }

    #[test]
    fn pattern_zero_agent_gets_nothing() {
        let mut e = make_pattern_env(1, SpaceConfig::default()).unwrap();
        assert!(rewards(&mut e, &vec![0; 300]).iter().all(|&r| r == 0));
    }

    #[test]
    fn alternating_pattern() {
        let s = SpaceConfig::default();
        let mut e = make_pattern_env(2, s).unwrap();
        let play: Vec<u32> = (0..20).map(|i| u32::from(i % 2 == 0)).collect();
        let r = rewards(&mut e, &play);
        assert_eq!(&r[..2], &[0, 0]);
        assert!(r[2..].iter().all(|&x| x == 1));
        let mut e = make_pattern_env(2, s).unwrap();
        let out_of_phase: Vec<u32> = (0..20).map(|i| u32::from(i % 2 == 1)).collect();
        assert!(rewards(&mut e, &out_of_phase).iter().all(|&x| x == 0));
    }

    #[test]
    fn pattern_respects_budget_with_large_payout() {
        let s = SpaceConfig::default();
        let mut e = make_pattern_env_with(vec![1], 100, s).unwrap();
        let total: u32 = rewards(&mut e, &[1; 50]).iter().sum();
        assert_eq!(total, 200);
        assert_eq!(e.max_total_reward(), Some(200));
        assert!(make_pattern_env_with(vec![2], 1, s).is_err());
        assert!(make_pattern_env(0, s).is_err());
    }

    #[test]
    fn fixtures_match_natives() {
        for name in FIXTURE_NAMES {
            let f = compile_fixture(name).unwrap();
            let n = f.horizon as usize;
            for seq in 0u32..(1 << n) {
                let actions: Vec<u32> = (0..n).map(|i| (seq >> i) & 1).collect();
                let mut vm = f.vm_process(stream(1, &[]));
                let mut native = f.native.clone();
                assert_eq!(run(&mut vm, &actions), run(&mut native, &actions), "{name} {actions:?}");
            }
        }
    }

    #[test]
    fn unknown_fixture() {
        assert_eq!(
            compile_fixture("chess").unwrap_err(),
            EnvError::UnknownFixture("chess".into())
        );
    }
}
