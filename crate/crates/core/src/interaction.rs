//! Spaces, messages and the turn discipline shared by agents and environments.
//!
//! The environment always moves first: a history reads `o1 r1 a1 o2 r2 a2 ...`.
//! Rewards are kept as integer numerators over a fixed denominator so that
//! budget accounting never touches floating point.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_REWARD_DENOMINATOR: u32 = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid space: {0}")]
    InvalidSpace(&'static str),
    #[error("out of turn: expected {expected}")]
    OutOfTurn { expected: &'static str },
    #[error("action {index} out of range for {count} actions")]
    ActionOutOfRange { index: u32, count: u32 },
    #[error("observation {index} out of range for {count} observations")]
    ObservationOutOfRange { index: u32, count: u32 },
    #[error("reward numerator {numerator} exceeds denominator {denominator}")]
    RewardOutOfRange { numerator: u32, denominator: u32 },
}

/// Sizes of the action, observation and reward spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub action_count: u32,
    pub observation_count: u32,
    /// Rewards take the values `k / reward_denominator` for `k` in `0..=reward_denominator`.
    pub reward_denominator: u32,
}

impl SpaceConfig {
    pub fn new(
        action_count: u32,
        observation_count: u32,
        reward_denominator: u32,
    ) -> Result<Self, ProtocolError> {
        if action_count == 0 {
            return Err(ProtocolError::InvalidSpace("action_count must be at least 1"));
        }
        if observation_count == 0 {
            return Err(ProtocolError::InvalidSpace("observation_count must be at least 1"));
        }
        if reward_denominator == 0 {
            return Err(ProtocolError::InvalidSpace("reward_denominator must be at least 1"));
        }
        Ok(Self { action_count, observation_count, reward_denominator })
    }

    pub fn with_observations(self, observation_count: u32) -> Result<Self, ProtocolError> {
        Self::new(self.action_count, observation_count, self.reward_denominator)
    }

    pub fn action(&self, index: u32) -> Result<Action, ProtocolError> {
        if index < self.action_count {
            Ok(Action(index))
        } else {
            Err(ProtocolError::ActionOutOfRange { index, count: self.action_count })
        }
    }

    pub fn check_percept(&self, p: Percept) -> Result<(), ProtocolError> {
        if p.observation >= self.observation_count {
            return Err(ProtocolError::ObservationOutOfRange {
                index: p.observation,
                count: self.observation_count,
            });
        }
        if p.reward > self.reward_denominator {
            return Err(ProtocolError::RewardOutOfRange {
                numerator: p.reward,
                denominator: self.reward_denominator,
            });
        }
        Ok(())
    }

    pub fn reward_value(&self, numerator: u32) -> f64 {
        f64::from(numerator) / f64::from(self.reward_denominator)
    }
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self { action_count: 2, observation_count: 2, reward_denominator: DEFAULT_REWARD_DENOMINATOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(u32);

impl Action {
    /// Unchecked constructor; callers guarantee `index < action_count`.
    pub(crate) const fn new(index: u32) -> Self {
        Action(index)
    }

    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// One environment message: observation symbol plus reward numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Percept {
    pub observation: u32,
    pub reward: u32,
}

impl Percept {
    /// What halted, stalled or exhausted environments emit.
    pub const NULL: Percept = Percept { observation: 0, reward: 0 };

    pub fn new(observation: u32, reward: u32) -> Self {
        Self { observation, reward }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cycle {
    percept: Percept,
    action: Option<Action>,
}

/// The interaction record `o1 r1 a1 o2 r2 a2 ...`.
///
/// A history may be windowed: it then retains only the most recent cycles,
/// which is all a finite-memory agent can look at, while `cycle_count` keeps
/// counting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    space: SpaceConfig,
    cycles: VecDeque<Cycle>,
    cycle_count: u64,
    window: Option<usize>,
}

impl History {
    pub fn new(space: SpaceConfig) -> Self {
        Self { space, cycles: VecDeque::new(), cycle_count: 0, window: None }
    }

    /// A history that keeps at most `window` cycles (minimum 1).
    pub fn windowed(space: SpaceConfig, window: usize) -> Self {
        Self { space, cycles: VecDeque::new(), cycle_count: 0, window: Some(window.max(1)) }
    }

    pub fn space(&self) -> SpaceConfig {
        self.space
    }

    /// Number of percepts received so far (`k`).
    pub fn cycle_count(&self) -> u64 {
        self.cycle_count
    }

    pub fn action_count(&self) -> u64 {
        match self.cycles.back() {
            Some(c) if c.action.is_none() => self.cycle_count - 1,
            _ => self.cycle_count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cycle_count == 0
    }

    pub fn expects_action(&self) -> bool {
        matches!(self.cycles.back(), Some(c) if c.action.is_none())
    }

    pub fn push_percept(&mut self, p: Percept) -> Result<(), ProtocolError> {
        if self.expects_action() {
            return Err(ProtocolError::OutOfTurn { expected: "action" });
        }
        self.space.check_percept(p)?;
        if let Some(w) = self.window {
            while self.cycles.len() >= w {
                self.cycles.pop_front();
            }
        }
        self.cycles.push_back(Cycle { percept: p, action: None });
        self.cycle_count += 1;
        Ok(())
    }

    pub fn push_action(&mut self, a: Action) -> Result<(), ProtocolError> {
        if a.index() >= self.space.action_count {
            return Err(ProtocolError::ActionOutOfRange {
                index: a.index(),
                count: self.space.action_count,
            });
        }
        match self.cycles.back_mut() {
            Some(c) if c.action.is_none() => {
                c.action = Some(a);
                Ok(())
            }
            _ => Err(ProtocolError::OutOfTurn { expected: "percept" }),
        }
    }

    /// Functional form of [`History::push_percept`].
    pub fn append_percept(mut self, p: Percept) -> Result<Self, ProtocolError> {
        self.push_percept(p)?;
        Ok(self)
    }

    /// Functional form of [`History::push_action`].
    pub fn append_action(mut self, a: Action) -> Result<Self, ProtocolError> {
        self.push_action(a)?;
        Ok(self)
    }

    pub fn last_percept(&self) -> Option<Percept> {
        self.cycles.back().map(|c| c.percept)
    }

    /// Most recent action, i.e. `a_{k-1}` while an action is expected.
    pub fn last_action(&self) -> Option<Action> {
        self.cycles.iter().rev().find_map(|c| c.action)
    }

    /// Percept of cycle `k` (1-based) if still retained.
    pub fn percept(&self, k: u64) -> Option<Percept> {
        let oldest = self.cycle_count + 1 - self.cycles.len() as u64;
        if k < oldest || k > self.cycle_count {
            return None;
        }
        self.cycles.get((k - oldest) as usize).map(|c| c.percept)
    }

    /// Action of cycle `k` (1-based) if taken and still retained.
    pub fn action(&self, k: u64) -> Option<Action> {
        let oldest = self.cycle_count + 1 - self.cycles.len() as u64;
        if k < oldest || k > self.cycle_count {
            return None;
        }
        self.cycles.get((k - oldest) as usize).and_then(|c| c.action)
    }

    /// Canonical byte key of the recent past.
    ///
    /// `depth == 0` keys on the current observation alone. Otherwise the key
    /// holds the last `depth` completed `(observation, reward, action)` cycles
    /// plus the current percept, prefixed by how many cycles were available.
    /// Fixed-width fields make the encoding injective for a given depth.
    pub fn key(&self, depth: usize) -> Vec<u8> {
        let Some(current) = self.last_percept() else {
            return Vec::new();
        };
        if depth == 0 {
            return current.observation.to_le_bytes().to_vec();
        }
        // the current cycle may already hold an action; only completed,
        // earlier cycles count towards the window
        let completed = self.cycles.len() - 1;
        let n = depth.min(completed);
        debug_assert!(
            n == depth || completed as u64 + 1 == self.cycle_count,
            "history window too small for key depth {depth}"
        );
        let mut key = Vec::with_capacity(4 + 12 * n + 8);
        key.extend_from_slice(&(n as u32).to_le_bytes());
        let start = self.cycles.len() - 1 - n;
        for c in self.cycles.range(start..self.cycles.len() - 1) {
            key.extend_from_slice(&c.percept.observation.to_le_bytes());
            key.extend_from_slice(&c.percept.reward.to_le_bytes());
            let a = c.action.map_or(u32::MAX, Action::index);
            key.extend_from_slice(&a.to_le_bytes());
        }
        key.extend_from_slice(&current.observation.to_le_bytes());
        key.extend_from_slice(&current.reward.to_le_bytes());
        key
    }
}
