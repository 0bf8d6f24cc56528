//! Length-based prior weights, Levin's Kt cost and behavioural signatures.

use std::sync::Arc;

use thiserror::Error;

use super::program::EnvProgram;
use super::vm::{EnvProcess, MachineConfig, RewardBudget};
use crate::interaction::{Action, Percept, SpaceConfig};
use crate::seeding::{stream, SIGNATURE_STREAM};

/// Default cap on the number of tree nodes a signature may visit.
pub const DEFAULT_SIGNATURE_NODE_CAP: u64 = 1 << 20;

/// The dyadic weight `2^-exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PriorWeight {
    pub exponent: u32,
}

impl PriorWeight {
    /// Exact for every exponent up to 1074.
    pub fn to_f64(self) -> f64 {
        if self.exponent > 1074 {
            0.0
        } else if self.exponent > 1022 {
            f64::from_bits(1u64 << (1074 - self.exponent))
        } else {
            f64::from_bits(u64::from(1023 - self.exponent) << 52)
        }
    }
}

pub fn prior_weight(p: &EnvProgram) -> PriorWeight {
    PriorWeight { exponent: p.length_bits() }
}

/// `|p| + log2(steps)`, with `steps` clamped to at least one.
pub fn kt_cost(p: &EnvProgram, steps_used: u64) -> f64 {
    f64::from(p.length_bits()) + (steps_used.max(1) as f64).log2()
}

/// Exact Kraft sum `sum 2^-|p|` as a numerator over `2^KRAFT_SCALE`.
pub const KRAFT_SCALE: u32 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KraftSum {
    pub numerator: u128,
}

impl KraftSum {
    pub fn add(&mut self, length_bits: u32) {
        assert!(length_bits <= KRAFT_SCALE, "program longer than the exact Kraft scale");
        self.numerator += 1u128 << (KRAFT_SCALE - length_bits);
    }

    pub fn at_most_one(&self) -> bool {
        self.numerator <= 1u128 << KRAFT_SCALE
    }

    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 / (1u128 << KRAFT_SCALE) as f64
    }
}

pub fn kraft_sum<'a>(programs: impl IntoIterator<Item = &'a EnvProgram>) -> KraftSum {
    let mut k = KraftSum::default();
    for p in programs {
        k.add(p.length_bits());
    }
    k
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignatureError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("signature tree of {nodes} nodes exceeds the cap of {cap}")]
    TooLarge { nodes: u128, cap: u64 },
}

fn push_percept(out: &mut Vec<u8>, p: Percept) {
    out.extend_from_slice(&p.observation.to_le_bytes());
    out.extend_from_slice(&p.reward.to_le_bytes());
}

/// Percepts over every action sequence of fewer than `horizon` actions, in
/// depth-first order: the first percept, then for each action the subtree
/// after it. Random bits come from one fixed stream shared by every branch
/// and every program, so equal signatures mean equal behaviour up to the
/// horizon under that stream.
pub fn behavior_signature(
    p: &EnvProgram,
    horizon: u32,
    space: SpaceConfig,
    machine: &MachineConfig,
    node_cap: u64,
) -> Result<Vec<u8>, SignatureError> {
    if horizon == 0 {
        return Err(SignatureError::ZeroHorizon);
    }
    let a = u128::from(space.action_count);
    let nodes: u128 = (0..horizon).map(|j| a.saturating_pow(j)).fold(0u128, u128::saturating_add);
    if nodes > u128::from(node_cap) {
        return Err(SignatureError::TooLarge { nodes, cap: node_cap });
    }
    let mut proc = EnvProcess::new(
        Arc::new(p.clone()),
        machine,
        space,
        stream(0, &[SIGNATURE_STREAM]),
        RewardBudget::Summable,
    );
    let mut out = Vec::with_capacity(nodes as usize * 8);
    let first = proc.step(None);
    push_percept(&mut out, first);
    expand(&mut out, &proc, horizon - 1, space.action_count);
    Ok(out)
}

fn expand(out: &mut Vec<u8>, proc: &EnvProcess, depth: u32, actions: u32) {
    if depth == 0 {
        return;
    }
    if proc.is_halted() {
        // a halted process emits null percepts in the whole subtree
        let a = u64::from(actions);
        let count: u64 = (1..=depth).map(|j| a.pow(j)).sum();
        out.resize(out.len() + 8 * count as usize, 0);
        return;
    }
    for a in 0..actions {
        let mut child = proc.clone();
        let p = child.step(Some(Action::new(a)));
        push_percept(out, p);
        expand(out, &child, depth - 1, actions);
    }
}

/// Steps used over `cycles` cycles when the agent always plays action 0.
pub fn reference_steps(p: &EnvProgram, cycles: u32, space: SpaceConfig, machine: &MachineConfig) -> u64 {
    let mut proc = EnvProcess::new(
        Arc::new(p.clone()),
        machine,
        space,
        stream(0, &[SIGNATURE_STREAM]),
        RewardBudget::Summable,
    );
    for k in 0..cycles {
        proc.step((k > 0).then(|| Action::new(0)));
        if proc.is_halted() {
            break;
        }
    }
    proc.total_steps()
}
