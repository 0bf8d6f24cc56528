//! Interactive execution of environment programs.
//!
//! Each call to [`EnvProcess::step`] resumes the program until it executes a
//! YIELD, runs off the end (halt), or uses up the per-cycle step budget. The
//! last two cases emit the null percept `(0, 0)`; a stalled process resumes
//! where it stopped on the next cycle.
//!
//! Rewards are clamped to a lifetime budget of `D` numerator units, so the
//! total reward of any interaction is at most 1.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::program::{EnvProgram, Instruction, OpcodeTable};
use crate::environments::Environment;
use crate::interaction::{Action, Percept, SpaceConfig};
use crate::seeding::StreamRng;

pub const DEFAULT_STEP_BUDGET: u64 = 4096;
pub const DEFAULT_TAPE_LENGTH: usize = 64;
pub const DEFAULT_CELL_MODULUS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error("step budget per cycle must be at least 1")]
    ZeroStepBudget,
    #[error("tape needs at least 2 cells, got {0}")]
    ShortTape(usize),
    #[error("cell modulus must be at least 2, got {0}")]
    SmallModulus(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineConfig {
    pub step_budget_per_cycle: u64,
    pub tape_length: usize,
    pub cell_modulus: u32,
    pub opcode_table: OpcodeTable,
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), MachineError> {
        if self.step_budget_per_cycle == 0 {
            return Err(MachineError::ZeroStepBudget);
        }
        if self.tape_length < 2 {
            return Err(MachineError::ShortTape(self.tape_length));
        }
        if self.cell_modulus < 2 {
            return Err(MachineError::SmallModulus(self.cell_modulus));
        }
        Ok(())
    }

    pub fn with_table(self, opcode_table: OpcodeTable) -> Self {
        Self { opcode_table, ..self }
    }
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            step_budget_per_cycle: DEFAULT_STEP_BUDGET,
            tape_length: DEFAULT_TAPE_LENGTH,
            cell_modulus: DEFAULT_CELL_MODULUS,
            opcode_table: OpcodeTable::canonical(),
        }
    }
}

/// Whether the lifetime reward budget applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardBudget {
    /// Total emitted reward is capped at `D` (the environment class).
    Summable,
    /// No cap; used only to compare fixtures against non-summable natives.
    Unbounded,
}

/// Loop-state snapshot taken at a backward jump, used to recognise a loop
/// that has reached a fixed point within the current cycle.
#[derive(Debug, Clone)]
struct LoopProbe {
    close_ip: usize,
    steps: u64,
    cursor: usize,
    random_draws: u64,
    tape: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct EnvProcess {
    program: Arc<EnvProgram>,
    space: SpaceConfig,
    step_budget: u64,
    cell_modulus: u32,
    tape: Vec<u32>,
    cursor: usize,
    ip: usize,
    last_action: u32,
    budget: Option<u32>,
    halted: bool,
    rng: StreamRng,
    random_draws: u64,
    total_steps: u64,
    max_cycle_steps: u64,
}

impl EnvProcess {
    pub fn new(
        program: Arc<EnvProgram>,
        machine: &MachineConfig,
        space: SpaceConfig,
        rng: StreamRng,
        budget: RewardBudget,
    ) -> Self {
        let halted = program.is_empty();
        Self {
            program,
            space,
            step_budget: machine.step_budget_per_cycle,
            cell_modulus: machine.cell_modulus,
            tape: vec![0; machine.tape_length],
            cursor: 0,
            ip: 0,
            last_action: 0,
            budget: match budget {
                RewardBudget::Summable => Some(space.reward_denominator),
                RewardBudget::Unbounded => None,
            },
            halted,
            rng,
            random_draws: 0,
            total_steps: 0,
            max_cycle_steps: 0,
        }
    }

    pub fn program(&self) -> &EnvProgram {
        &self.program
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// VM steps executed over the whole lifetime, fast-forwarded loops included.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Largest number of steps any single cycle has used.
    pub fn max_cycle_steps(&self) -> u64 {
        self.max_cycle_steps
    }

    pub fn remaining_budget(&self) -> Option<u32> {
        self.budget
    }

    pub fn tape(&self) -> &[u32] {
        &self.tape
    }

    fn emit(&mut self) -> Percept {
        let len = self.tape.len();
        let observation = self.tape[self.cursor] % self.space.observation_count;
        let raw = self.tape[(self.cursor + 1) % len] % (self.space.reward_denominator + 1);
        let reward = match self.budget.as_mut() {
            Some(left) => {
                let r = raw.min(*left);
                *left -= r;
                r
            }
            None => raw,
        };
        Percept { observation, reward }
    }

    /// Run one cycle. `action` is `None` only on the first cycle.
    pub fn step(&mut self, action: Option<Action>) -> Percept {
        if let Some(a) = action {
            self.last_action = a.index();
        }
        if self.halted {
            return Percept::NULL;
        }
        let (percept, used) = self.run_cycle();
        self.total_steps += used;
        self.max_cycle_steps = self.max_cycle_steps.max(used);
        percept
    }

    fn run_cycle(&mut self) -> (Percept, u64) {
        let budget = self.step_budget;
        let len = self.tape.len();
        let m = self.cell_modulus;
        let mut steps = 0u64;
        let mut probes: Vec<LoopProbe> = Vec::new();
        while steps < budget {
            let Some(&ins) = self.program.instructions().get(self.ip) else {
                self.halted = true;
                return (Percept::NULL, steps);
            };
            steps += 1;
            let c = self.cursor;
            match ins {
                Instruction::MoveRight => self.cursor = (c + 1) % len,
                Instruction::MoveLeft => self.cursor = (c + len - 1) % len,
                Instruction::Inc => self.tape[c] = (self.tape[c] + 1) % m,
                Instruction::Dec => self.tape[c] = (self.tape[c] + m - 1) % m,
                Instruction::OpenBracket => {
                    if self.tape[c] == 0 {
                        self.ip = self.program.jump(self.ip);
                    }
                }
                Instruction::CloseBracket => {
                    if self.tape[c] != 0 {
                        let close_ip = self.ip;
                        self.ip = self.program.jump(close_ip);
                        steps = self.probe_loop(&mut probes, close_ip, steps);
                    }
                }
                Instruction::ReadAction => self.tape[c] = self.last_action % m,
                Instruction::RandomBit => {
                    self.tape[c] = u32::from(self.rng.gen::<bool>());
                    self.random_draws += 1;
                }
                Instruction::Yield => {
                    self.ip += 1;
                    return (self.emit(), steps);
                }
            }
            self.ip += 1;
        }
        (Percept::NULL, steps)
    }

    /// If the machine is back at the same backward jump with the same tape
    /// and cursor, and drew no random bits in between, the loop body is a
    /// fixed point: every further period repeats it exactly. Skip whole
    /// periods so the cycle ends at the same state as stepping through.
    fn probe_loop(&mut self, probes: &mut Vec<LoopProbe>, close_ip: usize, steps: u64) -> u64 {
        let pos = probes.iter().position(|p| p.close_ip == close_ip);
        if let Some(i) = pos {
            let p = &probes[i];
            if p.cursor == self.cursor && p.random_draws == self.random_draws && p.tape == self.tape {
                let period = steps - p.steps;
                let whole = (self.step_budget - steps) / period;
                probes.remove(i);
                return steps + whole * period;
            }
        }
        let probe = LoopProbe {
            close_ip,
            steps,
            cursor: self.cursor,
            random_draws: self.random_draws,
            tape: self.tape.clone(),
        };
        match pos {
            Some(i) => probes[i] = probe,
            None => probes.push(probe),
        }
        steps
    }
}

impl Environment for EnvProcess {
    fn space(&self) -> SpaceConfig {
        self.space
    }

    fn step(&mut self, action: Option<Action>) -> Percept {
        EnvProcess::step(self, action)
    }

    fn remaining_budget(&self) -> Option<u32> {
        self.budget
    }

    fn halted(&self) -> bool {
        self.halted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::program::enumerate_programs;
    use crate::seeding::stream;
    use rand::SeedableRng;

    fn process(src: &str) -> EnvProcess {
        let m = MachineConfig::default();
        let p = EnvProgram::from_mnemonics(src, &m.opcode_table).unwrap();
        EnvProcess::new(Arc::new(p), &m, SpaceConfig::default(), stream(0, &[]), RewardBudget::Summable)
    }

    /// Straightforward interpreter without loop fast-forwarding, used as the
    /// reference for the optimised one.
    fn reference_run(p: &EnvProgram, m: &MachineConfig, s: SpaceConfig, seed: u64, actions: &[u32]) -> Vec<Percept> {
        let mut rng = StreamRng::seed_from_u64(seed);
        let (mut tape, mut cur, mut ip, mut last, mut budget) = (vec![0u32; m.tape_length], 0usize, 0usize, 0u32, s.reward_denominator);
        let len = m.tape_length;
        let mut out = Vec::new();
        let mut halted = p.is_empty();
        for k in 0..=actions.len() {
            if k > 0 {
                last = actions[k - 1];
            }
            if halted {
                out.push(Percept::NULL);
                continue;
            }
            let mut emitted = Percept::NULL;
            let mut steps = 0;
            while steps < m.step_budget_per_cycle {
                if ip >= p.len() {
                    halted = true;
                    break;
                }
                steps += 1;
                match p.instructions()[ip] {
                    Instruction::MoveRight => cur = (cur + 1) % len,
                    Instruction::MoveLeft => cur = (cur + len - 1) % len,
                    Instruction::Inc => tape[cur] = (tape[cur] + 1) % m.cell_modulus,
                    Instruction::Dec => tape[cur] = (tape[cur] + m.cell_modulus - 1) % m.cell_modulus,
                    Instruction::OpenBracket if tape[cur] == 0 => ip = p.jump(ip),
                    Instruction::CloseBracket if tape[cur] != 0 => ip = p.jump(ip),
                    Instruction::OpenBracket | Instruction::CloseBracket => {}
                    Instruction::ReadAction => tape[cur] = last % m.cell_modulus,
                    Instruction::RandomBit => tape[cur] = u32::from(rng.gen::<bool>()),
                    Instruction::Yield => {
                        let raw = tape[(cur + 1) % len] % (s.reward_denominator + 1);
                        let r = raw.min(budget);
                        budget -= r;
                        emitted = Percept::new(tape[cur] % s.observation_count, r);
                        ip += 1;
                        break;
                    }
                }
                ip += 1;
            }
            out.push(emitted);
        }
        out
    }

    #[test]
    fn empty_program_is_halted() {
        let mut p = process("");
        assert!(p.is_halted());
        for a in [None, Some(Action::new(1)), Some(Action::new(0))] {
            assert_eq!(p.step(a), Percept::NULL);
        }
    }

    #[test]
    fn single_yield_then_halt() {
        let mut p = process(".");
        assert_eq!(p.step(None), Percept::new(0, 0));
        assert!(!p.is_halted());
        assert_eq!(p.step(Some(Action::new(1))), Percept::NULL);
        assert!(p.is_halted());
    }

    #[test]
    fn inc_then_yield() {
        let mut p = process("+.");
        assert_eq!(p.step(None), Percept::new(1, 0));
        let mut q = process(">+<.");
        assert_eq!(q.step(None), Percept::new(0, 1));
    }

    #[test]
    fn read_action_sees_latest_action() {
        let mut p = process(".,<.");
        assert_eq!(p.step(None), Percept::NULL);
        // cell 0 <- a1, cursor moves to the last cell, reward reads cell 0
        assert_eq!(p.step(Some(Action::new(1))), Percept::new(0, 1));
    }

    #[test]
    fn reward_clamps_to_budget() {
        // cell 1 = 255 = D, so the first yield spends the whole budget
        let mut p = process(">-<+[.]");
        assert_eq!(p.step(None), Percept::new(1, 255));
        assert_eq!(p.remaining_budget(), Some(0));
        for _ in 0..5 {
            assert_eq!(p.step(Some(Action::new(0))), Percept::new(1, 0));
        }
    }

    #[test]
    fn unbounded_budget_does_not_clamp() {
        let m = MachineConfig::default();
        let p = EnvProgram::from_mnemonics(">-<+[.]", &m.opcode_table).unwrap();
        let mut proc = EnvProcess::new(Arc::new(p), &m, SpaceConfig::default(), stream(0, &[]), RewardBudget::Unbounded);
        for k in 0..3 {
            let a = (k > 0).then(|| Action::new(0));
            assert_eq!(proc.step(a), Percept::new(1, 255));
        }
    }

    #[test]
    fn spinning_loop_times_out_each_cycle() {
        let mut p = process("+[]");
        for k in 0..4 {
            let a = (k > 0).then(|| Action::new(0));
            assert_eq!(p.step(a), Percept::NULL);
        }
        assert_eq!(p.max_cycle_steps(), DEFAULT_STEP_BUDGET);
        assert_eq!(p.total_steps(), 4 * DEFAULT_STEP_BUDGET);
        assert!(!p.is_halted());
    }

    #[test]
    fn action_dependent_spin_escapes() {
        // spins while the last action is 1, then yields
        let mut p = process(".+[,]+.");
        p.step(None);
        assert_eq!(p.step(Some(Action::new(1))), Percept::NULL);
        assert_eq!(p.step(Some(Action::new(1))), Percept::NULL);
        assert_eq!(p.step(Some(Action::new(0))), Percept::new(1, 0));
    }

    #[test]
    fn fast_forward_matches_reference_interpreter() {
        let m = MachineConfig { step_budget_per_cycle: 37, ..MachineConfig::default() };
        let s = SpaceConfig::default();
        let progs = enumerate_programs(21, &m.opcode_table);
        let extra = ["+[,]+.", ".+[,]+.", "+[>+<-.]", "-[+-]..", "+[,>+<.]", "?[.?].", "+[[-]+.,]"];
        let extra: Vec<EnvProgram> = extra.iter().map(|s| EnvProgram::from_mnemonics(s, &m.opcode_table).unwrap()).collect();
        let actions: Vec<u32> = (0..12).map(|i| (i * 7 / 3) % 2).collect();
        for p in progs.iter().chain(&extra) {
            let expect = reference_run(p, &m, s, 11, &actions);
            let mut proc = EnvProcess::new(Arc::new(p.clone()), &m, s, StreamRng::seed_from_u64(11), RewardBudget::Summable);
            let mut got = vec![proc.step(None)];
            for &a in &actions {
                got.push(proc.step(Some(Action::new(a))));
            }
            assert_eq!(got, expect, "program {}", p.mnemonics());
            assert!(proc.max_cycle_steps() <= 37);
        }
    }

    #[test]
    fn machine_config_validation() {
        assert!(MachineConfig::default().validate().is_ok());
        assert!(MachineConfig { step_budget_per_cycle: 0, ..Default::default() }.validate().is_err());
        assert!(MachineConfig { tape_length: 1, ..Default::default() }.validate().is_err());
        assert!(MachineConfig { cell_modulus: 1, ..Default::default() }.validate().is_err());
    }
}
