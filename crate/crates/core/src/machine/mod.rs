//! The reference machine: a prefix-free program code, a small interactive
//! tape machine and the complexity measures derived from program length.

pub mod bits;
pub mod complexity;
pub mod program;
pub mod vm;

pub use bits::BitString;
pub use complexity::{behavior_signature, kraft_sum, kt_cost, prior_weight, PriorWeight};
pub use program::{decode_program, enumerate_programs, EnvProgram, Instruction, OpcodeTable, ProgramError};
pub use vm::{EnvProcess, MachineConfig, MachineError, RewardBudget};
