//! Instruction set, opcode tables and self-delimiting program encoding.
//!
//! A program is the Elias gamma code of `n + 1` followed by `n` four-bit
//! opcodes. Codes `0..9` index the opcode table; `9..16` are reserved and
//! make the string invalid. The code is self-delimiting, so the set of valid
//! programs is prefix-free.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bits::{gamma_len, read_gamma, write_gamma, BitString};

pub const OPCODE_BITS: u32 = 4;
pub const INSTRUCTION_COUNT: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    MoveRight,
    MoveLeft,
    Inc,
    Dec,
    OpenBracket,
    CloseBracket,
    ReadAction,
    RandomBit,
    Yield,
}

impl Instruction {
    pub const CANONICAL: [Instruction; INSTRUCTION_COUNT] = [
        Instruction::MoveRight,
        Instruction::MoveLeft,
        Instruction::Inc,
        Instruction::Dec,
        Instruction::OpenBracket,
        Instruction::CloseBracket,
        Instruction::ReadAction,
        Instruction::RandomBit,
        Instruction::Yield,
    ];

    pub fn mnemonic(self) -> char {
        match self {
            Instruction::MoveRight => '>',
            Instruction::MoveLeft => '<',
            Instruction::Inc => '+',
            Instruction::Dec => '-',
            Instruction::OpenBracket => '[',
            Instruction::CloseBracket => ']',
            Instruction::ReadAction => ',',
            Instruction::RandomBit => '?',
            Instruction::Yield => '.',
        }
    }

    pub fn from_mnemonic(c: char) -> Option<Self> {
        Self::CANONICAL.into_iter().find(|i| i.mnemonic() == c)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("truncated length header")]
    TruncatedHeader,
    #[error("expected {expected} opcode bits, found {found}")]
    BodyLength { expected: usize, found: usize },
    #[error("reserved opcode {code} at instruction {index}")]
    ReservedOpcode { code: u8, index: usize },
    #[error("unbalanced brackets")]
    UnbalancedBrackets,
    #[error("invalid opcode table: {0}")]
    InvalidTable(String),
    #[error("unknown mnemonic {0:?}")]
    UnknownMnemonic(char),
}

/// Meaning of each valid four-bit code. Permuting the table changes the
/// reference machine while keeping the set of bit strings and their lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpcodeTable([Instruction; INSTRUCTION_COUNT]);

impl OpcodeTable {
    pub fn canonical() -> Self {
        Self(Instruction::CANONICAL)
    }

    pub fn new(table: [Instruction; INSTRUCTION_COUNT]) -> Result<Self, ProgramError> {
        for ins in Instruction::CANONICAL {
            if !table.contains(&ins) {
                return Err(ProgramError::InvalidTable(format!("missing {}", ins.mnemonic())));
            }
        }
        Ok(Self(table))
    }

    /// A uniformly random permutation drawn from `rng`.
    pub fn shuffled<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mut t = Instruction::CANONICAL;
        t.shuffle(rng);
        Self(t)
    }

    pub fn instruction(&self, code: u8) -> Option<Instruction> {
        self.0.get(code as usize).copied()
    }

    pub fn code(&self, ins: Instruction) -> u8 {
        self.0.iter().position(|&i| i == ins).expect("table is a permutation") as u8
    }

    pub fn is_canonical(&self) -> bool {
        self.0 == Instruction::CANONICAL
    }
}

impl Default for OpcodeTable {
    fn default() -> Self {
        Self::canonical()
    }
}

impl fmt::Display for OpcodeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|i| write!(f, "{}", i.mnemonic()))
    }
}

impl FromStr for OpcodeTable {
    type Err = ProgramError;

    /// Nine mnemonics in code order, e.g. `"><+-[],?."`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ins: Vec<Instruction> = s
            .chars()
            .map(|c| Instruction::from_mnemonic(c).ok_or(ProgramError::UnknownMnemonic(c)))
            .collect::<Result<_, _>>()?;
        let arr: [Instruction; INSTRUCTION_COUNT] = ins
            .try_into()
            .map_err(|_| ProgramError::InvalidTable(format!("{s:?} is not 9 mnemonics")))?;
        Self::new(arr)
    }
}

impl Serialize for OpcodeTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OpcodeTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A decoded, validated environment program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvProgram {
    bits: BitString,
    codes: Vec<u8>,
    instructions: Vec<Instruction>,
    /// Index of the matching bracket for bracket instructions.
    jumps: Vec<usize>,
}

impl EnvProgram {
    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn length_bits(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub(crate) fn jump(&self, ip: usize) -> usize {
        self.jumps[ip]
    }

    /// Stable identifier of the bit string, used to address random streams.
    pub fn id(&self) -> u64 {
        let bits = self.bits.as_slice();
        if bits.len() < 64 {
            bits.iter().fold(1u64, |acc, &b| (acc << 1) | u64::from(b))
        } else {
            crate::seeding::derive_seed(
                bits.len() as u64,
                &self
                    .bits
                    .to_bytes()
                    .chunks(8)
                    .map(|c| c.iter().fold(0u64, |a, &b| (a << 8) | u64::from(b)))
                    .collect::<Vec<_>>(),
            )
        }
    }

    /// `len:HEX`, the label used in reports.
    pub fn label(&self) -> String {
        format!("{}:{}", self.bits.len(), self.bits.to_hex())
    }

    /// Instructions as mnemonics, e.g. `+.`.
    pub fn mnemonics(&self) -> String {
        self.instructions.iter().map(|i| i.mnemonic()).collect()
    }

    /// Encode an instruction list under `table`.
    pub fn assemble(instructions: &[Instruction], table: &OpcodeTable) -> Result<Self, ProgramError> {
        let codes: Vec<u8> = instructions.iter().map(|&i| table.code(i)).collect();
        decode_program(&encode_codes(&codes), table)
    }

    /// Assemble from mnemonics, e.g. `"+[.]"`. Whitespace is ignored.
    pub fn from_mnemonics(src: &str, table: &OpcodeTable) -> Result<Self, ProgramError> {
        let ins = src
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| Instruction::from_mnemonic(c).ok_or(ProgramError::UnknownMnemonic(c)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::assemble(&ins, table)
    }
}

impl fmt::Display for EnvProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} # {}", self.bits.to_fixture(), self.mnemonics())
    }
}

pub fn encode_codes(codes: &[u8]) -> BitString {
    let mut bits = BitString::new();
    write_gamma(&mut bits, codes.len() as u64 + 1);
    for &c in codes {
        bits.push_bits(u64::from(c), OPCODE_BITS);
    }
    bits
}

/// Encoded length of a program with `n` instructions.
pub fn encoded_len(n: usize) -> usize {
    gamma_len(n as u64 + 1) + OPCODE_BITS as usize * n
}

fn match_brackets(ins: &[Instruction]) -> Result<Vec<usize>, ProgramError> {
    let mut jumps = vec![usize::MAX; ins.len()];
    let mut stack = Vec::new();
    for (i, &op) in ins.iter().enumerate() {
        match op {
            Instruction::OpenBracket => stack.push(i),
            Instruction::CloseBracket => {
                let open = stack.pop().ok_or(ProgramError::UnbalancedBrackets)?;
                jumps[open] = i;
                jumps[i] = open;
            }
            _ => {}
        }
    }
    if stack.is_empty() {
        Ok(jumps)
    } else {
        Err(ProgramError::UnbalancedBrackets)
    }
}

/// Decode a complete bit string. The string must be exactly one codeword.
pub fn decode_program(bits: &BitString, table: &OpcodeTable) -> Result<EnvProgram, ProgramError> {
    let (header, pos) = read_gamma(bits, 0).ok_or(ProgramError::TruncatedHeader)?;
    let n = (header - 1) as usize;
    let found = bits.len() - pos;
    if (found as u64) != (n as u64) * u64::from(OPCODE_BITS) {
        return Err(ProgramError::BodyLength { expected: n * OPCODE_BITS as usize, found });
    }
    let mut codes = Vec::with_capacity(n);
    let mut instructions = Vec::with_capacity(n);
    for index in 0..n {
        let start = pos + index * OPCODE_BITS as usize;
        let code = (start..start + OPCODE_BITS as usize)
            .fold(0u8, |acc, i| (acc << 1) | u8::from(bits.get(i).unwrap_or(false)));
        let ins = table.instruction(code).ok_or(ProgramError::ReservedOpcode { code, index })?;
        codes.push(code);
        instructions.push(ins);
    }
    let jumps = match_brackets(&instructions)?;
    Ok(EnvProgram { bits: bits.clone(), codes, instructions, jumps })
}

/// All valid programs of at most `max_length_bits` bits in shortlex order.
///
/// Encoded length grows strictly with the instruction count, and within one
/// count the bit order equals the lexicographic order of the code sequence,
/// so an odometer over codes yields shortlex order directly.
pub fn enumerate_programs(max_length_bits: u32, table: &OpcodeTable) -> Vec<EnvProgram> {
    let mut out = Vec::new();
    let mut n = 0usize;
    while encoded_len(n) <= max_length_bits as usize {
        let mut codes = vec![0u8; n];
        loop {
            let ins: Vec<Instruction> =
                codes.iter().map(|&c| table.instruction(c).expect("valid code")).collect();
            if let Ok(jumps) = match_brackets(&ins) {
                out.push(EnvProgram { bits: encode_codes(&codes), codes: codes.clone(), instructions: ins, jumps });
            }
            // odometer over 0..INSTRUCTION_COUNT, last position fastest
            let mut i = n;
            let exhausted = loop {
                if i == 0 {
                    break true;
                }
                i -= 1;
                codes[i] += 1;
                if (codes[i] as usize) < INSTRUCTION_COUNT {
                    break false;
                }
                codes[i] = 0;
            };
            if exhausted {
                break;
            }
        }
        n += 1;
    }
    out
}
