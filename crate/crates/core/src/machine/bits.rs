//! Bit strings, the Elias gamma code and the `len=N hex=..` fixture notation.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitsError {
    #[error("malformed fixture line: {0}")]
    Malformed(String),
    #[error("hex digits cover {available} bits, fewer than len={len}")]
    TooShort { len: usize, available: usize },
    #[error("padding bits after len={0} are not zero")]
    DirtyPadding(usize),
}

/// An owned string of bits, most significant first when packed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    /// Append the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.0.push((value >> i) & 1 == 1);
        }
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.0.get(i).copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// The low `len` bits of `value`, most significant first.
    pub fn from_u64(value: u64, len: usize) -> Self {
        let mut b = Self(Vec::with_capacity(len));
        b.push_bits(value, len as u32);
        b
    }

    pub fn starts_with(&self, prefix: &BitString) -> bool {
        self.0.starts_with(&prefix.0)
    }

    /// Pack into bytes, zero-padded at the end.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    /// First `len` bits of `bytes`; padding bits must be zero.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self, BitsError> {
        if bytes.len() * 8 < len {
            return Err(BitsError::TooShort { len, available: bytes.len() * 8 });
        }
        let bit = |i: usize| bytes[i / 8] & (0x80 >> (i % 8)) != 0;
        if (len..bytes.len() * 8).any(bit) {
            return Err(BitsError::DirtyPadding(len));
        }
        Ok(Self((0..len).map(bit).collect()))
    }

    /// Uppercase hex of the packed bytes; empty for the empty string.
    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02X}")).collect()
    }

    /// `len=13 hex=1A28`
    pub fn to_fixture(&self) -> String {
        format!("len={} hex={}", self.len(), self.to_hex())
    }

    /// Parse one fixture line. Anything after `#` is a comment.
    pub fn parse_fixture(line: &str) -> Result<Self, BitsError> {
        let body = line.split('#').next().unwrap_or("").trim();
        let malformed = || BitsError::Malformed(line.trim().to_string());
        let mut len = None;
        let mut hex = None;
        for field in body.split_whitespace() {
            match field.split_once('=') {
                Some(("len", v)) => len = Some(v.parse::<usize>().map_err(|_| malformed())?),
                Some(("hex", v)) => hex = Some(v),
                _ => return Err(malformed()),
            }
        }
        let (len, hex) = (len.ok_or_else(malformed)?, hex.unwrap_or(""));
        if hex.len() % 2 != 0 {
            return Err(malformed());
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<u8>, _>>()
            .map_err(|_| malformed())?;
        if bytes.len() != len.div_ceil(8) {
            return Err(BitsError::TooShort { len, available: bytes.len() * 8 });
        }
        Self::from_bytes(&bytes, len)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Bits needed for the Elias gamma code of `value >= 1`.
pub fn gamma_len(value: u64) -> usize {
    assert!(value >= 1, "gamma code is defined for positive integers");
    2 * (63 - value.leading_zeros() as usize) + 1
}

/// `floor(log2 v)` zeros followed by `v` in binary.
pub fn write_gamma(out: &mut BitString, value: u64) {
    assert!(value >= 1, "gamma code is defined for positive integers");
    let width = 64 - value.leading_zeros();
    for _ in 1..width {
        out.push(false);
    }
    out.push_bits(value, width);
}

/// Decode a gamma codeword starting at `pos`. Returns the value and the
/// position after it, or `None` if the bits run out first.
pub fn read_gamma(bits: &BitString, pos: usize) -> Option<(u64, usize)> {
    let mut zeros = 0;
    while !bits.get(pos + zeros)? {
        zeros += 1;
        if zeros > 63 {
            return None;
        }
    }
    let mut value = 0u64;
    for i in 0..=zeros {
        value = (value << 1) | u64::from(bits.get(pos + zeros + i)?);
    }
    Some((value, pos + 2 * zeros + 1))
}
