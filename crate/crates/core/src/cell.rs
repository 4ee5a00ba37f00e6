//! Multi-level cell states and overwrite-data generation.
//!
//! A cell with `b` bits stores one of `2^b` levels. Level `0` is the erased
//! state and programming can only raise a level until the next erase. The
//! bit encoding is plain binary, most significant bit first, so level 4 of a
//! 3-bit cell stores `"100"` and the highest level stores all ones.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Largest supported bits-per-cell. Levels are stored in a `u8`.
pub const MAX_BITS_PER_CELL: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CellError {
    #[error("bits per cell must be in 1..={MAX_BITS_PER_CELL}, got {0}")]
    BitsPerCell(u32),
    #[error("level {level} is out of range for a {bits}-bit cell")]
    LevelOutOfRange { level: u32, bits: u8 },
    #[error("bit string {got:?} has width {}, expected {bits}", got.len())]
    Width { got: String, bits: u8 },
    #[error("invalid character {0:?} in bit string")]
    BadBit(char),
    #[error("word was built for {expected}-bit cells, got {got}-bit")]
    BitsMismatch { expected: u8, got: u8 },
    #[error("hex payload {0:?} is malformed")]
    BadHex(String),
    #[error("hex payload has {got} digits, expected {expected} for {bits} bits")]
    HexWidth { got: usize, expected: usize, bits: usize },
}

/// Number of bits stored per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitsPerCell(u8);

impl BitsPerCell {
    pub fn new(bits: u32) -> Result<Self, CellError> {
        if bits == 0 || bits > u32::from(MAX_BITS_PER_CELL) {
            return Err(CellError::BitsPerCell(bits));
        }
        Ok(BitsPerCell(bits as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Number of distinct levels, `2^b`.
    pub fn states(self) -> u32 {
        1u32 << self.0
    }

    /// The highest level, `2^b - 1`.
    pub fn max_level(self) -> CellLevel {
        CellLevel((self.states() - 1) as u8)
    }

    fn check(self, level: CellLevel) -> Result<CellLevel, CellError> {
        if u32::from(level.0) >= self.states() {
            Err(CellError::LevelOutOfRange { level: u32::from(level.0), bits: self.0 })
        } else {
            Ok(level)
        }
    }
}

impl Default for BitsPerCell {
    fn default() -> Self {
        BitsPerCell(3)
    }
}

impl fmt::Display for BitsPerCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Programmed level of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellLevel(u8);

impl CellLevel {
    pub const ERASED: CellLevel = CellLevel(0);

    pub fn new(level: u32, bits: BitsPerCell) -> Result<Self, CellError> {
        if level >= bits.states() {
            return Err(CellError::LevelOutOfRange { level, bits: bits.get() });
        }
        Ok(CellLevel(level as u8))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_max(self, bits: BitsPerCell) -> bool {
        self == bits.max_level()
    }
}

impl fmt::Display for CellLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary encoding of `level`, MSB first, zero-padded to `bits` characters.
pub fn encode_level(level: CellLevel, bits: BitsPerCell) -> Result<String, CellError> {
    let level = bits.check(level)?;
    Ok(format!("{:0width$b}", level.0, width = usize::from(bits.get())))
}

pub fn decode_bits(s: &str, bits: BitsPerCell) -> Result<CellLevel, CellError> {
    if s.chars().count() != usize::from(bits.get()) {
        return Err(CellError::Width { got: s.to_string(), bits: bits.get() });
    }
    let mut value = 0u32;
    for c in s.chars() {
        let bit = match c {
            '0' => 0,
            '1' => 1,
            other => return Err(CellError::BadBit(other)),
        };
        value = (value << 1) | bit;
    }
    Ok(CellLevel(value as u8))
}

/// Levels reachable from `original` by programming alone: every level
/// strictly above it. Empty at the max level.
pub fn available_levels(original: CellLevel, bits: BitsPerCell) -> Result<Vec<CellLevel>, CellError> {
    let original = bits.check(original)?;
    Ok((u32::from(original.0) + 1..bits.states())
        .map(|l| CellLevel(l as u8))
        .collect())
}

/// Draws uniformly from [`available_levels`]. A cell already at the max
/// level keeps its level.
pub fn gen_upward_random<R: Rng + ?Sized>(
    original: CellLevel,
    bits: BitsPerCell,
    rng: &mut R,
) -> Result<CellLevel, CellError> {
    let original = bits.check(original)?;
    Ok(upward(original, bits, rng))
}

fn upward<R: Rng + ?Sized>(original: CellLevel, bits: BitsPerCell, rng: &mut R) -> CellLevel {
    let max = bits.max_level();
    if original >= max {
        return original;
    }
    CellLevel(rng.gen_range(original.0 + 1..=max.0))
}

/// Fixed overwrite patterns that need no random generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FillKind {
    /// Every cell at the highest level (all ones).
    AllMax,
    /// Every cell at the given level.
    ConstantLevel(u8),
}

impl fmt::Display for FillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillKind::AllMax => write!(f, "AllMax"),
            FillKind::ConstantLevel(l) => write!(f, "Level{l}"),
        }
    }
}

/// A cache-data-sized run of cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataWord {
    bits: BitsPerCell,
    cells: Vec<CellLevel>,
}

impl DataWord {
    pub fn new(bits: BitsPerCell, cells: Vec<CellLevel>) -> Result<Self, CellError> {
        for &c in &cells {
            bits.check(c)?;
        }
        Ok(DataWord { bits, cells })
    }

    pub fn from_levels(bits: BitsPerCell, levels: &[u8]) -> Result<Self, CellError> {
        let cells = levels
            .iter()
            .map(|&l| CellLevel::new(u32::from(l), bits))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DataWord { bits, cells })
    }

    pub fn zeroed(bits: BitsPerCell, len: usize) -> Self {
        DataWord { bits, cells: vec![CellLevel::ERASED; len] }
    }

    pub(crate) fn from_cells_unchecked(bits: BitsPerCell, cells: Vec<CellLevel>) -> Self {
        debug_assert!(cells.iter().all(|c| bits.check(*c).is_ok()));
        DataWord { bits, cells }
    }

    pub fn bits(&self) -> BitsPerCell {
        self.bits
    }

    pub fn cells(&self) -> &[CellLevel] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn levels(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.0).collect()
    }

    /// Concatenated per-cell encodings; length is `len() * b`.
    pub fn to_bit_string(&self) -> String {
        let width = usize::from(self.bits.get());
        let mut out = String::with_capacity(self.cells.len() * width);
        for c in &self.cells {
            out.push_str(&format!("{:0width$b}", c.0));
        }
        out
    }

    /// Parses a `0x`-prefixed hex payload into `cells` cells. The payload
    /// must have exactly `ceil(cells * b / 4)` digits; any padding bits above
    /// the payload width must be zero.
    pub fn from_hex(s: &str, bits: BitsPerCell, cells: usize) -> Result<Self, CellError> {
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or_else(|| CellError::BadHex(s.to_string()))?;
        let width = cells * usize::from(bits.get());
        let expected = width.div_ceil(4);
        if digits.len() != expected {
            return Err(CellError::HexWidth { got: digits.len(), expected, bits: width });
        }
        let mut stream = Vec::with_capacity(expected * 4);
        for c in digits.chars() {
            let v = c.to_digit(16).ok_or_else(|| CellError::BadHex(s.to_string()))?;
            stream.extend((0..4).rev().map(|i| (v >> i) & 1));
        }
        let pad = stream.len() - width;
        if stream[..pad].iter().any(|&b| b != 0) {
            return Err(CellError::HexWidth { got: digits.len(), expected, bits: width });
        }
        let cells = stream[pad..]
            .chunks(usize::from(bits.get()))
            .map(|chunk| CellLevel(chunk.iter().fold(0u32, |acc, &b| (acc << 1) | b) as u8))
            .collect();
        Ok(DataWord { bits, cells })
    }

    /// Inverse of [`DataWord::from_hex`].
    pub fn to_hex(&self) -> String {
        let bit_string = self.to_bit_string();
        let pad = bit_string.len().div_ceil(4) * 4 - bit_string.len();
        let padded: String = "0".repeat(pad) + &bit_string;
        let mut out = String::from("0x");
        for chunk in padded.as_bytes().chunks(4) {
            let v = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b - b'0'));
            out.push(char::from_digit(v, 16).unwrap().to_ascii_uppercase());
        }
        out
    }
}

/// Per-cell [`gen_upward_random`]. Output has the same length as the input
/// and no cell moves down.
pub fn gen_upward_word<R: Rng + ?Sized>(original: &DataWord, rng: &mut R) -> DataWord {
    let bits = original.bits;
    let cells = original.cells.iter().map(|&c| upward(c, bits, rng)).collect();
    DataWord { bits, cells }
}

/// Uniform word over the full level range, for devices that accept any
/// overwrite.
pub fn gen_uniform_word<R: Rng + ?Sized>(len: usize, bits: BitsPerCell, rng: &mut R) -> DataWord {
    let max = bits.max_level().0;
    let cells = (0..len).map(|_| CellLevel(rng.gen_range(0..=max))).collect();
    DataWord { bits, cells }
}

pub fn gen_fill_word(kind: FillKind, len: usize, bits: BitsPerCell) -> Result<DataWord, CellError> {
    let level = match kind {
        FillKind::AllMax => bits.max_level(),
        FillKind::ConstantLevel(l) => CellLevel::new(u32::from(l), bits)?,
    };
    Ok(DataWord { bits, cells: vec![level; len] })
}
