//! EVM bytecode decoding and normalization.
//!
//! Raw bytecode is decoded from hex, linearly disassembled against an
//! [`OpcodeTable`] (PUSH operands are consumed, unassigned bytes become the
//! invalid sentinel), and then normalized by collapsing the PUSH, DUP, SWAP
//! and LOG families onto their first member.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

const CANCUN_TABLE: &str = include_str!("../data/opcodes.txt");

pub const PUSH: u8 = 0x60;
pub const DUP: u8 = 0x80;
pub const SWAP: u8 = 0x90;
pub const LOG: u8 = 0xa0;

const PUSH_LAST: u8 = 0x7f;
const DUP_LAST: u8 = 0x8f;
const SWAP_LAST: u8 = 0x9f;
const LOG_LAST: u8 = 0xa4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BytecodeError {
    #[error("malformed hex: odd number of digits ({len}), dangling digit at position {position}")]
    OddLength { len: usize, position: usize },
    #[error("malformed hex: invalid digit {digit:?} at position {position}")]
    InvalidDigit { digit: char, position: usize },
    #[error("opcode table line {line}: {reason}")]
    Table { line: usize, reason: String },
    #[error("invalid token {0:?}: expected two lowercase hex digits or \"xx\"")]
    Token(String),
    #[error("token {0} is not a canonical normalized opcode")]
    NotCanonical(String),
}

/// Decoded contract bytes. May be empty (a contract deployed as `0x`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawBytecode(Vec<u8>);

impl RawBytecode {
    pub fn new(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Decodes a hex string, accepting an optional `0x`/`0X` prefix.
///
/// Positions in errors are character offsets into the text after the prefix.
pub fn parse_hex(text: &str) -> Result<RawBytecode, BytecodeError> {
    let body = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    let digits: Vec<char> = body.chars().collect();
    if let Some((position, &digit)) = digits.iter().enumerate().find(|(_, c)| !c.is_ascii_hexdigit()) {
        return Err(BytecodeError::InvalidDigit { digit, position });
    }
    if !digits.len().is_multiple_of(2) {
        return Err(BytecodeError::OddLength {
            len: digits.len(),
            position: digits.len() - 1,
        });
    }
    let bytes = hex::decode(body).expect("validated hex digits of even length");
    Ok(RawBytecode(bytes))
}

/// A single opcode token: either an assigned byte value or the sentinel for
/// bytes that are not part of the instruction set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Op(u8),
    Invalid,
}

impl Token {
    /// Maps family members (PUSH1..32, DUP1..16, SWAP1..16, LOG0..4) onto the
    /// family head; every other token is returned unchanged.
    pub fn canonical(self) -> Token {
        match self {
            Token::Op(PUSH..=PUSH_LAST) => Token::Op(PUSH),
            Token::Op(DUP..=DUP_LAST) => Token::Op(DUP),
            Token::Op(SWAP..=SWAP_LAST) => Token::Op(SWAP),
            Token::Op(LOG..=LOG_LAST) => Token::Op(LOG),
            other => other,
        }
    }

    pub fn is_canonical(self) -> bool {
        self.canonical() == self
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Op(b) => write!(f, "{b:02x}"),
            Token::Invalid => f.write_str("xx"),
        }
    }
}

impl FromStr for Token {
    type Err = BytecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "xx" {
            return Ok(Token::Invalid);
        }
        let bytes = s.as_bytes();
        let lower_hex = |b: &u8| b.is_ascii_digit() || (b'a'..=b'f').contains(b);
        if bytes.len() != 2 || !bytes.iter().all(lower_hex) {
            return Err(BytecodeError::Token(s.to_string()));
        }
        u8::from_str_radix(s, 16)
            .map(Token::Op)
            .map_err(|_| BytecodeError::Token(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeInfo {
    pub mnemonic: String,
    pub operand_bytes: u8,
}

/// Byte value to instruction mapping. Unlisted bytes are invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeTable {
    entries: BTreeMap<u8, OpcodeInfo>,
}

impl OpcodeTable {
    /// Parses the `<hex_byte> <MNEMONIC> <operand_count>` line format.
    ///
    /// PUSHk entries must declare exactly k operand bytes and every other
    /// entry none, so a table file cannot silently change operand elision.
    pub fn parse(text: &str) -> Result<Self, BytecodeError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| BytecodeError::Table { line: line_no, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [byte, mnemonic, count] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            let byte = u8::from_str_radix(byte, 16).map_err(|_| err(format!("bad byte {byte:?}")))?;
            let operand_bytes: u8 = count.parse().map_err(|_| err(format!("bad operand count {count:?}")))?;
            let expected = if (PUSH..=PUSH_LAST).contains(&byte) { byte - PUSH + 1 } else { 0 };
            if operand_bytes != expected {
                return Err(err(format!(
                    "byte {byte:02x} must carry {expected} operand bytes, table says {operand_bytes}"
                )));
            }
            let info = OpcodeInfo { mnemonic: mnemonic.to_string(), operand_bytes };
            if entries.insert(byte, info).is_some() {
                return Err(err(format!("duplicate entry for byte {byte:02x}")));
            }
        }
        Ok(Self { entries })
    }

    /// The bundled Cancun instruction set.
    pub fn cancun() -> Self {
        Self::parse(CANCUN_TABLE).expect("bundled opcode table is valid")
    }

    pub fn get(&self, byte: u8) -> Option<&OpcodeInfo> {
        self.entries.get(&byte)
    }

    pub fn is_valid(&self, byte: u8) -> bool {
        self.entries.contains_key(&byte)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every token [`normalize`] can produce under this table, in byte order,
    /// followed by the invalid sentinel.
    pub fn canonical_tokens(&self) -> Vec<Token> {
        let mut tokens: Vec<Token> = self.entries.keys().map(|&b| Token::Op(b).canonical()).collect();
        tokens.dedup();
        tokens.push(Token::Invalid);
        tokens
    }
}

impl Default for OpcodeTable {
    fn default() -> Self {
        Self::cancun()
    }
}

/// Opcode tokens with operands removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OpSequence(pub Vec<Token>);

/// Opcode tokens after family merging. Never contains a non-head family member.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NormalizedSequence(Vec<Token>);

impl NormalizedSequence {
    /// Builds a sequence from tokens that must already be canonical.
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self, BytecodeError> {
        match tokens.iter().find(|t| !t.is_canonical()) {
            Some(t) => Err(BytecodeError::NotCanonical(t.to_string())),
            None => Ok(Self(tokens)),
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses the space-separated form produced by [`render`].
    pub fn parse(text: &str) -> Result<Self, BytecodeError> {
        let tokens = text
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(Token::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }
}

/// Linear sweep over the code. A PUSH whose operand runs past the end of the
/// code is still emitted; decoding then stops.
pub fn disassemble(raw: &RawBytecode, table: &OpcodeTable) -> OpSequence {
    let bytes = raw.as_bytes();
    let mut ops = Vec::with_capacity(bytes.len());
    let mut pc = 0;
    while pc < bytes.len() {
        let byte = bytes[pc];
        match table.get(byte) {
            Some(info) => {
                ops.push(Token::Op(byte));
                pc += 1 + info.operand_bytes as usize;
            }
            None => {
                ops.push(Token::Invalid);
                pc += 1;
            }
        }
    }
    OpSequence(ops)
}

pub fn normalize(ops: &OpSequence) -> NormalizedSequence {
    NormalizedSequence(ops.0.iter().map(|t| t.canonical()).collect())
}

pub fn render(seq: &NormalizedSequence) -> String {
    let mut out = String::with_capacity(seq.len() * 3);
    for (i, token) in seq.0.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&token.to_string());
    }
    out
}

/// hex text → normalized token stream. The corpus builder and the prediction
/// service both go through this function.
pub fn preprocess(text: &str, table: &OpcodeTable) -> Result<NormalizedSequence, BytecodeError> {
    let raw = parse_hex(text)?;
    Ok(normalize(&disassemble(&raw, table)))
}
