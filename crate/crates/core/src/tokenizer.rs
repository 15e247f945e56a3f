//! Token-to-id vocabulary and fixed-length padded encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evm::{NormalizedSequence, Token};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD: &str = "<PAD>";
pub const OOV: &str = "<OOV>";
pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 4100;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token ids: 0 is padding, 1 is out-of-vocabulary, real tokens start at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let mut v = Self { ids: HashMap::new(), tokens: Vec::new() };
        v.push(PAD.to_string());
        v.push(OOV.to_string());
        v
    }

    fn push(&mut self, token: String) -> u32 {
        let id = self.tokens.len() as u32;
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// Assigns ids in order of first appearance.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a NormalizedSequence>) -> Self {
        let mut v = Self::reserved();
        for seq in corpus {
            for token in seq.tokens() {
                let text = token.to_string();
                if !v.ids.contains_key(&text) {
                    v.push(text);
                }
            }
        }
        v
    }

    /// Number of ids, including the two reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &Token) -> u32 {
        self.ids.get(&token.to_string()).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, seq: &NormalizedSequence, max_sequence_length: usize) -> TokenSequence {
        let mut ids = vec![PAD_ID; max_sequence_length];
        let true_length = seq.len().min(max_sequence_length);
        for (slot, token) in ids.iter_mut().zip(seq.tokens()) {
            *slot = self.id(token);
        }
        TokenSequence { ids, true_length }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, token) in self.tokens.iter().enumerate() {
            out.push_str(token);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses `<token>\t<id>` lines. Ids must be exactly 0..n with the two
    /// reserved entries at 0 and 1.
    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let err = |line: usize, message: String| VocabError::Parse { line, message };
        let mut entries: Vec<(usize, String, u32)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected <token>\\t<id>".into()))?;
            let id: u32 = id.trim().parse().map_err(|_| err(i + 1, format!("bad id {id:?}")))?;
            entries.push((i + 1, token.to_string(), id));
        }
        entries.sort_by_key(|e| e.2);
        let mut v = Self { ids: HashMap::new(), tokens: Vec::new() };
        for (expected, (line, token, id)) in entries.into_iter().enumerate() {
            if id as usize != expected {
                return Err(err(line, format!("ids are not contiguous: expected {expected}, found {id}")));
            }
            if v.ids.contains_key(&token) {
                return Err(err(line, format!("duplicate token {token:?}")));
            }
            v.push(token);
        }
        if v.token(PAD_ID) != Some(PAD) || v.token(OOV_ID) != Some(OOV) {
            return Err(err(0, format!("missing reserved entries {PAD} 0 and {OOV} 1")));
        }
        Ok(v)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), VocabError> {
    fs::write(path, vocab.to_text())?;
    Ok(())
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    Vocabulary::from_text(&fs::read_to_string(path)?)
}

/// Fixed-length id sequence; positions at or beyond `true_length` are padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, true_length: usize) -> Self {
        debug_assert!(true_length <= ids.len());
        Self { ids, true_length }
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn active(&self) -> &[u32] {
        &self.ids[..self.true_length]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(text: &str) -> NormalizedSequence {
        NormalizedSequence::parse(text).unwrap()
    }

    #[test]
    fn fit_first_appearance() {
        let v = Vocabulary::fit([&seq("60 01"), &seq("01 60 xx")]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id(&Token::Op(0x60)), 2);
        assert_eq!(v.id(&Token::Op(0x01)), 3);
        assert_eq!(v.id(&Token::Invalid), 4);
        assert_eq!(v, Vocabulary::fit([&seq("60 01"), &seq("01 60 xx")]));
        assert_eq!(Vocabulary::fit([&seq("")]).len(), 2);
    }

    #[test]
    fn encode_examples() {
        let v = Vocabulary::fit([&seq("60 01")]);
        let t = v.encode(&seq("60 01"), 4);
        assert_eq!((t.ids, t.true_length), (vec![2, 3, 0, 0], 2));
        let t = v.encode(&seq("60 01 60 01 60"), 3);
        assert_eq!((t.ids, t.true_length), (vec![2, 3, 2], 3));
        let t = v.encode(&seq("ff"), 2);
        assert_eq!((t.ids, t.true_length), (vec![1, 0], 1));
    }

    #[test]
    fn text_round_trip_and_errors() {
        let v = Vocabulary::fit([&seq("60 01 xx 80")]);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(v.to_text().starts_with("<PAD>\t0\n<OOV>\t1\n60\t2\n"));

        let dup = "<PAD>\t0\n<OOV>\t1\n60\t2\n60\t3\n";
        assert!(matches!(Vocabulary::from_text(dup), Err(VocabError::Parse { line: 4, .. })));
        let missing = "60\t0\n01\t1\n";
        assert!(Vocabulary::from_text(missing).is_err());
        let gap = "<PAD>\t0\n<OOV>\t1\n60\t3\n";
        assert!(Vocabulary::from_text(gap).is_err());
        assert!(Vocabulary::from_text("<PAD> 0\n").is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Vocabulary::fit([&seq("60 01")]);
        let b = Vocabulary::fit([&seq("01 60")]);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }
}
