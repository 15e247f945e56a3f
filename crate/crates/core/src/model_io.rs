//! Model file container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic b"MOLNET\0\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      4     header length H, u32 little-endian
//! 16      H     UTF-8 JSON header: stem config, branch configs (class order),
//!               frozen block names, vocabulary fingerprint, block list
//! 16+H    ...   every block of the header's list, in order, as little-endian f32
//! ```
//!
//! The file must end exactly after the last block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mol_net::{BranchConfig, ModelError, MolNet, ParamId, StemConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"MOLNET\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    stem: StemConfig,
    branches: Vec<BranchConfig>,
    frozen: Vec<String>,
    vocab_fingerprint: Option<String>,
    blocks: Vec<BlockEntry>,
}

pub fn to_bytes<T: Scalar>(model: &MolNet<T>) -> Vec<u8> {
    let ids = model.param_ids();
    let header = Header {
        stem: model.stem_config().clone(),
        branches: model.branches().iter().map(|b| b.config.clone()).collect(),
        frozen: model.frozen_ids().map(ToString::to_string).collect(),
        vocab_fingerprint: model.vocab_fingerprint().map(str::to_string),
        blocks: ids
            .iter()
            .map(|&id| BlockEntry { name: id.to_string(), shape: model.block(id).expect("listed block").shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * model.param_count(crate::CountScope::All));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for id in ids {
        for v in model.block(id).expect("listed block").data() {
            let v = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], ModelError> {
    if bytes.len() < n {
        return Err(ModelError::Format(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32, ModelError> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<MolNet<f32>, ModelError> {
    let cursor = &mut bytes;
    if take(cursor, MAGIC.len(), "magic")? != MAGIC {
        return Err(ModelError::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(cursor, "version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version { found: version, expected: FORMAT_VERSION });
    }
    let header_len = read_u32(cursor, "header length")? as usize;
    let header: Header = serde_json::from_slice(take(cursor, header_len, "header")?)
        .map_err(|e| ModelError::Format(format!("header: {e}")))?;

    let mut model = MolNet::<f32>::new(header.stem, &header.branches, 0)?;
    let ids = model.param_ids();
    if ids.len() != header.blocks.len() {
        return Err(ModelError::Format(format!(
            "header lists {} blocks, configuration implies {}",
            header.blocks.len(),
            ids.len()
        )));
    }
    for (id, entry) in ids.into_iter().zip(&header.blocks) {
        let listed: ParamId = entry.name.parse()?;
        let block = model.block_mut(id).expect("listed block");
        if listed != id || entry.shape != block.shape() {
            return Err(ModelError::Format(format!(
                "block {} {:?} does not match expected {id} {:?}",
                entry.name,
                entry.shape,
                block.shape()
            )));
        }
        let raw = take(cursor, 4 * block.len(), &entry.name)?;
        for (dst, src) in block.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([src[0], src[1], src[2], src[3]]);
        }
    }
    if !cursor.is_empty() {
        return Err(ModelError::Format(format!("{} trailing bytes after last block", cursor.len())));
    }
    for name in &header.frozen {
        model.set_frozen(name.parse()?, true);
    }
    model.set_vocab_fingerprint(header.vocab_fingerprint);
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &MolNet<T>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MolNet<f32>, ModelError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol_net::Mode;
    use crate::tokenizer::TokenSequence;

    fn model() -> MolNet<f32> {
        let mut stem = StemConfig::new(10, 3);
        stem.gru_hidden = 4;
        let mut m = MolNet::new(stem, &[BranchConfig::with_widths("x", vec![5, 1]), BranchConfig::new("y")], 3).unwrap();
        m.freeze_branch(0, true);
        m.set_vocab_fingerprint(Some("abc".into()));
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let loaded = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(loaded, m);
        let batch = [TokenSequence::new(vec![2, 3, 9, 0], 3)];
        assert_eq!(
            loaded.forward(&batch, Mode::Eval, 0).unwrap().data(),
            m.forward(&batch, Mode::Eval, 0).unwrap().data()
        );
    }

    #[test]
    fn truncated_file_fails() {
        let bytes = to_bytes(&model());
        for cut in [0, 5, 14, 40, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(ModelError::Format(_))));
    }

    #[test]
    fn version_mismatch_names_versions() {
        let mut bytes = to_bytes(&model());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, ModelError::Version { found: 7, expected: 1 }));
        assert!(err.to_string().contains('7') && err.to_string().contains('1'));
    }
}
