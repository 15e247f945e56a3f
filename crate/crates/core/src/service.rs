//! Prediction service core: request parsing, the shared preprocessing path,
//! and the byte-exact response document. Transport lives in the CLI crate.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ClassCatalog;
use crate::evm::{preprocess, OpcodeTable};
use crate::model_io::{self, to_bytes};
use crate::mol_net::{Mode, MolNet};
use crate::tokenizer::{self, Vocabulary};

pub const PREDICTION_KEY: &str = "prediction";
pub const TIMING_KEY: &str = "prediction_time in_second";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Startup(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::BadRequest(_) => 400,
            ServiceError::Startup(_) | ServiceError::Internal(_) => 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: PathBuf,
    pub vocab_path: PathBuf,
    pub bind: String,
    /// When set, the model's branch order must match it exactly.
    pub catalog: Option<ClassCatalog>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub smart_contract: String,
}

/// Immutable model + vocabulary pair; safe to share across request handlers.
#[derive(Debug)]
pub struct Predictor {
    model: MolNet<f32>,
    vocab: Vocabulary,
    table: OpcodeTable,
    model_fingerprint: String,
    requests: AtomicU64,
}

impl Predictor {
    pub fn new(model: MolNet<f32>, vocab: Vocabulary, catalog: Option<&ClassCatalog>) -> Result<Self, ServiceError> {
        match model.vocab_fingerprint() {
            Some(fp) if fp == vocab.fingerprint() => {}
            Some(fp) => {
                return Err(ServiceError::Startup(format!(
                    "vocabulary fingerprint {} does not match the model's {fp}",
                    vocab.fingerprint()
                )))
            }
            None => return Err(ServiceError::Startup("model carries no vocabulary fingerprint".into())),
        }
        if vocab.len() != model.stem_config().vocab_size {
            return Err(ServiceError::Startup(format!(
                "vocabulary has {} ids, model expects {}",
                vocab.len(),
                model.stem_config().vocab_size
            )));
        }
        if let Some(catalog) = catalog {
            if catalog.names() != model.class_names().as_slice() {
                return Err(ServiceError::Startup(format!(
                    "model classes {:?} do not match catalog {:?}",
                    model.class_names(),
                    catalog.names()
                )));
            }
        }
        let model_fingerprint = hex::encode(Sha256::digest(to_bytes(&model)));
        Ok(Self { model, vocab, table: OpcodeTable::cancun(), model_fingerprint, requests: AtomicU64::new(0) })
    }

    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let model = model_io::load_model(&config.model_path)
            .map_err(|e| ServiceError::Startup(format!("{}: {e}", config.model_path.display())))?;
        let vocab = tokenizer::load_vocab(&config.vocab_path)
            .map_err(|e| ServiceError::Startup(format!("{}: {e}", config.vocab_path.display())))?;
        Self::new(model, vocab, config.catalog.as_ref())
    }

    pub fn model(&self) -> &MolNet<f32> {
        &self.model
    }

    pub fn requests_served(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Per-class probabilities for one hex-encoded contract, in branch order.
    pub fn predict_hex(&self, hex: &str) -> Result<Vec<(String, f32)>, ServiceError> {
        let seq = preprocess(hex, &self.table).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let input = self.vocab.encode(&seq, self.model.stem_config().max_sequence_length);
        let probs = self
            .model
            .forward(&[input], Mode::Eval, 0)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(self.model.class_names().into_iter().zip(probs.row(0).iter().copied()).collect())
    }

    pub fn handle_config(&self) -> serde_json::Value {
        let stem = self.model.stem_config();
        json!({
            "classes": self.model.class_names(),
            "max_sequence_length": stem.max_sequence_length,
            "vocab_size": stem.vocab_size,
            "model_fingerprint": self.model_fingerprint,
            "vocab_fingerprint": self.vocab.fingerprint(),
        })
    }

    pub fn handle_predict(&self, body: &[u8]) -> Result<String, ServiceError> {
        self.handle_predict_with(body, false)
    }

    /// Parses `{"smart_contract": "<hex>"}` and renders the response document.
    /// `raw` prints full-precision probabilities instead of four decimals.
    pub fn handle_predict_with(&self, body: &[u8], raw: bool) -> Result<String, ServiceError> {
        let start = Instant::now();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let request: PredictRequest =
            serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))?;
        let prediction = self.predict_hex(&request.smart_contract)?;
        Ok(render_response(&prediction, start.elapsed().as_secs_f64(), raw))
    }
}

/// `{"prediction": {<class>: <prob>, ...}, "prediction_time in_second": "<seconds>"}`
pub fn render_response(prediction: &[(String, f32)], seconds: f64, raw: bool) -> String {
    let quote = |s: &str| serde_json::to_string(s).expect("string serializes");
    let entries: Vec<String> = prediction
        .iter()
        .map(|(name, p)| {
            let value = if raw { p.to_string() } else { format!("{p:.4}") };
            format!("{}: {value}", quote(name))
        })
        .collect();
    format!(
        "{{{}: {{{}}}, {}: {}}}",
        quote(PREDICTION_KEY),
        entries.join(", "),
        quote(TIMING_KEY),
        quote(&format!("{seconds:.4}"))
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol_net::{BranchConfig, StemConfig};

    fn predictor() -> Predictor {
        let vocab = Vocabulary::fit([&crate::evm::NormalizedSequence::parse("60 01 52 xx").unwrap()]);
        let mut stem = StemConfig::new(vocab.len(), 4);
        stem.gru_hidden = 6;
        stem.max_sequence_length = 16;
        let mut model = MolNet::new(stem, &[BranchConfig::new("A"), BranchConfig::new("B \"q\"")], 4).unwrap();
        model.set_vocab_fingerprint(Some(vocab.fingerprint()));
        Predictor::new(model, vocab, None).unwrap()
    }

    #[test]
    fn response_shape() {
        let text = render_response(&[("A".into(), 0.25), ("B".into(), 0.999_95)], 0.02, false);
        assert_eq!(text, r#"{"prediction": {"A": 0.2500, "B": 0.9999}, "prediction_time in_second": "0.0200"}"#);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["prediction"]["A"], 0.25);
    }

    #[test]
    fn predict_errors_are_client_errors() {
        let p = predictor();
        for body in [&b"{}"[..], br#"{"smart_contract": "6G"}"#, br#"{"smart_contract": "60", "x": 1}"#, b"nope"] {
            let err = p.handle_predict(body).unwrap_err();
            assert_eq!(err.status(), 400, "{err}");
        }
    }

    #[test]
    fn empty_contract_is_valid() {
        let p = predictor();
        let text = p.handle_predict(br#"{"smart_contract": "0x"}"#).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v[PREDICTION_KEY].as_object().unwrap().len(), 2);
        assert!(v[TIMING_KEY].is_string());
        assert_eq!(p.requests_served(), 1);
    }

    #[test]
    fn config_document() {
        let p = predictor();
        let c = p.handle_config();
        assert_eq!(c["classes"], json!(["A", "B \"q\""]));
        assert_eq!(c["max_sequence_length"], 16);
        assert_eq!(c, p.handle_config());
    }

    #[test]
    fn startup_checks() {
        let p = predictor();
        let other = Vocabulary::fit([&crate::evm::NormalizedSequence::parse("01 60 52 xx").unwrap()]);
        assert!(Predictor::new(p.model.clone(), other, None).is_err());
        let wrong = ClassCatalog::new(["B", "A"]).unwrap();
        assert!(Predictor::new(p.model.clone(), p.vocab.clone(), Some(&wrong)).is_err());
    }
}
