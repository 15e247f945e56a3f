//! Smart-contract vulnerability detection from EVM bytecode.
//!
//! Pipeline: [`evm`] normalizes bytecode, [`corpus`] builds labeled and
//! chunked datasets, [`tokenizer`] maps tokens to ids, [`mol_net`] is the
//! multi-output GRU classifier, [`trainer`] runs chunked and transfer
//! training, [`metrics`] scores predictions and [`service`] backs the
//! prediction API.
//!
//! The network is generic over its [`Scalar`] type; [`MolModel`] (f32) is
//! what gets trained, saved and served.

pub mod corpus;
pub mod evm;
pub mod metrics;
pub mod model_io;
pub mod mol_net;
pub mod scalar;
pub mod service;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{ClassCatalog, ContractRecord, LabelVector};
pub use evm::{NormalizedSequence, OpcodeTable, Token};
pub use metrics::MetricsReport;
pub use mol_net::{BranchConfig, CountScope, Mode, MolNet, ParamId, StemConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use tokenizer::{TokenSequence, Vocabulary};
pub use trainer::TrainConfig;

/// Single-precision network used for training and serving.
pub type MolModel = MolNet<f32>;
/// Double-precision network used for gradient checks.
pub type MolModel64 = MolNet<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type AdamState32 = mol_net::AdamState<f32>;
