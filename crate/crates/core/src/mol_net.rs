//! Multi-output recurrent classifier.
//!
//! A shared stem (token embedding, single-layer GRU, dropout on the final
//! hidden state) feeds one independent dense branch per vulnerability class.
//! Each branch is `dense+ReLU, ..., dense+sigmoid` and emits one probability.
//!
//! GRU step, with `x` the embedded token and `h` the previous state:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! n  = tanh(x·Wn + (r ⊙ h)·Un + bn)
//! h' = z ⊙ h + (1 − z) ⊙ n
//! ```
//!
//! Steps past a sequence's true length leave the state untouched, so right
//! padding never changes the output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

pub const DEFAULT_GRU_HIDDEN: usize = 64;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_DENSE_WIDTHS: [usize; 3] = [128, 64, 1];
/// Clamp applied to probabilities inside the BCE logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sample {sample}, position {position}: token id {id} outside vocabulary of {vocab_size}")]
    InputOutOfRange { sample: usize, position: usize, id: u32, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a matching forward pass: {0}")]
    Usage(String),
    #[error("branch {0:?} already exists")]
    DuplicateBranch(String),
    #[error("unknown parameter block {0:?}")]
    UnknownParam(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub gru_hidden: usize,
    pub dropout_rate: f64,
    pub max_sequence_length: usize,
}

impl StemConfig {
    pub fn new(vocab_size: usize, embedding_dim: usize) -> Self {
        Self {
            vocab_size,
            embedding_dim,
            gru_hidden: DEFAULT_GRU_HIDDEN,
            dropout_rate: DEFAULT_DROPOUT,
            max_sequence_length: crate::tokenizer::DEFAULT_MAX_SEQUENCE_LENGTH,
        }
    }

    /// Stem sized so that, together with six default branches, the model has
    /// 115,846 parameters: 248·8 embedding + 3·(8·64 + 64·64 + 64) GRU = 16,000.
    pub fn reference() -> Self {
        Self::new(248, 8)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 || self.embedding_dim == 0 || self.gru_hidden == 0 || self.max_sequence_length == 0 {
            return Err(ModelError::Config(format!(
                "vocab_size >= 2 and embedding_dim, gru_hidden, max_sequence_length >= 1 required, got {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, h) = (self.embedding_dim, self.gru_hidden);
        self.vocab_size * d + 3 * (d * h + h * h + h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub class_name: String,
    pub dense_widths: Vec<usize>,
}

impl BranchConfig {
    pub fn new(class_name: impl Into<String>) -> Self {
        Self { class_name: class_name.into(), dense_widths: DEFAULT_DENSE_WIDTHS.to_vec() }
    }

    pub fn with_widths(class_name: impl Into<String>, dense_widths: Vec<usize>) -> Self {
        Self { class_name: class_name.into(), dense_widths }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self.dense_widths.last() {
            Some(1) if self.dense_widths.iter().all(|&w| w > 0) => Ok(()),
            _ => Err(ModelError::Config(format!(
                "branch {:?}: dense widths {:?} must be positive and end in 1",
                self.class_name, self.dense_widths
            ))),
        }
    }

    /// Parameter count of the branch on top of a stem with `input` features.
    pub fn param_count(&self, input: usize) -> usize {
        let mut fan_in = input;
        let mut total = 0;
        for &w in &self.dense_widths {
            total += fan_in * w + w;
            fan_in = w;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gate {
    Update,
    Reset,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 3] = [Gate::Update, Gate::Reset, Gate::Candidate];

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Gate::Update => "update",
            Gate::Reset => "reset",
            Gate::Candidate => "candidate",
        }
    }
}

/// Identifies one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Embedding,
    GruInput(Gate),
    GruRecurrent(Gate),
    GruBias(Gate),
    DenseWeight { branch: usize, layer: usize },
    DenseBias { branch: usize, layer: usize },
}

impl ParamId {
    pub fn is_stem(&self) -> bool {
        !matches!(self, ParamId::DenseWeight { .. } | ParamId::DenseBias { .. })
    }

    pub fn branch(&self) -> Option<usize> {
        match *self {
            ParamId::DenseWeight { branch, .. } | ParamId::DenseBias { branch, .. } => Some(branch),
            _ => None,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Embedding => f.write_str("embedding"),
            ParamId::GruInput(g) => write!(f, "gru.input.{}", g.name()),
            ParamId::GruRecurrent(g) => write!(f, "gru.recurrent.{}", g.name()),
            ParamId::GruBias(g) => write!(f, "gru.bias.{}", g.name()),
            ParamId::DenseWeight { branch, layer } => write!(f, "branch.{branch}.dense.{layer}.weight"),
            ParamId::DenseBias { branch, layer } => write!(f, "branch.{branch}.dense.{layer}.bias"),
        }
    }
}

impl FromStr for ParamId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ModelError::UnknownParam(s.to_string());
        let parts: Vec<&str> = s.split('.').collect();
        let gate = |name: &str| Gate::ALL.into_iter().find(|g| g.name() == name).ok_or_else(unknown);
        match parts[..] {
            ["embedding"] => Ok(ParamId::Embedding),
            ["gru", "input", g] => Ok(ParamId::GruInput(gate(g)?)),
            ["gru", "recurrent", g] => Ok(ParamId::GruRecurrent(gate(g)?)),
            ["gru", "bias", g] => Ok(ParamId::GruBias(gate(g)?)),
            ["branch", b, "dense", l, kind] => {
                let branch = b.parse().map_err(|_| unknown())?;
                let layer = l.parse().map_err(|_| unknown())?;
                match kind {
                    "weight" => Ok(ParamId::DenseWeight { branch, layer }),
                    "bias" => Ok(ParamId::DenseBias { branch, layer }),
                    _ => Err(unknown()),
                }
            }
            _ => Err(unknown()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `fan_in × width`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub config: BranchConfig,
    pub layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-block parameter counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCounts {
    pub total: usize,
    pub trainable: usize,
    pub stem: usize,
    pub per_branch: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountScope {
    All,
    Trainable,
    Stem,
    Branch(usize),
}

/// Shared stem plus one dense branch per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MolNet<T> {
    stem: StemConfig,
    embedding: Tensor<T>,
    gru_input: [Tensor<T>; 3],
    gru_recurrent: [Tensor<T>; 3],
    gru_bias: [Tensor<T>; 3],
    branches: Vec<Branch<T>>,
    frozen: BTreeSet<ParamId>,
    vocab_fingerprint: Option<String>,
}

fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn init_branch<T: Scalar>(config: &BranchConfig, input: usize, rng: &mut ChaCha8Rng) -> Branch<T> {
    let mut fan_in = input;
    let mut layers = Vec::with_capacity(config.dense_widths.len());
    for &w in &config.dense_widths {
        layers.push(DenseLayer { weight: uniform_tensor(rng, &[fan_in, w], fan_in), bias: Tensor::zeros(&[w]) });
        fan_in = w;
    }
    Branch { config: config.clone(), layers }
}

impl<T: Scalar> MolNet<T> {
    /// Fan-in uniform weights (`±1/√fan_in`, the embedding uses its own
    /// width as fan-in), zero biases, nothing frozen.
    pub fn new(stem: StemConfig, branches: &[BranchConfig], seed: u64) -> Result<Self, ModelError> {
        stem.validate()?;
        if branches.is_empty() {
            return Err(ModelError::Config("at least one branch is required".into()));
        }
        let mut names = BTreeSet::new();
        for b in branches {
            b.validate()?;
            if !names.insert(b.class_name.as_str()) {
                return Err(ModelError::DuplicateBranch(b.class_name.clone()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d, h) = (stem.vocab_size, stem.embedding_dim, stem.gru_hidden);
        let embedding = uniform_tensor(&mut rng, &[v, d], d);
        let gru_input = std::array::from_fn(|_| uniform_tensor(&mut rng, &[d, h], d));
        let gru_recurrent = std::array::from_fn(|_| uniform_tensor(&mut rng, &[h, h], h));
        let gru_bias = std::array::from_fn(|_| Tensor::zeros(&[h]));
        let branches = branches.iter().map(|b| init_branch(b, h, &mut rng)).collect();
        Ok(Self {
            stem,
            embedding,
            gru_input,
            gru_recurrent,
            gru_bias,
            branches,
            frozen: BTreeSet::new(),
            vocab_fingerprint: None,
        })
    }

    pub fn stem_config(&self) -> &StemConfig {
        &self.stem
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.branches.iter().map(|b| b.config.class_name.clone()).collect()
    }

    pub fn vocab_fingerprint(&self) -> Option<&str> {
        self.vocab_fingerprint.as_deref()
    }

    pub fn set_vocab_fingerprint(&mut self, fingerprint: Option<String>) {
        self.vocab_fingerprint = fingerprint;
    }

    /// Every parameter block in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![ParamId::Embedding];
        ids.extend(Gate::ALL.map(ParamId::GruInput));
        ids.extend(Gate::ALL.map(ParamId::GruRecurrent));
        ids.extend(Gate::ALL.map(ParamId::GruBias));
        for (branch, b) in self.branches.iter().enumerate() {
            for layer in 0..b.layers.len() {
                ids.push(ParamId::DenseWeight { branch, layer });
                ids.push(ParamId::DenseBias { branch, layer });
            }
        }
        ids
    }

    pub fn stem_param_ids(&self) -> Vec<ParamId> {
        self.param_ids().into_iter().filter(ParamId::is_stem).collect()
    }

    pub fn branch_param_ids(&self, branch: usize) -> Vec<ParamId> {
        self.param_ids().into_iter().filter(|id| id.branch() == Some(branch)).collect()
    }

    pub fn block(&self, id: ParamId) -> Option<&Tensor<T>> {
        match id {
            ParamId::Embedding => Some(&self.embedding),
            ParamId::GruInput(g) => Some(&self.gru_input[g.index()]),
            ParamId::GruRecurrent(g) => Some(&self.gru_recurrent[g.index()]),
            ParamId::GruBias(g) => Some(&self.gru_bias[g.index()]),
            ParamId::DenseWeight { branch, layer } => self.branches.get(branch)?.layers.get(layer).map(|l| &l.weight),
            ParamId::DenseBias { branch, layer } => self.branches.get(branch)?.layers.get(layer).map(|l| &l.bias),
        }
    }

    pub fn block_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        match id {
            ParamId::Embedding => Some(&mut self.embedding),
            ParamId::GruInput(g) => Some(&mut self.gru_input[g.index()]),
            ParamId::GruRecurrent(g) => Some(&mut self.gru_recurrent[g.index()]),
            ParamId::GruBias(g) => Some(&mut self.gru_bias[g.index()]),
            ParamId::DenseWeight { branch, layer } => {
                self.branches.get_mut(branch)?.layers.get_mut(layer).map(|l| &mut l.weight)
            }
            ParamId::DenseBias { branch, layer } => {
                self.branches.get_mut(branch)?.layers.get_mut(layer).map(|l| &mut l.bias)
            }
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen.contains(&id)
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        if frozen {
            self.frozen.insert(id);
        } else {
            self.frozen.remove(&id);
        }
    }

    pub fn freeze_stem(&mut self, frozen: bool) {
        for id in self.stem_param_ids() {
            self.set_frozen(id, frozen);
        }
    }

    pub fn freeze_branch(&mut self, branch: usize, frozen: bool) {
        for id in self.branch_param_ids(branch) {
            self.set_frozen(id, frozen);
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn frozen_ids(&self) -> impl Iterator<Item = &ParamId> {
        self.frozen.iter()
    }

    pub fn stem_frozen(&self) -> bool {
        self.stem_param_ids().iter().all(|id| self.is_frozen(*id))
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut counts = ParamCounts { total: 0, trainable: 0, stem: 0, per_branch: vec![0; self.branches.len()] };
        for id in self.param_ids() {
            let n = self.block(id).map_or(0, Tensor::len);
            counts.total += n;
            if !self.is_frozen(id) {
                counts.trainable += n;
            }
            match id.branch() {
                Some(b) => counts.per_branch[b] += n,
                None => counts.stem += n,
            }
        }
        counts
    }

    pub fn param_count(&self, scope: CountScope) -> usize {
        let counts = self.param_counts();
        match scope {
            CountScope::All => counts.total,
            CountScope::Trainable => counts.trainable,
            CountScope::Stem => counts.stem,
            CountScope::Branch(b) => counts.per_branch.get(b).copied().unwrap_or(0),
        }
    }

    /// Appends a freshly initialized branch. Existing parameters and freeze
    /// flags are untouched.
    pub fn add_branch(&mut self, config: BranchConfig, seed: u64) -> Result<(), ModelError> {
        config.validate()?;
        if self.branches.iter().any(|b| b.config.class_name == config.class_name) {
            return Err(ModelError::DuplicateBranch(config.class_name));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = init_branch(&config, self.stem.gru_hidden, &mut rng);
        self.branches.push(branch);
        Ok(())
    }

    /// Same network in another scalar type.
    pub fn cast<U: Scalar>(&self) -> MolNet<U> {
        MolNet {
            stem: self.stem.clone(),
            embedding: self.embedding.cast(),
            gru_input: std::array::from_fn(|g| self.gru_input[g].cast()),
            gru_recurrent: std::array::from_fn(|g| self.gru_recurrent[g].cast()),
            gru_bias: std::array::from_fn(|g| self.gru_bias[g].cast()),
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    config: b.config.clone(),
                    layers: b
                        .layers
                        .iter()
                        .map(|l| DenseLayer { weight: l.weight.cast(), bias: l.bias.cast() })
                        .collect(),
                })
                .collect(),
            frozen: self.frozen.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
        }
    }

    fn check_batch(&self, batch: &[TokenSequence]) -> Result<(), ModelError> {
        let vocab_size = self.stem.vocab_size;
        for (sample, seq) in batch.iter().enumerate() {
            if seq.true_length > seq.ids.len() {
                return Err(ModelError::Shape(format!(
                    "sample {sample}: true length {} exceeds {} ids",
                    seq.true_length,
                    seq.ids.len()
                )));
            }
            if let Some((position, &id)) = seq.ids.iter().enumerate().find(|(_, &id)| id as usize >= vocab_size) {
                return Err(ModelError::InputOutOfRange { sample, position, id, vocab_size });
            }
        }
        Ok(())
    }

    /// `x·W_g + b_g` for every vocabulary row, laid out as `vocab × 3h`
    /// (update, reset, candidate).
    fn input_projection(&self) -> Vec<T> {
        let (v, h) = (self.stem.vocab_size, self.stem.gru_hidden);
        let mut proj = vec![T::zero(); v * 3 * h];
        for tok in 0..v {
            let x = self.embedding.row(tok);
            for g in 0..3 {
                let out = &mut proj[(tok * 3 + g) * h..(tok * 3 + g + 1) * h];
                out.copy_from_slice(self.gru_bias[g].data());
                let w = self.gru_input[g].data();
                for (i, &xi) in x.iter().enumerate() {
                    axpy(out, xi, &w[i * h..(i + 1) * h]);
                }
            }
        }
        proj
    }

    /// Probabilities, `batch × branches`.
    pub fn forward(&self, batch: &[TokenSequence], mode: Mode, seed: u64) -> Result<Tensor<T>, ModelError> {
        Ok(self.run(batch, mode, seed, false)?.0)
    }

    /// Forward pass that also records the intermediates [`MolNet::backward`] needs.
    pub fn forward_tape(
        &self,
        batch: &[TokenSequence],
        mode: Mode,
        seed: u64,
    ) -> Result<(Tensor<T>, ForwardTape<T>), ModelError> {
        let (probs, tape) = self.run(batch, mode, seed, true)?;
        Ok((probs, tape.expect("tape recorded")))
    }

    fn run(
        &self,
        batch: &[TokenSequence],
        mode: Mode,
        seed: u64,
        record: bool,
    ) -> Result<(Tensor<T>, Option<ForwardTape<T>>), ModelError> {
        self.check_batch(batch)?;
        let h = self.stem.gru_hidden;
        let k = self.branches.len();
        let proj = self.input_projection();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = T::lit(1.0 / (1.0 - self.stem.dropout_rate));

        let mut probs = Vec::with_capacity(batch.len() * k);
        let mut samples = Vec::with_capacity(if record { batch.len() } else { 0 });
        let mut scratch = GruScratch::new(h);
        for seq in batch {
            let ids = seq.active();
            let mut trace = record.then(|| GruTrace::with_capacity(ids.len(), h));
            let mut state = vec![T::zero(); h];
            for &id in ids {
                let p = &proj[id as usize * 3 * h..(id as usize + 1) * 3 * h];
                self.gru_step(p, &mut state, &mut scratch);
                if let Some(t) = trace.as_mut() {
                    t.push(&scratch, &state);
                }
            }

            let mask: Vec<T> = match mode {
                Mode::Eval => vec![T::one(); h],
                Mode::Train => (0..h)
                    .map(|_| if rng.gen::<f64>() < self.stem.dropout_rate { T::zero() } else { keep_scale })
                    .collect(),
            };
            let feature: Vec<T> = state.iter().zip(&mask).map(|(&s, &m)| s * m).collect();

            let mut activations = Vec::with_capacity(if record { k } else { 0 });
            for branch in &self.branches {
                let acts = branch_forward(branch, &feature);
                probs.push(acts.last().expect("branch has layers")[0]);
                if record {
                    activations.push(acts);
                }
            }
            if let Some(gru) = trace {
                samples.push(SampleTape { gru, mask, feature, activations });
            }
        }
        let probs = Tensor::from_vec(&[batch.len(), k], probs).expect("batch × branches");
        let tape = record.then(|| ForwardTape {
            ids: batch.iter().map(|s| s.active().to_vec()).collect(),
            n_branches: k,
            samples,
        });
        Ok((probs, tape))
    }

    fn gru_step(&self, proj: &[T], state: &mut [T], s: &mut GruScratch<T>) {
        let h = state.len();
        let (uz, ur, un) = (
            self.gru_recurrent[0].data(),
            self.gru_recurrent[1].data(),
            self.gru_recurrent[2].data(),
        );
        s.z.copy_from_slice(&proj[..h]);
        s.r.copy_from_slice(&proj[h..2 * h]);
        s.n.copy_from_slice(&proj[2 * h..]);
        for (i, &hi) in state.iter().enumerate() {
            axpy(&mut s.z, hi, &uz[i * h..(i + 1) * h]);
            axpy(&mut s.r, hi, &ur[i * h..(i + 1) * h]);
        }
        for j in 0..h {
            s.z[j] = sigmoid(s.z[j]);
            s.r[j] = sigmoid(s.r[j]);
        }
        for (i, &hi) in state.iter().enumerate() {
            axpy(&mut s.n, s.r[i] * hi, &un[i * h..(i + 1) * h]);
        }
        for j in 0..h {
            s.n[j] = s.n[j].tanh();
            state[j] = s.z[j] * state[j] + (T::one() - s.z[j]) * s.n[j];
        }
    }

    /// Gradients of the mean BCE over all `(sample, branch)` cells with respect
    /// to every unfrozen block. Frozen blocks get no entry.
    ///
    /// The head gradient uses the closed form `(p − y) / cells`, i.e. the
    /// probability clamp inside the loss is treated as inactive.
    pub fn backward(
        &self,
        tape: &ForwardTape<T>,
        batch: &[TokenSequence],
        labels: &Tensor<T>,
    ) -> Result<Gradients<T>, ModelError> {
        let n = batch.len();
        let k = self.branches.len();
        if tape.n_branches != k || tape.ids.len() != n || tape.samples.len() != n {
            return Err(ModelError::Usage(format!(
                "tape holds {} samples over {} branches, model/batch have {n} samples over {k} branches",
                tape.ids.len(),
                tape.n_branches
            )));
        }
        if let Some(i) = (0..n).find(|&i| tape.ids[i] != batch[i].active()) {
            return Err(ModelError::Usage(format!("sample {i} differs from the recorded batch")));
        }
        if labels.shape() != [n, k] {
            return Err(ModelError::Shape(format!("labels {:?}, expected [{n}, {k}]", labels.shape())));
        }

        let h = self.stem.gru_hidden;
        let cells = T::lit((n * k) as f64);
        let mut grads = Gradients::new();

        let branch_trainable: Vec<Vec<(bool, bool)>> = self
            .branches
            .iter()
            .enumerate()
            .map(|(branch, b)| {
                (0..b.layers.len())
                    .map(|layer| {
                        (
                            !self.is_frozen(ParamId::DenseWeight { branch, layer }),
                            !self.is_frozen(ParamId::DenseBias { branch, layer }),
                        )
                    })
                    .collect()
            })
            .collect();
        let stem_trainable = self.stem_param_ids().iter().any(|id| !self.is_frozen(*id));

        let mut branch_grads: Vec<Vec<(Vec<T>, Vec<T>)>> = self
            .branches
            .iter()
            .map(|b| b.layers.iter().map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()])).collect())
            .collect();
        let v = self.stem.vocab_size;
        let mut d_proj = vec![T::zero(); if stem_trainable { v * 3 * h } else { 0 }];
        let mut d_recurrent: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); if stem_trainable { h * h } else { 0 }]);

        for (i, sample) in tape.samples.iter().enumerate() {
            let mut d_feature = vec![T::zero(); h];
            for (b, branch) in self.branches.iter().enumerate() {
                let delta = (sample.activations[b].last().expect("branch output")[0] - labels.at(i, b)) / cells;
                branch_backward(
                    branch,
                    &sample.feature,
                    &sample.activations[b],
                    delta,
                    &mut branch_grads[b],
                    stem_trainable.then_some(&mut d_feature[..]),
                );
            }
            if !stem_trainable {
                continue;
            }
            let mut d_state: Vec<T> = d_feature.iter().zip(&sample.mask).map(|(&g, &m)| g * m).collect();
            self.gru_backward(&tape.ids[i], &sample.gru, &mut d_state, &mut d_proj, &mut d_recurrent);
        }

        for (branch, layers) in branch_grads.into_iter().enumerate() {
            for (layer, (dw, db)) in layers.into_iter().enumerate() {
                let (tw, tb) = branch_trainable[branch][layer];
                let l = &self.branches[branch].layers[layer];
                if tw {
                    grads.insert(ParamId::DenseWeight { branch, layer }, Tensor::from_vec(l.weight.shape(), dw).expect("shape"));
                }
                if tb {
                    grads.insert(ParamId::DenseBias { branch, layer }, Tensor::from_vec(l.bias.shape(), db).expect("shape"));
                }
            }
        }
        if stem_trainable {
            self.stem_gradients(&d_proj, d_recurrent, &mut grads);
        }
        Ok(grads)
    }

    fn gru_backward(
        &self,
        ids: &[u32],
        trace: &GruTrace<T>,
        d_state: &mut [T],
        d_proj: &mut [T],
        d_recurrent: &mut [Vec<T>; 3],
    ) {
        let h = d_state.len();
        let u: [&[T]; 3] = std::array::from_fn(|g| self.gru_recurrent[g].data());
        let mut d_prev = vec![T::zero(); h];
        let mut da = [vec![T::zero(); h], vec![T::zero(); h], vec![T::zero(); h]];
        let mut rh = vec![T::zero(); h];
        for t in (0..ids.len()).rev() {
            let prev = &trace.states[t * h..(t + 1) * h];
            let z = &trace.z[t * h..(t + 1) * h];
            let r = &trace.r[t * h..(t + 1) * h];
            let nn = &trace.n[t * h..(t + 1) * h];

            for j in 0..h {
                let dh = d_state[j];
                let dn = dh * (T::one() - z[j]);
                let dz = dh * (prev[j] - nn[j]);
                d_prev[j] = dh * z[j];
                da[2][j] = dn * (T::one() - nn[j] * nn[j]);
                da[0][j] = dz * z[j] * (T::one() - z[j]);
                rh[j] = r[j] * prev[j];
            }
            // candidate path: d(r⊙h) = Un · da_n
            for i in 0..h {
                let d_rh = dot(&u[2][i * h..(i + 1) * h], &da[2]);
                da[1][i] = d_rh * prev[i] * r[i] * (T::one() - r[i]);
                d_prev[i] += d_rh * r[i];
            }
            for i in 0..h {
                d_prev[i] += dot(&u[0][i * h..(i + 1) * h], &da[0]) + dot(&u[1][i * h..(i + 1) * h], &da[1]);
                axpy(&mut d_recurrent[0][i * h..(i + 1) * h], prev[i], &da[0]);
                axpy(&mut d_recurrent[1][i * h..(i + 1) * h], prev[i], &da[1]);
                axpy(&mut d_recurrent[2][i * h..(i + 1) * h], rh[i], &da[2]);
            }
            let base = ids[t] as usize * 3 * h;
            for g in 0..3 {
                axpy(&mut d_proj[base + g * h..base + (g + 1) * h], T::one(), &da[g]);
            }
            d_state.copy_from_slice(&d_prev);
        }
    }

    /// Pushes gradients through the input projection back to the embedding,
    /// input kernels and biases.
    fn stem_gradients(&self, d_proj: &[T], d_recurrent: [Vec<T>; 3], grads: &mut Gradients<T>) {
        let (v, d, h) = (self.stem.vocab_size, self.stem.embedding_dim, self.stem.gru_hidden);
        let mut d_emb = vec![T::zero(); v * d];
        let mut d_input: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); d * h]);
        let mut d_bias: [Vec<T>; 3] = std::array::from_fn(|_| vec![T::zero(); h]);
        for tok in 0..v {
            let x = self.embedding.row(tok);
            for g in 0..3 {
                let dp = &d_proj[(tok * 3 + g) * h..(tok * 3 + g + 1) * h];
                if dp.iter().all(|&x| x == T::zero()) {
                    continue;
                }
                axpy(&mut d_bias[g], T::one(), dp);
                let w = self.gru_input[g].data();
                for i in 0..d {
                    axpy(&mut d_input[g][i * h..(i + 1) * h], x[i], dp);
                    d_emb[tok * d + i] += dot(&w[i * h..(i + 1) * h], dp);
                }
            }
        }
        let mut put = |id: ParamId, shape: &[usize], data: Vec<T>| {
            if !self.is_frozen(id) {
                grads.insert(id, Tensor::from_vec(shape, data).expect("shape"));
            }
        };
        put(ParamId::Embedding, &[v, d], d_emb);
        for (g, gate) in Gate::ALL.into_iter().enumerate() {
            put(ParamId::GruInput(gate), &[d, h], std::mem::take(&mut d_input[g]));
            put(ParamId::GruBias(gate), &[h], std::mem::take(&mut d_bias[g]));
        }
        for (gate, data) in Gate::ALL.into_iter().zip(d_recurrent) {
            put(ParamId::GruRecurrent(gate), &[h, h], data);
        }
    }
}

/// `out += a · x`
#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Post-activation outputs of every layer.
fn branch_forward<T: Scalar>(branch: &Branch<T>, feature: &[T]) -> Vec<Vec<T>> {
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(branch.layers.len());
    let last = branch.layers.len() - 1;
    for (l, layer) in branch.layers.iter().enumerate() {
        let input = if l == 0 { feature } else { &acts[l - 1] };
        let width = layer.bias.len();
        let mut out = layer.bias.data().to_vec();
        let w = layer.weight.data();
        for (i, &xi) in input.iter().enumerate() {
            axpy(&mut out, xi, &w[i * width..(i + 1) * width]);
        }
        if l == last {
            out.iter_mut().for_each(|o| *o = sigmoid(*o));
        } else {
            out.iter_mut().for_each(|o| *o = o.max(T::zero()));
        }
        acts.push(out);
    }
    acts
}

fn branch_backward<T: Scalar>(
    branch: &Branch<T>,
    feature: &[T],
    acts: &[Vec<T>],
    head_delta: T,
    grads: &mut [(Vec<T>, Vec<T>)],
    d_feature: Option<&mut [T]>,
) {
    let mut delta = vec![head_delta];
    for l in (0..branch.layers.len()).rev() {
        let input = if l == 0 { feature } else { &acts[l - 1] };
        let width = delta.len();
        let (dw, db) = &mut grads[l];
        axpy(db, T::one(), &delta);
        for (i, &xi) in input.iter().enumerate() {
            axpy(&mut dw[i * width..(i + 1) * width], xi, &delta);
        }
        if l == 0 && d_feature.is_none() {
            break;
        }
        let w = branch.layers[l].weight.data();
        let mut d_in: Vec<T> = (0..input.len()).map(|i| dot(&w[i * width..(i + 1) * width], &delta)).collect();
        if l > 0 {
            for (d, &a) in d_in.iter_mut().zip(input) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        delta = d_in;
    }
    if let Some(df) = d_feature {
        axpy(df, T::one(), &delta);
    }
}

struct GruScratch<T> {
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

impl<T: Scalar> GruScratch<T> {
    fn new(h: usize) -> Self {
        Self { z: vec![T::zero(); h], r: vec![T::zero(); h], n: vec![T::zero(); h] }
    }
}

/// Gate activations per step and the state entering each step.
#[derive(Debug, Clone)]
struct GruTrace<T> {
    states: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
}

impl<T: Scalar> GruTrace<T> {
    fn with_capacity(steps: usize, h: usize) -> Self {
        let mut states = Vec::with_capacity((steps + 1) * h);
        states.resize(h, T::zero());
        Self {
            states,
            z: Vec::with_capacity(steps * h),
            r: Vec::with_capacity(steps * h),
            n: Vec::with_capacity(steps * h),
        }
    }

    fn push(&mut self, s: &GruScratch<T>, new_state: &[T]) {
        self.z.extend_from_slice(&s.z);
        self.r.extend_from_slice(&s.r);
        self.n.extend_from_slice(&s.n);
        self.states.extend_from_slice(new_state);
    }
}

#[derive(Debug, Clone)]
struct SampleTape<T> {
    gru: GruTrace<T>,
    mask: Vec<T>,
    feature: Vec<T>,
    activations: Vec<Vec<Vec<T>>>,
}

/// Intermediates recorded by [`MolNet::forward_tape`].
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    ids: Vec<Vec<u32>>,
    n_branches: usize,
    samples: Vec<SampleTape<T>>,
}

impl<T: Scalar> ForwardTape<T> {
    /// Which ReLU units fired, flattened over samples, branches and hidden layers.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for sample in &self.samples {
            for acts in &sample.activations {
                let hidden = acts.len().saturating_sub(1);
                for layer in &acts[..hidden] {
                    out.extend(layer.iter().map(|&a| a > T::zero()));
                }
            }
        }
        out
    }
}

/// Gradient per unfrozen parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    blocks: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self { blocks: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.blocks.insert(id, grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.blocks.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ParamId> {
        self.blocks.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor<T>)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Mean binary cross-entropy over all cells, with `p` clamped to
/// `[1e-7, 1 − 1e-7]` before taking logarithms.
pub fn bce_loss<T: Scalar>(y: &Tensor<T>, p: &Tensor<T>) -> Result<T, ModelError> {
    if y.shape() != p.shape() {
        return Err(ModelError::Shape(format!("labels {:?} vs probabilities {:?}", y.shape(), p.shape())));
    }
    if y.is_empty() {
        return Err(ModelError::Shape("empty label tensor".into()));
    }
    let eps = T::lit(BCE_EPSILON);
    let sum: T = y
        .data()
        .iter()
        .zip(p.data())
        .map(|(&yi, &pi)| {
            let pi = pi.max(eps).min(T::one() - eps);
            -(yi * pi.ln() + (T::one() - yi) * (T::one() - pi).ln())
        })
        .sum();
    Ok(sum / T::lit(y.len() as f64))
}

/// Adam moments per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: BTreeMap<ParamId, Vec<T>>,
    second: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self::with_hyper(0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { beta1, beta2, epsilon, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[T]> {
        self.first.get(&id).map(Vec::as_slice)
    }
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// One bias-corrected Adam update. Gradients for frozen blocks are ignored.
pub fn adam_step<T: Scalar>(
    model: &mut MolNet<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), ModelError> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(state.epsilon));
    for (&id, grad) in grads.iter() {
        if model.is_frozen(id) {
            continue;
        }
        let param = model.block_mut(id).ok_or_else(|| ModelError::UnknownParam(id.to_string()))?;
        if param.shape() != grad.shape() {
            return Err(ModelError::Shape(format!("{id}: parameter {:?} vs gradient {:?}", param.shape(), grad.shape())));
        }
        let m = state.first.entry(id).or_insert_with(|| vec![T::zero(); grad.len()]);
        let v = state.second.entry(id).or_insert_with(|| vec![T::zero(); grad.len()]);
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> MolNet<f64> {
        let mut stem = StemConfig::new(8, 4);
        stem.gru_hidden = 5;
        stem.max_sequence_length = 6;
        MolNet::new(stem, &[BranchConfig::with_widths("a", vec![3, 1]), BranchConfig::with_widths("b", vec![1])], seed)
            .unwrap()
    }

    fn seq(ids: &[u32], max: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        v.resize(max, 0);
        TokenSequence::new(v, ids.len())
    }

    #[test]
    fn default_branch_count() {
        assert_eq!(BranchConfig::new("x").param_count(64), 16_641);
        assert_eq!(BranchConfig::with_widths("x", vec![1]).param_count(64), 65);
        assert_eq!(StemConfig::reference().param_count(), 16_000);
    }

    #[test]
    fn counts_by_scope() {
        let branches: Vec<_> = (0..6).map(|i| BranchConfig::new(format!("c{i}"))).collect();
        let mut m = MolNet::<f32>::new(StemConfig::reference(), &branches, 1).unwrap();
        assert_eq!(m.param_count(CountScope::All), 115_846);
        assert_eq!(m.param_count(CountScope::Stem), 16_000);
        assert_eq!(m.param_count(CountScope::Branch(5)), 16_641);
        m.freeze_stem(true);
        for b in 0..6 {
            m.freeze_branch(b, true);
        }
        assert_eq!(m.param_count(CountScope::Trainable), 0);
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(3), tiny(3));
        assert_ne!(tiny(3), tiny(4));
        let m = tiny(3);
        assert!(m.gru_bias.iter().all(|b| b.data().iter().all(|&x| x == 0.0)));
        let bound = 1.0 / 4f64.sqrt();
        assert!(m.gru_input[0].data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn config_validation() {
        let stem = StemConfig::new(8, 4);
        assert!(MolNet::<f32>::new(stem.clone(), &[], 0).is_err());
        assert!(MolNet::<f32>::new(stem.clone(), &[BranchConfig::with_widths("a", vec![4, 2])], 0).is_err());
        let dup = [BranchConfig::new("a"), BranchConfig::new("a")];
        assert!(matches!(MolNet::<f32>::new(stem.clone(), &dup, 0), Err(ModelError::DuplicateBranch(_))));
        let mut bad = stem;
        bad.dropout_rate = 1.0;
        assert!(MolNet::<f32>::new(bad, &[BranchConfig::new("a")], 0).is_err());
    }

    #[test]
    fn all_padding_gives_half() {
        let m = tiny(9);
        let p = m.forward(&[seq(&[], 6)], Mode::Eval, 0).unwrap();
        assert!(p.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let m = tiny(0);
        let err = m.forward(&[seq(&[1, 8], 6)], Mode::Eval, 0).unwrap_err();
        assert!(matches!(err, ModelError::InputOutOfRange { position: 1, id: 8, .. }));
    }

    #[test]
    fn bce_examples() {
        let y = Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap();
        let p = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        assert!((bce_loss(&y, &p).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        assert!(bce_loss(&y, &p).unwrap() < 1e-6);
        let y = Tensor::from_vec(&[1, 2], vec![1.0f64, 0.0]).unwrap();
        let p = Tensor::from_vec(&[1, 2], vec![0.9, 0.1]).unwrap();
        assert!((bce_loss(&y, &p).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(bce_loss(&y, &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn head_bias_gradient_closed_form() {
        // single branch, single-layer head initialised to zero: p = 0.5 everywhere
        let mut stem = StemConfig::new(8, 4);
        stem.gru_hidden = 5;
        let mut m = MolNet::<f64>::new(stem, &[BranchConfig::with_widths("a", vec![1])], 2).unwrap();
        m.block_mut(ParamId::DenseWeight { branch: 0, layer: 0 }).unwrap().data_mut().fill(0.0);
        let batch = [seq(&[2, 3], 6), seq(&[4], 6), seq(&[5, 6, 7], 6)];
        let y = Tensor::from_vec(&[3, 1], vec![1.0, 0.0, 1.0]).unwrap();
        let (p, tape) = m.forward_tape(&batch, Mode::Eval, 0).unwrap();
        let g = m.backward(&tape, &batch, &y).unwrap();
        let expected = p.data().iter().zip(y.data()).map(|(p, y)| p - y).sum::<f64>() / 3.0;
        let got = g.get(ParamId::DenseBias { branch: 0, layer: 0 }).unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let m = tiny(1);
        let batch = [seq(&[2, 3], 6)];
        let (_, tape) = m.forward_tape(&batch, Mode::Eval, 0).unwrap();
        let y = Tensor::zeros(&[1, 2]);
        let other = [seq(&[2, 4], 6)];
        assert!(matches!(m.backward(&tape, &other, &y), Err(ModelError::Usage(_))));
        let mut bigger = m.clone();
        bigger.add_branch(BranchConfig::with_widths("c", vec![1]), 0).unwrap();
        assert!(matches!(bigger.backward(&tape, &batch, &Tensor::zeros(&[1, 3])), Err(ModelError::Usage(_))));
        assert!(matches!(m.backward(&tape, &batch, &Tensor::zeros(&[1, 3])), Err(ModelError::Shape(_))));
    }

    #[test]
    fn frozen_stem_has_no_stem_gradients() {
        let mut m = tiny(5);
        m.freeze_stem(true);
        let batch = [seq(&[2, 3, 1], 6)];
        let (_, tape) = m.forward_tape(&batch, Mode::Train, 0).unwrap();
        let g = m.backward(&tape, &batch, &Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap()).unwrap();
        assert!(g.ids().all(|id| !id.is_stem()));
        assert_eq!(g.len(), 6);
    }

    #[test]
    fn adam_scalar_first_step() {
        let mut m = MolNet::<f64>::new(StemConfig::new(2, 1), &[BranchConfig::with_widths("a", vec![1])], 0).unwrap();
        let id = ParamId::DenseBias { branch: 0, layer: 0 };
        let mut g = Gradients::new();
        g.insert(id, Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let mut state = AdamState::new();
        adam_step(&mut m, &g, &mut state, 0.001).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((m.block(id).unwrap().data()[0] - expected).abs() < 1e-18);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_and_frozen() {
        let mut m = tiny(7);
        let before = m.clone();
        let mut grads = Gradients::new();
        for id in m.param_ids() {
            grads.insert(id, Tensor::zeros(m.block(id).unwrap().shape()));
        }
        let mut state = AdamState::new();
        adam_step(&mut m, &grads, &mut state, 0.001).unwrap();
        assert_eq!(m, before);

        m.freeze_stem(true);
        let mut grads = Gradients::new();
        grads.insert(ParamId::Embedding, Tensor::from_vec(&[8, 4], vec![1.0; 32]).unwrap());
        adam_step(&mut m, &grads, &mut state, 0.001).unwrap();
        assert_eq!(m.block(ParamId::Embedding), before.block(ParamId::Embedding));
    }

    #[test]
    fn add_branch_preserves_existing() {
        let mut m = tiny(2);
        let batch = [seq(&[2, 3, 4], 6), seq(&[7], 6)];
        let before = m.forward(&batch, Mode::Eval, 0).unwrap();
        m.add_branch(BranchConfig::with_widths("c", vec![2, 1]), 11).unwrap();
        assert!(matches!(m.add_branch(BranchConfig::new("a"), 0), Err(ModelError::DuplicateBranch(_))));
        let after = m.forward(&batch, Mode::Eval, 0).unwrap();
        assert_eq!(after.shape(), &[2, 3]);
        for i in 0..2 {
            assert_eq!(&after.row(i)[..2], before.row(i));
        }
        assert_eq!(m.class_names(), vec!["a", "b", "c"]);
    }

    #[test]
    fn param_id_names_round_trip() {
        let m = tiny(0);
        for id in m.param_ids() {
            assert_eq!(id.to_string().parse::<ParamId>().unwrap(), id);
        }
        assert!("branch.x.dense.0.weight".parse::<ParamId>().is_err());
    }
}
