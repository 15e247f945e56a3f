//! Chunked training with local/global epochs, transfer learning onto new
//! branches, and held-out evaluation.
//!
//! A local epoch is one pass over a single chunk; a global epoch visits every
//! chunk in order, running `local_epochs` passes on each before moving on.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Chunk, ContractRecord, LabelVector};
use crate::metrics::{ConfusionCounts, MetricsError, MetricsReport};
use crate::mol_net::{adam_step, bce_loss, AdamState, BranchConfig, CountScope, ModelError, Mode, MolNet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSequence, Vocabulary};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot evaluate an empty split")]
    EmptySplit,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Probabilities at or above this value count as positive.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { global_epochs: 1, local_epochs: 1, batch_size: 32, learning_rate: 0.001, seed: 0, threshold: 0.5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.global_epochs == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(format!(
                "epochs and batch size must be at least 1 (global {}, local {}, batch {})",
                self.global_epochs, self.local_epochs, self.batch_size
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(TrainError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// One encoded record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: TokenSequence,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedChunk {
    pub index: usize,
    pub examples: Vec<Example>,
}

pub fn encode_records(records: &[ContractRecord], vocab: &Vocabulary, max_sequence_length: usize) -> Vec<Example> {
    records
        .iter()
        .map(|r| Example { input: vocab.encode(&r.normalized, max_sequence_length), labels: r.labels.clone() })
        .collect()
}

pub fn encode_chunks(chunks: &[Chunk], vocab: &Vocabulary, max_sequence_length: usize) -> Vec<EncodedChunk> {
    chunks
        .iter()
        .map(|c| EncodedChunk { index: c.index, examples: encode_records(&c.records, vocab, max_sequence_length) })
        .collect()
}

/// Which parts of a model receive updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    pub stem_frozen: bool,
    pub branch_frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn apply<T: Scalar>(&self, model: &mut MolNet<T>) -> Result<(), TrainError> {
        if self.branch_frozen.len() != model.n_branches() {
            return Err(TrainError::Config(format!(
                "freeze mask covers {} branches, model has {}",
                self.branch_frozen.len(),
                model.n_branches()
            )));
        }
        if self.stem_frozen && self.branch_frozen.iter().all(|&f| f) {
            return Err(TrainError::Config("freeze mask leaves nothing trainable".into()));
        }
        model.freeze_stem(self.stem_frozen);
        for (b, &frozen) in self.branch_frozen.iter().enumerate() {
            model.freeze_branch(b, frozen);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryScope {
    Local { local_epoch: usize, chunk: usize },
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub global_epoch: usize,
    pub scope: EntryScope,
    pub train_loss: f64,
    pub validation: Option<MetricsReport>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsHistory {
    pub entries: Vec<HistoryEntry>,
    /// Optimizer steps taken.
    pub steps: u64,
    pub trainable_params: usize,
}

impl MetricsHistory {
    pub fn last_validation(&self) -> Option<&MetricsReport> {
        self.entries.iter().rev().find_map(|e| e.validation.as_ref())
    }

    /// `global_epoch,local_epoch,chunk,train_loss,val_f1_weighted,val_hamming,wall_seconds`;
    /// whole-epoch rows carry `-` for local epoch and chunk.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "global_epoch",
            "local_epoch",
            "chunk",
            "train_loss",
            "val_f1_weighted",
            "val_hamming",
            "wall_seconds",
        ])?;
        for e in &self.entries {
            let (local, chunk) = match e.scope {
                EntryScope::Local { local_epoch, chunk } => (local_epoch.to_string(), chunk.to_string()),
                EntryScope::Global => ("-".into(), "-".into()),
            };
            let (f1, hamming) = e
                .validation
                .as_ref()
                .map_or((String::new(), String::new()), |v| (v.weighted_f1.to_string(), v.hamming_loss.to_string()));
            w.write_record([
                e.global_epoch.to_string(),
                local,
                chunk,
                e.train_loss.to_string(),
                f1,
                hamming,
                format!("{:.3}", e.wall_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Optimizer steps a training run takes.
pub fn expected_steps(chunk_sizes: &[usize], config: &TrainConfig) -> u64 {
    let per_global: usize = chunk_sizes.iter().map(|&n| config.local_epochs * n.div_ceil(config.batch_size)).sum();
    (config.global_epochs * per_global) as u64
}

fn labels_tensor<T: Scalar>(examples: &[&Example]) -> Tensor<T> {
    let k = examples.first().map_or(0, |e| e.labels.len());
    let data = examples
        .iter()
        .flat_map(|e| e.labels.bits().iter().map(|&b| if b { T::one() } else { T::zero() }))
        .collect();
    Tensor::from_vec(&[examples.len(), k], data).expect("uniform label arity")
}

fn check_arity<'a>(examples: impl IntoIterator<Item = &'a Example>, k: usize) -> Result<(), TrainError> {
    for e in examples {
        if e.labels.len() != k {
            return Err(TrainError::Config(format!(
                "example has {} labels but the model has {k} branches",
                e.labels.len()
            )));
        }
    }
    Ok(())
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(step)
}

/// Mini-batch Adam over the chunks. Freeze flags already set on the model are
/// honored. Validation, when nonempty, is evaluated after every local epoch
/// and never used for updates.
pub fn train<T: Scalar>(
    model: &mut MolNet<T>,
    chunks: &[EncodedChunk],
    validation: &[Example],
    config: &TrainConfig,
) -> Result<MetricsHistory, TrainError> {
    config.validate()?;
    let k = model.n_branches();
    check_arity(chunks.iter().flat_map(|c| &c.examples), k)?;
    check_arity(validation, k)?;
    let trainable = model.param_count(CountScope::Trainable);
    if trainable == 0 {
        return Err(TrainError::Config("every parameter block is frozen".into()));
    }

    let start = Instant::now();
    let mut adam = AdamState::<T>::new();
    let mut history = MetricsHistory { entries: Vec::new(), steps: 0, trainable_params: trainable };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for global in 1..=config.global_epochs {
        let (mut global_loss, mut global_count) = (0.0, 0usize);
        let mut last_validation = None;
        for chunk in chunks {
            for local in 1..=config.local_epochs {
                let mut order: Vec<usize> = (0..chunk.examples.len()).collect();
                order.shuffle(&mut rng);
                let (mut loss_sum, mut count) = (0.0, 0usize);
                for batch_idx in order.chunks(config.batch_size) {
                    let examples: Vec<&Example> = batch_idx.iter().map(|&i| &chunk.examples[i]).collect();
                    let inputs: Vec<TokenSequence> = examples.iter().map(|e| e.input.clone()).collect();
                    let labels = labels_tensor::<T>(&examples);
                    let seed = step_seed(config.seed, history.steps);
                    let (probs, tape) = model.forward_tape(&inputs, Mode::Train, seed)?;
                    let loss = bce_loss(&labels, &probs)?.to_f64_lossy();
                    let grads = model.backward(&tape, &inputs, &labels)?;
                    adam_step(model, &grads, &mut adam, config.learning_rate)?;
                    history.steps += 1;
                    loss_sum += loss * examples.len() as f64;
                    count += examples.len();
                }
                let train_loss = if count == 0 { 0.0 } else { loss_sum / count as f64 };
                global_loss += loss_sum;
                global_count += count;
                let val = if validation.is_empty() { None } else { evaluate(model, validation, config.threshold).ok() };
                log::info!(
                    "global {global} chunk {} local {local}: loss {train_loss:.5}{}",
                    chunk.index,
                    val.as_ref().map_or(String::new(), |v| format!(", val weighted F1 {:.4}", v.weighted_f1))
                );
                last_validation = val.clone();
                history.entries.push(HistoryEntry {
                    global_epoch: global,
                    scope: EntryScope::Local { local_epoch: local, chunk: chunk.index },
                    train_loss,
                    validation: val,
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
        history.entries.push(HistoryEntry {
            global_epoch: global,
            scope: EntryScope::Global,
            train_loss: if global_count == 0 { 0.0 } else { global_loss / global_count as f64 },
            validation: last_validation,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Appends `new_branches`, freezes the stem and every pre-existing branch,
/// and trains only the new branches. Labels in `chunks` cover the full class
/// order after the new branches are appended.
pub fn transfer_train<T: Scalar>(
    model: &mut MolNet<T>,
    chunks: &[EncodedChunk],
    new_branches: &[BranchConfig],
    validation: &[Example],
    config: &TrainConfig,
) -> Result<MetricsHistory, TrainError> {
    config.validate()?;
    if new_branches.is_empty() {
        return Err(TrainError::Config("transfer learning needs at least one new branch".into()));
    }
    let old = model.n_branches();
    let total = old + new_branches.len();
    check_arity(chunks.iter().flat_map(|c| &c.examples), total)?;
    check_arity(validation, total)?;
    let existing = model.class_names();
    if let Some(dup) = new_branches.iter().find(|b| existing.contains(&b.class_name)) {
        return Err(ModelError::DuplicateBranch(dup.class_name.clone()).into());
    }

    let mut grown = model.clone();
    for (i, config_b) in new_branches.iter().enumerate() {
        grown.add_branch(config_b.clone(), step_seed(config.seed, i as u64 + 1))?;
    }
    let mask = FreezeMask {
        stem_frozen: true,
        branch_frozen: (0..total).map(|b| b < old).collect(),
    };
    mask.apply(&mut grown)?;
    let history = train(&mut grown, chunks, validation, config)?;
    *model = grown;
    Ok(history)
}

/// Eval-mode probabilities for every example, `n × branches`.
pub fn predict_all<T: Scalar>(model: &MolNet<T>, examples: &[Example]) -> Result<Tensor<T>, TrainError> {
    let k = model.n_branches();
    let mut data = Vec::with_capacity(examples.len() * k);
    for batch in examples.chunks(EVAL_BATCH) {
        let inputs: Vec<TokenSequence> = batch.iter().map(|e| e.input.clone()).collect();
        data.extend_from_slice(model.forward(&inputs, Mode::Eval, 0)?.data());
    }
    Ok(Tensor::from_vec(&[examples.len(), k], data).expect("n × branches"))
}

/// Eval-mode metrics with `p >= threshold` counted as positive.
pub fn evaluate<T: Scalar>(model: &MolNet<T>, examples: &[Example], threshold: f64) -> Result<MetricsReport, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let k = model.n_branches();
    check_arity(examples, k)?;
    let probs = predict_all(model, examples)?;
    let refs: Vec<&Example> = examples.iter().collect();
    let labels = labels_tensor::<T>(&refs);
    let mean_bce = bce_loss(&labels, &probs)?.to_f64_lossy();

    let threshold = T::lit(threshold);
    let mut counts = ConfusionCounts::new(k);
    for (i, e) in examples.iter().enumerate() {
        let predicted: Vec<bool> = probs.row(i).iter().map(|&p| p >= threshold).collect();
        counts.add(e.labels.bits(), &predicted)?;
    }
    Ok(MetricsReport::from_counts(counts, &model.class_names(), Some(mean_bce))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mol_net::StemConfig;

    fn example(ids: &[u32], labels: &[bool]) -> Example {
        let mut v = ids.to_vec();
        v.resize(8, 0);
        Example { input: TokenSequence::new(v, ids.len()), labels: LabelVector::new(labels.to_vec()) }
    }

    fn small_model(branches: usize) -> MolNet<f32> {
        let mut stem = StemConfig::new(6, 3);
        stem.gru_hidden = 4;
        let cfgs: Vec<_> = (0..branches).map(|i| BranchConfig::with_widths(format!("c{i}"), vec![3, 1])).collect();
        MolNet::new(stem, &cfgs, 1).unwrap()
    }

    fn chunk_of(index: usize, n: usize) -> EncodedChunk {
        EncodedChunk { index, examples: (0..n).map(|i| example(&[2 + (i % 4) as u32], &[i % 2 == 0])).collect() }
    }

    #[test]
    fn step_counts_follow_ceil_law() {
        let mut m = small_model(1);
        let cfg = TrainConfig::default();
        let h = train(&mut m, &[chunk_of(0, 64)], &[], &cfg).unwrap();
        assert_eq!(h.steps, 2);

        let chunks = [chunk_of(0, 40), chunk_of(1, 24)];
        let h = train(&mut m, &chunks, &[], &cfg).unwrap();
        assert_eq!(h.steps, 3);

        let cfg = TrainConfig { local_epochs: 3, global_epochs: 2, ..cfg };
        let h = train(&mut m, &chunks, &[], &cfg).unwrap();
        assert_eq!(h.steps, 18);
        assert_eq!(expected_steps(&[40, 24], &cfg), 18);
        // 2 chunks × 3 local entries + 1 global entry, per global epoch
        assert_eq!(h.entries.len(), 2 * (2 * 3 + 1));
    }

    #[test]
    fn history_is_ordered() {
        let mut m = small_model(1);
        let cfg = TrainConfig { local_epochs: 2, global_epochs: 2, batch_size: 8, ..Default::default() };
        let h = train(&mut m, &[chunk_of(0, 10), chunk_of(1, 5)], &[example(&[2], &[true])], &cfg).unwrap();
        let keys: Vec<(usize, usize, usize)> = h
            .entries
            .iter()
            .map(|e| match e.scope {
                EntryScope::Local { local_epoch, chunk } => (e.global_epoch, chunk, local_epoch),
                EntryScope::Global => (e.global_epoch, usize::MAX, usize::MAX),
            })
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "{keys:?}");
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("global_epoch,local_epoch,chunk,train_loss,val_f1_weighted,val_hamming,wall_seconds\n"));
        assert!(text.lines().nth(5).unwrap().starts_with("1,-,-,"));
    }

    #[test]
    fn arity_mismatch_is_config_error() {
        let mut m = small_model(2);
        let err = train(&mut m, &[chunk_of(0, 4)], &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::Config(_)));
    }

    #[test]
    fn fully_frozen_model_refuses_to_train() {
        let mut m = small_model(1);
        m.freeze_stem(true);
        m.freeze_branch(0, true);
        assert!(train(&mut m, &[chunk_of(0, 4)], &[], &TrainConfig::default()).is_err());
        assert!(FreezeMask { stem_frozen: true, branch_frozen: vec![true] }.apply(&mut m).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig { batch_size: 4, ..Default::default() };
        let run = || {
            let mut m = small_model(1);
            let h = train(&mut m, &[chunk_of(0, 12)], &[], &cfg).unwrap();
            (m, h.entries.iter().map(|e| e.train_loss).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn transfer_freezes_old_paths() {
        let mut m = small_model(1);
        let probe: Vec<_> = (0..6).map(|i| example(&[2 + (i % 4) as u32, 3], &[true, false])).collect();
        let before = predict_all(&m, &probe).unwrap();
        let chunks = [EncodedChunk { index: 0, examples: probe.clone() }];
        let new = [BranchConfig::with_widths("new", vec![2, 1])];
        let h = transfer_train(&mut m, &chunks, &new, &[], &TrainConfig { batch_size: 4, ..Default::default() }).unwrap();
        assert_eq!(h.trainable_params, new[0].param_count(4));
        assert_eq!(h.steps, 2);
        let after = predict_all(&m, &probe).unwrap();
        assert_eq!(before.column(0), after.column(0));
        assert!(matches!(
            transfer_train(&mut m, &chunks, &new, &[], &TrainConfig::default()),
            Err(TrainError::Config(_)) | Err(TrainError::Model(ModelError::DuplicateBranch(_)))
        ));
    }

    #[test]
    fn evaluate_constant_half_model() {
        // zeroed heads give p = 0.5 for every input, which the tie rule counts positive
        let mut m = small_model(1);
        for id in m.branch_param_ids(0) {
            m.block_mut(id).unwrap().data_mut().fill(0.0);
        }
        let examples: Vec<_> = (0..10).map(|i| example(&[2], &[i < 3])).collect();
        let report = evaluate(&m, &examples, 0.5).unwrap();
        assert_eq!(report.per_class[0].recall, 1.0);
        assert!((report.per_class[0].precision - 0.3).abs() < 1e-12);
        assert!((report.mean_bce.unwrap() - 2f64.ln()).abs() < 1e-6);
        assert_eq!(report, evaluate(&m, &examples, 0.5).unwrap());
        assert!(matches!(evaluate(&m, &[], 0.5), Err(TrainError::EmptySplit)));
    }
}
