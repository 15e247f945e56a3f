use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};

use vulnscan::corpus::{self, ClassCatalog, ContractRecord, SynthConfig};
use vulnscan::evm::{self, OpcodeTable};
use vulnscan::service::{Predictor, ServiceConfig};
use vulnscan::trainer::{self, MetricsHistory};
use vulnscan::{model_io, tokenizer, BranchConfig, CountScope, MolModel, StemConfig, Vocabulary};

use crate::Hyper;

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const HISTORY_FILE: &str = "history.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const TEST_FILE: &str = "test.csv";

pub fn service_config(model_dir: &Path, bind: &str) -> ServiceConfig {
    ServiceConfig {
        model_path: model_dir.join(MODEL_FILE),
        vocab_path: model_dir.join(VOCAB_FILE),
        bind: bind.to_string(),
        catalog: None,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn preprocess(hexfile: &Path) -> Result<()> {
    let text = read_text(hexfile)?;
    let seq = evm::preprocess(text.trim(), &OpcodeTable::cancun()).with_context(|| hexfile.display().to_string())?;
    println!("{}", evm::render(&seq));
    Ok(())
}

pub fn synth(
    out: &Path,
    classes: usize,
    per_class: usize,
    clean: usize,
    (min_len, max_len): (usize, usize),
    extra_label_rate: f64,
    seed: u64,
) -> Result<()> {
    let mut config = SynthConfig::for_classes(classes, min_len, max_len)?;
    config.positives_per_class = per_class;
    config.clean = clean;
    config.extra_label_rate = extra_label_rate;
    let records = corpus::synth_generate(&config, seed)?;
    corpus::write_corpus(out, &ClassCatalog::default_prefix(classes), &records)
        .with_context(|| format!("writing {}", out.display()))?;
    info!("wrote {} synthetic records to {}", records.len(), out.display());
    Ok(())
}

pub fn label(
    profiles: &Path,
    reports: &Path,
    bytecodes: &Path,
    out: &Path,
    classes: usize,
    balance: Option<(usize, usize)>,
    seed: u64,
) -> Result<()> {
    ensure!(classes >= 1 && classes <= corpus::DEFAULT_CLASSES.len(), "--classes must be in 1..=8");
    let catalog = ClassCatalog::default_prefix(classes);
    let profiles = corpus::read_profiles(File::open(profiles).with_context(|| profiles.display().to_string())?)?;
    let reports = corpus::read_reports(File::open(reports).with_context(|| reports.display().to_string())?)?;
    let table = OpcodeTable::cancun();

    let mut rdr = csv::Reader::from_path(bytecodes).with_context(|| bytecodes.display().to_string())?;
    let mut records = Vec::new();
    let mut unreported = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        ensure!(row.len() == 2, "{}:{line}: expected address,bytecode", bytecodes.display());
        let address = &row[0];
        let Some(found) = reports.get(address) else {
            unreported += 1;
            continue;
        };
        let normalized = evm::preprocess(&row[1], &table)
            .with_context(|| format!("{}:{line}: bytecode of {address}", bytecodes.display()))?;
        let labels = corpus::arbitrate_labels(found, &profiles, &catalog).with_context(|| address.to_string())?;
        records.push(ContractRecord { address: address.to_string(), normalized, labels });
    }
    if unreported > 0 {
        warn!("skipped {unreported} contracts without detector reports");
    }
    if let Some((per_class_min, clean_count)) = balance {
        records = corpus::build_balanced(&records, per_class_min, clean_count, &catalog, seed)?;
    }
    corpus::write_corpus(out, &catalog, &records).with_context(|| format!("writing {}", out.display()))?;
    info!("wrote {} labeled records to {}", records.len(), out.display());
    Ok(())
}

fn read_corpus(path: &Path) -> Result<(ClassCatalog, Vec<ContractRecord>)> {
    corpus::read_corpus(path).with_context(|| format!("reading {}", path.display()))
}

pub fn chunk(corpus_path: &Path, out_dir: &Path, chunk_size: usize, seed: u64) -> Result<()> {
    let (catalog, records) = read_corpus(corpus_path)?;
    let split = corpus::split(&records, seed)?;
    let chunks = corpus::chunk(&split.train, chunk_size, seed)?;
    fs::create_dir_all(out_dir)?;
    for c in &chunks {
        corpus::write_chunk(c, &catalog, out_dir.join(format!("chunk_{:04}.csv", c.index)))?;
    }
    corpus::write_corpus(out_dir.join(VALIDATION_FILE), &catalog, &split.validation)?;
    corpus::write_corpus(out_dir.join(TEST_FILE), &catalog, &split.test)?;
    println!(
        "{} train records in {} chunks, {} validation, {} test",
        split.train.len(),
        chunks.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

struct Prepared {
    chunks: Vec<trainer::EncodedChunk>,
    validation: Vec<trainer::Example>,
    split: corpus::Split,
}

fn prepare(split: corpus::Split, vocab: &Vocabulary, max_len: usize, hyper: &Hyper) -> Result<Prepared> {
    let chunks = corpus::chunk(&split.train, hyper.chunk_size, hyper.seed)?;
    Ok(Prepared {
        chunks: trainer::encode_chunks(&chunks, vocab, max_len),
        validation: trainer::encode_records(&split.validation, vocab, max_len),
        split,
    })
}

fn write_outputs(
    dir: &Path,
    catalog: &ClassCatalog,
    model: &MolModel,
    vocab: &Vocabulary,
    history: &MetricsHistory,
    split: &corpus::Split,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    model_io::save_model(model, dir.join(MODEL_FILE))?;
    tokenizer::save_vocab(vocab, dir.join(VOCAB_FILE))?;
    history.write_csv(BufWriter::new(File::create(dir.join(HISTORY_FILE))?))?;
    corpus::write_corpus(dir.join(VALIDATION_FILE), catalog, &split.validation)?;
    corpus::write_corpus(dir.join(TEST_FILE), catalog, &split.test)?;
    Ok(())
}

fn summarize(history: &MetricsHistory) {
    let last = history.last_validation();
    info!(
        "{} steps over {} trainable parameters; validation weighted F1 {}",
        history.steps,
        history.trainable_params,
        last.map_or("n/a".to_string(), |v| format!("{:.4}", v.weighted_f1))
    );
}

pub fn train(
    corpus_path: &Path,
    model_dir: &Path,
    hyper: &Hyper,
    embedding_dim: usize,
    gru_hidden: usize,
    dropout: f64,
) -> Result<()> {
    let (catalog, records) = read_corpus(corpus_path)?;
    let split = corpus::split(&records, hyper.seed)?;
    let vocab = Vocabulary::fit(split.train.iter().map(|r| &r.normalized));
    let prepared = prepare(split, &vocab, hyper.max_seq_len, hyper)?;

    let mut stem = StemConfig::new(vocab.len(), embedding_dim);
    stem.gru_hidden = gru_hidden;
    stem.dropout_rate = dropout;
    stem.max_sequence_length = hyper.max_seq_len;
    let branches: Vec<BranchConfig> = catalog.names().iter().map(|n| BranchConfig::new(n.clone())).collect();
    let mut model = MolModel::new(stem, &branches, hyper.seed)?;
    model.set_vocab_fingerprint(Some(vocab.fingerprint()));
    info!(
        "training {} classes on {} records, vocabulary {} tokens, {} parameters",
        catalog.len(),
        prepared.split.train.len(),
        vocab.len(),
        model.param_count(CountScope::All)
    );
    let history = trainer::train(&mut model, &prepared.chunks, &prepared.validation, &hyper.train_config())?;
    summarize(&history);
    write_outputs(model_dir, &catalog, &model, &vocab, &history, &prepared.split)?;
    println!("model written to {}", model_dir.display());
    Ok(())
}

fn load_model_dir(model_dir: &Path) -> Result<(MolModel, Vocabulary)> {
    let model_path = model_dir.join(MODEL_FILE);
    let vocab_path = model_dir.join(VOCAB_FILE);
    let model = model_io::load_model(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let vocab = tokenizer::load_vocab(&vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?;
    ensure!(
        model.vocab_fingerprint() == Some(vocab.fingerprint().as_str()),
        "{} does not belong to {}",
        vocab_path.display(),
        model_path.display()
    );
    Ok((model, vocab))
}

pub fn transfer(model_dir: &Path, corpus_path: &Path, out_dir: &Path, hyper: &Hyper) -> Result<()> {
    let (mut model, vocab) = load_model_dir(model_dir)?;
    let (catalog, records) = read_corpus(corpus_path)?;
    let existing = model.class_names();
    if catalog.len() <= existing.len() || catalog.names()[..existing.len()] != existing[..] {
        bail!(
            "corpus classes {:?} must start with the model's classes {existing:?} and add at least one",
            catalog.names()
        );
    }
    let max_len = model.stem_config().max_sequence_length;
    if hyper.max_seq_len != max_len {
        warn!("using the model's maximum sequence length {max_len}, not {}", hyper.max_seq_len);
    }
    let new_branches: Vec<BranchConfig> =
        catalog.names()[existing.len()..].iter().map(|n| BranchConfig::new(n.clone())).collect();
    let prepared = prepare(corpus::split(&records, hyper.seed)?, &vocab, max_len, hyper)?;
    info!("transferring onto {} new classes", new_branches.len());
    let history =
        trainer::transfer_train(&mut model, &prepared.chunks, &new_branches, &prepared.validation, &hyper.train_config())?;
    summarize(&history);
    write_outputs(out_dir, &catalog, &model, &vocab, &history, &prepared.split)?;
    println!("model written to {}", out_dir.display());
    Ok(())
}

pub fn eval(model_dir: &Path, data: Option<&Path>, out: &Path, threshold: f64) -> Result<()> {
    let (model, vocab) = load_model_dir(model_dir)?;
    let data: PathBuf = data.map_or_else(|| model_dir.join(TEST_FILE), Path::to_path_buf);
    let (catalog, records) = read_corpus(&data)?;
    ensure!(
        catalog.names() == model.class_names().as_slice(),
        "{} has classes {:?}, the model has {:?}",
        data.display(),
        catalog.names(),
        model.class_names()
    );
    let examples = trainer::encode_records(&records, &vocab, model.stem_config().max_sequence_length);
    let report = trainer::evaluate(&model, &examples, threshold)?;
    report.write_csv(BufWriter::new(File::create(out).with_context(|| out.display().to_string())?))?;
    for c in &report.per_class {
        println!("{:<28} precision {:.4} recall {:.4} f1 {:.4}", c.class, c.precision, c.recall, c.f1);
    }
    println!(
        "weighted F1 {:.4}, Jaccard {:.4}, Hamming loss {:.4}",
        report.weighted_f1, report.jaccard, report.hamming_loss
    );
    Ok(())
}

pub fn predict(hexfile: &Path, model_dir: &Path, raw: bool) -> Result<()> {
    let predictor = Predictor::load(&service_config(model_dir, ""))?;
    let hex = read_text(hexfile)?;
    let body = serde_json::json!({ "smart_contract": hex.trim() }).to_string();
    println!("{}", predictor.handle_predict_with(body.as_bytes(), raw)?);
    Ok(())
}
