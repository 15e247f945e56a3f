//! Labeled contract corpus: label arbitration across detector tools,
//! class balancing, train/validation/test splitting, chunking, CSV
//! persistence and a seeded synthetic generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::evm::{self, NormalizedSequence, OpcodeTable, Token};

pub const DEFAULT_CHUNK_SIZE: usize = 1024;
pub const TEST_FRACTION: f64 = 0.2;
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Catalog names in class-id order, as they appear in prediction responses.
pub const DEFAULT_CLASSES: [&str; 8] = [
    "CALLSTACK",
    "REENTRANCY",
    "MULTIPLE_SENDS",
    "ACCESSIBLE_SELFDESTRUCT",
    "DoS (UNBOUNDED_OP)",
    "TAINTED_SELFDESTRUCT",
    "MONEY_CONCURRENCY",
    "ASSERT_VIOLATION",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("class {class_id} ({name}) is not covered by any reporting tool")]
    Coverage { class_id: usize, name: String },
    #[error("no profile for tool {0:?}")]
    MissingProfile(String),
    #[error("tool {tool:?} reports class {class_id}, which its profile does not support")]
    UnsupportedVerdict { tool: String, class_id: usize },
    #[error("not enough records for class {class}: have {have}, need {need}")]
    Shortage { class: String, have: usize, need: usize },
    #[error("not enough clean records: have {have}, need {need}")]
    CleanShortage { have: usize, need: usize },
    #[error("corpus of {0} records is too small to split (need at least 10)")]
    TooSmall(usize),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: u64, message: impl Into<String>) -> CorpusError {
    CorpusError::Parse { line, message: message.into() }
}

/// Ordered class names; class ids are 1-based positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(CorpusError::DuplicateClass(n.clone()));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        class_id.checked_sub(1).and_then(|i| self.names.get(i)).map(String::as_str)
    }

    /// The first `k` classes of the default catalog.
    pub fn default_prefix(k: usize) -> Self {
        Self { names: DEFAULT_CLASSES.iter().take(k).map(|s| s.to_string()).collect() }
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::default_prefix(DEFAULT_CLASSES.len())
    }
}

/// Multi-hot label vector; all-false marks a clean contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn clean(k: usize) -> Self {
        Self(vec![false; k])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractRecord {
    pub address: String,
    pub normalized: NormalizedSequence,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolProfile {
    pub tool_name: String,
    pub f1_by_class: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorReport {
    pub tool_name: String,
    pub verdicts: BTreeMap<usize, bool>,
}

/// Picks, per class, the verdict of the reporting tool with the highest F1
/// for that class. Equal F1 scores go to the lexicographically smallest tool
/// name. A class the chosen tool reported nothing for is treated as not
/// flagged.
pub fn arbitrate_labels(
    reports: &[DetectorReport],
    profiles: &[ToolProfile],
    catalog: &ClassCatalog,
) -> Result<LabelVector, CorpusError> {
    let by_name: BTreeMap<&str, &ToolProfile> =
        profiles.iter().map(|p| (p.tool_name.as_str(), p)).collect();
    let mut reporting = Vec::with_capacity(reports.len());
    for report in reports {
        let profile = by_name
            .get(report.tool_name.as_str())
            .ok_or_else(|| CorpusError::MissingProfile(report.tool_name.clone()))?;
        if let Some(&class_id) = report.verdicts.keys().find(|c| !profile.f1_by_class.contains_key(c)) {
            return Err(CorpusError::UnsupportedVerdict { tool: report.tool_name.clone(), class_id });
        }
        reporting.push((report, *profile));
    }

    let mut bits = Vec::with_capacity(catalog.len());
    for (i, name) in catalog.names().iter().enumerate() {
        let class_id = i + 1;
        let best = reporting
            .iter()
            .filter_map(|(r, p)| p.f1_by_class.get(&class_id).map(|&f1| (f1, *r)))
            .reduce(|best, cand| {
                let better = cand.0 > best.0 || (cand.0 == best.0 && cand.1.tool_name < best.1.tool_name);
                if better {
                    cand
                } else {
                    best
                }
            });
        let (_, report) = best.ok_or_else(|| CorpusError::Coverage { class_id, name: name.clone() })?;
        bits.push(report.verdicts.get(&class_id).copied().unwrap_or(false));
    }
    Ok(LabelVector(bits))
}

/// Samples `per_class_min` positives for every class and `clean_count` clean
/// records, without replacement, then drops repeated addresses. Records with
/// an empty token stream are never admitted.
pub fn build_balanced(
    records: &[ContractRecord],
    per_class_min: usize,
    clean_count: usize,
    catalog: &ClassCatalog,
    seed: u64,
) -> Result<Vec<ContractRecord>, CorpusError> {
    let k = catalog.len();
    if let Some(r) = records.iter().find(|r| r.labels.len() != k) {
        return Err(CorpusError::Config(format!(
            "record {} has {} labels, catalog has {k}",
            r.address,
            r.labels.len()
        )));
    }
    let admissible: Vec<&ContractRecord> = records.iter().filter(|r| !r.normalized.is_empty()).collect();
    let mut pools: Vec<Vec<&ContractRecord>> = vec![Vec::new(); k];
    let mut clean = Vec::new();
    for r in &admissible {
        if r.labels.is_clean() {
            clean.push(*r);
        }
        for (c, pool) in pools.iter_mut().enumerate() {
            if r.labels.get(c) {
                pool.push(*r);
            }
        }
    }
    for (pool, name) in pools.iter().zip(catalog.names()) {
        if pool.len() < per_class_min {
            return Err(CorpusError::Shortage { class: name.clone(), have: pool.len(), need: per_class_min });
        }
    }
    if clean.len() < clean_count {
        return Err(CorpusError::CleanShortage { have: clean.len(), need: clean_count });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let draws = pools.iter().map(|p| (p, per_class_min)).chain(std::iter::once((&clean, clean_count)));
    for (pool, want) in draws {
        for r in pool.choose_multiple(&mut rng, want) {
            if seen.insert(r.address.clone()) {
                out.push((*r).clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<ContractRecord>,
    pub validation: Vec<ContractRecord>,
    pub test: Vec<ContractRecord>,
}

/// Test and validation sizes for a corpus of `n` records; both are floored and
/// the remainder goes to training.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (n as f64 * TEST_FRACTION).floor() as usize;
    let rest = n - test;
    let validation = (rest as f64 * VALIDATION_FRACTION).floor() as usize;
    (rest - validation, validation, test)
}

pub fn split(corpus: &[ContractRecord], seed: u64) -> Result<Split, CorpusError> {
    if corpus.len() < 10 {
        return Err(CorpusError::TooSmall(corpus.len()));
    }
    let mut shuffled = corpus.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_sizes(corpus.len());
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(Split { train: shuffled, validation, test })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub records: Vec<ContractRecord>,
}

/// Seeded shuffle followed by contiguous slicing into `chunk_size` pieces.
pub fn chunk(corpus: &[ContractRecord], chunk_size: usize, seed: u64) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size == 0 {
        return Err(CorpusError::Config("chunk size must be at least 1".into()));
    }
    let mut shuffled = corpus.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(shuffled
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, records)| Chunk { index, records: records.to_vec() })
        .collect())
}

/// Writes `address,bytecode,<class...>` rows.
pub fn write_records<W: Write>(out: W, catalog: &ClassCatalog, records: &[ContractRecord]) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["address".to_string(), "bytecode".to_string()];
    header.extend(catalog.names().iter().cloned());
    w.write_record(&header)?;
    for r in records {
        if r.labels.len() != catalog.len() {
            return Err(CorpusError::Config(format!(
                "record {} has {} labels, catalog has {}",
                r.address,
                r.labels.len(),
                catalog.len()
            )));
        }
        let mut row = vec![r.address.clone(), evm::render(&r.normalized)];
        row.extend(r.labels.bits().iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<(ClassCatalog, Vec<ContractRecord>), CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[0] != "address" || &header[1] != "bytecode" {
        return Err(parse_err(1, "header must start with address,bytecode"));
    }
    let catalog = ClassCatalog::new(header.iter().skip(2))?;
    let width = header.len();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(parse_err(line, format!("expected {width} columns, found {}", row.len())));
        }
        let normalized = NormalizedSequence::parse(&row[1]).map_err(|e| parse_err(line, format!("bytecode: {e}")))?;
        let mut bits = Vec::with_capacity(catalog.len());
        for (name, value) in catalog.names().iter().zip(row.iter().skip(2)) {
            match value {
                "0" => bits.push(false),
                "1" => bits.push(true),
                other => return Err(parse_err(line, format!("column {name:?}: label {other:?} is not 0 or 1"))),
            }
        }
        records.push(ContractRecord {
            address: row[0].to_string(),
            normalized,
            labels: LabelVector(bits),
        });
    }
    Ok((catalog, records))
}

pub fn write_chunk(chunk: &Chunk, catalog: &ClassCatalog, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_records(BufWriter::new(File::create(path)?), catalog, &chunk.records)
}

pub fn read_chunk(path: impl AsRef<Path>, index: usize) -> Result<(ClassCatalog, Chunk), CorpusError> {
    let (catalog, records) = read_records(BufReader::new(File::open(path)?))?;
    Ok((catalog, Chunk { index, records }))
}

pub fn write_corpus(path: impl AsRef<Path>, catalog: &ClassCatalog, records: &[ContractRecord]) -> Result<(), CorpusError> {
    write_records(BufWriter::new(File::create(path)?), catalog, records)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<(ClassCatalog, Vec<ContractRecord>), CorpusError> {
    read_records(BufReader::new(File::open(path)?))
}

/// Reads `tool,class_id,f1` rows.
pub fn read_profiles<R: Read>(input: R) -> Result<Vec<ToolProfile>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut profiles: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(parse_err(line, format!("expected 3 columns, found {}", row.len())));
        }
        let class_id: usize = row[1].trim().parse().map_err(|_| parse_err(line, "class_id is not an integer"))?;
        let f1: f64 = row[2].trim().parse().map_err(|_| parse_err(line, "f1 is not a number"))?;
        if !(0.0..=1.0).contains(&f1) {
            return Err(parse_err(line, format!("f1 {f1} outside [0, 1]")));
        }
        profiles.entry(row[0].to_string()).or_default().insert(class_id, f1);
    }
    Ok(profiles
        .into_iter()
        .map(|(tool_name, f1_by_class)| ToolProfile { tool_name, f1_by_class })
        .collect())
}

/// Reads `tool,address,class_id,verdict` rows, grouped by address.
pub fn read_reports<R: Read>(input: R) -> Result<BTreeMap<String, Vec<DetectorReport>>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut grouped: BTreeMap<String, BTreeMap<String, BTreeMap<usize, bool>>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(parse_err(line, format!("expected 4 columns, found {}", row.len())));
        }
        let class_id: usize = row[2].trim().parse().map_err(|_| parse_err(line, "class_id is not an integer"))?;
        let verdict = match row[3].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("verdict {other:?} is not 0 or 1"))),
        };
        grouped
            .entry(row[1].to_string())
            .or_default()
            .entry(row[0].to_string())
            .or_default()
            .insert(class_id, verdict);
    }
    Ok(grouped
        .into_iter()
        .map(|(address, tools)| {
            let reports = tools
                .into_iter()
                .map(|(tool_name, verdicts)| DetectorReport { tool_name, verdicts })
                .collect();
            (address, reports)
        })
        .collect())
}

/// Motif-based synthetic corpus definition.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// One token motif per class, in catalog order.
    pub motifs: Vec<Vec<Token>>,
    /// Tokens used between motifs. Must share no token with any motif.
    pub filler: Vec<Token>,
    pub min_len: usize,
    pub max_len: usize,
    pub positives_per_class: usize,
    pub clean: usize,
    /// Probability that a positive record also carries each other class.
    pub extra_label_rate: f64,
}

const MOTIF_TOKENS: [[u8; 3]; 8] = [
    [0x5a, 0xf1, 0x15], // GAS CALL ISZERO
    [0x54, 0x3d, 0x55], // SLOAD RETURNDATASIZE SSTORE
    [0x31, 0xf2, 0x57], // BALANCE CALLCODE JUMPI
    [0x33, 0x14, 0xff], // CALLER EQ SELFDESTRUCT
    [0x5b, 0x10, 0x56], // JUMPDEST LT JUMP
    [0x35, 0x32, 0xf4], // CALLDATALOAD ORIGIN DELEGATECALL
    [0x42, 0x34, 0xfa], // TIMESTAMP CALLVALUE STATICCALL
    [0xfe, 0x19, 0x06], // INVALID NOT MOD
];

impl SynthConfig {
    /// Fixed three-token motifs for up to eight classes; filler is every other
    /// canonical token of the bundled opcode table.
    pub fn for_classes(k: usize, min_len: usize, max_len: usize) -> Result<Self, CorpusError> {
        if k > MOTIF_TOKENS.len() {
            return Err(CorpusError::Config(format!("at most {} synthetic classes", MOTIF_TOKENS.len())));
        }
        let motifs: Vec<Vec<Token>> = MOTIF_TOKENS
            .iter()
            .take(k)
            .map(|m| m.iter().map(|&b| Token::Op(b)).collect())
            .collect();
        let reserved: BTreeSet<Token> = MOTIF_TOKENS.iter().flatten().map(|&b| Token::Op(b)).collect();
        let filler = OpcodeTable::cancun()
            .canonical_tokens()
            .into_iter()
            .filter(|t| !reserved.contains(t))
            .collect();
        Ok(Self {
            motifs,
            filler,
            min_len,
            max_len,
            positives_per_class: 100,
            clean: 100,
            extra_label_rate: 0.0,
        })
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let cfg = |m: String| Err(CorpusError::Config(m));
        if self.min_len > self.max_len {
            return cfg(format!("min_len {} exceeds max_len {}", self.min_len, self.max_len));
        }
        if self.filler.is_empty() {
            return cfg("filler token set is empty".into());
        }
        if !(0.0..=1.0).contains(&self.extra_label_rate) {
            return cfg(format!("extra_label_rate {} outside [0, 1]", self.extra_label_rate));
        }
        let mut owner: BTreeMap<Token, usize> = BTreeMap::new();
        for (k, motif) in self.motifs.iter().enumerate() {
            if motif.is_empty() {
                return cfg(format!("motif {} is empty", k + 1));
            }
            if motif.len() > self.min_len {
                return cfg(format!(
                    "motif {} has {} tokens, longer than the minimum sequence length {}",
                    k + 1,
                    motif.len(),
                    self.min_len
                ));
            }
            for t in motif {
                if !t.is_canonical() {
                    return cfg(format!("motif {} token {t} is not canonical", k + 1));
                }
                if let Some(&other) = owner.get(t) {
                    if other != k {
                        return cfg(format!("motifs {} and {} share token {t}", other + 1, k + 1));
                    }
                }
                owner.insert(*t, k);
            }
        }
        if let Some(t) = self.filler.iter().find(|t| owner.contains_key(t) || !t.is_canonical()) {
            return cfg(format!("filler token {t} is a motif token or not canonical"));
        }
        if self.extra_label_rate > 0.0 {
            let total: usize = self.motifs.iter().map(Vec::len).sum();
            if total > self.min_len {
                return cfg(format!(
                    "all motifs together need {total} tokens, minimum sequence length is {}",
                    self.min_len
                ));
            }
        }
        Ok(())
    }
}

/// Generates `positives_per_class` records per class followed by `clean`
/// records. A record contains motif k as a contiguous run exactly when label k
/// is set.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<ContractRecord>, CorpusError> {
    config.validate()?;
    let k = config.motifs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k * config.positives_per_class + config.clean);
    let mut next_id = 0usize;
    let label_sets = (0..k)
        .flat_map(|c| std::iter::repeat_n(Some(c), config.positives_per_class))
        .chain(std::iter::repeat_n(None, config.clean));
    for primary in label_sets {
        let mut bits = vec![false; k];
        if let Some(c) = primary {
            bits[c] = true;
            for (other, bit) in bits.iter_mut().enumerate() {
                if other != c && rng.gen_bool(config.extra_label_rate) {
                    *bit = true;
                }
            }
        }
        let tokens = synth_sequence(config, &bits, &mut rng);
        out.push(ContractRecord {
            address: format!("0x{next_id:040x}"),
            normalized: NormalizedSequence::from_tokens(tokens).expect("motif and filler tokens are canonical"),
            labels: LabelVector(bits),
        });
        next_id += 1;
    }
    Ok(out)
}

fn synth_sequence(config: &SynthConfig, bits: &[bool], rng: &mut ChaCha8Rng) -> Vec<Token> {
    let mut motifs: Vec<&Vec<Token>> = config.motifs.iter().zip(bits).filter(|(_, &b)| b).map(|(m, _)| m).collect();
    motifs.shuffle(rng);
    let motif_len: usize = motifs.iter().map(|m| m.len()).sum();
    let len = rng.gen_range(config.min_len.max(motif_len)..=config.max_len.max(motif_len));
    let n_filler = len - motif_len;
    let mut slots: Vec<usize> = (0..motifs.len()).map(|_| rng.gen_range(0..=n_filler)).collect();
    slots.sort_unstable();

    let mut tokens = Vec::with_capacity(len);
    let mut next_motif = 0;
    for i in 0..=n_filler {
        while next_motif < motifs.len() && slots[next_motif] == i {
            tokens.extend_from_slice(motifs[next_motif]);
            next_motif += 1;
        }
        if i < n_filler {
            tokens.push(*config.filler.choose(rng).expect("filler is nonempty"));
        }
    }
    tokens
}

/// True if `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_motif(haystack: &[Token], needle: &[Token]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
