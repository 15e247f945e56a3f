#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vulnscan::mol_net::bce_loss;
use vulnscan::{BranchConfig, Mode, MolModel64, ParamId, StemConfig, Tensor, TokenSequence};

pub const FD_STEP: f64 = 1e-3;

/// Loss of the model on a fixed batch, evaluated from scratch.
pub fn loss_at(model: &MolModel64, batch: &[TokenSequence], labels: &Tensor<f64>, mode: Mode, seed: u64) -> f64 {
    let p = model.forward(batch, mode, seed).unwrap();
    bce_loss(labels, &p).unwrap()
}

/// Central finite difference for one parameter element, or `None` when the
/// two probes land on different ReLU activation patterns (a kink lies inside
/// the step, so the difference quotient is not a derivative).
pub fn numeric_grad(
    model: &MolModel64,
    id: ParamId,
    index: usize,
    batch: &[TokenSequence],
    labels: &Tensor<f64>,
    mode: Mode,
    seed: u64,
) -> Option<f64> {
    let (_, base) = model.forward_tape(batch, mode, seed).unwrap();
    let pattern = base.relu_pattern();
    let mut m = model.clone();
    let orig = m.block(id).unwrap().data()[index];
    let mut probe = |x: f64| {
        m.block_mut(id).unwrap().data_mut()[index] = x;
        let (p, tape) = m.forward_tape(batch, mode, seed).unwrap();
        (bce_loss(labels, &p).unwrap(), tape.relu_pattern() == pattern)
    };
    let (up, up_same) = probe(orig + FD_STEP);
    let (down, down_same) = probe(orig - FD_STEP);
    (up_same && down_same).then(|| (up - down) / (2.0 * FD_STEP))
}

/// Relative error with a floor on the denominator so that entries whose
/// gradient is (near) zero are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

pub struct GradCase {
    pub model: MolModel64,
    pub batch: Vec<TokenSequence>,
    pub labels: Tensor<f64>,
    pub mode: Mode,
    pub seed: u64,
}

/// Tiny random model: vocab 8, embedding 4, hidden 5, sequence 6, batch 2.
pub fn random_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stem = StemConfig::new(8, 4);
    stem.gru_hidden = 5;
    stem.max_sequence_length = 6;
    let branches = vec![
        BranchConfig::with_widths("deep", vec![6, 3, 1]),
        BranchConfig::with_widths("shallow", vec![1]),
    ];
    let mut model = MolModel64::new(stem, &branches, seed).unwrap();
    // nonzero biases so bias gradients see realistic pre-activations
    for id in model.param_ids() {
        if matches!(id, ParamId::GruBias(_) | ParamId::DenseBias { .. }) {
            for v in model.block_mut(id).unwrap().data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let batch = (0..2)
        .map(|_| {
            let len = rng.gen_range(1..=6);
            let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(1..8)).collect();
            ids.resize(6, 0);
            TokenSequence::new(ids, len)
        })
        .collect();
    let labels = Tensor::from_vec(&[2, 2], (0..4).map(|_| f64::from(rng.gen_range(0..2u8))).collect()).unwrap();
    let mode = if seed.is_multiple_of(2) { Mode::Eval } else { Mode::Train };
    GradCase { model, batch, labels, mode, seed: seed.wrapping_mul(31) }
}

/// Per-block result of comparing analytic and numeric gradients.
pub struct BlockCheck {
    pub id: ParamId,
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
}

/// Compares every element of every unfrozen block.
pub fn check_case(case: &GradCase) -> Vec<BlockCheck> {
    let (_, tape) = case.model.forward_tape(&case.batch, case.mode, case.seed).unwrap();
    let grads = case.model.backward(&tape, &case.batch, &case.labels).unwrap();
    let mut out = Vec::new();
    for id in case.model.param_ids() {
        let Some(g) = grads.get(id) else { continue };
        let mut check = BlockCheck { id, worst: 0.0, checked: 0, kinks: 0 };
        for (i, &a) in g.data().iter().enumerate() {
            match numeric_grad(&case.model, id, i, &case.batch, &case.labels, case.mode, case.seed) {
                Some(n) => {
                    check.worst = check.worst.max(rel_err(a, n));
                    check.checked += 1;
                }
                None => check.kinks += 1,
            }
        }
        out.push(check);
    }
    out
}
