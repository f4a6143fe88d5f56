//! Mini-batch Adam training, AUC, and stratified cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Decision;
use super::net::{softmax, Grads, Hyperparams, ModelConfig};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Drives shuffling and dropout masks.
    pub seed: u64,
}

/// Cross-entropy of one sample plus its logit gradient.
fn sample_loss(logits: &[f64], label: Decision) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let t = label.index();
    let loss = -p[t].max(f64::MIN_POSITIVE).ln();
    let mut d = p;
    d[t] -= 1.0;
    (loss, d)
}

/// Mean cross-entropy over the batch plus the L2 penalty, with dropout off.
pub fn batch_loss(model: &ModelConfig, xs: &[&[f64]], ys: &[Decision]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        total += sample_loss(&model.logits(x)?, y).0;
    }
    Ok(total / xs.len() as f64 + model.hyper.l2 * model.weight_square_sum())
}

/// Analytic gradient of [`batch_loss`]. With `dropout_rng` set, dropout masks
/// are drawn per sample and the returned loss is the masked one.
pub fn batch_gradient(
    model: &ModelConfig,
    xs: &[&[f64]],
    ys: &[Decision],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Grads), ModelError> {
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    let scale = 1.0 / xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let trace = model.forward_trace(x, dropout_rng.as_deref_mut())?;
        let (loss, mut d) = sample_loss(trace.logits(), y);
        total += loss;
        d.iter_mut().for_each(|v| *v *= scale);
        model.backward(&trace, &d, &mut grads);
    }
    // weights are the even-indexed tensors; biases carry no penalty
    let l2 = model.hyper.l2;
    for (k, (g, w)) in grads.iter_mut().zip(model.tensors()).enumerate() {
        if k % 2 == 0 {
            for (gv, wv) in g.iter_mut().zip(w) {
                *gv += 2.0 * l2 * wv;
            }
        }
    }
    Ok((total * scale + l2 * model.weight_square_sum(), grads))
}

struct Adam {
    m: Grads,
    v: Grads,
    step: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &ModelConfig) -> Adam {
        Adam { m: model.zero_grads(), v: model.zero_grads(), step: 0 }
    }

    fn apply(&mut self, model: &mut ModelConfig, grads: &Grads) {
        self.step += 1;
        let lr = model.hyper.learning_rate;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (k, w) in model.tensors_mut().into_iter().enumerate() {
            for i in 0..w.len() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                w[i] -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains in place and returns the mean batch loss of each epoch.
pub fn train(model: &mut ModelConfig, xs: &[&[f64]], ys: &[Decision], opts: TrainOptions) -> Result<Vec<f64>, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(ModelError::ShapeMismatch { expected: xs.len(), got: ys.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    let bs = model.hyper.batch_size;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(bs) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<Decision> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = batch_gradient(model, &bx, &by, Some(&mut rng))?;
            adam.apply(model, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok(history)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from average ranks.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64, ModelError> {
    if scores.len() != positive.len() {
        return Err(ModelError::ShapeMismatch { expected: scores.len(), got: positive.len() });
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ModelError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fold index per sample. Each class is shuffled separately and the classes
/// are dealt round-robin, so fold sizes and class counts differ by at most one.
pub fn stratified_folds(labels: &[Decision], folds: usize, seed: u64) -> Result<Vec<usize>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, y) in labels.iter().enumerate() {
        by_class[y.index()].push(i);
    }
    if folds < 2 || by_class.iter().any(|c| c.len() < folds) {
        return Err(ModelError::TooFewSamples { folds });
    }
    let mut assignment = vec![0; labels.len()];
    let mut k = 0;
    for class in &mut by_class {
        class.shuffle(&mut rng);
        for &i in class.iter() {
            assignment[i] = k % folds;
            k += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mean_auc: f64,
    pub fold_aucs: Vec<f64>,
}

pub fn fund_scores(model: &ModelConfig, xs: &[&[f64]]) -> Result<Vec<f64>, ModelError> {
    xs.iter().map(|x| model.predict(x).map(|p| p.p_fund)).collect()
}

/// Holds each stratified fold out once, training a fresh model from
/// `model_seed` on the rest.
pub fn cross_validate(
    xs: &[&[f64]],
    ys: &[Decision],
    hyper: &Hyperparams,
    folds: usize,
    model_seed: u64,
    opts: TrainOptions,
) -> Result<CvResult, ModelError> {
    let assignment = stratified_folds(ys, folds, opts.seed)?;
    let mut fold_aucs = Vec::with_capacity(folds);
    for f in 0..folds {
        let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..xs.len()).partition(|&i| assignment[i] != f);
        let mut model = ModelConfig::new(hyper.clone(), model_seed)?;
        let tx: Vec<&[f64]> = train_idx.iter().map(|&i| xs[i]).collect();
        let ty: Vec<Decision> = train_idx.iter().map(|&i| ys[i]).collect();
        train(&mut model, &tx, &ty, opts)?;
        let vx: Vec<&[f64]> = test_idx.iter().map(|&i| xs[i]).collect();
        let positive: Vec<bool> = test_idx.iter().map(|&i| ys[i] == Decision::Fund).collect();
        fold_aucs.push(auc(&fund_scores(&model, &vx)?, &positive)?);
    }
    Ok(CvResult { mean_auc: fold_aucs.iter().sum::<f64>() / folds as f64, fold_aucs })
}
