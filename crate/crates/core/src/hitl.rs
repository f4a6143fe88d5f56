//! Entropy scoring, confidence routing, the simulated expert, the synthetic
//! loan dataset, and the entropy-driven active-learning loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::model::train::{auc, fund_scores, stratified_folds, train, TrainOptions};
use crate::model::{Dataset, Decision, DecisionDistribution, Hyperparams, ModelConfig, ModelError, Sample, Schema};

pub const DEFAULT_THRESHOLD: f64 = 0.80;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HitlError {
    #[error("probabilities must lie in [0,1] and sum to 1, got {0:?}")]
    InvalidDistribution(Vec<f64>),
    #[error("fund fraction {0} outside [0,1]")]
    BadFraction(f64),
    #[error("unknown customer {0}")]
    UnknownCustomer(String),
    #[error("pool has {available} samples, {needed} needed")]
    PoolExhausted { available: usize, needed: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Shannon entropy normalized by log2 of the class count, with 0·log 0 = 0.
pub fn entropy(probs: &[f64]) -> Result<f64, HitlError> {
    let sum: f64 = probs.iter().sum();
    if probs.len() < 2 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(HitlError::InvalidDistribution(probs.to_vec()));
    }
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    Ok((h / (probs.len() as f64).log2()).clamp(0.0, 1.0))
}

pub fn decision_entropy(dist: &DecisionDistribution) -> Result<f64, HitlError> {
    entropy(&dist.as_array())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    AutoDecide,
    HumanReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub route: Route,
    pub threshold: f64,
}

/// Inclusive at the threshold: `phi <= threshold` decides automatically.
pub fn route(phi: f64, threshold: f64) -> RoutingOutcome {
    let route = if phi <= threshold { Route::AutoDecide } else { Route::HumanReview };
    RoutingOutcome { route, threshold }
}

/// Simulated expert answering from ground truth, wrong with probability `error_rate`.
pub struct ExpertOracle {
    error_rate: f64,
    rng: ChaCha8Rng,
}

impl ExpertOracle {
    pub fn new(error_rate: f64, seed: u64) -> Self {
        ExpertOracle { error_rate: error_rate.clamp(0.0, 1.0), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn decide(&mut self, customer_id: &str, ground_truth: &Dataset) -> Result<Decision, HitlError> {
        let i = ground_truth.position(customer_id).ok_or_else(|| HitlError::UnknownCustomer(customer_id.to_string()))?;
        Ok(self.label(ground_truth.samples[i].label))
    }

    pub fn label(&mut self, truth: Decision) -> Decision {
        if self.rng.gen::<f64>() < self.error_rate {
            truth.flipped()
        } else {
            truth
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub n: usize,
    pub fund_fraction: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { n: 1888, fund_fraction: 0.4552, seed: 42 }
    }
}

/// Hidden scoring rule of the synthetic lender.
struct Scorer {
    main: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize, usize, usize, f64)>,
}

impl Scorer {
    fn draw(cards: &[usize], rng: &mut ChaCha8Rng) -> Scorer {
        let q = cards.len();
        let mut attrs: Vec<usize> = (0..q).collect();
        attrs.shuffle(rng);
        let informative = &attrs[..q / 2];
        let mut main: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
        for &a in informative {
            main[a].iter_mut().for_each(|w| *w = rng.gen_range(-1.6..1.6));
        }
        let pairs = (0..4)
            .map(|_| {
                let a = informative[rng.gen_range(0..informative.len())];
                let b = attrs[rng.gen_range(0..q)];
                (a, rng.gen_range(0..cards[a]), b, rng.gen_range(0..cards[b]), rng.gen_range(-2.0..2.0))
            })
            .collect();
        Scorer { main, pairs }
    }

    fn score(&self, cats: &[usize]) -> f64 {
        let linear: f64 = cats.iter().enumerate().map(|(a, &v)| self.main[a][v]).sum();
        let inter: f64 =
            self.pairs.iter().filter(|&&(a, va, b, vb, _)| cats[a] == va && cats[b] == vb).map(|p| p.4).sum();
        linear + inter
    }
}

/// Samples categorical applications and labels them with a seeded sparse
/// logistic rule whose intercept is bisected to hit `fund_fraction`.
pub fn synth_dataset(schema: &Schema, params: SynthParams) -> Result<Dataset, HitlError> {
    if !(0.0..=1.0).contains(&params.fund_fraction) || params.fund_fraction.is_nan() {
        return Err(HitlError::BadFraction(params.fund_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cards = schema.cardinalities();
    let category_weights: Vec<Vec<f64>> =
        cards.iter().map(|&c| (0..c).map(|_| rng.gen_range(0.5..2.0)).collect()).collect();
    let scorer = Scorer::draw(&cards, &mut rng);

    let mut cats = Vec::with_capacity(params.n);
    let mut scores = Vec::with_capacity(params.n);
    let mut uniforms = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let row: Vec<usize> = category_weights
            .iter()
            .map(|w| {
                let mut t = rng.gen_range(0.0..w.iter().sum::<f64>());
                w.iter().position(|&x| {
                    t -= x;
                    t < 0.0
                })
                .unwrap_or(w.len() - 1)
            })
            .collect();
        scores.push(scorer.score(&row));
        uniforms.push(rng.gen::<f64>());
        cats.push(row);
    }

    const SHARPNESS: f64 = 6.0;
    let funded = |b: f64| -> Vec<bool> {
        scores.iter().zip(&uniforms).map(|(s, u)| *u < 1.0 / (1.0 + (-SHARPNESS * (s - b)).exp())).collect()
    };
    let target = (params.fund_fraction * params.n as f64).round() as usize;
    let labels = if target == 0 {
        vec![false; params.n]
    } else if target == params.n {
        vec![true; params.n]
    } else {
        // funded count is non-increasing in the intercept
        let (mut lo, mut hi) = (-100.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if funded(mid).iter().filter(|&&f| f).count() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let count = |b: f64| funded(b).iter().filter(|&&f| f).count().abs_diff(target);
        funded(if count(lo) < count(hi) { lo } else { hi })
    };

    let samples = cats
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (row, fund))| {
            let application = schema.application(&format!("cust-{i:05}"), row);
            let features = schema.encode(&application)?;
            Ok(Sample { application, features, label: if fund { Decision::Fund } else { Decision::Reject } })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(Dataset { schema: schema.clone(), samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningConfig {
    pub iterations: usize,
    pub batch: usize,
    pub threshold: f64,
    pub folds: usize,
    pub epochs: usize,
    pub expert_error_rate: f64,
    pub seed: u64,
    pub hyper: Hyperparams,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            iterations: 6,
            batch: 150,
            threshold: DEFAULT_THRESHOLD,
            folds: 5,
            epochs: 30,
            expert_error_rate: 0.0,
            seed: 7,
            hyper: Hyperparams::loan_cnn(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub annotated: usize,
    /// How many of the annotated samples were routed to human review.
    pub from_review: usize,
    pub labeled_size: usize,
    pub auc: f64,
    pub fold_aucs: Vec<f64>,
    pub config_hash: Digest,
}

/// Stratified random choice of `n` starting labels.
pub fn initial_labeled(data: &Dataset, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fund: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].label == Decision::Fund).collect();
    let mut reject: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].label == Decision::Reject).collect();
    fund.shuffle(&mut rng);
    reject.shuffle(&mut rng);
    let n_fund = ((n as f64 * fund.len() as f64 / data.len().max(1) as f64).round() as usize).min(fund.len());
    let mut picked: Vec<usize> = fund[..n_fund].iter().chain(reject.iter().take(n - n_fund)).copied().collect();
    picked.sort_unstable();
    picked
}

/// Runs the baseline plus `cfg.iterations` rounds. Every round trains a model
/// on the labeled set and hands it to `anchor`; the model then ranks the pool
/// by entropy, and the top `batch` samples (human-review items first) are
/// labeled by the oracle.
///
/// AUC is the mean over fixed stratified folds of the whole dataset: for each
/// fold a model is trained on the labeled samples outside it and scored on
/// every sample inside it.
pub fn active_learning_run(
    data: &Dataset,
    initial: &[usize],
    cfg: &ActiveLearningConfig,
    anchor: &mut dyn FnMut(usize, &ModelConfig),
) -> Result<Vec<IterationRecord>, HitlError> {
    let needed = cfg.iterations * cfg.batch;
    let available = data.len() - initial.len();
    if available < needed {
        return Err(HitlError::PoolExhausted { available, needed });
    }
    let labels = data.labels();
    let xs = data.features();
    let folds = stratified_folds(&labels, cfg.folds, cfg.seed)?;
    let mut oracle = ExpertOracle::new(cfg.expert_error_rate, cfg.seed ^ 0x0bad_cafe);

    let mut is_labeled = vec![false; data.len()];
    // annotated labels may differ from ground truth when the oracle errs
    let mut given = labels.clone();
    for &i in initial {
        is_labeled[i] = true;
    }

    let opts = TrainOptions { epochs: cfg.epochs, seed: cfg.seed };
    let fit = |rows: &[usize], given: &[Decision]| -> Result<ModelConfig, HitlError> {
        let mut model = ModelConfig::new(cfg.hyper.clone(), cfg.seed)?;
        let tx: Vec<&[f64]> = rows.iter().map(|&i| xs[i]).collect();
        let ty: Vec<Decision> = rows.iter().map(|&i| given[i]).collect();
        train(&mut model, &tx, &ty, opts)?;
        Ok(model)
    };

    let mut records = Vec::with_capacity(cfg.iterations + 1);
    let (mut annotated, mut from_review) = (0, 0);
    for iteration in 0..=cfg.iterations {
        let labeled: Vec<usize> = (0..data.len()).filter(|&i| is_labeled[i]).collect();

        let mut fold_aucs = Vec::with_capacity(cfg.folds);
        for f in 0..cfg.folds {
            let train_rows: Vec<usize> = labeled.iter().copied().filter(|&i| folds[i] != f).collect();
            let model = fit(&train_rows, &given)?;
            let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            let tx: Vec<&[f64]> = test.iter().map(|&i| xs[i]).collect();
            let positive: Vec<bool> = test.iter().map(|&i| labels[i] == Decision::Fund).collect();
            fold_aucs.push(auc(&fund_scores(&model, &tx)?, &positive)?);
        }

        let model = fit(&labeled, &given)?;
        anchor(iteration, &model);
        records.push(IterationRecord {
            iteration,
            annotated,
            from_review,
            labeled_size: labeled.len(),
            auc: fold_aucs.iter().sum::<f64>() / cfg.folds as f64,
            fold_aucs,
            config_hash: model.config_hash()?,
        });
        if iteration == cfg.iterations {
            break;
        }

        let mut scored: Vec<(f64, usize)> = (0..data.len())
            .filter(|&i| !is_labeled[i])
            .map(|i| Ok((decision_entropy(&model.predict(xs[i])?)?, i)))
            .collect::<Result<_, HitlError>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let chosen = &scored[..cfg.batch];
        from_review = chosen.iter().filter(|(phi, _)| route(*phi, cfg.threshold).route == Route::HumanReview).count();
        for &(_, i) in chosen {
            given[i] = oracle.label(labels[i]);
            is_labeled[i] = true;
        }
        annotated = chosen.len();
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_reference_points() {
        assert!((entropy(&[0.98, 0.02]).unwrap() - 0.141).abs() < 1e-3);
        assert!((entropy(&[0.47, 0.53]).unwrap() - 0.997).abs() < 1e-3);
        assert_eq!(entropy(&[0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!(entropy(&[0.6, 0.6]).is_err());
        assert!(entropy(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn entropy_symmetry_and_monotonicity() {
        let mut last = 1.0;
        for k in 0..=50 {
            let p = 0.5 + k as f64 / 100.0;
            let h = entropy(&[p, 1.0 - p]).unwrap();
            assert!((h - entropy(&[1.0 - p, p]).unwrap()).abs() < 1e-15);
            assert!(h <= last);
            last = h;
        }
    }

    #[test]
    fn routing_boundary() {
        assert_eq!(route(0.141, 0.80).route, Route::AutoDecide);
        assert_eq!(route(0.997, 0.80).route, Route::HumanReview);
        assert_eq!(route(0.80, 0.80).route, Route::AutoDecide);
    }

    #[test]
    fn oracle_error_rates() {
        let mut perfect = ExpertOracle::new(0.0, 1);
        let mut contrarian = ExpertOracle::new(1.0, 1);
        let mut noisy = ExpertOracle::new(0.1, 1);
        let flips = (0..1000).filter(|_| noisy.label(Decision::Fund) == Decision::Reject).count();
        assert!((80..=120).contains(&flips), "{flips}");
        for d in [Decision::Fund, Decision::Reject] {
            assert_eq!(perfect.label(d), d);
            assert_eq!(contrarian.label(d), d.flipped());
        }
    }

    #[test]
    fn synthetic_defaults() {
        let schema = Schema::default_loan();
        let data = synth_dataset(&schema, SynthParams::default()).unwrap();
        assert_eq!(data.len(), 1888);
        let f = data.fund_fraction();
        assert!((0.4452..=0.4652).contains(&f), "{f}");
        assert_eq!(synth_dataset(&schema, SynthParams::default()).unwrap(), data);
        let none = synth_dataset(&schema, SynthParams { n: 10, fund_fraction: 0.0, seed: 1 }).unwrap();
        assert!(none.samples.iter().all(|s| s.label == Decision::Reject));
        assert!(matches!(
            synth_dataset(&schema, SynthParams { n: 10, fund_fraction: 1.5, seed: 1 }),
            Err(HitlError::BadFraction(_))
        ));
    }
}
