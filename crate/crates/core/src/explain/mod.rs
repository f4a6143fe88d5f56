//! Relevance maps for loan decisions and the hash-anchored explanation artifact.

pub mod artifact;
pub mod lime;
pub mod lrp;
pub mod shapley;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use artifact::{build_artifact, ArtifactMap, ExplanationArtifact, ARTIFACT_SCHEMA_VERSION, HIGH_IMPORTANCE};
pub use lrp::{LrpParams, LrpVariant};

use crate::model::{Decision, ModelConfig, ModelError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("unknown LRP variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid LRP parameters {0}")]
    InvalidParams(String),
    #[error("exact Shapley values support at most {limit} attributes, got {attributes}")]
    TooManyAttributesForExact { attributes: usize, limit: usize },
    #[error("need at least {min} perturbations, got {got}")]
    TooFewPerturbations { got: usize, min: usize },
    #[error("all perturbed predictions are identical")]
    DegeneratePerturbations,
    #[error("an artifact needs at least one relevance map")]
    EmptyMaps,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lrp(LrpParams),
    Shap(ShapMode),
    Lime { perturbations: usize, kernel_width: f64, seed: u64, r_squared: f64 },
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Lrp(p) => match p.variant {
                LrpVariant::Lrp0 => "lrp_0",
                LrpVariant::Epsilon => "lrp_epsilon",
                LrpVariant::Gamma => "lrp_gamma",
                LrpVariant::AlphaBeta => "lrp_alpha_beta",
            },
            Method::Shap(_) => "shap",
            Method::Lime { .. } => "lime",
        }
    }
}

/// Feature relevances and their per-attribute sums. Group methods place each
/// attribute's value on the feature that is active in the explained input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub method: Method,
    pub target: Decision,
    pub features: Vec<f64>,
    pub attributes: Vec<f64>,
}

impl RelevanceMap {
    pub fn from_features(method: Method, target: Decision, features: Vec<f64>, groups: &[Range<usize>]) -> Self {
        let attributes = groups.iter().map(|g| features[g.clone()].iter().sum()).collect();
        RelevanceMap { method, target, features, attributes }
    }

    pub fn from_attributes(method: Method, target: Decision, x: &[f64], attributes: Vec<f64>, groups: &[Range<usize>]) -> Self {
        let mut features = vec![0.0; x.len()];
        for (g, &a) in groups.iter().zip(&attributes) {
            let active = g.clone().find(|&i| x[i] != 0.0).unwrap_or(g.start);
            features[active] = a;
        }
        RelevanceMap { method, target, features, attributes }
    }
}

pub fn lrp_map(model: &ModelConfig, x: &[f64], target: Decision, params: LrpParams, groups: &[Range<usize>]) -> Result<RelevanceMap, ExplainError> {
    let r = lrp::lrp(model, x, target, &params)?;
    Ok(RelevanceMap::from_features(Method::Lrp(params), target, r, groups))
}

fn prob_of(model: &ModelConfig, target: Decision) -> impl Fn(&[f64]) -> f64 + '_ {
    move |v: &[f64]| model.predict(v).map(|p| p.prob(target)).unwrap_or(f64::NAN)
}

/// Shapley values of the target-class probability over attribute groups.
pub fn shap_attr(
    model: &ModelConfig,
    x: &[f64],
    target: Decision,
    background: &[f64],
    groups: &[Range<usize>],
    mode: ShapMode,
) -> Result<RelevanceMap, ExplainError> {
    if x.len() != model.input_len() || background.len() != x.len() {
        return Err(ModelError::ShapeMismatch { expected: model.input_len(), got: x.len().min(background.len()) }.into());
    }
    let f = prob_of(model, target);
    let phi = match mode {
        ShapMode::Exact => shapley::shapley_exact(&f, x, background, groups)?,
        ShapMode::Sampled { permutations, seed } => shapley::shapley_sampled(&f, x, background, groups, permutations, seed),
    };
    Ok(RelevanceMap::from_attributes(Method::Shap(mode), target, x, phi, groups))
}

pub fn lime_map(
    model: &ModelConfig,
    x: &[f64],
    target: Decision,
    background: &[f64],
    groups: &[Range<usize>],
    perturbations: usize,
    kernel_width: Option<f64>,
    seed: u64,
) -> Result<RelevanceMap, ExplainError> {
    if x.len() != model.input_len() || background.len() != x.len() {
        return Err(ModelError::ShapeMismatch { expected: model.input_len(), got: x.len().min(background.len()) }.into());
    }
    let fit = lime::lime_fit(&prob_of(model, target), x, background, groups, perturbations, kernel_width, seed)?;
    let method = Method::Lime { perturbations, kernel_width: fit.kernel_width, seed, r_squared: fit.r_squared };
    Ok(RelevanceMap::from_attributes(method, target, x, fit.coefficients, groups))
}
