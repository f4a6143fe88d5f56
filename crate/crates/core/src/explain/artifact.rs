//! The explanation artifact whose canonical bytes are stored off-chain and
//! whose digest is anchored on-chain.

use serde::{Deserialize, Serialize};

use super::{ExplainError, Method, RelevanceMap};
use crate::crypto::{canonical_serialize, CanonicalBytes};
use crate::hitl::RoutingOutcome;
use crate::model::{Decision, DecisionDistribution};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;
/// Attributes whose normalized relevance strictly exceeds this are flagged.
pub const HIGH_IMPORTANCE: f64 = 0.50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMap {
    pub method: Method,
    pub target: Decision,
    pub feature_relevances: Vec<f64>,
    pub attribute_relevances: Vec<f64>,
    /// `|aggregate| / max |aggregate|`, all zero when every aggregate is zero.
    pub normalized: Vec<f64>,
    pub high_importance: Vec<bool>,
}

impl ArtifactMap {
    pub fn from_map(map: RelevanceMap) -> ArtifactMap {
        let max = map.attributes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let normalized: Vec<f64> =
            map.attributes.iter().map(|v| if max > 0.0 { v.abs() / max } else { 0.0 }).collect();
        let high_importance = normalized.iter().map(|&n| n > HIGH_IMPORTANCE).collect();
        ArtifactMap {
            method: map.method,
            target: map.target,
            feature_relevances: map.features,
            attribute_relevances: map.attributes,
            normalized,
            high_importance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationArtifact {
    pub schema_version: u32,
    pub customer_id: String,
    pub dtm: u64,
    pub decision: DecisionDistribution,
    pub entropy: f64,
    pub routing: RoutingOutcome,
    pub attribute_names: Vec<String>,
    pub maps: Vec<ArtifactMap>,
}

pub fn build_artifact(
    customer_id: &str,
    dtm: u64,
    decision: DecisionDistribution,
    entropy: f64,
    routing: RoutingOutcome,
    attribute_names: Vec<String>,
    maps: Vec<RelevanceMap>,
) -> Result<(ExplanationArtifact, CanonicalBytes), ExplainError> {
    if maps.is_empty() {
        return Err(ExplainError::EmptyMaps);
    }
    let artifact = ExplanationArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        customer_id: customer_id.to_string(),
        dtm,
        decision,
        entropy,
        routing,
        attribute_names,
        maps: maps.into_iter().map(ArtifactMap::from_map).collect(),
    };
    let bytes = canonical_serialize(&artifact).map_err(|e| ExplainError::InvalidParams(e.to_string()))?;
    Ok((artifact, bytes))
}
