//! Categorical loan applications, their one-hot encoding, and datasets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Fund,
    Reject,
}

impl Decision {
    /// Output-unit index.
    pub fn index(self) -> usize {
        match self {
            Decision::Fund => 0,
            Decision::Reject => 1,
        }
    }

    pub fn from_index(i: usize) -> Decision {
        if i == 0 {
            Decision::Fund
        } else {
            Decision::Reject
        }
    }

    pub fn flipped(self) -> Decision {
        match self {
            Decision::Fund => Decision::Reject,
            Decision::Reject => Decision::Fund,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Fund => "fund",
            Decision::Reject => "reject",
        }
    }
}

impl std::str::FromStr for Decision {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fund" => Ok(Decision::Fund),
            "reject" => Ok(Decision::Reject),
            other => Err(ModelError::Parse(format!("unknown decision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionDistribution {
    pub p_fund: f64,
    pub p_reject: f64,
}

impl DecisionDistribution {
    pub fn prob(&self, d: Decision) -> f64 {
        match d {
            Decision::Fund => self.p_fund,
            Decision::Reject => self.p_reject,
        }
    }

    pub fn argmax(&self) -> Decision {
        if self.p_fund >= self.p_reject {
            Decision::Fund
        } else {
            Decision::Reject
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.p_fund, self.p_reject]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub vocabulary: Vec<String>,
}

/// Ordered attribute vocabularies. Feature `offset(q) + v` is the indicator
/// of attribute `q` taking its `v`-th value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
}

pub const DEFAULT_ATTRIBUTES: [(&str, usize); 18] = [
    ("checking_balance", 5),
    ("credit_history", 5),
    ("loan_purpose", 5),
    ("loan_amount", 5),
    ("savings_balance", 5),
    ("employment_length", 5),
    ("installment_rate", 5),
    ("personal_status", 5),
    ("other_debtors", 5),
    ("residence_length", 5),
    ("property", 5),
    ("age_band", 5),
    ("other_installments", 5),
    ("housing", 5),
    ("existing_credits", 5),
    ("job", 5),
    ("dependents", 4),
    ("telephone", 4),
];

impl Schema {
    /// Eighteen attributes encoding to 88 indicator features.
    pub fn default_loan() -> Schema {
        Schema {
            attributes: DEFAULT_ATTRIBUTES
                .iter()
                .map(|&(name, card)| Attribute {
                    name: name.to_string(),
                    vocabulary: (0..card).map(|v| format!("{name}_{v}")).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.attributes.iter().map(|a| a.vocabulary.len()).sum()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.vocabulary.len()).collect()
    }

    /// Feature index ranges of each attribute group.
    pub fn groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.attributes
            .iter()
            .map(|a| {
                let r = start..start + a.vocabulary.len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    pub fn encode(&self, app: &LoanApplication) -> Result<Vec<f64>, ModelError> {
        if app.attributes.len() != self.attributes.len() {
            return Err(ModelError::SchemaMismatch { expected: self.attributes.len(), got: app.attributes.len() });
        }
        let mut out = vec![0.0; self.feature_len()];
        for ((attr, group), value) in self.attributes.iter().zip(self.groups()).zip(&app.attributes) {
            let v = attr
                .vocabulary
                .iter()
                .position(|w| w == value)
                .ok_or_else(|| ModelError::UnknownCategory { attribute: attr.name.clone(), value: value.clone() })?;
            out[group.start + v] = 1.0;
        }
        Ok(out)
    }

    pub fn application(&self, customer_id: &str, categories: &[usize]) -> LoanApplication {
        LoanApplication {
            customer_id: customer_id.to_string(),
            attributes: self.attributes.iter().zip(categories).map(|(a, &v)| a.vocabulary[v].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoanApplication {
    pub customer_id: String,
    /// One category label per schema attribute, in schema order.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub application: LoanApplication,
    pub features: Vec<f64>,
    pub label: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fund_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.label == Decision::Fund).count() as f64 / self.samples.len().max(1) as f64
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.features.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<Decision> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { schema: self.schema.clone(), samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    pub fn position(&self, customer_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.application.customer_id == customer_id)
    }

    /// Columnwise mean of the encoded features.
    pub fn feature_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.schema.feature_len()];
        for s in &self.samples {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x;
            }
        }
        let n = self.samples.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Header of attribute names plus `label`, then one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header = self.schema.names();
        header.push("label".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(out, "{},{}", s.application.attributes.join(","), s.label.as_str());
        }
        out
    }

    /// Parses `to_csv` output. Customer ids are assigned by row number.
    pub fn from_csv(schema: &Schema, text: &str) -> Result<Dataset, ModelError> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or(ModelError::EmptyDataset)?.split(',').collect();
        let expected: Vec<String> = schema.names().into_iter().chain(["label".to_string()]).collect();
        if header != expected {
            return Err(ModelError::Parse("header does not match schema".into()));
        }
        let mut samples = Vec::new();
        for (row, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let mut cells: Vec<&str> = line.split(',').collect();
            let label: Decision = cells.pop().ok_or_else(|| ModelError::Parse(format!("row {row} is empty")))?.parse()?;
            let application = LoanApplication {
                customer_id: format!("row-{row:05}"),
                attributes: cells.iter().map(|c| c.to_string()).collect(),
            };
            let features = schema.encode(&application)?;
            samples.push(Sample { application, features, label });
        }
        if samples.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        Ok(Dataset { schema: schema.clone(), samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_encodes_to_88() {
        let schema = Schema::default_loan();
        assert_eq!(schema.len(), 18);
        assert_eq!(schema.feature_len(), 88);
        let app = schema.application("c1", &[0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 3, 2]);
        let x = schema.encode(&app).unwrap();
        assert_eq!(x.len(), 88);
        assert_eq!(x.iter().filter(|&&v| v == 1.0).count(), 18);
        assert_eq!(x.iter().filter(|&&v| v != 0.0 && v != 1.0).count(), 0);
        assert_eq!(schema.encode(&app).unwrap(), x);
        for (g, r) in schema.groups().iter().enumerate() {
            assert_eq!(x[r.clone()].iter().sum::<f64>(), 1.0, "group {g}");
        }
    }

    #[test]
    fn encoding_errors() {
        let schema = Schema::default_loan();
        let mut app = schema.application("c1", &[0; 18]);
        app.attributes[3] = "nonsense".into();
        assert!(matches!(schema.encode(&app), Err(ModelError::UnknownCategory { .. })));
        app.attributes.pop();
        assert!(matches!(schema.encode(&app), Err(ModelError::SchemaMismatch { expected: 18, got: 17 })));
    }

    #[test]
    fn csv_round_trip() {
        let schema = Schema::default_loan();
        let samples = (0..3)
            .map(|i| {
                let application = schema.application(&format!("row-{i:05}"), &[i % 4; 18]);
                let features = schema.encode(&application).unwrap();
                Sample { application, features, label: Decision::from_index(i % 2) }
            })
            .collect();
        let data = Dataset { schema: schema.clone(), samples };
        assert_eq!(Dataset::from_csv(&schema, &data.to_csv()).unwrap(), data);
    }
}
