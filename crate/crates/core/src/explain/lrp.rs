//! Layer-wise relevance propagation through the conv/pool/dense stack.

use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::model::net::{Conv, Dense, Layer, ModelConfig};
use crate::model::Decision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpVariant {
    Lrp0,
    Epsilon,
    Gamma,
    AlphaBeta,
}

impl std::str::FromStr for LrpVariant {
    type Err = ExplainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lrp0" | "lrp_0" => Ok(LrpVariant::Lrp0),
            "epsilon" | "lrp_eps" => Ok(LrpVariant::Epsilon),
            "gamma" | "lrp_gamma" => Ok(LrpVariant::Gamma),
            "alpha_beta" | "lrp_alphabeta" => Ok(LrpVariant::AlphaBeta),
            other => Err(ExplainError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpParams {
    pub variant: LrpVariant,
    pub epsilon: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl LrpParams {
    pub fn new(variant: LrpVariant) -> LrpParams {
        LrpParams { variant, epsilon: 0.01, gamma: 0.25, alpha: 2.0, beta: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        let ok = match self.variant {
            LrpVariant::Lrp0 => true,
            LrpVariant::Epsilon => self.epsilon > 0.0,
            LrpVariant::Gamma => self.gamma >= 0.0,
            LrpVariant::AlphaBeta => (self.alpha - self.beta - 1.0).abs() < 1e-12 && self.alpha >= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ExplainError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Visits every `(input index, output index, weight)` of a linear layer.
trait Connections {
    fn bias(&self) -> &[f64];
    fn each(&self, f: &mut dyn FnMut(usize, usize, f64));
}

impl Connections for Conv {
    fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn each(&self, f: &mut dyn FnMut(usize, usize, f64)) {
        for o in 0..self.len_out {
            for j in 0..self.kernel {
                let Some(pos) = self.tap(o, j) else { continue };
                for ci in 0..self.c_in {
                    let base = (j * self.c_in + ci) * self.c_out;
                    for co in 0..self.c_out {
                        f(pos * self.c_in + ci, o * self.c_out + co, self.weights[base + co]);
                    }
                }
            }
        }
    }
}

impl Connections for Dense {
    fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn each(&self, f: &mut dyn FnMut(usize, usize, f64)) {
        for i in 0..self.n_in {
            for o in 0..self.n_out {
                f(i, o, self.weights[i * self.n_out + o]);
            }
        }
    }
}

fn redistribute(layer: &dyn Connections, a: &[f64], r_out: &[f64], p: &LrpParams) -> Vec<f64> {
    let n_out = r_out.len();
    // conv outputs are position-major, so the channel is k mod c_out
    let bias_of = |k: usize| layer.bias()[k % layer.bias().len()];
    let mut r_in = vec![0.0; a.len()];

    if p.variant == LrpVariant::AlphaBeta {
        let mut zp: Vec<f64> = (0..n_out).map(|k| bias_of(k).max(0.0)).collect();
        let mut zn: Vec<f64> = (0..n_out).map(|k| bias_of(k).min(0.0)).collect();
        layer.each(&mut |j, k, w| {
            let z = a[j] * w;
            if z > 0.0 {
                zp[k] += z;
            } else {
                zn[k] += z;
            }
        });
        let sp: Vec<f64> = (0..n_out).map(|k| if zp[k] != 0.0 { p.alpha * r_out[k] / zp[k] } else { 0.0 }).collect();
        let sn: Vec<f64> = (0..n_out).map(|k| if zn[k] != 0.0 { p.beta * r_out[k] / zn[k] } else { 0.0 }).collect();
        layer.each(&mut |j, k, w| {
            let z = a[j] * w;
            if z > 0.0 {
                r_in[j] += z * sp[k];
            } else if z < 0.0 {
                r_in[j] -= z * sn[k];
            }
        });
        return r_in;
    }

    let g = if p.variant == LrpVariant::Gamma { p.gamma } else { 0.0 };
    let lift = |w: f64| w + g * w.max(0.0);
    let mut z: Vec<f64> = (0..n_out).map(|k| lift(bias_of(k))).collect();
    layer.each(&mut |j, k, w| z[k] += a[j] * lift(w));
    let s: Vec<f64> = z
        .iter()
        .zip(r_out)
        .map(|(&zk, &rk)| {
            let denom = match p.variant {
                LrpVariant::Epsilon => zk + p.epsilon * if zk >= 0.0 { 1.0 } else { -1.0 },
                _ => zk,
            };
            if denom == 0.0 {
                0.0
            } else {
                rk / denom
            }
        })
        .collect();
    layer.each(&mut |j, k, w| r_in[j] += a[j] * lift(w) * s[k]);
    r_in
}

/// Relevance at the input of every layer, starting from the target logit.
/// Entry `i` is the relevance of layer `i`'s input; the last entry is the
/// output relevance.
pub fn lrp_layers(model: &ModelConfig, x: &[f64], target: Decision, p: &LrpParams) -> Result<Vec<Vec<f64>>, ExplainError> {
    p.validate()?;
    let trace = model.forward_trace(x, None)?;
    let logits = trace.logits();
    let mut r = vec![0.0; logits.len()];
    r[target.index()] = logits[target.index()];
    let mut out = vec![r.clone()];
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let a = &trace.acts[i];
        r = match layer {
            Layer::Conv(c) => redistribute(c, a, &r, p),
            Layer::Dense(d) => redistribute(d, a, &r, p),
            Layer::MaxPool(_) => {
                let mut r_in = vec![0.0; a.len()];
                for (&src, &rv) in trace.argmax[i].iter().zip(&r) {
                    r_in[src] += rv;
                }
                r_in
            }
            Layer::LeakyRelu { .. } | Layer::Dropout { .. } => r,
        };
        out.push(r.clone());
    }
    out.reverse();
    Ok(out)
}

/// Input-feature relevances for `target`.
pub fn lrp(model: &ModelConfig, x: &[f64], target: Decision, p: &LrpParams) -> Result<Vec<f64>, ExplainError> {
    Ok(lrp_layers(model, x, target, p)?.swap_remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvSpec, Hyperparams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(seed: u64) -> ModelConfig {
        let mut h = Hyperparams::reduced();
        h.input_len = 16;
        h.convs.push(ConvSpec { kernel: 2, filters: 4, stride: 2 });
        h.fc = vec![5];
        ModelConfig::new(h, seed).unwrap()
    }

    #[test]
    fn lrp0_conserves_layer_by_layer_without_bias() {
        let m = random_net(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let layers = lrp_layers(&m, &x, Decision::Fund, &LrpParams::new(LrpVariant::Lrp0)).unwrap();
            let top: f64 = layers.last().unwrap().iter().sum();
            for r in &layers {
                let s: f64 = r.iter().sum();
                assert!((s - top).abs() <= 1e-6 * top.abs().max(1e-12), "{s} vs {top}");
            }
        }
    }

    #[test]
    fn single_linear_layer_closed_form() {
        let mut h = Hyperparams::reduced();
        h.convs.clear();
        let mut m = ModelConfig::new(h, 3).unwrap();
        m.zero_biases();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let r = lrp(&m, &x, Decision::Reject, &LrpParams::new(LrpVariant::Lrp0)).unwrap();
        let Layer::Dense(d) = &m.layers[0] else { panic!() };
        for i in 0..8 {
            assert!((r[i] - x[i] * d.weights[i * 2 + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_one_beta_zero_ignores_negative_paths() {
        let mut h = Hyperparams::reduced();
        h.convs.clear();
        h.input_len = 4;
        let mut m = ModelConfig::new(h, 3).unwrap();
        m.zero_biases();
        if let Layer::Dense(d) = &mut m.layers[0] {
            d.weights = vec![1.0, 0.0, -0.2, 0.0, 0.5, 0.0, -0.1, 0.0];
        }
        let p = LrpParams { alpha: 1.0, beta: 0.0, ..LrpParams::new(LrpVariant::AlphaBeta) };
        let r = lrp(&m, &[1.0, 1.0, 1.0, 1.0], Decision::Fund, &p).unwrap();
        assert_eq!(r[1], 0.0);
        assert_eq!(r[3], 0.0);
        assert!(r[0] > 0.0 && r[2] > 0.0);
        assert!((r.iter().sum::<f64>() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn parameter_rules() {
        assert!("lrp_eps".parse::<LrpVariant>().is_ok());
        assert!(matches!("lrp_z".parse::<LrpVariant>(), Err(ExplainError::UnknownVariant(_))));
        assert!(LrpParams { epsilon: 0.0, ..LrpParams::new(LrpVariant::Epsilon) }.validate().is_err());
        assert!(LrpParams { alpha: 2.0, beta: 0.5, ..LrpParams::new(LrpVariant::AlphaBeta) }.validate().is_err());
        assert!(LrpParams::new(LrpVariant::Gamma).validate().is_ok());
    }

    #[test]
    fn epsilon_absorbs_on_non_negative_nets() {
        let mut m = random_net(4);
        m.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = v.abs()));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r0: f64 = lrp(&m, &x, Decision::Fund, &LrpParams::new(LrpVariant::Lrp0)).unwrap().iter().sum();
            let re: f64 =
                lrp(&m, &x, Decision::Fund, &LrpParams::new(LrpVariant::Epsilon)).unwrap().iter().map(|v| v.abs()).sum();
            assert!(re <= r0 + 1e-12);
        }
    }
}
