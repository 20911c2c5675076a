use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embstore::{AttributeTable, EmbeddingMatrix};
use crate::error::{config_err, data_err, Error, Result};
use crate::seed;

/// Affine map `x ↦ W x + b` with `W` stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMap {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearMap {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            *slot = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Parameters flattened as weights then bias.
    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let w = self.weights.len();
        self.weights.copy_from_slice(&p[..w]);
        self.bias.copy_from_slice(&p[w..]);
    }

    fn axpy(&mut self, alpha: f64, grad: &LinearMap) {
        self.weights.iter_mut().zip(&grad.weights).for_each(|(w, g)| *w += alpha * g);
        self.bias.iter_mut().zip(&grad.bias).for_each(|(w, g)| *w += alpha * g);
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DearParams {
    /// Weights of reconstruction, max-softmax and (negated) cross-entropy.
    pub lambdas: [f64; 3],
    pub epochs: usize,
    pub step_size: f64,
    /// Standard deviation of the residual's initial weights.
    pub init_std: f64,
    pub seed: u64,
    /// Fail when an epoch increases the loss.
    pub require_descent: bool,
}

impl Default for DearParams {
    fn default() -> Self {
        Self {
            lambdas: [1.0, 1.0, 1.0],
            epochs: 200,
            step_size: 1e-3,
            init_std: 1e-3,
            seed: 0,
            require_descent: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub classifier: Vec<f64>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualModel {
    pub version: u32,
    pub method: String,
    pub lambdas: [f64; 3],
    pub seed: u64,
    pub classifier: LinearMap,
    pub residual: LinearMap,
    pub train_log: TrainLog,
    /// Free-form run metadata.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub manifest: BTreeMap<String, String>,
}

impl ResidualModel {
    pub fn source_dim(&self) -> usize {
        self.residual.n_in
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("residual model: {e}")))?;
        let (c, a) = (m.residual.n_in, m.classifier.n_out);
        let shapes_ok = m.residual.n_out == c
            && m.classifier.n_in == c
            && m.residual.weights.len() == c * c
            && m.residual.bias.len() == c
            && m.classifier.weights.len() == a * c
            && m.classifier.bias.len() == a;
        if !shapes_ok {
            return Err(Error::Format("residual model: inconsistent shapes".into()));
        }
        if !m.residual.is_finite() || !m.classifier.is_finite() {
            return Err(Error::Format("residual model: non-finite weights".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Class probabilities of the frozen attribute classifier.
    pub fn classifier_proba(&self, z: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        check_dim(z, self.source_dim())?;
        let mut logits = vec![0.0; self.classifier.n_out];
        Ok(z.rows()
            .map(|row| {
                let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                self.classifier.forward(&x, &mut logits);
                softmax(&logits)
            })
            .collect())
    }
}

fn check_dim(z: &EmbeddingMatrix, c: usize) -> Result<()> {
    if z.n_features() != c {
        return Err(data_err!("input width {} does not match the model width {c}", z.n_features()));
    }
    Ok(())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

/// Mean cross-entropy of a softmax classifier, with its gradient.
fn classifier_loss(x: &[Vec<f64>], y: &[usize], clf: &LinearMap) -> (f64, LinearMap) {
    let n = x.len() as f64;
    let mut grad = LinearMap::zeros(clf.n_in, clf.n_out);
    let mut logits = vec![0.0; clf.n_out];
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        clf.forward(xi, &mut logits);
        let p = softmax(&logits);
        loss -= p[yi].ln();
        for (o, &po) in p.iter().enumerate() {
            let g = (po - if o == yi { 1.0 } else { 0.0 }) / n;
            grad.bias[o] += g;
            let row = &mut grad.weights[o * clf.n_in..(o + 1) * clf.n_in];
            row.iter_mut().zip(xi).for_each(|(w, v)| *w += g * v);
        }
    }
    (loss / n, grad)
}

/// The residual objective with the classifier frozen:
///
/// ```text
/// L(h) = λ1 · mean ‖h(z)‖² + λ2 · mean max softmax(c(z + h(z))) − λ3 · mean CE(c(z + h(z)), y)
/// ```
#[derive(Debug, Clone)]
pub struct DearObjective {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    classifier: LinearMap,
    lambdas: [f64; 3],
}

impl DearObjective {
    pub fn new(z: &EmbeddingMatrix, y: &AttributeTable, classifier: LinearMap, lambdas: [f64; 3]) -> Result<Self> {
        y.check_pairing(z.n_samples())?;
        check_dim(z, classifier.n_in)?;
        Ok(Self {
            x: to_f64_rows(z),
            y: y.labels().to_vec(),
            classifier,
            lambdas,
        })
    }

    pub fn loss(&self, residual: &LinearMap) -> f64 {
        self.evaluate(residual, false).0
    }

    pub fn loss_and_grad(&self, residual: &LinearMap) -> (f64, LinearMap) {
        let (l, g) = self.evaluate(residual, true);
        (l, g.expect("gradient requested"))
    }

    fn evaluate(&self, residual: &LinearMap, with_grad: bool) -> (f64, Option<LinearMap>) {
        let [l1, l2, l3] = self.lambdas;
        let n = self.x.len() as f64;
        let (c, a) = (residual.n_in, self.classifier.n_out);
        let mut grad = with_grad.then(|| LinearMap::zeros(c, c));
        let mut r = vec![0.0; c];
        let mut za = vec![0.0; c];
        let mut logits = vec![0.0; a];
        let mut g_logit = vec![0.0; a];
        let mut g_za = vec![0.0; c];
        let mut loss = 0.0;
        for (xi, &yi) in self.x.iter().zip(&self.y) {
            residual.forward(xi, &mut r);
            za.iter_mut().zip(xi.iter().zip(&r)).for_each(|(s, (x, d))| *s = x + d);
            self.classifier.forward(&za, &mut logits);
            let p = softmax(&logits);
            let m = argmax(&p);
            loss += l1 * r.iter().map(|v| v * v).sum::<f64>() + l2 * p[m] + l3 * p[yi].ln();
            let Some(grad) = grad.as_mut() else { continue };
            // d/dlogits of λ2·p_m + λ3·ln p_y
            for k in 0..a {
                let dm = if k == m { 1.0 } else { 0.0 };
                let dy = if k == yi { 1.0 } else { 0.0 };
                g_logit[k] = l2 * p[m] * (dm - p[k]) + l3 * (dy - p[k]);
            }
            for (j, g) in g_za.iter_mut().enumerate() {
                *g = 2.0 * l1 * r[j];
                for k in 0..a {
                    *g += g_logit[k] * self.classifier.weights[k * c + j];
                }
                *g /= n;
            }
            for (o, &g) in g_za.iter().enumerate() {
                grad.bias[o] += g;
                let row = &mut grad.weights[o * c..(o + 1) * c];
                row.iter_mut().zip(xi).for_each(|(w, v)| *w += g * v);
            }
        }
        (loss / n, grad)
    }
}

fn to_f64_rows(z: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    z.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn descend<F>(stage: &str, params: &DearParams, model: &mut LinearMap, mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&LinearMap) -> (f64, LinearMap),
{
    let mut log: Vec<f64> = Vec::with_capacity(params.epochs + 1);
    for epoch in 0..=params.epochs {
        let (loss, grad) = objective(model);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Training {
                epoch,
                last_finite_epoch: epoch.checked_sub(1),
                reason: format!("{stage} loss became non-finite"),
            });
        }
        if params.require_descent {
            if let Some(&prev) = log.last() {
                if loss > prev + 1e-12 * prev.abs().max(1.0) {
                    return Err(Error::Training {
                        epoch,
                        last_finite_epoch: Some(epoch),
                        reason: format!("{stage} loss increased from {prev} to {loss}; lower the step size"),
                    });
                }
            }
        }
        log.push(loss);
        if epoch < params.epochs {
            model.axpy(-params.step_size, &grad);
        }
    }
    Ok(log)
}

/// Trains the attribute classifier, then the residual against it.
pub fn fit_dear(z: &EmbeddingMatrix, y: &AttributeTable, params: &DearParams) -> Result<ResidualModel> {
    y.check_pairing(z.n_samples())?;
    if z.n_samples() < 2 || y.n_present() < 2 {
        return Err(data_err!("need at least 2 samples covering 2 attribute values"));
    }
    if !(params.step_size > 0.0 && params.step_size.is_finite()) || params.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(config_err!("step size must be positive and lambdas finite and non-negative"));
    }
    if !(params.init_std >= 0.0 && params.init_std.is_finite()) {
        return Err(config_err!("init_std must be finite and non-negative"));
    }
    let c = z.n_features();
    let x = to_f64_rows(z);
    let mut classifier = LinearMap::zeros(c, y.n_attributes());
    let clf_log = descend("classifier", params, &mut classifier, |m| classifier_loss(&x, y.labels(), m))?;

    let mut residual = LinearMap::zeros(c, c);
    let normal = Normal::new(0.0, params.init_std).expect("valid std");
    let mut rng = seed::rng(params.seed, "dear.residual");
    residual.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
    let objective = DearObjective {
        x,
        y: y.labels().to_vec(),
        classifier: classifier.clone(),
        lambdas: params.lambdas,
    };
    let res_log = descend("residual", params, &mut residual, |m| objective.loss_and_grad(m))?;
    Ok(ResidualModel {
        version: 1,
        method: "dear".into(),
        lambdas: params.lambdas,
        seed: params.seed,
        classifier,
        residual,
        train_log: TrainLog {
            classifier: clf_log,
            residual: res_log,
        },
        manifest: BTreeMap::new(),
    })
}

/// `z + h(z)` for every row.
pub fn apply_dear(model: &ResidualModel, z: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    check_dim(z, model.source_dim())?;
    let mut r = vec![0.0; model.source_dim()];
    let out = z.map_rows(|_, row| {
        let x: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        model.residual.forward(&x, &mut r);
        row.iter_mut().zip(x.iter().zip(&r)).for_each(|(s, (a, b))| *s = (a + b) as f32);
    })?;
    Ok(out.with_source_tag(z.source_tag.clone()))
}
