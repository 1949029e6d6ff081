//! The perception model: a multinomial softmax head over fixed embeddings.
//!
//! Inference returns the predicted class, the full softmax confidence
//! vector, and the input embedding passed through. Retraining is full-batch
//! gradient descent on L2-regularized mean cross-entropy, warm-started from
//! the previous round's weights. All arithmetic is 64-bit internally;
//! embeddings arrive as the 32-bit values stored in dataset files.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Gradient-descent hyperparameters for retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Warm-start from the previous model's weights; false trains from zeros.
    pub warm_start: bool,
}

impl Default for TrainingParams {
    fn default() -> Self {
        TrainingParams {
            epochs: 200,
            learning_rate: 0.1,
            l2: 1e-4,
            warm_start: true,
        }
    }
}

/// A labeled embedding, borrowed from whichever store owns it.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub embedding: &'a [f32],
    pub label: u32,
}

/// Inference output: prediction, softmax confidences, and the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub pred: u32,
    pub conf: Vec<f64>,
    pub emb: Vec<f32>,
}

/// Evaluation result on a labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    /// Per-class accuracy; NaN for classes absent from the set.
    pub per_class_accuracy: Vec<f64>,
    pub n: usize,
}

/// Linear softmax head: logits = W x + b with W of shape K x d (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionModel {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub class_count: usize,
    pub dim: usize,
    pub round_trained: u32,
}

/// Numerically stable softmax (max subtraction). Rows sum to 1 within 1e-9
/// for any finite logits, including magnitudes of 1e4 and beyond.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Squared L2 distance between two embeddings.
pub fn embedding_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len(), "embedding_distance"));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}

/// Argmax with ties broken toward the lowest index.
fn argmax(values: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

impl PerceptionModel {
    pub fn zeros(dim: usize, class_count: usize) -> Self {
        PerceptionModel {
            weights: vec![0.0; class_count * dim],
            bias: vec![0.0; class_count],
            class_count,
            dim,
            round_trained: 0,
        }
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::dim(self.dim, x.len(), "predict input"));
        }
        let mut out = self.bias.clone();
        for c in 0..self.class_count {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            out[c] += row.iter().zip(x).map(|(&w, &xi)| w * xi as f64).sum::<f64>();
        }
        Ok(out)
    }

    /// Run inference on one embedding.
    pub fn predict(&self, embedding: &[f32]) -> Result<ModelOutput> {
        let conf = softmax(&self.logits(embedding)?);
        Ok(ModelOutput {
            pred: argmax(&conf),
            conf,
            emb: embedding.to_vec(),
        })
    }

    /// Retrain on a labeled set and return the updated model.
    ///
    /// Full-batch gradient descent for a fixed number of epochs. An epoch
    /// must not increase the training loss: if a step does, the step size
    /// is halved and the epoch retried, up to 20 times. A non-finite loss
    /// that survives all halvings is an error naming the epoch.
    pub fn retrain(&self, train: &[LabeledExample<'_>], hp: &TrainingParams) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        for ex in train {
            if ex.label as usize >= self.class_count {
                return Err(Error::InvalidConfig(format!(
                    "training label {} >= class_count {}",
                    ex.label, self.class_count
                )));
            }
            if ex.embedding.len() != self.dim {
                return Err(Error::dim(self.dim, ex.embedding.len(), "training example"));
            }
        }
        let mut model = if hp.warm_start {
            self.clone()
        } else {
            PerceptionModel::zeros(self.dim, self.class_count)
        };
        gradient_descent(&mut model, train, None, hp.epochs, hp.learning_rate, hp.l2)?;
        Ok(model)
    }

    /// Mean cross-entropy and accuracy over a labeled set. Deterministic;
    /// independent of set order up to float summation.
    pub fn evaluate(&self, eval: &[LabeledExample<'_>]) -> Result<EvalResult> {
        if eval.is_empty() {
            return Err(Error::EmptyInput("evaluation set"));
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut per_class_correct = vec![0usize; self.class_count];
        let mut per_class_total = vec![0usize; self.class_count];
        for ex in eval {
            let out = self.predict(ex.embedding)?;
            loss -= out.conf[ex.label as usize].ln();
            per_class_total[ex.label as usize] += 1;
            if out.pred == ex.label {
                correct += 1;
                per_class_correct[ex.label as usize] += 1;
            }
        }
        let n = eval.len();
        let per_class_accuracy = per_class_correct
            .iter()
            .zip(&per_class_total)
            .map(|(&c, &t)| if t == 0 { f64::NAN } else { c as f64 / t as f64 })
            .collect();
        Ok(EvalResult {
            loss: loss / n as f64,
            accuracy: correct as f64 / n as f64,
            per_class_accuracy,
            n,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            dim: self.dim,
            class_count: self.class_count,
            round_trained: self.round_trained,
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        };
        let text = toml::to_string(&ckpt).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if ckpt.weights.len() != ckpt.dim * ckpt.class_count
            || ckpt.bias.len() != ckpt.class_count
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                reason: "checkpoint weight shapes inconsistent with dim/class_count".into(),
            });
        }
        Ok(PerceptionModel {
            weights: ckpt.weights,
            bias: ckpt.bias,
            class_count: ckpt.class_count,
            dim: ckpt.dim,
            round_trained: ckpt.round_trained,
        })
    }
}

/// Model checkpoint file layout: d, K, row-major W, b, round_trained.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    dim: usize,
    class_count: usize,
    round_trained: u32,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Objective value and gradient at the model's current weights:
/// (weighted) mean cross-entropy plus (l2/2)*||W||^2. The bias is not
/// regularized. `sample_weights`, when given, must match `examples` in
/// length; weights are normalized by their sum.
pub fn loss_and_grad(
    model: &PerceptionModel,
    examples: &[LabeledExample<'_>],
    l2: f64,
    sample_weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = model.class_count;
    let d = model.dim;
    let mut grad_w = vec![0.0; k * d];
    let mut grad_b = vec![0.0; k];
    let mut loss = 0.0;
    let total_weight: f64 = match sample_weights {
        Some(w) => {
            assert_eq!(w.len(), examples.len(), "sample_weights length mismatch");
            w.iter().sum()
        }
        None => examples.len() as f64,
    };
    for (i, ex) in examples.iter().enumerate() {
        let weight = sample_weights.map_or(1.0, |w| w[i]) / total_weight;
        let conf = softmax(&model.logits(ex.embedding)?);
        loss -= weight * conf[ex.label as usize].ln();
        for c in 0..k {
            let delta = weight * (conf[c] - if c as u32 == ex.label { 1.0 } else { 0.0 });
            grad_b[c] += delta;
            let row = &mut grad_w[c * d..(c + 1) * d];
            for (g, &x) in row.iter_mut().zip(ex.embedding) {
                *g += delta * x as f64;
            }
        }
    }
    if l2 > 0.0 {
        let mut reg = 0.0;
        for (g, &w) in grad_w.iter_mut().zip(&model.weights) {
            *g += l2 * w;
            reg += w * w;
        }
        loss += 0.5 * l2 * reg;
    }
    Ok((loss, grad_w, grad_b))
}

const MAX_HALVINGS: usize = 20;

/// Shared gradient-descent core used by both perception retraining and the
/// cloud's 1-D threshold fits.
pub(crate) fn gradient_descent(
    model: &mut PerceptionModel,
    examples: &[LabeledExample<'_>],
    sample_weights: Option<&[f64]>,
    epochs: usize,
    learning_rate: f64,
    l2: f64,
) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    let mut lr = learning_rate;
    let (mut loss, mut grad_w, mut grad_b) = loss_and_grad(model, examples, l2, sample_weights)?;
    for epoch in 0..epochs {
        let mut halvings = 0;
        loop {
            let mut candidate = model.clone();
            for (w, g) in candidate.weights.iter_mut().zip(&grad_w) {
                *w -= lr * g;
            }
            for (b, g) in candidate.bias.iter_mut().zip(&grad_b) {
                *b -= lr * g;
            }
            let (new_loss, new_gw, new_gb) =
                loss_and_grad(&candidate, examples, l2, sample_weights)?;
            if new_loss.is_finite() && new_loss <= loss {
                *model = candidate;
                loss = new_loss;
                grad_w = new_gw;
                grad_b = new_gb;
                break;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                if !new_loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                // Finite but no descent even at a tiny step: we are at
                // (numerical) convergence; keep the current weights.
                return Ok(());
            }
            lr /= 2.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use crate::util::SimRng;

    fn ex(embedding: &[f32], label: u32) -> LabeledExample<'_> {
        LabeledExample { embedding, label }
    }

    #[test]
    fn zero_model_is_uniform_with_lowest_index_tie_break() {
        let m = PerceptionModel::zeros(3, 4);
        let out = m.predict(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out.pred, 0);
        for &c in &out.conf {
            assert!((c - 0.25).abs() < 1e-15);
        }
        assert_eq!(out.emb, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn closed_form_two_class_confidence() {
        // logits [ln 2, 0] -> conf [2/3, 1/3].
        let mut m = PerceptionModel::zeros(1, 2);
        m.bias = vec![std::f64::consts::LN_2, 0.0];
        let out = m.predict(&[0.0]).unwrap();
        assert!((out.conf[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((out.conf[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.pred, 0);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let logits = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = logits.iter().map(|z| z + 1000.0).collect();
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..1000 {
            let scale = if rng.random::<f64>() < 0.5 { 1.0 } else { 1e4 };
            let logits: Vec<f64> = (0..5)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect();
            let p = softmax(&logits);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
            assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let m = PerceptionModel::zeros(3, 2);
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_closed_forms() {
        assert_eq!(embedding_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(embedding_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(embedding_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn distance_symmetry_and_nonnegativity() {
        let mut rng = SimRng::seed_from_u64(11);
        for _ in 0..1000 {
            let a: Vec<f32> = (0..6).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let b: Vec<f32> = (0..6).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
            let ab = embedding_distance(&a, &b).unwrap();
            let ba = embedding_distance(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!(ab >= 0.0);
        }
    }

    /// Perceptron oracle: verifies the set is linearly separable, which
    /// guarantees a linear softmax head can fit it.
    fn perceptron_separates(examples: &[LabeledExample<'_>], dim: usize) -> bool {
        let mut w = vec![0.0f64; dim + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for ex in examples {
                let y = if ex.label == 1 { 1.0 } else { -1.0 };
                let act: f64 = w[dim]
                    + w[..dim]
                        .iter()
                        .zip(ex.embedding)
                        .map(|(&wi, &x)| wi * x as f64)
                        .sum::<f64>();
                if y * act <= 0.0 {
                    mistakes += 1;
                    for (wi, &x) in w[..dim].iter_mut().zip(ex.embedding) {
                        *wi += y * x as f64;
                    }
                    w[dim] += y;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn retrain_fits_linearly_separable_data() {
        let mut rng = SimRng::seed_from_u64(5);
        let mut points = Vec::new();
        for _ in 0..40 {
            let x = rng.random::<f32>() * 2.0 - 1.0;
            let y = rng.random::<f32>() * 2.0 - 1.0;
            // Margin >= 1 around the separating line x = 0.
            points.push((vec![x + 1.5, y], 1u32));
            points.push((vec![x - 1.5, y], 0u32));
        }
        let examples: Vec<LabeledExample> = points
            .iter()
            .map(|(e, l)| LabeledExample {
                embedding: e,
                label: *l,
            })
            .collect();
        assert!(perceptron_separates(&examples, 2), "oracle: separable");
        let model = PerceptionModel::zeros(2, 2)
            .retrain(&examples, &TrainingParams::default())
            .unwrap();
        let eval = model.evaluate(&examples).unwrap();
        assert!(eval.accuracy >= 0.99, "accuracy {}", eval.accuracy);
    }

    #[test]
    fn retrain_memorizes_single_example() {
        let emb = vec![0.5f32, -1.0, 2.0];
        let hp = TrainingParams {
            epochs: 2000,
            learning_rate: 0.5,
            l2: 0.0,
            warm_start: true,
        };
        let model = PerceptionModel::zeros(3, 4)
            .retrain(&[ex(&emb, 2)], &hp)
            .unwrap();
        let out = model.predict(&emb).unwrap();
        assert_eq!(out.pred, 2);
        assert!(out.conf[2] > 0.9, "conf {}", out.conf[2]);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut m = PerceptionModel::zeros(2, 2);
        m.weights = vec![0.3, -0.4, 0.1, 0.9];
        m.bias = vec![0.05, -0.2];
        let hp = TrainingParams {
            epochs: 0,
            ..TrainingParams::default()
        };
        let emb = vec![1.0f32, 2.0];
        let out = m.retrain(&[ex(&emb, 0)], &hp).unwrap();
        assert_eq!(out.weights, m.weights);
        assert_eq!(out.bias, m.bias);
    }

    #[test]
    fn training_loss_is_nonincreasing() {
        let mut rng = SimRng::seed_from_u64(9);
        let data: Vec<(Vec<f32>, u32)> = (0..30)
            .map(|i| {
                let e: Vec<f32> = (0..4).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
                (e, i % 3)
            })
            .collect();
        let examples: Vec<LabeledExample> = data
            .iter()
            .map(|(e, l)| LabeledExample {
                embedding: e,
                label: *l,
            })
            .collect();
        let mut model = PerceptionModel::zeros(4, 3);
        let mut prev = loss_and_grad(&model, &examples, 1e-4, None).unwrap().0;
        for _ in 0..50 {
            gradient_descent(&mut model, &examples, None, 1, 0.5, 1e-4).unwrap();
            let cur = loss_and_grad(&model, &examples, 1e-4, None).unwrap().0;
            assert!(cur <= prev + 1e-12, "loss increased: {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = SimRng::seed_from_u64(7);
        let (k, d) = (3, 4);
        let mut model = PerceptionModel::zeros(d, k);
        for w in model.weights.iter_mut() {
            *w = rng.random::<f64>() * 2.0 - 1.0;
        }
        for b in model.bias.iter_mut() {
            *b = rng.random::<f64>() * 2.0 - 1.0;
        }
        let data: Vec<(Vec<f32>, u32)> = (0..10)
            .map(|_| {
                let e: Vec<f32> = (0..d).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
                (e, rng.random_range(0..k as u32))
            })
            .collect();
        let examples: Vec<LabeledExample> = data
            .iter()
            .map(|(e, l)| LabeledExample {
                embedding: e,
                label: *l,
            })
            .collect();
        let l2 = 1e-4;
        let (_, gw, gb) = loss_and_grad(&model, &examples, l2, None).unwrap();
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[i] += eps;
            let mut minus = model.clone();
            minus.weights[i] -= eps;
            let lp = loss_and_grad(&plus, &examples, l2, None).unwrap().0;
            let lm = loss_and_grad(&minus, &examples, l2, None).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - gw[i]).abs() / fd.abs().max(gw[i].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        for i in 0..model.bias.len() {
            let mut plus = model.clone();
            plus.bias[i] += eps;
            let mut minus = model.clone();
            minus.bias[i] -= eps;
            let lp = loss_and_grad(&plus, &examples, l2, None).unwrap().0;
            let lm = loss_and_grad(&minus, &examples, l2, None).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let rel = (fd - gb[i]).abs() / fd.abs().max(gb[i].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn evaluate_uniform_predictor_loss_is_ln2() {
        let m = PerceptionModel::zeros(2, 2);
        let e1 = vec![0.4f32, -0.3];
        let e2 = vec![1.0f32, 0.7];
        let eval = m.evaluate(&[ex(&e1, 0), ex(&e2, 1)]).unwrap();
        assert!((eval.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn evaluate_counts_match_brute_force_recount() {
        let mut rng = SimRng::seed_from_u64(21);
        let (k, d) = (4, 6);
        let mut model = PerceptionModel::zeros(d, k);
        for w in model.weights.iter_mut() {
            *w = rng.random::<f64>() * 2.0 - 1.0;
        }
        let data: Vec<(Vec<f32>, u32)> = (0..200)
            .map(|_| {
                let e: Vec<f32> = (0..d).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect();
                (e, rng.random_range(0..k as u32))
            })
            .collect();
        let examples: Vec<LabeledExample> = data
            .iter()
            .map(|(e, l)| LabeledExample {
                embedding: e,
                label: *l,
            })
            .collect();
        let eval = model.evaluate(&examples).unwrap();
        // Independent scalar recount of argmax(W x + b).
        let mut correct = 0;
        for (e, l) in &data {
            let mut best_c = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let mut z = model.bias[c];
                for (j, &x) in e.iter().enumerate() {
                    z += model.weights[c * d + j] * x as f64;
                }
                if z > best_v {
                    best_v = z;
                    best_c = c;
                }
            }
            if best_c as u32 == *l {
                correct += 1;
            }
        }
        assert_eq!(eval.accuracy, correct as f64 / 200.0);
    }

    #[test]
    fn evaluate_is_order_invariant() {
        let mut rng = SimRng::seed_from_u64(31);
        let m = {
            let mut m = PerceptionModel::zeros(3, 3);
            for w in m.weights.iter_mut() {
                *w = rng.random::<f64>() - 0.5;
            }
            m
        };
        let data: Vec<(Vec<f32>, u32)> = (0..50)
            .map(|_| {
                let e: Vec<f32> = (0..3).map(|_| rng.random::<f32>()).collect();
                (e, rng.random_range(0..3))
            })
            .collect();
        let fwd: Vec<LabeledExample> = data
            .iter()
            .map(|(e, l)| LabeledExample {
                embedding: e,
                label: *l,
            })
            .collect();
        let rev: Vec<LabeledExample> = fwd.iter().rev().cloned().collect();
        let a = m.evaluate(&fwd).unwrap();
        let b = m.evaluate(&rev).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trips() {
        let mut m = PerceptionModel::zeros(2, 3);
        m.weights = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        m.bias = vec![-0.1, 0.0, 0.1];
        m.round_trained = 4;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        m.save(&path).unwrap();
        let loaded = PerceptionModel::load(&path).unwrap();
        assert_eq!(loaded, m);
    }
}
