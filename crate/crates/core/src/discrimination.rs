//! Batch instance discrimination.
//!
//! Every position in a minibatch is its own class. A bias-free linear head
//! scores embeddings against per-position weight rows, the scores are
//! softened by a temperature, and the instance cross-entropy pulls each
//! embedding toward its own row. The head is redrawn for every minibatch.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeStepMode {
    /// One optimizer step after every augmentation pass (K steps per batch).
    PerPass,
    /// A single step on the loss averaged over all K passes.
    Aggregated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BidConfig {
    /// Augmentation passes per minibatch.
    pub k: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub ce_step_mode: CeStepMode,
}

impl Default for BidConfig {
    fn default() -> Self {
        Self {
            k: 5,
            temperature: 2.0,
            batch_size: 512,
            ce_step_mode: CeStepMode::PerPass,
        }
    }
}

impl BidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Instance labels for one minibatch: position `i` has label `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabels(Vec<usize>);

impl InstanceLabels {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Arbitrary labels, for testing the loss off the identity labeling.
    pub fn from_vec(labels: Vec<usize>) -> Self {
        Self(labels)
    }
}

pub fn assign_batch_instance_labels(batch_size: usize) -> Result<InstanceLabels> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok(InstanceLabels((0..batch_size).collect()))
}

/// Bias-free linear head with one weight row per batch position.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    weights: Matrix,
}

impl ClassifierHead {
    pub fn new(max_classes: usize, dim: usize, rng: &mut Rng) -> Self {
        let mut head = Self {
            weights: Matrix::zeros(max_classes, dim),
        };
        head.reinit(rng);
        head
    }

    pub fn from_weights(weights: Matrix) -> Self {
        Self { weights }
    }

    /// Redraw every weight uniformly from `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn reinit(&mut self, rng: &mut Rng) {
        let bound = 1.0 / (self.dim() as f64).sqrt();
        for w in self.weights.as_mut_slice() {
            *w = rng.gen_range(-bound..bound);
        }
    }

    pub fn max_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    /// Inner products of `v` with the first `n` weight rows.
    pub fn logits(&self, v: &[f64], n: usize) -> Vec<f64> {
        (0..n).map(|j| dot(self.weights.row(j), v)).collect()
    }
}

/// Redraw the head in place (the trainer resets its optimizer state alongside).
pub fn reinit_head(head: &mut ClassifierHead, rng: &mut Rng) {
    head.reinit(rng);
}

/// `softmax(logits / T)` with max subtraction.
pub fn tempered_softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {temperature}")));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::numeric("non-finite logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `P(i | v)` over the first `n` head rows.
pub fn instance_probabilities(v: &[f64], head: &ClassifierHead, temperature: f64, n: usize) -> Result<Vec<f64>> {
    if v.len() != head.dim() {
        return Err(Error::input(format!("embedding dim {} does not match head dim {}", v.len(), head.dim())));
    }
    if n == 0 || n > head.max_classes() {
        return Err(Error::input(format!("class count {n} outside 1..={}", head.max_classes())));
    }
    tempered_softmax(&head.logits(v, n), temperature)
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    /// d loss / d embeddings, shape of the embeddings.
    pub grad_embeddings: Matrix,
    /// d loss / d head weights, shape of the head (rows beyond `n` are zero).
    pub grad_weights: Matrix,
}

/// Mean negative log-likelihood of each row's label under the tempered
/// softmax over the first `n` head rows, `n` = number of rows.
pub fn instance_cross_entropy(
    embeddings: &Matrix,
    head: &ClassifierHead,
    labels: &InstanceLabels,
    temperature: f64,
) -> Result<CrossEntropy> {
    let n = embeddings.rows();
    if n == 0 {
        return Err(Error::input("empty embedding batch"));
    }
    if labels.len() != n {
        return Err(Error::input(format!("{} labels for {n} embeddings", labels.len())));
    }
    if let Some(&bad) = labels.as_slice().iter().find(|&&y| y >= n) {
        return Err(Error::input(format!("label {bad} outside [0, {n})")));
    }
    let mut grad_embeddings = Matrix::zeros(n, head.dim());
    let mut grad_weights = Matrix::zeros(head.max_classes(), head.dim());
    let mut loss = 0.0;
    let scale = 1.0 / (n as f64 * temperature);
    for (i, &y) in labels.as_slice().iter().enumerate() {
        let v = embeddings.row(i);
        let p = instance_probabilities(v, head, temperature, n)?;
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (j, &pj) in p.iter().enumerate() {
            let g = (pj - if j == y { 1.0 } else { 0.0 }) * scale;
            if g == 0.0 {
                continue;
            }
            let w = head.weights().row(j);
            for (gv, &wj) in grad_embeddings.row_mut(i).iter_mut().zip(w) {
                *gv += g * wj;
            }
            for (gw, &vi) in grad_weights.row_mut(j).iter_mut().zip(v) {
                *gw += g * vi;
            }
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("instance cross-entropy is not finite"));
    }
    Ok(CrossEntropy {
        loss,
        grad_embeddings,
        grad_weights,
    })
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn labels_are_identity() {
        assert_eq!(assign_batch_instance_labels(3).unwrap().as_slice(), &[0, 1, 2]);
        assert_eq!(assign_batch_instance_labels(1).unwrap().as_slice(), &[0]);
        let l = assign_batch_instance_labels(512).unwrap();
        assert_eq!(l.len(), 512);
        assert!(l.as_slice().iter().enumerate().all(|(i, &y)| i == y));
        assert!(matches!(assign_batch_instance_labels(0), Err(Error::Config(_))));
    }

    #[test]
    fn probabilities_examples() {
        let p = tempered_softmax(&[0.7, 0.7, 0.7, 0.7], 2.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let p = tempered_softmax(&[1.0, 0.0], 2.0).unwrap();
        let e = 0.5f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.6225).abs() < 1e-4);

        let p = tempered_softmax(&[3.0, -1.0, 0.5], 1e6).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-5));

        assert!(matches!(tempered_softmax(&[1.0], 0.0), Err(Error::Config(_))));
        assert!(matches!(tempered_softmax(&[f64::NAN, 1.0], 1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn probabilities_through_head() {
        let head = ClassifierHead::from_weights(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let p = instance_probabilities(&[1.0, 5.0], &head, 2.0, 2).unwrap();
        assert!((p[0] - 0.6225).abs() < 1e-4);
        assert!(instance_probabilities(&[1.0], &head, 2.0, 2).is_err());
        assert!(instance_probabilities(&[1.0, 0.0], &head, 2.0, 3).is_err());
    }

    #[test]
    fn uniform_predictions_give_ln2() {
        let head = ClassifierHead::from_weights(Matrix::zeros(2, 3));
        let emb = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]]).unwrap();
        let labels = assign_batch_instance_labels(2).unwrap();
        let ce = instance_cross_entropy(&emb, &head, &labels, 2.0).unwrap();
        assert!((ce.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_prediction_drives_loss_to_zero() {
        let head = ClassifierHead::from_weights(Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap());
        let labels = InstanceLabels::from_vec(vec![0]);
        // one row means one class, probability 1 exactly
        let emb = Matrix::from_rows(&[vec![50.0]]).unwrap();
        let ce = instance_cross_entropy(&emb, &head, &labels, 1.0).unwrap();
        assert!(ce.loss.abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        // Independent evaluation straight from the formula, logits fixed by hand.
        let w = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let v = vec![vec![0.5, -0.2], vec![0.1, 0.9], vec![-0.3, 0.4]];
        let t = 2.0;
        let mut oracle = 0.0;
        for (i, vi) in v.iter().enumerate() {
            let l: Vec<f64> = w.iter().map(|wj| wj[0] * vi[0] + wj[1] * vi[1]).collect();
            let denom: f64 = l.iter().map(|x| (x / t).exp()).sum();
            oracle += -((l[i] / t).exp() / denom).ln();
        }
        oracle /= 3.0;
        let head = ClassifierHead::from_weights(Matrix::from_rows(&w).unwrap());
        let ce = instance_cross_entropy(
            &Matrix::from_rows(&v).unwrap(),
            &head,
            &assign_batch_instance_labels(3).unwrap(),
            t,
        )
        .unwrap();
        assert!((ce.loss - oracle).abs() < 1e-10);
    }

    #[test]
    fn label_out_of_range() {
        let head = ClassifierHead::from_weights(Matrix::zeros(4, 1));
        let emb = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let err = instance_cross_entropy(&emb, &head, &InstanceLabels::from_vec(vec![0, 2]), 1.0);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn reinit_behaviour() {
        let mut a = ClassifierHead::new(6, 4, &mut seeded(1));
        let b = ClassifierHead::new(6, 4, &mut seeded(1));
        assert_eq!(a, b);
        reinit_head(&mut a, &mut seeded(2));
        assert_ne!(a, b);
        let bound = 0.5;
        assert!(a.weights().as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn reinit_moments() {
        // mean of a uniform(-b, b) entry averaged over 100 draws of `count`
        // entries has sd = range / sqrt(12 * 100 * count)
        let (rows, d) = (8, 16);
        let count = rows * d;
        let mut head = ClassifierHead::new(rows, d, &mut seeded(0));
        let mut total = 0.0;
        for s in 0..100 {
            reinit_head(&mut head, &mut seeded(1000 + s));
            total += head.weights().as_slice().iter().sum::<f64>();
        }
        let mean = total / (100 * count) as f64;
        let range = 2.0 / (d as f64).sqrt();
        let tol = 3.0 * range / ((12 * 100 * count) as f64).sqrt();
        assert!(mean.abs() < tol, "mean {mean} tol {tol}");
    }

    #[test]
    fn entropy_grows_with_temperature() {
        let logits = [2.0, 0.5, -1.0, 0.0];
        let mut last = -1.0;
        for t in [0.5, 1.0, 1.5, 2.0, 4.0] {
            let h = entropy(&tempered_softmax(&logits, t).unwrap());
            assert!(h > last);
            last = h;
        }
    }
}
