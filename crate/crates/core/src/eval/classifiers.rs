//! Classifiers over frozen embeddings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::EvalSettings;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::Adam;
use crate::rng::{stream, tag};

pub trait Classifier {
    fn id(&self) -> &str;
    fn fit(&mut self, features: &Matrix, labels: &[usize], num_classes: usize) -> Result<()>;
    fn predict(&self, features: &Matrix) -> Result<Vec<usize>>;
    /// Whether features are standardized before use.
    fn standardizes(&self) -> bool {
        false
    }
}

fn check_fit(features: &Matrix, labels: &[usize], num_classes: usize) -> Result<()> {
    if features.rows() == 0 {
        return Err(Error::input("cannot fit a classifier on zero samples"));
    }
    if features.rows() != labels.len() {
        return Err(Error::input(format!("{} feature rows but {} labels", features.rows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::input(format!("label {bad} outside [0, {num_classes})")));
    }
    if !features.is_finite() {
        return Err(Error::numeric("non-finite features"));
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise `W x + b` for a (classes x dim) weight matrix.
fn scores(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter_rows().zip(b).map(|(row, bias)| dot(row, x) + bias).collect()
}

/// In-place softmax.
fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

fn check_dim(features: &Matrix, dim: usize) -> Result<()> {
    if features.cols() != dim {
        return Err(Error::input(format!("expected {dim} features, got {}", features.cols())));
    }
    Ok(())
}

/// A single linear layer trained with softmax cross-entropy by Adam.
pub struct SoftmaxClassifier {
    lr: f64,
    epochs: u32,
    batch_size: usize,
    seed: u64,
    weights: Matrix,
    bias: Vec<f64>,
}

impl SoftmaxClassifier {
    pub fn new(lr: f64, epochs: u32, batch_size: usize, seed: u64) -> Self {
        Self {
            lr,
            epochs,
            batch_size: batch_size.max(1),
            seed,
            weights: Matrix::zeros(0, 0),
            bias: Vec::new(),
        }
    }
}

impl Classifier for SoftmaxClassifier {
    fn id(&self) -> &str {
        "softmax"
    }

    fn fit(&mut self, x: &Matrix, y: &[usize], classes: usize) -> Result<()> {
        check_fit(x, y, classes)?;
        let d = x.cols();
        self.weights = Matrix::zeros(classes, d);
        self.bias = vec![0.0; classes];
        let mut opt = Adam::new(self.lr);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for epoch in 0..self.epochs {
            order.shuffle(&mut stream(self.seed, &[tag::CLASSIFIER, u64::from(epoch)]));
            for batch in order.chunks(self.batch_size) {
                let mut gw = Matrix::zeros(classes, d);
                let mut gb = vec![0.0; classes];
                for &i in batch {
                    let mut p = scores(&self.weights, &self.bias, x.row(i));
                    softmax(&mut p);
                    p[y[i]] -= 1.0;
                    for (c, &g) in p.iter().enumerate() {
                        gb[c] += g / batch.len() as f64;
                        for (w, &xi) in gw.row_mut(c).iter_mut().zip(x.row(i)) {
                            *w += g * xi / batch.len() as f64;
                        }
                    }
                }
                opt.step(&mut [self.weights.as_mut_slice(), &mut self.bias], &[gw.as_slice(), &gb]);
            }
        }
        if !self.weights.is_finite() {
            return Err(Error::numeric("softmax classifier diverged"));
        }
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        check_dim(x, self.weights.cols())?;
        Ok(x.iter_rows().map(|r| argmax(&scores(&self.weights, &self.bias, r))).collect())
    }
}

/// Per-feature standardization fitted on training rows; zero-variance
/// features are only centered.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; d];
        for r in x.iter_rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in x.iter_rows() {
            var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        let scale = var.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) * s).collect()
    }
}

/// k-nearest neighbours (Euclidean, on standardized features). Vote ties go
/// to the tied class with the nearest member.
pub struct KnnClassifier {
    k: usize,
    train: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
    standardizer: Option<Standardizer>,
}

impl KnnClassifier {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            train: Vec::new(),
            labels: Vec::new(),
            classes: 0,
            standardizer: None,
        }
    }
}

impl Classifier for KnnClassifier {
    fn id(&self) -> &str {
        "knn"
    }

    fn standardizes(&self) -> bool {
        true
    }

    fn fit(&mut self, x: &Matrix, y: &[usize], classes: usize) -> Result<()> {
        check_fit(x, y, classes)?;
        let st = Standardizer::fit(x);
        self.train = x.iter_rows().map(|r| st.apply(r)).collect();
        self.labels = y.to_vec();
        self.classes = classes;
        self.standardizer = Some(st);
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let st = self.standardizer.as_ref().ok_or_else(|| Error::input("knn used before fit"))?;
        check_dim(x, st.mean.len())?;
        let k = self.k.min(self.train.len());
        Ok(x.iter_rows()
            .map(|r| {
                let q = st.apply(r);
                let mut dist: Vec<(f64, usize)> = self
                    .train
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                    .collect();
                dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut votes = vec![0usize; self.classes];
                for &(_, i) in &dist[..k] {
                    votes[self.labels[i]] += 1;
                }
                let top = votes.iter().copied().max().unwrap_or(0);
                dist[..k].iter().map(|&(_, i)| self.labels[i]).find(|&c| votes[c] == top).unwrap_or(0)
            })
            .collect())
    }
}

/// Multinomial logistic regression minimizing mean cross-entropy plus
/// `lambda/2 * ||W||^2` (bias unpenalized) with L-BFGS, stopping when the
/// gradient max-norm falls below `tol`.
pub struct LogisticRegression {
    lambda: f64,
    tol: f64,
    max_iter: usize,
    weights: Matrix,
    bias: Vec<f64>,
    /// Iterations used by the last fit.
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticRegression {
    pub fn new(lambda: f64, tol: f64) -> Self {
        Self {
            lambda,
            tol,
            max_iter: 5000,
            weights: Matrix::zeros(0, 0),
            bias: Vec::new(),
            iterations: 0,
            converged: false,
        }
    }

    /// Objective and gradient at packed parameters `[W (c x d) | b (c)]`.
    fn objective(&self, theta: &[f64], x: &Matrix, y: &[usize], classes: usize) -> (f64, Vec<f64>) {
        let d = x.cols();
        let n = x.rows() as f64;
        let (w, b) = theta.split_at(classes * d);
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        for (r, &yi) in x.iter_rows().zip(y) {
            let mut p: Vec<f64> = (0..classes).map(|c| dot(&w[c * d..(c + 1) * d], r) + b[c]).collect();
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - p[yi];
            for (c, pc) in p.iter_mut().enumerate() {
                let g = ((*pc - lse).exp() - if c == yi { 1.0 } else { 0.0 }) / n;
                for (gw, &v) in grad[c * d..(c + 1) * d].iter_mut().zip(r) {
                    *gw += g * v;
                }
                grad[classes * d + c] += g;
            }
        }
        loss /= n;
        for (gw, &wv) in grad[..classes * d].iter_mut().zip(w) {
            *gw += self.lambda * wv;
        }
        loss += 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        (loss, grad)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl Classifier for LogisticRegression {
    fn id(&self) -> &str {
        "logistic_regression"
    }

    fn fit(&mut self, x: &Matrix, y: &[usize], classes: usize) -> Result<()> {
        check_fit(x, y, classes)?;
        let d = x.cols();
        let mut theta = vec![0.0; classes * (d + 1)];
        let (mut f, mut g) = self.objective(&theta, x, y, classes);
        let memory = 10;
        let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
        self.converged = false;
        self.iterations = 0;
        while self.iterations < self.max_iter {
            if max_abs(&g) < self.tol {
                self.converged = true;
                break;
            }
            // two-loop recursion for the search direction
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, yv, rho) in hist.iter().rev() {
                let a = rho * dot(s, &q);
                q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
                alphas.push(a);
            }
            if let Some((s, yv, _)) = hist.last() {
                let gamma = dot(s, yv) / dot(yv, yv);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
            for ((s, yv, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(yv, &q);
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
            }
            let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
            let mut slope = dot(&g, &dir);
            if slope >= 0.0 {
                hist.clear();
                dir = g.iter().map(|v| -v).collect();
                slope = dot(&g, &dir);
            }
            // backtracking Armijo line search
            let mut step = if hist.is_empty() { 1.0 / max_abs(&g).max(1.0) } else { 1.0 };
            let (next, f_next, g_next) = loop {
                let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
                let (fc, gc) = self.objective(&cand, x, y, classes);
                if fc <= f + 1e-4 * step * slope || step < 1e-20 {
                    break (cand, fc, gc);
                }
                step *= 0.5;
            };
            let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 {
                hist.push((s, yv, 1.0 / sy));
                if hist.len() > memory {
                    hist.remove(0);
                }
            }
            let stalled = (f - f_next).abs() <= f64::EPSILON * f.abs().max(1.0) && step < 1e-20;
            theta = next;
            f = f_next;
            g = g_next;
            self.iterations += 1;
            if stalled {
                break;
            }
        }
        if !f.is_finite() {
            return Err(Error::numeric("logistic regression diverged"));
        }
        self.weights = Matrix::from_vec(classes, d, theta[..classes * d].to_vec())?;
        self.bias = theta[classes * d..].to_vec();
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        check_dim(x, self.weights.cols())?;
        Ok(x.iter_rows().map(|r| argmax(&scores(&self.weights, &self.bias, r))).collect())
    }
}

pub type ClassifierFactory = Box<dyn Fn(&EvalSettings) -> Box<dyn Classifier>>;

/// Adapter slots without a built-in implementation.
pub const ADAPTER_SLOTS: [&str; 2] = ["svm", "random_forest"];

/// Classifier identifiers mapped to constructors. The built-ins are always
/// present; `svm` and `random_forest` resolve only once an adapter is
/// registered under that name.
pub struct ClassifierRegistry {
    factories: BTreeMap<String, ClassifierFactory>,
}

impl Default for ClassifierRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("softmax", |s| Box::new(SoftmaxClassifier::new(s.lr, s.epochs, s.batch_size, s.seed)));
        r.register("knn", |s| Box::new(KnnClassifier::new(s.knn_k)));
        r.register("logistic_regression", |s| Box::new(LogisticRegression::new(s.logistic_lambda, s.logistic_tol)));
        r
    }
}

impl ClassifierRegistry {
    pub const BUILT_IN: [&'static str; 3] = ["softmax", "knn", "logistic_regression"];

    pub fn register(&mut self, id: &str, factory: impl Fn(&EvalSettings) -> Box<dyn Classifier> + 'static) {
        self.factories.insert(id.to_string(), Box::new(factory));
    }

    pub fn ids(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, id: &str, settings: &EvalSettings) -> Result<Box<dyn Classifier>> {
        match self.factories.get(id) {
            Some(f) => Ok(f(settings)),
            None if ADAPTER_SLOTS.contains(&id) => Err(Error::config(format!(
                "classifier {id:?} is an adapter slot with no registered implementation"
            ))),
            None => Err(Error::config(format!("unknown classifier {id:?} (known: {})", self.ids().join(", ")))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn blobs(n_per: usize, classes: usize, sep: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = crate::rng::seeded(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for _ in 0..n_per {
                let mut r: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.3).collect();
                r[c % 4] += sep * (1.0 + (c / 4) as f64);
                rows.push(r);
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    fn accuracy(c: &dyn Classifier, x: &Matrix, y: &[usize]) -> f64 {
        let p = c.predict(x).unwrap();
        p.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn knn_self_match() {
        let (x, y) = blobs(5, 3, 0.5, 1);
        let mut knn = KnnClassifier::new(1);
        knn.fit(&x, &y, 3).unwrap();
        assert_eq!(accuracy(&knn, &x, &y), 1.0);
    }

    #[test]
    fn knn_tie_goes_to_nearest() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0], vec![4.0]]).unwrap();
        let mut knn = KnnClassifier::new(2);
        knn.fit(&x, &[0, 0, 1, 1], 2).unwrap();
        // standardized query nearest to the class-1 point at 3.0
        let q = Matrix::from_rows(&[vec![2.6]]).unwrap();
        assert_eq!(knn.predict(&q).unwrap(), vec![1]);
        let q = Matrix::from_rows(&[vec![1.4]]).unwrap();
        assert_eq!(knn.predict(&q).unwrap(), vec![0]);
    }

    #[test]
    fn logistic_separates_and_converges() {
        let (x, y) = blobs(10, 2, 4.0, 2);
        let mut lr = LogisticRegression::new(1e-3, 1e-6);
        lr.fit(&x, &y, 2).unwrap();
        assert!(lr.converged, "{} iterations", lr.iterations);
        assert_eq!(accuracy(&lr, &x, &y), 1.0);
        let (x, y) = blobs(20, 6, 2.0, 3);
        let mut lr = LogisticRegression::new(1e-3, 1e-6);
        lr.fit(&x, &y, 6).unwrap();
        assert!(lr.converged);
        assert!(accuracy(&lr, &x, &y) > 0.95);
    }

    #[test]
    fn logistic_gradient_is_consistent() {
        let (x, y) = blobs(3, 3, 1.0, 4);
        let lr = LogisticRegression::new(0.1, 1e-6);
        let theta: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let (_, g) = lr.objective(&theta, &x, &y, 3);
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += 1e-6;
            let mut m = theta.clone();
            m[i] -= 1e-6;
            let fd = (lr.objective(&p, &x, &y, 3).0 - lr.objective(&m, &x, &y, 3).0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn softmax_learns_blobs() {
        let (x, y) = blobs(15, 3, 3.0, 5);
        let mut sm = SoftmaxClassifier::new(0.03, 50, 8, 0);
        sm.fit(&x, &y, 3).unwrap();
        assert!(accuracy(&sm, &x, &y) > 0.95);
    }

    #[test]
    fn registry_resolution() {
        let reg = ClassifierRegistry::default();
        let s = EvalSettings::default();
        for id in ClassifierRegistry::BUILT_IN {
            assert_eq!(reg.build(id, &s).unwrap().id(), id);
        }
        assert!(matches!(reg.build("svm", &s), Err(Error::Config(m)) if m.contains("adapter")));
        assert!(matches!(reg.build("boosted", &s), Err(Error::Config(_))));
        let mut reg = reg;
        reg.register("svm", |_| Box::new(KnnClassifier::new(1)));
        assert!(reg.build("svm", &s).is_ok());
    }
}
