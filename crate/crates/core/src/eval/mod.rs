//! Evaluation of learned representations: linear probes on frozen
//! embeddings, end-to-end fine-tuning, and 2-D projections.

mod classifiers;
mod projection;
mod report;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{flip_with, ImageGrid};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::nn::{Adam, Encoder};
use crate::rng::{stream, tag};
use crate::trainer::{Checkpoint, Profile};

pub use classifiers::{
    Classifier, ClassifierFactory, ClassifierRegistry, KnnClassifier, LogisticRegression, SoftmaxClassifier,
    ADAPTER_SLOTS,
};
pub use projection::{project_2d, write_projection_csv, Projection};
pub use report::{EvalReport, Protocol, SummaryRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Linear-probe classifier id.
    pub classifier: String,
    /// Learning rate for fine-tuning and the softmax probe.
    pub lr: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub knn_k: usize,
    pub logistic_lambda: f64,
    pub logistic_tol: f64,
    /// Random horizontal flips while fine-tuning.
    pub finetune_augment: bool,
    /// Trailing epochs whose median test accuracy is the stable value.
    pub stable_window: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

impl EvalSettings {
    pub fn for_profile(profile: Profile) -> Self {
        let (epochs, batch_size) = match profile {
            Profile::Paper => (200, 256),
            Profile::Desk => (30, 32),
        };
        Self {
            classifier: "logistic_regression".into(),
            lr: 0.03,
            epochs,
            batch_size,
            knn_k: 5,
            logistic_lambda: 1e-3,
            logistic_tol: 1e-6,
            finetune_augment: false,
            stable_window: 10,
            seed: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("eval lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.knn_k == 0 || self.stable_window == 0 {
            return Err(Error::config("eval batch_size, knn_k and stable_window must be positive"));
        }
        if !(self.logistic_lambda >= 0.0 && self.logistic_tol > 0.0) {
            return Err(Error::config("logistic_lambda must be >= 0 and logistic_tol > 0"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        format!("{:x}", Sha256::digest(json))
    }
}

/// Embed every image of `data` with frozen weights. Rows follow dataset order.
pub fn extract_embeddings(encoder: &Encoder, data: &Dataset) -> Result<Matrix> {
    if data.is_empty() {
        return Err(Error::input("cannot embed an empty dataset"));
    }
    let emb = encoder.embed(&data.images())?;
    let d = encoder.dim();
    let m = Matrix::from_vec(emb.len(), d, emb.into_iter().flatten().map(f64::from).collect())?;
    if !m.is_finite() {
        return Err(Error::numeric("non-finite embeddings"));
    }
    Ok(m)
}

fn check_pair(train: &Dataset, test: &Dataset) -> Result<Vec<String>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::input("train and test sets must be non-empty"));
    }
    if train.class_names() != test.class_names() {
        return Err(Error::input("train and test sets have different class lists"));
    }
    let counts = train.class_counts();
    let mut missing: Vec<&str> = test
        .class_counts()
        .iter()
        .enumerate()
        .filter(|&(c, &n)| n > 0 && counts[c] == 0)
        .map(|(c, _)| test.class_names()[c].as_str())
        .collect();
    missing.dedup();
    Ok(if missing.is_empty() {
        Vec::new()
    } else {
        vec![format!("test classes absent from training: {}", missing.join(", "))]
    })
}

/// Linear evaluation of a checkpoint's evaluation weights with the default
/// classifier registry.
pub fn linear_evaluate(ckpt: &Checkpoint, train: &Dataset, test: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    let encoder = ckpt.feature_extractor()?;
    linear_evaluate_with(&encoder, train, test, settings, &ClassifierRegistry::default())
}

/// Fit `settings.classifier` on frozen embeddings of `train` and score it on
/// `test`. The encoder is only read.
pub fn linear_evaluate_with(
    encoder: &Encoder,
    train: &Dataset,
    test: &Dataset,
    settings: &EvalSettings,
    registry: &ClassifierRegistry,
) -> Result<EvalReport> {
    settings.validate()?;
    let warnings = check_pair(train, test)?;
    let mut clf = registry.build(&settings.classifier, settings)?;
    let x_train = extract_embeddings(encoder, train)?;
    let x_test = extract_embeddings(encoder, test)?;
    clf.fit(&x_train, &train.labels(), train.num_classes())?;
    let pred = clf.predict(&x_test)?;
    let mut report = EvalReport::from_predictions(Protocol::Linear, clf.id(), test, &pred, warnings);
    report.standardized = clf.standardizes();
    report.num_train = train.len();
    report.config_digest = settings.digest();
    report.checkpoint_digest = encoder.params().digest();
    info!("linear eval ({}): accuracy {:.4}", clf.id(), report.overall_accuracy);
    Ok(report)
}

/// Fine-tune the checkpoint's evaluation weights end to end.
pub fn fine_tune(ckpt: &Checkpoint, train: &Dataset, test: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    fine_tune_encoder(&ckpt.feature_extractor()?, train, test, settings)
}

/// Median of a non-empty slice.
fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct LinearHead {
    w: Matrix,
    b: Vec<f64>,
}

impl LinearHead {
    fn logits(&self, e: &[f32]) -> Vec<f64> {
        let e: Vec<f64> = e.iter().map(|&v| f64::from(v)).collect();
        self.w.iter_rows().zip(&self.b).map(|(r, b)| dot(r, &e) + b).collect()
    }

    fn predict(&self, emb: &[Vec<f32>]) -> Vec<usize> {
        emb.iter()
            .map(|e| {
                let l = self.logits(e);
                (0..l.len()).fold(0, |best, c| if l[c] > l[best] { c } else { best })
            })
            .collect()
    }
}

/// Largest number of images pushed through one forward pass.
const FORWARD_CHUNK: usize = 128;

/// Supervised cross-entropy training of a copy of `encoder` plus a new
/// linear head. Test accuracy is recorded after every epoch; the report's
/// confusion matrix is from the final epoch.
pub fn fine_tune_encoder(encoder: &Encoder, train: &Dataset, test: &Dataset, settings: &EvalSettings) -> Result<EvalReport> {
    settings.validate()?;
    if settings.epochs == 0 {
        return Err(Error::config("fine-tuning needs at least one epoch"));
    }
    let warnings = check_pair(train, test)?;
    let mut enc = encoder.clone();
    let (c, d) = (train.num_classes(), enc.dim());
    let bound = 1.0 / (d as f64).sqrt();
    let mut init = stream(settings.seed, &[tag::FINETUNE]);
    let mut head = LinearHead {
        w: Matrix::from_vec(c, d, (0..c * d).map(|_| init.gen_range(-bound..bound)).collect())?,
        b: vec![0.0; c],
    };
    let mut enc_opt = Adam::new(settings.lr);
    let mut head_opt = Adam::new(settings.lr);
    let test_images = test.images();
    let mut accs = Vec::with_capacity(settings.epochs as usize);
    let mut last_pred = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut stream(settings.seed, &[tag::FINETUNE, u64::from(epoch)]));
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(settings.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = enc.zero_grads();
            let mut gw = Matrix::zeros(c, d);
            let mut gb = vec![0.0; c];
            for chunk in batch.chunks(FORWARD_CHUNK) {
                let flipped: Vec<ImageGrid>;
                let images: Vec<&ImageGrid> = if settings.finetune_augment {
                    flipped = chunk
                        .iter()
                        .map(|&i| {
                            let img = &train.items()[i].image;
                            let mut rng = stream(settings.seed, &[tag::FINETUNE, u64::from(epoch), i as u64]);
                            if rng.gen_bool(0.5) {
                                flip_with(img)
                            } else {
                                img.clone()
                            }
                        })
                        .collect();
                    flipped.iter().collect()
                } else {
                    chunk.iter().map(|&i| &train.items()[i].image).collect()
                };
                let (emb, cache) = enc.forward(&images)?;
                let mut demb = Vec::with_capacity(chunk.len());
                for (e, &i) in emb.iter().zip(chunk) {
                    let y = train.items()[i].label;
                    let mut p = head.logits(e);
                    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    loss_sum += lse - p[y];
                    for (k, v) in p.iter_mut().enumerate() {
                        *v = ((*v - lse).exp() - if k == y { 1.0 } else { 0.0 }) * scale;
                    }
                    let mut de = vec![0.0f64; d];
                    for (k, &g) in p.iter().enumerate() {
                        gb[k] += g;
                        for ((gwv, dev), (&wv, &ev)) in
                            gw.row_mut(k).iter_mut().zip(de.iter_mut()).zip(head.w.row(k).iter().zip(e))
                        {
                            *gwv += g * f64::from(ev);
                            *dev += g * wv;
                        }
                    }
                    demb.push(de.into_iter().map(|v| v as f32).collect::<Vec<f32>>());
                }
                enc.backward(&cache, &demb, &mut grads);
            }
            if !loss_sum.is_finite() {
                return Err(Error::numeric(format!("fine-tuning diverged at epoch {epoch}, batch {bi}")));
            }
            let mut views: Vec<&mut [f32]> = enc.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
            let gviews: Vec<&[f32]> = grads.0.iter().map(Vec::as_slice).collect();
            enc_opt.step(&mut views, &gviews);
            head_opt.step(&mut [head.w.as_mut_slice(), &mut head.b], &[gw.as_slice(), &gb]);
        }
        if !enc.params().all_finite() {
            return Err(Error::numeric(format!("fine-tuning produced non-finite weights at epoch {epoch}")));
        }
        last_pred = head.predict(&enc.embed(&test_images)?);
        let acc = last_pred.iter().zip(test.labels()).filter(|(p, y)| **p == *y).count() as f64 / test.len() as f64;
        debug!("fine-tune epoch {epoch}: loss {:.4}, test accuracy {acc:.4}", loss_sum / train.len() as f64);
        accs.push(acc);
    }
    let mut report = EvalReport::from_predictions(Protocol::FineTuned, "softmax", test, &last_pred, warnings);
    let window = settings.stable_window.min(accs.len());
    report.best_accuracy = accs.iter().copied().reduce(f64::max);
    report.final_accuracy = accs.last().copied();
    report.stable_accuracy = Some(median(&accs[accs.len() - window..]));
    report.epoch_accuracies = accs;
    report.num_train = train.len();
    report.config_digest = settings.digest();
    report.checkpoint_digest = encoder.params().digest();
    info!(
        "fine-tune: best {:.4}, final {:.4}, stable {:.4}",
        report.best_accuracy.unwrap_or(0.0),
        report.final_accuracy.unwrap_or(0.0),
        report.stable_accuracy.unwrap_or(0.0)
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::nn::EncoderConfig;
    use crate::rng::seeded;

    fn tiny_encoder() -> Encoder {
        let cfg = EncoderConfig {
            input_size: 8,
            stem_kernel: 3,
            stem_stride: 1,
            stem_padding: 1,
            stem_width: 4,
            widths: vec![4, 8],
            blocks: vec![1, 1],
            groups: 2,
        };
        Encoder::new(cfg, &mut seeded(3)).unwrap()
    }

    /// Class 0 bright on the left half, class 1 on the right half.
    fn halves(n: usize, offset: usize) -> Dataset {
        let items = (0..2 * n)
            .map(|i| {
                let c = i % 2;
                let jitter = ((i + offset) % 5) as f32 * 0.05;
                let img = ImageGrid::from_fn(8, 8, |_, x| if (x < 4) == (c == 0) { 0.8 - jitter } else { 0.1 + jitter });
                Sample::new(img, c, format!("s{}", i + offset))
            })
            .collect();
        Dataset::new(items, vec!["left".into(), "right".into()]).unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn linear_eval_leaves_encoder_untouched() {
        let enc = tiny_encoder();
        let before = enc.params().digest();
        let (train, test) = (halves(6, 0), halves(5, 100));
        let reg = ClassifierRegistry::default();
        for id in ClassifierRegistry::BUILT_IN {
            let s = EvalSettings {
                classifier: id.into(),
                epochs: 20,
                batch_size: 4,
                ..EvalSettings::default()
            };
            let r = linear_evaluate_with(&enc, &train, &test, &s, &reg).unwrap();
            assert_eq!(r.classifier, id);
            assert_eq!(r.standardized, id == "knn");
            assert_eq!(r.confusion_matrix.iter().flatten().sum::<usize>(), test.len());
        }
        assert_eq!(enc.params().digest(), before);
    }

    #[test]
    fn fine_tune_reports_three_accuracies() {
        let enc = tiny_encoder();
        let s = EvalSettings {
            epochs: 12,
            batch_size: 4,
            lr: 0.01,
            ..EvalSettings::for_profile(Profile::Desk)
        };
        let r = fine_tune_encoder(&enc, &halves(8, 0), &halves(5, 100), &s).unwrap();
        assert_eq!(r.epoch_accuracies.len(), 12);
        let best = r.best_accuracy.unwrap();
        assert!(r.final_accuracy.unwrap() <= best && r.stable_accuracy.unwrap() <= best);
        assert_eq!(r.final_accuracy, r.epoch_accuracies.last().copied());
        assert_eq!(r.stable_accuracy, Some(median(&r.epoch_accuracies[2..])));
        assert!(best >= 0.9, "best {best}");
        assert_eq!(r.protocol, Protocol::FineTuned);
    }

    #[test]
    fn missing_training_class_warns() {
        let enc = tiny_encoder();
        let full = halves(4, 0);
        let only_left: Vec<usize> = (0..full.len()).filter(|&i| full.items()[i].label == 0).collect();
        let train = full.subset(&only_left);
        let r = linear_evaluate_with(&enc, &train, &halves(3, 50), &EvalSettings::default(), &ClassifierRegistry::default())
            .unwrap();
        assert!(r.warnings.iter().any(|w| w.contains("right")));
    }

    #[test]
    fn size_mismatch_is_input_error() {
        let enc = tiny_encoder();
        let img = ImageGrid::filled(16, 16, 0.5);
        let ds = Dataset::new(vec![Sample::new(img, 0, "a")], vec!["x".into()]).unwrap();
        assert!(matches!(extract_embeddings(&enc, &ds), Err(Error::Input(_))));
    }
}
