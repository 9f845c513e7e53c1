//! Linear evaluation of a frozen encoder with every built-in classifier,
//! plus an adapter registered in the `svm` slot.

use sar_wcl::data::{few_shot_split, synth_generate, SynthConfig};
use sar_wcl::eval::{linear_evaluate_with, Classifier, ClassifierRegistry, EvalSettings};
use sar_wcl::matrix::Matrix;
use sar_wcl::nn::{Encoder, EncoderConfig};
use sar_wcl::rng::seeded;
use sar_wcl::trainer::Profile;

/// Nearest class mean, standing in for an external SVM.
#[derive(Default)]
struct NearestMean {
    means: Vec<Vec<f64>>,
}

impl Classifier for NearestMean {
    fn id(&self) -> &str {
        "svm"
    }

    fn fit(&mut self, x: &Matrix, y: &[usize], classes: usize) -> sar_wcl::Result<()> {
        let mut sums = vec![vec![0.0; x.cols()]; classes];
        let mut counts = vec![0.0; classes];
        for (row, &c) in x.iter_rows().zip(y) {
            sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
            counts[c] += 1.0;
        }
        self.means = sums.into_iter().zip(counts).map(|(s, n)| s.into_iter().map(|v| v / f64::max(n, 1.0)).collect()).collect();
        Ok(())
    }

    fn predict(&self, x: &Matrix) -> sar_wcl::Result<Vec<usize>> {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        Ok(x.iter_rows()
            .map(|r| (0..self.means.len()).min_by(|&a, &b| dist(r, &self.means[a]).total_cmp(&dist(r, &self.means[b]))).unwrap_or(0))
            .collect())
    }
}

fn main() -> sar_wcl::Result<()> {
    let data = synth_generate(&SynthConfig {
        num_classes: 4,
        samples_per_class: 20,
        image_size: 32,
        ..SynthConfig::default()
    })?;
    let (train, test) = few_shot_split(&data, 5, 10)?;
    let encoder = Encoder::new(
        EncoderConfig {
            input_size: 32,
            ..EncoderConfig::desk()
        },
        &mut seeded(4),
    )?;
    let digest = encoder.params().digest();

    let mut registry = ClassifierRegistry::default();
    registry.register("svm", |_| Box::new(NearestMean::default()));
    for id in ["logistic_regression", "knn", "softmax", "svm"] {
        let settings = EvalSettings {
            classifier: id.into(),
            ..EvalSettings::for_profile(Profile::Desk)
        };
        let report = linear_evaluate_with(&encoder, &train, &test, &settings, &registry)?;
        println!("{id:<20} accuracy {:.3}", report.overall_accuracy);
    }
    println!("backbone unchanged: {}", encoder.params().digest() == digest);
    Ok(())
}
