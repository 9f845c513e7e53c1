//! Fine-tune a small encoder end to end and report best, final and stable
//! accuracy.

use sar_wcl::data::{few_shot_split, synth_generate, SynthConfig};
use sar_wcl::eval::{fine_tune_encoder, EvalSettings};
use sar_wcl::nn::{Encoder, EncoderConfig};
use sar_wcl::rng::seeded;

fn main() -> sar_wcl::Result<()> {
    let data = synth_generate(&SynthConfig {
        num_classes: 3,
        samples_per_class: 20,
        image_size: 32,
        speckle_level: 0.2,
        ..SynthConfig::default()
    })?;
    let (train, test) = few_shot_split(&data, 8, 10)?;
    let encoder = Encoder::new(
        EncoderConfig {
            input_size: 32,
            stem_width: 8,
            widths: vec![8, 16, 32],
            blocks: vec![1, 1, 1],
            groups: 4,
            ..EncoderConfig::desk()
        },
        &mut seeded(2),
    )?;
    let settings = EvalSettings {
        epochs: 15,
        batch_size: 8,
        lr: 3e-3,
        finetune_augment: true,
        ..EvalSettings::default()
    };
    let report = fine_tune_encoder(&encoder, &train, &test, &settings)?;
    let curve: Vec<String> = report.epoch_accuracies.iter().map(|a| format!("{a:.2}")).collect();
    println!("per-epoch accuracy {}", curve.join(" "));
    println!(
        "best {:.3}  final {:.3}  stable {:.3}",
        report.best_accuracy.unwrap_or(0.0),
        report.final_accuracy.unwrap_or(0.0),
        report.stable_accuracy.unwrap_or(0.0)
    );
    let path = std::env::temp_dir().join("wcl-finetune-report.json");
    report.write_json(&path)?;
    println!("report written to {}", path.display());
    Ok(())
}
