//! Small-sample splits, label noise, input perturbation and the manifest.

use sar_wcl::data::{
    few_shot_split, inject_label_noise, perturb_dataset, proportional_split, read_split_manifest, synth_generate,
    write_split_manifest, PerturbKind, Perturbation, SplitKind, SplitSpec, SynthConfig,
};

fn main() -> sar_wcl::Result<()> {
    let data = synth_generate(&SynthConfig {
        num_classes: 5,
        samples_per_class: 40,
        image_size: 24,
        ..SynthConfig::default()
    })?;
    println!("{} images, classes {:?}", data.len(), data.class_names());

    let (small, rest) = proportional_split(&data, 8, 10)?;
    println!("1:8 split -> {} labeled / {} unlabeled", small.len(), rest.len());
    let (shots, _) = few_shot_split(&data, 3, 10)?;
    println!("3-shot -> per class {:?}", shots.class_counts());

    let noisy = inject_label_noise(&small, 0.4, 10)?;
    let flipped = noisy.items().iter().filter(|s| s.original_label.is_some()).count();
    println!("40% label noise relabels {flipped} of {}", noisy.len());
    let blurred = perturb_dataset(&small, PerturbKind::Blur, 1.5, 10)?;
    println!("blurred first pixel {:.3} -> {:.3}", small.items()[0].image.pixels()[0], blurred.items()[0].image.pixels()[0]);

    let spec = SplitSpec {
        kind: SplitKind::FewShot,
        ratio_denominator: None,
        shots: Some(5),
        label_noise_ratio: 0.2,
        perturbation: Some(Perturbation {
            kind: PerturbKind::Noise,
            strength: 0.1,
        }),
        seed: 3,
    };
    let out = spec.apply(&data)?;
    let path = std::env::temp_dir().join("wcl-split-example.csv");
    write_split_manifest(&path, &[("labeled", &out.small), ("unlabeled", &out.rest)])?;
    let rows = read_split_manifest(&path)?;
    let relabeled = rows.iter().filter(|r| r.relabeled_from.is_some()).count();
    println!("manifest {}: {} rows, {relabeled} relabeled", path.display(), rows.len());
    Ok(())
}
