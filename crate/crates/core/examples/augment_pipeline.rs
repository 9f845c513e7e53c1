//! Run each augmentation on a synthetic target and the full pipeline.

use sar_wcl::augment::{
    apply_pipeline, blur_with, color_jitter_with, crop_resize_with, flip_with, gaussian_noise, rotate_with,
    AugmentConfig, ImageGrid,
};
use sar_wcl::rng::seeded;

fn stats(name: &str, img: &ImageGrid) {
    let px = img.pixels();
    let mean = px.iter().map(|&p| f64::from(p)).sum::<f64>() / px.len() as f64;
    let (lo, hi) = px.iter().fold((1.0f32, 0.0f32), |(l, h), &p| (l.min(p), h.max(p)));
    println!("{name:<14} {}x{}  mean {mean:.3}  range [{lo:.3}, {hi:.3}]", img.height(), img.width());
}

fn main() -> sar_wcl::Result<()> {
    // bright bar on a dark background, off-centre so flips and rotations show
    let img = ImageGrid::from_fn(48, 48, |y, x| if (10..20).contains(&y) && (8..40).contains(&x) { 0.8 } else { 0.1 });
    let mut rng = seeded(7);

    stats("input", &img);
    stats("crop_resize", &crop_resize_with(&img, 4, 4, 40, 32)?);
    stats("rotate 30", &rotate_with(&img, 30.0));
    stats("jitter", &color_jitter_with(&img, 1.2, 0.8));
    stats("flip", &flip_with(&img));
    stats("noise 0.2", &gaussian_noise(&img, 0.2, &mut rng)?);
    stats("blur 1.5", &blur_with(&img, 1.5));

    let cfg = AugmentConfig {
        out_size: 32,
        ..AugmentConfig::default()
    };
    for pass in 0..3 {
        stats(&format!("pipeline #{pass}"), &apply_pipeline(&img, &cfg, &mut rng)?);
    }
    Ok(())
}
