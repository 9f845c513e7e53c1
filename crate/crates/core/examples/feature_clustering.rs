//! The DWV loss on K views per sample, and its ramp-in schedule.

use sar_wcl::clustering::{dwv_loss, linear_schedule, DwvOptions, EmbeddingBatch, ScheduleConfig};

fn main() -> sar_wcl::Result<()> {
    let (n, k, d) = (3, 4, 5);
    // views of each sample scattered around a sample-specific centre
    let mut tight = EmbeddingBatch::zeros(n, k, d);
    let mut loose = EmbeddingBatch::zeros(n, k, d);
    for i in 0..n {
        for v in 0..k {
            for f in 0..d {
                let centre = (i * d + f) as f64 * 0.3;
                let jitter = ((i + 2 * v + 3 * f) as f64).sin();
                tight.get_mut(i, v)[f] = centre + 0.05 * jitter;
                loose.get_mut(i, v)[f] = centre + 0.5 * jitter;
            }
        }
    }
    let opts = DwvOptions::default();
    println!("tight views: dwv {:.5}", dwv_loss(&tight, 1.0, opts)?.loss);
    println!("loose views: dwv {:.5}", dwv_loss(&loose, 1.0, opts)?.loss);

    let schedule = ScheduleConfig::default();
    for t in [0, 29, 30, 60, 90, 120, 149, 150, 299] {
        println!("epoch {t:>3}: weight {:.4}", linear_schedule(t, &schedule)?);
    }
    Ok(())
}
