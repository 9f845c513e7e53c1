//! PCA projection of embeddings to 2-D, exported as CSV.

use sar_wcl::data::{synth_generate, SynthConfig};
use sar_wcl::eval::{extract_embeddings, project_2d, write_projection_csv};
use sar_wcl::nn::{Encoder, EncoderConfig};
use sar_wcl::rng::seeded;

fn main() -> sar_wcl::Result<()> {
    let data = synth_generate(&SynthConfig {
        num_classes: 3,
        samples_per_class: 10,
        image_size: 32,
        ..SynthConfig::default()
    })?;
    let encoder = Encoder::new(
        EncoderConfig {
            input_size: 32,
            ..EncoderConfig::desk()
        },
        &mut seeded(9),
    )?;
    let features = extract_embeddings(&encoder, &data)?;
    let proj = project_2d(&features)?;
    println!("{} x {} features, component variances {:.4?}", features.rows(), features.cols(), proj.variance);

    let classes: Vec<&str> = data.items().iter().map(|s| data.class_names()[s.label].as_str()).collect();
    let path = std::env::temp_dir().join("wcl-projection.csv");
    write_projection_csv(&path, &data.ids(), &proj.coords, &classes)?;
    println!("wrote {}", path.display());
    for (id, c) in data.ids().iter().zip(&proj.coords).take(4) {
        println!("  {id}: ({:.3}, {:.3})", c[0], c[1]);
    }
    Ok(())
}
