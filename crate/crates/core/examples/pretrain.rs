//! Pretrain a small encoder on synthetic data, save the checkpoint and
//! read it back.

use sar_wcl::augment::AugmentConfig;
use sar_wcl::clustering::ScheduleConfig;
use sar_wcl::data::{synth_generate, SynthConfig};
use sar_wcl::discrimination::BidConfig;
use sar_wcl::nn::EncoderConfig;
use sar_wcl::trainer::{pretrain, write_trace_csv, Checkpoint, PretrainConfig, Profile};

fn main() -> sar_wcl::Result<()> {
    let data = synth_generate(&SynthConfig {
        num_classes: 4,
        samples_per_class: 8,
        image_size: 32,
        ..SynthConfig::default()
    })?;
    let cfg = PretrainConfig {
        bid: BidConfig {
            batch_size: 16,
            k: 3,
            ..BidConfig::default()
        },
        schedule: ScheduleConfig {
            t1: 2,
            t2: 5,
            alpha_f: 1.0,
        },
        epochs: 6,
        lr: Some(5e-3),
        encoder: EncoderConfig {
            input_size: 32,
            stem_width: 8,
            widths: vec![8, 16, 32],
            blocks: vec![1, 1, 1],
            groups: 4,
            ..EncoderConfig::desk()
        },
        ..PretrainConfig::for_profile(Profile::Desk)
    };
    let aug = AugmentConfig {
        out_size: 32,
        ..AugmentConfig::default()
    };
    let ckpt = pretrain(&data, &cfg, &aug)?;
    for r in &ckpt.trace {
        println!("epoch {}: ce {:.4} dwv {:.5} weight {:.2}", r.epoch, r.mean_ce, r.mean_dwv, r.weight);
    }

    let dir = std::env::temp_dir().join("wcl-pretrain-example");
    std::fs::create_dir_all(&dir).map_err(|e| sar_wcl::Error::io(&dir, e))?;
    let path = dir.join("checkpoint.zip");
    ckpt.save(&path)?;
    write_trace_csv(&dir.join("trace.csv"), &ckpt.trace)?;
    let back = Checkpoint::load(&path)?;
    println!("saved {} ({} epochs), round trip exact: {}", path.display(), back.epoch, back == ckpt);
    Ok(())
}
