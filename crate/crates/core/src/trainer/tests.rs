use super::*;
use crate::augment::TransformKind;
use crate::data::{synth_generate, SynthConfig};

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        input_size: 16,
        stem_kernel: 2,
        stem_stride: 2,
        stem_padding: 0,
        stem_width: 4,
        widths: vec![4, 8],
        blocks: vec![1, 1],
        groups: 2,
    }
}

fn tiny_cfg(epochs: u32, batch: usize) -> PretrainConfig {
    PretrainConfig {
        bid: BidConfig {
            k: 3,
            batch_size: batch,
            ..BidConfig::default()
        },
        schedule: ScheduleConfig {
            t1: 1,
            t2: 3,
            alpha_f: 1.0,
        },
        epochs,
        lr: Some(1e-2),
        encoder: tiny_encoder(),
        ..PretrainConfig::for_profile(Profile::Desk)
    }
}

fn tiny_aug() -> AugmentConfig {
    AugmentConfig {
        out_size: 16,
        ..AugmentConfig::default()
    }
}

fn tiny_data(per_class: usize) -> Dataset {
    synth_generate(&SynthConfig {
        num_classes: 3,
        samples_per_class: per_class,
        image_size: 16,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn scaled_lr_examples() {
    assert_eq!(scaled_lr(512).unwrap(), 0.3);
    assert_eq!(scaled_lr(256).unwrap(), 0.15);
    assert!((scaled_lr(1).unwrap() - 5.859375e-4).abs() < 1e-15);
    assert!(matches!(scaled_lr(0), Err(Error::Config(_))));
}

#[test]
fn ema_examples() {
    assert!((ema_blend(&[1.0f64], &[0.0], 0.999).unwrap()[0] - 0.999).abs() < 1e-15);
    let prev = [0.3f32, -1.5, 7.25];
    let curr = [1.1f32, 2.0, -0.5];
    assert_eq!(ema_blend(&prev, &curr, 0.0).unwrap(), curr);
    assert_eq!(ema_blend(&prev, &curr, 1.0).unwrap(), prev);
    assert!(matches!(ema_blend(&prev, &curr, 1.5), Err(Error::Config(_))));
    assert!(matches!(ema_blend(&prev, &curr[..2], 0.5), Err(Error::Input(_))));

    let enc = Encoder::new(tiny_encoder(), &mut crate::rng::seeded(0)).unwrap();
    let other = Encoder::new(tiny_encoder(), &mut crate::rng::seeded(1)).unwrap();
    assert_eq!(ema_update(enc.params(), other.params(), 1.0).unwrap(), *enc.params());
    assert_eq!(ema_update(enc.params(), other.params(), 0.0).unwrap(), *other.params());
    let mut bad = ParamSet::default();
    bad.push(crate::nn::Param::new("x", vec![1], vec![0.0]));
    assert!(matches!(ema_update(enc.params(), &bad, 0.5), Err(Error::Input(_))));
}

#[test]
fn profiles() {
    let desk = PretrainConfig::for_profile(Profile::Desk);
    assert_eq!((desk.bid.batch_size, desk.epochs, desk.schedule.t1, desk.schedule.t2), (64, 60, 6, 30));
    let paper = PretrainConfig::default();
    assert_eq!((paper.bid.batch_size, paper.epochs, paper.momentum, paper.seed), (512, 300, 0.999, 10));
    assert_eq!(paper.learning_rate().unwrap(), 0.3);
    assert_eq!(paper.encoder.dim(), 512);
    assert_eq!(desk.encoder.dim(), 128);
}

#[test]
fn zero_epochs_returns_initialization() {
    let cfg = tiny_cfg(0, 4);
    let ckpt = pretrain(&tiny_data(2), &cfg, &tiny_aug()).unwrap();
    let init = Encoder::new(tiny_encoder(), &mut stream(cfg.seed, &[tag::ENCODER_INIT])).unwrap();
    assert_eq!(ckpt.params, *init.params());
    assert!(ckpt.trace.is_empty());
    assert_eq!(ckpt.epoch, 0);
}

#[derive(Default)]
struct Recorder {
    events: Vec<String>,
    labels: Vec<Vec<usize>>,
    weights: Vec<f64>,
    fc_losses: Vec<f64>,
    epoch_params: Vec<ParamSet>,
}

impl TrainObserver for Recorder {
    fn epoch_started(&mut self, _: u32, weight: f64) {
        self.weights.push(weight);
    }
    fn head_reinit(&mut self, _: u32, _: usize) {
        self.events.push("reinit".into());
    }
    fn bid_pass(&mut self, _: u32, _: usize, _: usize, labels: &InstanceLabels, _: f64) {
        self.events.push("pass".into());
        self.labels.push(labels.as_slice().to_vec());
    }
    fn ce_step(&mut self, _: u32, _: usize, _: &ParamSet) {
        self.events.push("ce".into());
    }
    fn fc_step(&mut self, _: u32, _: usize, _: f64, loss: f64, _: &ParamSet) {
        self.events.push("fc".into());
        self.fc_losses.push(loss);
    }
    fn epoch_finished(&mut self, _: &EpochRecord, params: &ParamSet) {
        self.epoch_params.push(params.clone());
    }
}

#[test]
fn algorithm_structure() {
    let data = tiny_data(3); // 9 samples -> batches of 4, 4, 1
    let cfg = tiny_cfg(1, 4);
    let mut rec = Recorder::default();
    let ckpt = pretrain_observed(&data, &cfg, &tiny_aug(), &mut rec).unwrap();
    let per_batch: Vec<&str> = ["reinit", "pass", "ce", "pass", "ce", "pass", "ce", "fc"].to_vec();
    let expect: Vec<&str> = per_batch.iter().copied().cycle().take(per_batch.len() * 3).collect();
    assert_eq!(rec.events, expect);
    assert_eq!(rec.labels[0], vec![0, 1, 2, 3]);
    assert_eq!(rec.labels[8], vec![0]);
    assert_eq!(rec.weights, vec![0.0]);
    assert!(rec.fc_losses.iter().all(|&l| l == 0.0));
    let r = ckpt.trace[0];
    assert!(r.mean_ce.is_finite() && r.mean_ce > 0.0);
    assert_eq!((r.mean_dwv, r.weight), (0.0, 0.0));

    let agg = PretrainConfig {
        bid: BidConfig {
            ce_step_mode: CeStepMode::Aggregated,
            ..cfg.bid.clone()
        },
        ..cfg
    };
    let mut rec = Recorder::default();
    pretrain_observed(&data, &agg, &tiny_aug(), &mut rec).unwrap();
    assert_eq!(&rec.events[..6], ["reinit", "pass", "pass", "pass", "ce", "fc"]);
}

#[test]
fn zero_weight_fc_step_is_a_no_op() {
    #[derive(Default)]
    struct Steps {
        after_ce: Vec<ParamSet>,
        after_fc: Vec<(f64, ParamSet)>,
    }
    impl TrainObserver for Steps {
        fn ce_step(&mut self, _: u32, _: usize, params: &ParamSet) {
            self.after_ce.push(params.clone());
        }
        fn fc_step(&mut self, _: u32, _: usize, weight: f64, _: f64, params: &ParamSet) {
            self.after_fc.push((weight, params.clone()));
        }
    }
    let mut obs = Steps::default();
    pretrain_observed(&tiny_data(2), &tiny_cfg(3, 6), &tiny_aug(), &mut obs).unwrap();
    let k = 3;
    assert_eq!(obs.after_fc.len(), 3);
    // epoch 0 (weight 0): the FC step leaves the weights where the last CE step put them
    assert_eq!(obs.after_fc[0].0, 0.0);
    assert_eq!(obs.after_fc[0].1, obs.after_ce[k - 1]);
    assert_eq!(obs.after_fc[1].0, 0.0);
    assert_eq!(obs.after_fc[1].1, obs.after_ce[2 * k - 1]);
    // epoch 2 (weight 0.5): it moves them
    assert_eq!(obs.after_fc[2].0, 0.5);
    assert_ne!(obs.after_fc[2].1, obs.after_ce[3 * k - 1]);
}

#[test]
fn labels_move_between_epochs() {
    #[derive(Default)]
    struct Bindings(Vec<Vec<usize>>);
    impl TrainObserver for Bindings {
        fn epoch_started(&mut self, _: u32, _: f64) {
            self.0.push(vec![usize::MAX; 10]);
        }
        fn batch_started(&mut self, _: u32, _: usize, members: &[usize]) {
            let epoch = self.0.last_mut().unwrap();
            for (label, &i) in members.iter().enumerate() {
                epoch[i] = label;
            }
        }
    }
    let data = tiny_data(4);
    let data = data.subset(&(0..10).collect::<Vec<_>>());
    let mut obs = Bindings::default();
    pretrain_observed(&data, &tiny_cfg(2, 4), &tiny_aug(), &mut obs).unwrap();
    assert!(obs.0.iter().all(|e| e.iter().all(|&l| l < 4)));
    assert_ne!(obs.0[0], obs.0[1]);
}

#[test]
fn literal_ema_with_unit_momentum_freezes_weights() {
    let cfg = PretrainConfig {
        momentum: 1.0,
        ema_mode: EmaMode::Literal,
        ..tiny_cfg(2, 4)
    };
    let mut rec = Recorder::default();
    let ckpt = pretrain_observed(&tiny_data(2), &cfg, &tiny_aug(), &mut rec).unwrap();
    let init = Encoder::new(tiny_encoder(), &mut stream(cfg.seed, &[tag::ENCODER_INIT])).unwrap();
    assert_eq!(ckpt.params, *init.params());
    assert!(ckpt.ema.is_none());
}

#[test]
fn shadow_mode_keeps_live_and_average() {
    let cfg = tiny_cfg(2, 4);
    let ckpt = pretrain(&tiny_data(2), &cfg, &tiny_aug()).unwrap();
    let shadow = ckpt.ema.as_ref().unwrap();
    assert_ne!(*shadow, ckpt.params);
    assert_eq!(ckpt.eval_params(), shadow);
    assert_eq!(ckpt.trace.len(), 2);
}

#[test]
fn runs_are_deterministic() {
    let cfg = tiny_cfg(3, 4);
    let data = tiny_data(2);
    let a = pretrain(&data, &cfg, &tiny_aug()).unwrap();
    let b = pretrain(&data, &cfg, &tiny_aug()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params.digest(), b.params.digest());
    let c = pretrain(&data, &PretrainConfig { seed: 11, ..cfg }, &tiny_aug()).unwrap();
    assert_ne!(a.trace, c.trace);
    assert!(a.trace[2].weight > 0.0 && a.trace[2].mean_dwv > 0.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_cfg(2, 4);
    let ckpt = pretrain(&tiny_data(2), &cfg, &tiny_aug()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.digest(), ckpt.digest());
    let trace_path = dir.path().join("trace.csv");
    write_trace_csv(&trace_path, &ckpt.trace).unwrap();
    assert_eq!(read_trace_csv(&trace_path).unwrap(), ckpt.trace);
    let text = std::fs::read_to_string(&trace_path).unwrap();
    assert!(text.starts_with("epoch,mean_ce,mean_dwv,weight\n"));
    assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn rejects_bad_setup() {
    let data = tiny_data(1);
    assert!(matches!(pretrain(&data.subset(&[]), &tiny_cfg(1, 4), &tiny_aug()), Err(Error::Input(_))));
    assert!(matches!(pretrain(&data, &tiny_cfg(1, 4), &AugmentConfig::default()), Err(Error::Config(_))));
    let bad = PretrainConfig { momentum: 2.0, ..tiny_cfg(1, 4) };
    assert!(matches!(pretrain(&data, &bad, &tiny_aug()), Err(Error::Config(_))));
}

#[test]
fn divergence_aborts_with_location() {
    let mut aug = tiny_aug();
    aug.enabled = [TransformKind::CropResize].into_iter().collect();
    let cfg = PretrainConfig {
        lr: Some(1e30),
        bid: BidConfig {
            temperature: 1e-30,
            ..tiny_cfg(1, 4).bid
        },
        ..tiny_cfg(3, 4)
    };
    match pretrain(&tiny_data(2), &cfg, &aug) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        other => panic!("expected numeric abort, got {other:?}"),
    }
}
