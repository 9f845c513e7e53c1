//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng as _;
use sar_wcl::augment::{AugmentConfig, ImageGrid};
use sar_wcl::clustering::{dwv_loss, linear_schedule, DimReduce, DwvOptions, EmbeddingBatch, ScheduleConfig};
use sar_wcl::data::{
    few_shot_split, inject_label_noise, perturb_dataset, proportional_split, synth_generate, Dataset, PerturbKind,
    Sample, SynthConfig,
};
use sar_wcl::discrimination::{
    entropy, instance_cross_entropy, tempered_softmax, BidConfig, CeStepMode, ClassifierHead, InstanceLabels,
};
use sar_wcl::eval::{linear_evaluate, ClassifierRegistry, EvalSettings};
use sar_wcl::matrix::Matrix;
use sar_wcl::nn::{Encoder, EncoderConfig, Param, ParamSet};
use sar_wcl::rng::{seeded, stream, tag};
use sar_wcl::trainer::{
    ema_blend, ema_update, pretrain, pretrain_observed, Checkpoint, EpochRecord, PretrainConfig, Profile, TrainObserver,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Desk-profile runs shared between criteria 7-10.
#[derive(Default)]
struct Runs {
    desk: HashMap<u64, DeskRun>,
}

struct DeskRun {
    ckpt: Checkpoint,
    train: Dataset,
    test: Dataset,
}

fn desk_config(seed: u64) -> PretrainConfig {
    PretrainConfig {
        seed,
        ..PretrainConfig::for_profile(Profile::Desk)
    }
}

fn desk_data(seed: u64) -> Dataset {
    synth_generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
    .expect("synthetic data")
}

impl Runs {
    fn desk(&mut self, seed: u64) -> &DeskRun {
        self.desk.entry(seed).or_insert_with(|| {
            let data = desk_data(seed);
            let t = Instant::now();
            let ckpt = pretrain(&data, &desk_config(seed), &AugmentConfig::default()).expect("desk pretraining");
            println!("    (desk pretraining, seed {seed}: {:.0}s)", t.elapsed().as_secs_f64());
            let (train, test) = few_shot_split(&data, 3, seed).expect("3-shot split");
            DeskRun { ckpt, train, test }
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let diff: Vec<f64> = fd.iter().zip(an).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(fd).max(norm(an)).max(1e-12)
}

/// Central differences of `f` at `x`, step `h`.
fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn criterion_1(_: &mut Runs) -> Outcome {
    let t = Instant::now();
    let h = 1e-4;
    let mut rng = seeded(101);
    let mut worst = 0.0f64;
    let (mut ce_cases, mut dwv_cases) = (0, 0);
    for case in 0..20 {
        let n = rng.gen_range(1..=5);
        let d = rng.gen_range(1..=8);
        let temp = rng.gen_range(0.5..2.5);
        let head = ClassifierHead::new(n, d, &mut rng);
        let emb: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let labels = InstanceLabels::from_vec((0..n).collect());
        let ce = |e: &[f64], w: &[f64]| {
            let head = ClassifierHead::from_weights(Matrix::from_vec(n, d, w.to_vec()).unwrap());
            instance_cross_entropy(&Matrix::from_vec(n, d, e.to_vec()).unwrap(), &head, &labels, temp).unwrap()
        };
        let w = head.weights().as_slice().to_vec();
        let an = ce(&emb, &w);
        let fd_e = numeric_grad(&emb, h, |e| ce(e, &w).loss);
        let fd_w = numeric_grad(&w, h, |w| ce(&emb, w).loss);
        worst = worst.max(rel_err(&fd_e, an.grad_embeddings.as_slice()));
        worst = worst.max(rel_err(&fd_w, an.grad_weights.as_slice()));
        ce_cases += 1;

        let k = rng.gen_range(2..=4);
        let weight = rng.gen_range(0.1..1.0);
        let opts = DwvOptions {
            dim_reduce: if case % 2 == 0 { DimReduce::Mean } else { DimReduce::Sum },
            stop_mean_gradient: case % 4 >= 2,
        };
        let z: Vec<f64> = (0..n * k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dwv = |z: &[f64]| dwv_loss(&EmbeddingBatch::from_vec(n, k, d, z.to_vec()).unwrap(), weight, opts).unwrap();
        let fd = numeric_grad(&z, h, |z| dwv(z).loss);
        worst = worst.max(rel_err(&fd, dwv(&z).grad.as_slice()));
        dwv_cases += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs < 10.0 && ce_cases >= 20 && dwv_cases >= 20,
        format!("{ce_cases} CE + {dwv_cases} DWV instances, worst relative error {worst:.2e}, {secs:.2}s"),
    )
}

fn criterion_2(_: &mut Runs) -> Outcome {
    let cfg = ScheduleConfig {
        t1: 30,
        t2: 150,
        alpha_f: 1.0,
    };
    let ts = [0, 29, 30, 90, 149, 150, 250];
    let want = [0.0, 0.0, 0.0, 0.5, 119.0 / 120.0, 1.0, 1.0];
    let got: Vec<f64> = ts.iter().map(|&t| linear_schedule(t, &cfg).unwrap()).collect();
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-12);
    outcome(ok, format!("weights {got:?}"))
}

fn criterion_3(_: &mut Runs) -> Outcome {
    let mut rng = seeded(103);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let prev: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let curr: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = rng.gen_range(0.0..1.0);
        let got = ema_blend(&prev, &curr, m).unwrap();
        for ((g, p), c) in got.iter().zip(&prev).zip(&curr) {
            worst = worst.max((g - (m * p + (1.0 - m) * c)).abs());
        }
    }
    let set = |vals: Vec<f32>| {
        let mut s = ParamSet::default();
        s.push(Param::new("w", vec![vals.len()], vals));
        s
    };
    let prev = set((0..64).map(|i| (i as f32 * 0.37).sin()).collect());
    let curr = set((0..64).map(|i| (i as f32 * 0.11).cos() * 1e3).collect());
    let m0 = ema_update(&prev, &curr, 0.0).unwrap() == curr;
    let m1 = ema_update(&prev, &curr, 1.0).unwrap() == prev;
    outcome(
        worst <= 1e-12 && m0 && m1,
        format!("max deviation {worst:.1e}; m=0 bit-exact {m0}; m=1 bit-exact {m1}"),
    )
}

fn flat_dataset(counts: &[usize]) -> Dataset {
    let mut items = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for i in 0..n {
            items.push(Sample::new(ImageGrid::filled(2, 2, 0.5), c, format!("c{c}/{i}")));
        }
    }
    Dataset::new(items, (0..counts.len()).map(|c| format!("class{c}")).collect()).unwrap()
}

fn criterion_4(_: &mut Runs) -> Outcome {
    let (small, rest) = proportional_split(&flat_dataset(&[233]), 32, 10).unwrap();
    let noisy = inject_label_noise(&flat_dataset(&[7, 7]), 0.3, 10).unwrap();
    let relabeled_c0 = noisy.items().iter().filter(|s| s.original_label == Some(0)).count();
    let changed = noisy.items().iter().all(|s| s.original_label.map_or(true, |o| o != s.label));
    outcome(
        small.len() == 7 && rest.len() == 226 && relabeled_c0 == 2 && changed,
        format!("1:32 of 233 selects {}; ratio 0.3 of 7 relabels {relabeled_c0}", small.len()),
    )
}

fn criterion_5(_: &mut Runs) -> Outcome {
    let mut rng = seeded(105);
    let temps = [0.5, 1.0, 1.5, 2.0];
    let mut ok = true;
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let probs: Vec<Vec<f64>> = temps.iter().map(|&t| tempered_softmax(&logits, t).unwrap()).collect();
        let h: Vec<f64> = probs.iter().map(|p| entropy(p)).collect();
        let am: Vec<usize> = probs
            .iter()
            .map(|p| (0..n).fold(0, |b, i| if p[i] > p[b] { i } else { b }))
            .collect();
        ok &= h.windows(2).all(|w| w[1] > w[0]) && am.iter().all(|&a| a == am[0]);
    }
    outcome(ok, "50 random logit vectors, T in {0.5, 1, 1.5, 2}")
}

#[derive(Debug, Clone, PartialEq)]
enum Event {
    Epoch(u32, f64),
    Batch(usize),
    Reinit,
    Pass(Vec<usize>),
    Ce,
    Fc(f64),
}

#[derive(Default)]
struct Recorder(Vec<Event>);

impl TrainObserver for Recorder {
    fn epoch_started(&mut self, epoch: u32, weight: f64) {
        self.0.push(Event::Epoch(epoch, weight));
    }
    fn batch_started(&mut self, _: u32, _: usize, members: &[usize]) {
        self.0.push(Event::Batch(members.len()));
    }
    fn head_reinit(&mut self, _: u32, _: usize) {
        self.0.push(Event::Reinit);
    }
    fn bid_pass(&mut self, _: u32, _: usize, _: usize, labels: &InstanceLabels, _: f64) {
        self.0.push(Event::Pass(labels.as_slice().to_vec()));
    }
    fn ce_step(&mut self, _: u32, _: usize, _: &ParamSet) {
        self.0.push(Event::Ce);
    }
    fn fc_step(&mut self, _: u32, _: usize, weight: f64, _: f64, _: &ParamSet) {
        self.0.push(Event::Fc(weight));
    }
}

/// Check one batch's events: reinit, K passes (with CE steps), one FC step.
fn batch_ok(events: &[Event], n: usize, k: usize, mode: CeStepMode, weight: f64) -> bool {
    let labels: Vec<usize> = (0..n).collect();
    let mut want = vec![Event::Reinit];
    for _ in 0..k {
        want.push(Event::Pass(labels.clone()));
        if mode == CeStepMode::PerPass {
            want.push(Event::Ce);
        }
    }
    if mode == CeStepMode::Aggregated {
        want.push(Event::Ce);
    }
    want.push(Event::Fc(weight));
    events == want.as_slice()
}

fn criterion_6(_: &mut Runs) -> Outcome {
    let data = synth_generate(&SynthConfig {
        num_classes: 3,
        samples_per_class: 5,
        image_size: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let (k, batch, epochs) = (3, 4, 5);
    let mut details = Vec::new();
    let mut ok = true;
    for mode in [CeStepMode::PerPass, CeStepMode::Aggregated] {
        let cfg = PretrainConfig {
            bid: BidConfig {
                k,
                temperature: 2.0,
                batch_size: batch,
                ce_step_mode: mode,
            },
            schedule: ScheduleConfig {
                t1: 2,
                t2: 4,
                alpha_f: 1.0,
            },
            epochs,
            lr: Some(1e-2),
            encoder: EncoderConfig {
                input_size: 16,
                stem_kernel: 2,
                stem_stride: 2,
                stem_padding: 0,
                stem_width: 4,
                widths: vec![4, 8],
                blocks: vec![1, 1],
                groups: 2,
            },
            ..PretrainConfig::for_profile(Profile::Desk)
        };
        let mut rec = Recorder::default();
        pretrain_observed(&data, &cfg, &AugmentConfig::none(16), &mut rec).unwrap();
        let ev = rec.0;
        let mut batches = 0;
        let mut i = 0;
        while i < ev.len() {
            match &ev[i] {
                Event::Epoch(e, w) => {
                    let expect = linear_schedule(*e, &cfg.schedule).unwrap();
                    ok &= *w == expect && (*e >= cfg.schedule.t1 || *w == 0.0);
                    let weight = *w;
                    i += 1;
                    while i < ev.len() && !matches!(ev[i], Event::Epoch(..)) {
                        let Event::Batch(n) = ev[i] else {
                            ok = false;
                            break;
                        };
                        let end = ev[i + 1..]
                            .iter()
                            .position(|x| matches!(x, Event::Batch(_) | Event::Epoch(..)))
                            .map_or(ev.len(), |p| i + 1 + p);
                        ok &= batch_ok(&ev[i + 1..end], n, k, mode, weight);
                        batches += 1;
                        i = end;
                    }
                }
                _ => {
                    ok = false;
                    i += 1;
                }
            }
        }
        let expected_batches = epochs as usize * data.len().div_ceil(batch);
        ok &= batches == expected_batches;
        details.push(format!("{mode:?}: {batches} batches checked"));
    }
    outcome(ok, details.join("; "))
}

fn random_init_checkpoint(seed: u64) -> Checkpoint {
    let cfg = desk_config(seed);
    let enc = Encoder::new(cfg.encoder.clone(), &mut stream(seed, &[tag::ENCODER_INIT])).unwrap();
    Checkpoint::from_encoder(&enc, cfg, AugmentConfig::default())
}

fn logistic_settings(seed: u64) -> EvalSettings {
    EvalSettings {
        classifier: "logistic_regression".into(),
        seed,
        ..EvalSettings::for_profile(Profile::Desk)
    }
}

fn criterion_7(runs: &mut Runs) -> Outcome {
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let run = runs.desk(seed);
        let s = logistic_settings(seed);
        let trained = linear_evaluate(&run.ckpt, &run.train, &run.test, &s).unwrap().overall_accuracy;
        let random = linear_evaluate(&random_init_checkpoint(seed), &run.train, &run.test, &s)
            .unwrap()
            .overall_accuracy;
        gaps.push(trained - random);
        lines.push(format!("seed {seed}: {:.1}% vs {:.1}%", 100.0 * trained, 100.0 * random));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    outcome(mean >= 0.15, format!("mean gap {:.1} points ({})", 100.0 * mean, lines.join(", ")))
}

fn criterion_8(runs: &mut Runs) -> Outcome {
    let run = runs.desk(0);
    let s = logistic_settings(0);
    let accs: Vec<f64> = [0.1, 0.2, 0.3, 0.4, 0.5]
        .iter()
        .map(|&level| {
            let train = perturb_dataset(&run.train, PerturbKind::Noise, level, 0).unwrap();
            let test = perturb_dataset(&run.test, PerturbKind::Noise, level, 1).unwrap();
            linear_evaluate(&run.ckpt, &train, &test, &s).unwrap().overall_accuracy
        })
        .collect();
    let ok = accs.windows(2).all(|w| w[1] <= w[0] + 0.03);
    let shown: Vec<String> = accs.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    outcome(ok, format!("accuracy at noise 0.1..0.5: {}", shown.join(", ")))
}

fn criterion_9(runs: &mut Runs) -> Outcome {
    let first: Vec<EpochRecord> = runs.desk(0).ckpt.trace.clone();
    let again = pretrain(&desk_data(0), &desk_config(0), &AugmentConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in first.iter().zip(&again.trace) {
        worst = worst.max((a.mean_ce - b.mean_ce).abs()).max((a.mean_dwv - b.mean_dwv).abs());
        worst = worst.max((a.weight - b.weight).abs());
    }
    let same_len = first.len() == again.trace.len() && first.len() == 60;
    let same_weights = runs.desk(0).ckpt.digest() == again.digest();
    outcome(
        same_len && worst <= 1e-6,
        format!("{} epochs, max trace difference {worst:.1e}, identical weights {same_weights}", first.len()),
    )
}

fn criterion_10(runs: &mut Runs) -> Outcome {
    let run = runs.desk(0);
    let before = run.ckpt.digest();
    let params_before = run.ckpt.eval_params().clone();
    let mut ok = true;
    for id in ClassifierRegistry::BUILT_IN {
        let s = EvalSettings {
            classifier: id.into(),
            ..logistic_settings(0)
        };
        linear_evaluate(&run.ckpt, &run.train, &run.test, &s).unwrap();
        ok &= run.ckpt.digest() == before && run.ckpt.eval_params() == &params_before;
    }
    outcome(ok, format!("digest {}... after {}", &before[..12], ClassifierRegistry::BUILT_IN.join(", ")))
}

fn main() {
    let criteria: [(&str, fn(&mut Runs) -> Outcome); 10] = [
        ("finite-difference gradients", criterion_1),
        ("DWV weight schedule", criterion_2),
        ("EMA update", criterion_3),
        ("split and label-noise counts", criterion_4),
        ("temperature entropy", criterion_5),
        ("training loop structure", criterion_6),
        ("BIDFC beats random init (3-shot, desk)", criterion_7),
        ("accuracy under rising noise", criterion_8),
        ("run determinism", criterion_9),
        ("linear evaluation leaves backbone frozen", criterion_10),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut runs = Runs::default();
    let (mut failed, mut ran) = (0, 0);
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let o = check(&mut runs);
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} - {} [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
