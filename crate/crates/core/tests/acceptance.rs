//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Numeric arguments restrict the run to those
//! criteria, e.g. `cargo test --test acceptance -- 1 5`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mvss_core::data::generate::{generate_samples, write_dataset, GenerateConfig, SplitSpec};
use mvss_core::data::manifest::{ingest_all, DatasetManifest, IngestOptions};
use mvss_core::data::perturb::parse_levels;
use mvss_core::data::{make_batch, Sample};
use mvss_core::losses::{clf_loss, clf_per_sample, combined_loss, dice_loss, dice_per_sample, BatchLabels, LossWeights};
use mvss_core::metrics::{
    auc, com_f1, curve_to_csv, image_metrics, pixel_f1, robustness_sweep, score_samples, EvalOptions,
    PixelAggregation, ScoredSample,
};
use mvss_core::model::bayar::BAYAR_KERNEL;
use mvss_core::model::{ImageTensor, Model, ModelConfig};
use mvss_core::trainer::{validate, Checkpoint, TrainConfig, Trainer};
use mvss_tensor::check::{central_difference, relative_error};
use mvss_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        backbone_stage_channels: [8, 8, 16, 16],
        erb_channels: 4,
        da_reduced_channels: 4,
        input_size: 32,
        norm_groups: 2,
        seed,
    }
}

fn synthetic(size: u32, seed: u64, splits: Vec<SplitSpec>) -> Vec<(String, Sample)> {
    let cfg = GenerateConfig {
        size,
        seed,
        splits,
        ..GenerateConfig::default()
    };
    generate_samples(&cfg)
        .expect("generation succeeds")
        .into_iter()
        .map(|g| (g.split, g.sample))
        .collect()
}

fn split(all: &[(String, Sample)], name: &str) -> Vec<Sample> {
    all.iter().filter(|(s, _)| s == name).map(|(_, x)| x.clone()).collect()
}

fn com_f1_pairs() -> Outcome {
    let start = Instant::now();
    let rows = [
        ("Columbia", 0.638, 0.802, 0.711),
        ("CASIAv1", 0.452, 0.752, 0.565),
        ("COVER", 0.453, 0.244, 0.317),
        ("DEFACTO-12k", 0.137, 0.404, 0.205),
    ];
    let mut detail = Vec::new();
    for (name, p, i, want) in rows {
        let got = com_f1(p, i);
        ensure((got - want).abs() <= 0.001, || format!("{name}: {got:.4} vs {want}"))?;
        detail.push(format!("{name} {got:.3}"));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(detail.join(", "))
}

fn bayar_after_training() -> Outcome {
    let start = Instant::now();
    let data = split(&synthetic(128, 21, vec![SplitSpec::new("train", 12, 4)]), "train");
    let cfg = TrainConfig {
        max_steps: 200,
        final_train_eval: false,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &data, None).map_err(|e| e.to_string())?;
    trainer.run_until(200, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::from_bytes(&trainer.checkpoint().to_bytes()).map_err(|e| e.to_string())?;
    let model = ckpt.model().map_err(|e| e.to_string())?;
    let kernel = model.bayar_kernel();
    let area = BAYAR_KERNEL * BAYAR_KERNEL;
    let centre = area / 2;
    let mut worst: f64 = 0.0;
    for (i, slice) in kernel.data().chunks(area).enumerate() {
        ensure(slice[centre] == -1.0, || format!("slice {i} centre {}", slice[centre]))?;
        let rest: f64 = slice.iter().enumerate().filter(|&(k, _)| k != centre).map(|(_, v)| v).sum();
        worst = worst.max((rest - 1.0).abs());
    }
    ensure(worst <= 1e-5, || format!("non-centre sum off by {worst:e}"))?;
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "{} slices, max |sum-1| = {worst:.1e}, {:.1?}",
        kernel.len() / area,
        start.elapsed()
    ))
}

fn gmp_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models: Vec<Model> = (0..10).map(|s| Model::new(tiny_model(s)).unwrap()).collect();
    for pass in 0..100 {
        let batch = rng.random_range(1..=3);
        let lo: f64 = rng.random_range(0.0..0.5);
        let x = Tensor::from_fn(&[batch, 3, 32, 32], |_| rng.random_range(lo..1.0));
        let pred = models[pass % 10]
            .predict(&ImageTensor::new(x).unwrap())
            .map_err(|e| e.to_string())?;
        for b in 0..batch {
            let max = pred.seg(b).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ensure(pred.image_score[b] == max, || {
                format!("pass {pass}, sample {b}: score {} max {max}", pred.image_score[b])
            })?;
        }
    }
    Ok("100 passes, score == max(seg) bit-exactly".into())
}

const PROBES: usize = 20;
const GRAD_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = [0.0f64; 4];

    // dice
    for _ in 0..PROBES {
        let n = rng.random_range(4..=64);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.4)))).collect();
        y[0] = 1.0;
        let tape = Tape::new();
        let pred = tape.leaf(Tensor::new(&[1, n], p.clone()));
        let loss = dice_per_sample(pred, &Tensor::new(&[1, n], y.clone()), &[true]).sum();
        let g = tape.backward(loss).get_or_zeros(pred);
        let i = rng.random_range(0..n);
        let fd = central_difference(&Tensor::new(&[n], p), i, FD_STEP, |t| dice_loss(t.data(), &y).unwrap());
        worst[0] = worst[0].max(relative_error(g.data()[i], fd, 1e-8));
    }

    // clf
    for _ in 0..PROBES {
        let s = rng.random_range(0.01..0.99);
        let y = u8::from(rng.random_bool(0.5));
        let tape = Tape::new();
        let v = tape.leaf(Tensor::new(&[1], vec![s]));
        let g = tape.backward(clf_per_sample(v, &[y]).sum()).get_or_zeros(v).data()[0];
        let fd = central_difference(&Tensor::new(&[1], vec![s]), 0, FD_STEP, |t| clf_loss(t.data()[0], y));
        worst[1] = worst[1].max(relative_error(g, fd, 1e-8));
    }

    // combined, w.r.t. all three prediction inputs
    let masks = Tensor::from_fn(&[3, 1, 8, 8], |i| f64::from(u8::from(i < 128 && (i % 64) % 8 < 4)));
    let edges = Tensor::from_fn(&[3, 1, 2, 2], |i| f64::from(u8::from(i < 8 && i % 2 == 0)));
    let labels = BatchLabels::new(masks, edges).unwrap();
    let inputs = [
        Tensor::from_fn(&[3, 1, 8, 8], |_| rng.random_range(0.05..0.95)),
        Tensor::from_fn(&[3, 1, 2, 2], |_| rng.random_range(0.05..0.95)),
        Tensor::from_fn(&[3], |_| rng.random_range(0.05..0.95)),
    ];
    let eval = |t: &[Tensor]| {
        let tape = Tape::no_grad();
        let v: Vec<_> = t.iter().map(|x| tape.constant(x.clone())).collect();
        combined_loss(v[0], v[1], v[2], &labels, LossWeights::default()).unwrap().value()
    };
    let tape = Tape::new();
    let v: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = combined_loss(v[0], v[1], v[2], &labels, LossWeights::default()).unwrap();
    let grads = tape.backward(loss.total);
    for _ in 0..PROBES {
        let k = rng.random_range(0..3);
        let i = rng.random_range(0..inputs[k].len());
        let fd = central_difference(&inputs[k], i, FD_STEP, |t| {
            let mut all = inputs.clone();
            all[k] = t.clone();
            eval(&all)
        });
        worst[2] = worst[2].max(relative_error(grads.get_or_zeros(v[k]).data()[i], fd, 1e-8));
    }

    // full model on 32×32 inputs
    let model = Model::new(tiny_model(5)).unwrap();
    let x = ImageTensor::new(Tensor::from_fn(&[2, 3, 32, 32], |_| rng.random_range(0.0..1.0))).unwrap();
    let mask = Tensor::from_fn(&[2, 1, 32, 32], |i| f64::from(u8::from(i < 1024 && (i % 32) < 12 && i / 32 < 10)));
    let edge = Tensor::from_fn(&[2, 1, 8, 8], |i| f64::from(u8::from(i < 64 && matches!(i % 8, 2 | 3) && i / 8 < 3)));
    let labels = BatchLabels::new(mask, edge).unwrap();
    let loss_of = |m: &Model| {
        let tape = Tape::no_grad();
        let p = m.params().bind(&tape);
        let out = m.forward(&p, &x).unwrap();
        combined_loss(out.seg_map, out.edge_map, out.image_score, &labels, LossWeights::default())
            .unwrap()
            .value()
    };
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let out = model.forward(&p, &x).unwrap();
    let loss = combined_loss(out.seg_map, out.edge_map, out.image_score, &labels, LossWeights::default()).unwrap();
    let grads = tape.backward(loss.total);
    let ids: Vec<_> = model.params().ids().collect();
    for _ in 0..PROBES {
        let id = ids[rng.random_range(0..ids.len())];
        let i = rng.random_range(0..model.params().get(id).len());
        let analytic = grads.get_or_zeros(p.var(id)).data()[i];
        let fd = central_difference(model.params().get(id), i, FD_STEP, |t| {
            let mut m = model.clone();
            *m.params_mut().get_mut(id) = t.clone();
            loss_of(&m)
        });
        let err = relative_error(analytic, fd, 1e-8);
        ensure(err <= GRAD_TOL, || {
            format!("model {}[{i}]: analytic {analytic:e} vs numeric {fd:e}", model.params().name(id))
        })?;
        worst[3] = worst[3].max(err);
    }
    ensure(worst.iter().all(|&w| w <= GRAD_TOL), || format!("worst relative errors {worst:?}"))?;
    Ok(format!(
        "worst relative error dice {:.1e}, clf {:.1e}, combined {:.1e}, model {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..40u32)) / 39.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure((got - wins / pairs).abs() <= 1e-9, || format!("auc case {case}: {got} vs {}", wins / pairs))?;
    }

    for case in 0..100 {
        let count = rng.random_range(1..=6);
        let t = f64::from(rng.random_range(1..10u32)) / 10.0;
        let mut samples = Vec::new();
        for k in 0..count {
            let len = rng.random_range(1..=16);
            let manipulated = k == 0 || rng.random_bool(0.6);
            let seg: Vec<f64> = (0..len).map(|_| f64::from(rng.random_range(0..=10u32)) / 10.0).collect();
            let mut mask: Vec<u8> = (0..len).map(|_| u8::from(manipulated && rng.random_bool(0.5))).collect();
            if manipulated {
                mask[0] = 1;
            }
            let score = seg.iter().cloned().fold(0.0, f64::max);
            samples.push(ScoredSample::new(seg, score, mask, u8::from(manipulated)).unwrap());
        }
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for s in samples.iter().filter(|s| s.truth_label == 1) {
            for (&p, &m) in s.seg_map.iter().zip(&s.truth_mask) {
                match (p > t, m == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let (tp, fp, fn_) = (f64::from(tp), f64::from(fp), f64::from(fn_));
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        let got = pixel_f1(&samples, t, PixelAggregation::Pooled).map_err(|e| e.to_string())?;
        ensure(got.f1 == f1 && got.precision == precision && got.recall == recall, || {
            format!("pixel case {case}: {got:?} vs ({precision}, {recall}, {f1})")
        })?;

        let pos: Vec<_> = samples.iter().filter(|s| s.truth_label == 1).collect();
        let neg: Vec<_> = samples.iter().filter(|s| s.truth_label == 0).collect();
        let sens = pos.iter().filter(|s| s.image_score > t).count() as f64 / pos.len() as f64;
        let spec = (!neg.is_empty()).then(|| neg.iter().filter(|s| s.image_score <= t).count() as f64 / neg.len() as f64);
        let got = image_metrics(&samples, t);
        ensure(got.sensitivity == Some(sens) && got.specificity == spec, || {
            format!("image case {case}: {got:?} vs ({sens}, {spec:?})")
        })?;
    }
    Ok("100 AUC sets and 100 pixel/image cases agree with the oracles".into())
}

fn authentic_rule() -> Outcome {
    let model = Model::new(tiny_model(12)).unwrap();
    let data = split(&synthetic(32, 6, vec![SplitSpec::new("a", 0, 3)]), "a");
    let (x, labels) = make_batch(&data).map_err(|e| e.to_string())?;
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let out = model.forward(&p, &x).map_err(|e| e.to_string())?;
    let seg = (*out.seg_map.value()).clone();
    let edge = (*out.edge_map.value()).clone();
    let loss = combined_loss(out.seg_map, out.edge_map, out.image_score, &labels, LossWeights::default())
        .map_err(|e| e.to_string())?;
    let grads = tape.backward(loss.total);
    let exclusive = model.edge_exclusive_params();
    for &id in &exclusive {
        ensure(grads.get_or_zeros(p.var(id)).data().iter().all(|&g| g == 0.0), || {
            format!("{} has nonzero gradient", model.params().name(id))
        })?;
    }

    let loss_for = |s: &Tensor| {
        let tape = Tape::no_grad();
        let sv = tape.constant(s.clone());
        combined_loss(sv, tape.constant(edge.clone()), sv.max_per_sample(), &labels, LossWeights::default())
            .unwrap()
            .value()
    };
    let base = loss_for(&seg);
    let per = seg.len() / data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut perturbed = 0;
    for b in 0..data.len() {
        let (argmax, max) = mvss_tensor::first_argmax(seg.outer(b));
        for i in (0..per).filter(|&i| i != argmax) {
            let mut s = seg.clone();
            s.outer_mut(b)[i] = rng.random_range(0.0..max);
            ensure(loss_for(&s) == base, || format!("sample {b} pixel {i} changed the loss"))?;
            perturbed += 1;
        }
    }
    Ok(format!(
        "{} edge-exclusive tensors with zero gradient; {perturbed} non-argmax perturbations left the loss unchanged",
        exclusive.len()
    ))
}

/// Image-level F1 of a set without authentic images: nothing can be a false
/// positive, so precision is 1 and F1 is `2s / (1 + s)`.
fn forged_only_image_f1(sensitivity: Option<f64>) -> f64 {
    sensitivity.map_or(0.0, |s| 2.0 * s / (1.0 + s))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let data = split(&synthetic(128, 31, vec![SplitSpec::new("train", 16, 0)]), "train");
    let cfg = TrainConfig {
        lr_start: 1e-3,
        max_steps: 1000,
        final_train_eval: false,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &data, None).map_err(|e| e.to_string())?;
    let mut last = None;
    while trainer.steps_done() < 1000 {
        trainer
            .run_until(trainer.steps_done() + 100, &mut |_| Ok(()))
            .map_err(|e| e.to_string())?;
        let report = trainer.validate_on(&data).map_err(|e| e.to_string())?;
        let image_f1 = forged_only_image_f1(report.sensitivity);
        let done = report.pixel_f1 >= 0.95 && image_f1 == 1.0;
        last = Some((report.pixel_f1, image_f1));
        if done {
            break;
        }
    }
    let (pixel, image) = last.unwrap();
    let detail = format!(
        "step {}: pixel F1 {pixel:.4}, image F1 {image:.4}, {:.0?}",
        trainer.steps_done(),
        start.elapsed()
    );
    ensure(pixel >= 0.95 && image == 1.0, || detail.clone())?;
    within(start.elapsed(), Duration::from_secs(20 * 60))?;
    Ok(detail)
}

/// Generalisation run shared by the held-out and robustness criteria.
struct HeldOut {
    model: Model,
    test: Vec<Sample>,
    elapsed: Duration,
}

fn held_out_run() -> Result<HeldOut, String> {
    let start = Instant::now();
    let all = synthetic(
        128,
        7,
        vec![SplitSpec::new("train", 2000, 500), SplitSpec::new("test", 500, 500)],
    );
    let train = split(&all, "train");
    let test = split(&all, "test");
    let cfg = TrainConfig {
        lr_start: 1e-3,
        decay_period: 2000,
        max_steps: 3000,
        final_train_eval: false,
        ..TrainConfig::default()
    };
    let outcome = mvss_core::trainer::train(cfg, &train, None).map_err(|e| e.to_string())?;
    Ok(HeldOut {
        model: outcome.last.model().map_err(|e| e.to_string())?,
        test,
        elapsed: start.elapsed(),
    })
}

fn generalization(run: &HeldOut) -> Outcome {
    let report = validate(&run.model, &run.test, &EvalOptions::default(), 8).map_err(|e| e.to_string())?;
    let spec = report.specificity.unwrap_or(0.0);
    let detail = format!(
        "pixel F1 {:.4}, specificity {:.4}, sensitivity {:?}, AUC {:?}, {:.0?}",
        report.pixel_f1, spec, report.sensitivity, report.auc, run.elapsed
    );
    ensure(report.pixel_f1 >= 0.5 && spec >= 0.7, || detail.clone())?;
    within(run.elapsed, Duration::from_secs(2 * 3600))?;
    Ok(detail)
}

fn robustness(run: &HeldOut) -> Outcome {
    let (_, levels) = parse_levels("jpeg:100,90,70,50").map_err(|e| e.to_string())?;
    let curve = robustness_sweep(&run.model, &run.test, &levels, 8).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("robustness_jpeg.csv");
    std::fs::write(&path, curve_to_csv(&curve)).map_err(|e| e.to_string())?;
    let records = std::fs::read_to_string(&path).map_err(|e| e.to_string())?.lines().count();
    let clean = score_samples(&run.model, &run.test, 8).map_err(|e| e.to_string())?;
    let clean = pixel_f1(&clean, 0.5, PixelAggregation::Pooled).map_err(|e| e.to_string())?.f1;
    let values: Vec<String> = curve.iter().map(|p| format!("q{}={:.4}", p.level, p.value)).collect();
    ensure(records == 4, || format!("{records} records"))?;
    ensure((curve[0].value - clean).abs() <= 1e-6, || {
        format!("quality 100 gives {} but unperturbed {clean}", curve[0].value)
    })?;
    Ok(format!("{} (unperturbed {clean:.4})", values.join(" ")))
}

fn determinism() -> Outcome {
    let full_run = || -> Result<(Vec<u8>, String, String), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let gen = GenerateConfig {
            size: 64,
            seed: 5,
            splits: vec![SplitSpec::new("train", 12, 4), SplitSpec::new("val", 4, 4)],
            ..GenerateConfig::default()
        };
        write_dataset(&gen, dir.path()).map_err(|e| e.to_string())?;
        let manifest = DatasetManifest::load(dir.path().join("manifest.txt")).map_err(|e| e.to_string())?;
        let load = |name: &str| -> Result<Vec<Sample>, String> {
            ingest_all(&manifest.filter_split(name), &IngestOptions { target_size: Some(64), shuffle_seed: None })
                .into_iter()
                .map(|r| r.map_err(|e| e.to_string()))
                .collect()
        };
        let (train, val) = (load("train")?, load("val")?);
        let cfg = TrainConfig {
            lr_start: 1e-3,
            max_steps: 20,
            val_every: 10,
            seed: 9,
            augment: Default::default(),
            model: ModelConfig {
                input_size: 64,
                seed: 9,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let outcome = mvss_core::trainer::train(cfg, &train, Some(&val)).map_err(|e| e.to_string())?;
        let val_csv = outcome.final_val_report.ok_or("no validation report")?.to_csv("val");
        let train_csv = outcome.final_train_report.ok_or("no training report")?.to_csv("train");
        Ok((outcome.last.to_bytes(), val_csv, train_csv))
    };
    let a = full_run()?;
    let b = full_run()?;
    ensure(a.0 == b.0, || "checkpoints differ".into())?;
    ensure(a.1 == b.1 && a.2 == b.2, || "metric reports differ".into())?;
    Ok(format!("checkpoints ({} bytes) and reports identical", a.0.len()))
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match &outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {detail}");
            }
        }
    };

    let quick: [(usize, &str, fn() -> Outcome); 7] = [
        (1, "Com-F1 arithmetic", com_f1_pairs),
        (3, "image score is the maximum of the map", gmp_invariant),
        (4, "gradient checks", gradient_checks),
        (5, "metric oracles", metric_oracles),
        (6, "authentic-image rule", authentic_rule),
        (2, "Bayar constraint after training", bayar_after_training),
        (10, "determinism", determinism),
    ];
    for (n, name, f) in quick {
        if selected(n) {
            report(n, name, f());
        }
    }
    if selected(7) {
        report(7, "overfit sanity", overfit());
    }
    if selected(8) || selected(9) {
        match held_out_run() {
            Ok(run) => {
                if selected(8) {
                    report(8, "held-out generalisation", generalization(&run));
                }
                if selected(9) {
                    report(9, "JPEG robustness sweep", robustness(&run));
                }
            }
            Err(e) => {
                for (n, name) in [(8, "held-out generalisation"), (9, "JPEG robustness sweep")] {
                    if selected(n) {
                        report(n, name, Err(format!("training failed: {e}")));
                    }
                }
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
