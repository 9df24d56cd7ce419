use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, Luma};
use mvss_core::data::generate::{write_dataset, GenerateConfig, SplitSpec};
use mvss_core::data::manifest::{ingest_all, DatasetManifest, IngestOptions};
use mvss_core::data::perturb::parse_levels;
use mvss_core::data::Sample;
use mvss_core::metrics::{curve_to_csv, robustness_sweep, EvalOptions, PixelAggregation};
use mvss_core::model::{ImageTensor, Model};
use mvss_core::trainer::{validate, Checkpoint, TrainConfig, TrainEvent, Trainer};
use mvss_core::Error;
use rayon::prelude::*;

use crate::{EvalArgs, GenDataArgs, InferArgs, RobustnessArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    /// Exit status 2.
    Config(String),
    /// Exit status 1.
    Failed(String),
}

impl CliError {
    fn config(e: impl ToString) -> Self {
        Self::Config(e.to_string())
    }

    fn failed(e: impl ToString) -> Self {
        Self::Failed(e.to_string())
    }
}

/// Number of failed items, or a fatal error.
pub type Outcome = Result<usize, CliError>;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    Checkpoint::load(path)
        .and_then(|c| c.model())
        .map_err(CliError::config)
}

/// Loads the manifest restricted to `split`; entries that fail are reported
/// on stderr and counted.
fn load_samples(
    manifest: &DatasetManifest,
    split: Option<&str>,
    size: usize,
) -> (Vec<Sample>, usize) {
    let manifest = match split {
        Some(s) => manifest.filter_split(s),
        None => manifest.clone(),
    };
    let options = IngestOptions {
        target_size: Some(size as u32),
        shuffle_seed: None,
    };
    let mut samples = Vec::with_capacity(manifest.len());
    let mut failures = 0;
    for item in ingest_all(&manifest, &options) {
        match item {
            Ok(s) => samples.push(s),
            Err(e) => {
                eprintln!("mvss: skipping {e}");
                failures += 1;
            }
        }
    }
    (samples, failures)
}

fn parse_split(spec: &str) -> Result<SplitSpec, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::Config(format!("split {spec:?} is not NAME:FORGED:AUTHENTIC"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let forged = parts[1].parse().map_err(|_| bad())?;
    let authentic = parts[2].parse().map_err(|_| bad())?;
    Ok(SplitSpec::new(parts[0], forged, authentic))
}

pub fn gen_data(args: GenDataArgs) -> Outcome {
    let mut config = match &args.config {
        Some(p) => GenerateConfig::load(p).map_err(CliError::config)?,
        None => GenerateConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(size) = args.size {
        config.size = size;
    }
    if !args.splits.is_empty() {
        config.splits = args.splits.iter().map(|s| parse_split(s)).collect::<Result<_, _>>()?;
    }
    config.validate().map_err(CliError::config)?;
    create_dir(&args.out)?;
    let manifest = write_dataset(&config, &args.out).map_err(CliError::failed)?;
    println!(
        "wrote {} samples to {}",
        manifest.len(),
        args.out.join("manifest.txt").display()
    );
    Ok(0)
}

pub fn train(args: TrainArgs) -> Outcome {
    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p).map_err(CliError::config)?),
        None => None,
    };
    let mut config = match (&resume, &args.config) {
        (Some(c), None) => c.config.clone(),
        (_, Some(p)) => TrainConfig::load(p).map_err(CliError::config)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.model.seed = seed;
    }
    if let Some(steps) = args.max_steps {
        config.max_steps = steps;
    }
    config.validate().map_err(CliError::config)?;
    let manifest = DatasetManifest::load(&args.manifest).map_err(CliError::config)?;
    let size = config.model.input_size;
    let (train_set, mut failures) = load_samples(&manifest, Some(&args.train_split), size);
    if train_set.is_empty() {
        return Err(CliError::Config(format!(
            "no usable {:?} entries in {}",
            args.train_split,
            args.manifest.display()
        )));
    }
    let (val_set, val_failures) = load_samples(&manifest, Some(&args.val_split), size);
    failures += val_failures;
    let val = (!val_set.is_empty()).then_some(val_set.as_slice());

    create_dir(&args.out)?;
    write_file(&args.out.join("config.toml"), &config.to_toml())?;
    let mut trainer = match &resume {
        Some(ckpt) => {
            let mut ckpt = ckpt.clone();
            ckpt.config.max_steps = config.max_steps;
            Trainer::resume(&ckpt, &train_set, val)
        }
        None => Trainer::new(config.clone(), &train_set, val),
    }
    .map_err(CliError::config)?;

    let log_path = args.out.join("train.log");
    let log_file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| CliError::Failed(format!("{}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log_file);
    let best_path = args.out.join("best.ckpt");
    let last_path = args.out.join("last.ckpt");

    let mut observer = |event: TrainEvent<'_>| -> mvss_core::Result<()> {
        if let Some(line) = event.log_line() {
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        }
        match event {
            TrainEvent::NewBest(ckpt) => ckpt.save(&best_path)?,
            TrainEvent::Validation { step, report, .. } => println!("step {step}: {}", report.summary()),
            TrainEvent::Step(r) if r.step % 50 == 0 => {
                println!("step {} loss {:.5} lr {:.2e}", r.step, r.loss, r.lr)
            }
            _ => {}
        }
        Ok(())
    };

    let max_steps = config.max_steps;
    if args.checkpoint_every > 0 {
        while trainer.steps_done() < max_steps {
            let next = (trainer.steps_done() / args.checkpoint_every + 1) * args.checkpoint_every;
            trainer
                .run_until(next.min(max_steps), &mut observer)
                .map_err(CliError::failed)?;
            trainer.checkpoint().save(&last_path).map_err(CliError::failed)?;
        }
    }
    let outcome = trainer.run(&mut observer).map_err(CliError::failed)?;
    drop(observer);
    log.flush().map_err(|e| CliError::Failed(e.to_string()))?;
    outcome.last.save(&last_path).map_err(CliError::failed)?;
    if let Some(report) = &outcome.final_train_report {
        write_file(&args.out.join("train_report.csv"), &report.to_csv(&args.train_split))?;
        println!("final training set: {}", report.summary());
    }
    if let Some(report) = &outcome.final_val_report {
        write_file(&args.out.join("val_report.csv"), &report.to_csv(&args.val_split))?;
    }
    println!("wrote {}", last_path.display());
    Ok(failures)
}

/// Output file names for `path`, made unique against names already used.
fn output_stem(path: &Path, used: &mut HashSet<String>) -> String {
    let base = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    let mut stem = base.clone();
    let mut n = 1;
    while !used.insert(stem.clone()) {
        stem = format!("{base}-{n}");
        n += 1;
    }
    stem
}

struct InferRecord {
    path: PathBuf,
    result: Result<(f64, bool), String>,
}

fn infer_one(model: &Model, path: &Path, stem: &str, out: &Path, threshold: f64) -> Result<(f64, bool), String> {
    let size = model.config().input_size as u32;
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = img.dimensions();
    let resized = image::imageops::resize(&img, size, size, FilterType::Triangle);
    let x = ImageTensor::from_images([&resized]).map_err(|e| e.to_string())?;
    let pred = model.predict(&x).map_err(|e| e.to_string())?;
    let prob = mvss_tensor::resize_bilinear(&pred.seg_map, h as usize, w as usize);
    let p = prob.data();
    let prob_png = GrayImage::from_fn(w, h, |x, y| {
        let v = p[(y * w + x) as usize];
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let mask_png = GrayImage::from_fn(w, h, |x, y| {
        Luma([if p[(y * w + x) as usize] > threshold { 255 } else { 0 }])
    });
    for (img, suffix) in [(prob_png, "prob"), (mask_png, "mask")] {
        let target = out.join(format!("{stem}.{suffix}.png"));
        img.save(&target).map_err(|e| format!("{}: {e}", target.display()))?;
    }
    let score = pred.image_score[0];
    Ok((score, score > threshold))
}

pub fn infer(args: InferArgs) -> Outcome {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::Config(format!("threshold must be in [0,1], got {}", args.threshold)));
    }
    let model = load_model(&args.checkpoint)?;
    create_dir(&args.out)?;
    let mut used = HashSet::new();
    let jobs: Vec<(PathBuf, String)> = args
        .images
        .iter()
        .map(|p| (p.clone(), output_stem(p, &mut used)))
        .collect();
    let records: Vec<InferRecord> = jobs
        .par_iter()
        .map(|(path, stem)| InferRecord {
            path: path.clone(),
            result: infer_one(&model, path, stem, &args.out, args.threshold),
        })
        .collect();
    let mut lines = String::from("path,image_score,decision,error\n");
    let mut failures = 0;
    for r in &records {
        let path = r.path.display().to_string().replace(',', ";");
        match &r.result {
            Ok((score, decision)) => {
                lines.push_str(&format!("{path},{score},{},\n", u8::from(*decision)));
                println!("{path} score={score:.4} decision={}", u8::from(*decision));
            }
            Err(msg) => {
                failures += 1;
                eprintln!("mvss: {path}: {msg}");
                lines.push_str(&format!("{path},,,{}\n", msg.replace([',', '\n'], ";")));
            }
        }
    }
    write_file(&args.out.join("records.csv"), &lines)?;
    Ok(failures)
}

pub fn eval(args: EvalArgs) -> Outcome {
    let options = EvalOptions {
        mode: args.mode,
        threshold: args.threshold,
        aggregation: if args.per_image {
            PixelAggregation::PerImage
        } else {
            PixelAggregation::Pooled
        },
        ..EvalOptions::default()
    };
    options.validate().map_err(CliError::config)?;
    if args.batch_size == 0 {
        return Err(CliError::Config("batch size must be positive".into()));
    }
    let model = load_model(&args.checkpoint)?;
    let mut manifest = DatasetManifest::load(&args.manifest).map_err(CliError::config)?;
    if let Some(kind) = &args.kind {
        manifest = manifest.filter_kind(kind, true);
    }
    let (samples, failures) = load_samples(&manifest, args.split.as_deref(), model.config().input_size);
    let report = validate(&model, &samples, &options, args.batch_size).map_err(CliError::failed)?;
    let testset = args.split.as_deref().unwrap_or("all");
    create_dir(&args.out)?;
    write_file(&args.out.join("report.csv"), &report.to_csv(testset))?;
    println!("{testset}: {}", report.summary());
    Ok(failures)
}

pub fn robustness(args: RobustnessArgs) -> Outcome {
    let (kind, levels) = parse_levels(&args.levels).map_err(CliError::config)?;
    if args.batch_size == 0 {
        return Err(CliError::Config("batch size must be positive".into()));
    }
    let model = load_model(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest).map_err(CliError::config)?;
    let (samples, failures) = load_samples(&manifest, args.split.as_deref(), model.config().input_size);
    let curve = robustness_sweep(&model, &samples, &levels, args.batch_size).map_err(CliError::failed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join(format!("robustness_{kind}.csv")), &curve_to_csv(&curve))?;
    for p in &curve {
        println!("{kind} {} pixel_f1={:.4}", p.level, p.value);
    }
    Ok(failures)
}
