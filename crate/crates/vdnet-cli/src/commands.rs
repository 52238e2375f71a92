//! Subcommand implementations. Each one validates its flags, writes a
//! `config.json` echo of every effective setting into `--out`, does the
//! work through the library, and prints a short human-readable summary.

use crate::{
    AblateSigmaArgs, EvalArgs, GenDataArgs, MaskArgs, SaliencyArgs, TrainDorsalArgs,
    TrainVentralArgs,
};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use vdnet::boxes::{Detection, GroundTruth};
use vdnet::data::{
    classification_patches, load_dataset, netpbm, write_dataset_jobs, DataConfig, LoadedDataset,
    SceneRecord, Split,
};
use vdnet::dorsal::{
    detect, load_detector, save_detector, train_detector, AnchorConfig, Detector, DetectorSchedule,
};
use vdnet::network::{
    classification_accuracy, classifier_spec, load_checkpoint, save_checkpoint, train_classifier,
    TrainSchedule,
};
use vdnet::rng::SplitMix64;
use vdnet::tensor::Tensor;
use vdnet::ventral::{mask_coverage, ventral_pipeline, VentralConfig};
use vdnet::{eval as metrics, Model};

/// Failures split by exit code: bad flag values (2) versus everything
/// that went wrong while actually running (1).
pub enum CliError {
    Usage(String),
    Runtime(vdnet::Error),
}

impl From<vdnet::Error> for CliError {
    fn from(e: vdnet::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CResult<T> = Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Write the `config.json` echo under `out`, creating the directory.
fn write_echo(out: &Path, echo: &serde_json::Value) -> CResult<()> {
    fs::create_dir_all(out).map_err(|e| vdnet::Error::io(out, e))?;
    write_json(&out.join("config.json"), echo)
}

fn write_json(path: &Path, value: &impl Serialize) -> CResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(vdnet::Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| vdnet::Error::io(path, e).into())
}

/// Run `f` over `0..n` on up to `jobs` threads, preserving index order
/// in the result.
fn par_map<T, F>(n: usize, jobs: usize, f: F) -> vdnet::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> vdnet::Result<T> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs.min(n));
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| -> vdnet::Result<()> {
        let mut handles = Vec::new();
        let f = &f;
        for (c, piece) in out.chunks_mut(chunk).enumerate() {
            handles.push(scope.spawn(move || -> vdnet::Result<()> {
                for (k, slot) in piece.iter_mut().enumerate() {
                    *slot = Some(f(c * chunk + k)?);
                }
                Ok(())
            }));
        }
        for handle in handles {
            handle.join().expect("evaluation worker panicked")?;
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|v| v.expect("all indices filled")).collect())
}

impl MaskArgs {
    fn to_config(&self) -> VentralConfig {
        VentralConfig {
            variance: self.variance,
            kernel_radius: self.kernel_radius,
            aggregation: self.aggregation,
        }
    }
}

pub fn gen_data(args: GenDataArgs) -> CResult<()> {
    let cfg = DataConfig {
        width: args.width,
        height: args.height,
        train_scenes: args.train,
        test_scenes: args.test,
        min_objects: args.min_objects,
        max_objects: args.max_objects,
        min_size: args.min_size,
        max_size: args.max_size,
        patch_size: args.patch_size,
        seed: args.seed,
        ..DataConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    write_echo(
        &args.out,
        &serde_json::json!({ "command": "gen-data", "config": cfg, "jobs": args.jobs }),
    )?;
    let manifest = write_dataset_jobs(&cfg, &args.out, args.jobs)?;
    println!(
        "wrote {} train + {} test scenes under {}",
        cfg.train_scenes,
        cfg.test_scenes,
        args.out.display()
    );
    println!("manifest hash: {}", manifest.config_hash);
    Ok(())
}

pub fn train_ventral(args: TrainVentralArgs) -> CResult<()> {
    let schedule = TrainSchedule {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        momentum: args.momentum,
        decay_epochs: args.decay_epochs.clone(),
        decay_factor: args.decay_factor,
        seed: args.seed,
    };
    let ds = load_dataset(&args.data)?;
    let patch_size = ds.manifest.config.patch_size;
    write_echo(
        &args.out,
        &serde_json::json!({
            "command": "train-ventral",
            "data": args.data,
            "patch_size": patch_size,
            "schedule": schedule,
        }),
    )?;

    let to_samples = |patches: Vec<vdnet::data::Patch>| -> Vec<(Tensor, usize)> {
        patches.into_iter().map(|p| (p.image, p.label)).collect()
    };
    let train_samples = to_samples(classification_patches(&ds, Split::Train));
    let test_samples = to_samples(classification_patches(&ds, Split::Test));

    let (input_shape, layers) = classifier_spec(patch_size);
    let class_names = vdnet::data::PATCH_CLASSES.iter().map(|s| s.to_string()).collect();
    let mut rng = SplitMix64::new(args.seed);
    let mut model = Model::new(input_shape, layers, class_names, &mut rng)?;
    let report = train_classifier(&mut model, &train_samples, &schedule)?;

    let ckpt = args.out.join("ventral.ckpt");
    save_checkpoint(&model, &ckpt)?;
    let train_acc = classification_accuracy(&model, &train_samples)?;
    let test_acc = classification_accuracy(&model, &test_samples)?;
    write_json(
        &args.out.join("train_report.json"),
        &serde_json::json!({
            "report": report,
            "train_patch_accuracy": train_acc,
            "test_patch_accuracy": test_acc,
        }),
    )?;
    println!(
        "trained {} epochs on {} patches; accuracy train {:.4}, test {:.4}",
        args.epochs,
        train_samples.len(),
        train_acc,
        test_acc
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

/// Load the optional masking arm: patch-classifier checkpoint plus the
/// saliency settings it should run with.
fn load_ventral_arm(
    path: Option<&PathBuf>,
    cfg: VentralConfig,
) -> CResult<Option<(Model, VentralConfig)>> {
    match path {
        Some(p) => Ok(Some((load_checkpoint(p)?, cfg))),
        None => Ok(None),
    }
}

pub fn train_dorsal(args: TrainDorsalArgs) -> CResult<()> {
    let schedule = DetectorSchedule {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        momentum: args.momentum,
        decay_epochs: args.decay_epochs.clone(),
        decay_factor: args.decay_factor,
        lambda: args.lambda,
        anchor_batch: args.anchor_batch,
        seed: args.seed,
    };
    let mask_cfg = args.mask.to_config();
    let anchors = AnchorConfig::default();
    let ds = load_dataset(&args.data)?;
    write_echo(
        &args.out,
        &serde_json::json!({
            "command": "train-dorsal",
            "data": args.data,
            "schedule": schedule,
            "anchors": anchors,
            "ventral": args.ventral,
            "mask": if args.ventral.is_some() { Some(&mask_cfg) } else { None },
        }),
    )?;

    let mut rng = SplitMix64::new(args.seed);
    let mut det = Detector::new(
        ds.manifest.config.height,
        ds.manifest.config.width,
        &ds.manifest.class_names,
        anchors,
        &mut rng,
    )?;
    let arm = load_ventral_arm(args.ventral.as_ref(), mask_cfg)?;
    let report = train_detector(
        &mut det,
        &ds,
        Split::Train,
        arm.as_ref().map(|(m, c)| (m, c)),
        &schedule,
    )?;

    let ckpt = args.out.join("dorsal.ckpt");
    save_detector(&det, &ckpt)?;
    write_json(&args.out.join("train_report.json"), &report)?;
    match report.epoch_total.last() {
        Some(last) => println!(
            "trained {} epochs ({}); final loss {:.4} (cls {:.4}, reg {:.4})",
            args.epochs,
            if report.masked { "masked" } else { "unmasked" },
            last,
            report.epoch_cls.last().unwrap(),
            report.epoch_reg.last().unwrap(),
        ),
        None => println!("trained 0 epochs; checkpoint is the initialization"),
    }
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

/// Rescale a map to `[0, 1]` for 8-bit output; a constant map becomes
/// all zeros since it carries no contrast to show.
fn min_max_normalize(map: &Tensor) -> Tensor {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return Tensor::zeros(map.shape().to_vec());
    }
    Tensor::new(map.shape().to_vec(), map.data().iter().map(|v| (v - lo) / span).collect())
}

/// Lift an `[H,W]` map to the `[1,H,W]` layout the image writer expects.
fn as_gray_image(map: &Tensor) -> Tensor {
    Tensor::new(
        vec![1, map.shape()[0], map.shape()[1]],
        map.data().to_vec(),
    )
}

pub fn saliency(args: SaliencyArgs) -> CResult<()> {
    let cfg = args.mask.to_config();
    let image = netpbm::read_image(&args.image)?;
    let model = load_checkpoint(&args.ventral)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    write_echo(
        &args.out,
        &serde_json::json!({
            "command": "saliency",
            "image": args.image,
            "ventral": args.ventral,
            "mask": cfg,
            "effective_variance": cfg.effective_variance(h, w),
            "effective_radius": cfg.effective_radius(h, w),
        }),
    )?;

    let artifacts = ventral_pipeline(&model, &image, &cfg)?;
    let stem = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let masked_ext = if image.shape()[0] == 3 { "ppm" } else { "pgm" };
    let outputs = [
        (format!("{stem}.agg.pgm"), as_gray_image(&min_max_normalize(&artifacts.aggregated))),
        (format!("{stem}.smooth.pgm"), as_gray_image(&min_max_normalize(&artifacts.smoothed))),
        (format!("{stem}.mask.pgm"), as_gray_image(&artifacts.mask)),
        (format!("{stem}.masked.{masked_ext}"), artifacts.masked_image.clone()),
    ];
    for (name, tensor) in &outputs {
        netpbm::write_image(&args.out.join(name), tensor)?;
    }
    println!("mask coverage: {:.4}", mask_coverage(&artifacts.mask));
    println!("wrote {} artifacts under {}", outputs.len(), args.out.display());
    Ok(())
}

/// One detections-file row: the image stem plus one detection.
#[derive(Serialize)]
struct DetectionRow<'a> {
    image: &'a str,
    #[serde(flatten)]
    detection: &'a Detection,
}

/// Run one detector over the given records, optionally masking each
/// image first. Returns per-image `(detections, ground truth)` pairs in
/// record order, plus per-image mask coverage when masking was on.
#[allow(clippy::type_complexity)]
fn eval_records(
    det: &Detector,
    arm: Option<&(Model, VentralConfig)>,
    ds: &LoadedDataset,
    records: &[&SceneRecord],
    score_thresh: f64,
    nms_thresh: f64,
    jobs: usize,
) -> vdnet::Result<(Vec<(Vec<Detection>, Vec<GroundTruth>)>, Option<Vec<f64>>)> {
    let per_image = par_map(records.len(), jobs, |i| {
        let record = records[i];
        let image = ds.render(record);
        let (image, coverage) = match arm {
            Some((model, cfg)) => {
                let artifacts = ventral_pipeline(model, &image, cfg)?;
                (artifacts.masked_image, Some(mask_coverage(&artifacts.mask)))
            }
            None => (image, None),
        };
        let detections = detect(det, &image, None, score_thresh, nms_thresh)?;
        Ok((detections, record.objects.clone(), coverage))
    })?;

    let mut pairs = Vec::with_capacity(per_image.len());
    let mut coverages = Vec::new();
    for (detections, objects, coverage) in per_image {
        pairs.push((detections, objects));
        if let Some(c) = coverage {
            coverages.push(c);
        }
    }
    Ok((pairs, if coverages.is_empty() { None } else { Some(coverages) }))
}

fn write_detections(
    path: &Path,
    records: &[&SceneRecord],
    pairs: &[(Vec<Detection>, Vec<GroundTruth>)],
) -> CResult<()> {
    let mut text = String::new();
    for (record, (detections, _)) in records.iter().zip(pairs) {
        for detection in detections {
            let row = DetectionRow { image: &record.stem, detection };
            text.push_str(&serde_json::to_string(&row).map_err(vdnet::Error::from)?);
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| vdnet::Error::io(path, e).into())
}

pub fn eval(args: EvalArgs) -> CResult<()> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let mask_cfg = args.mask.to_config();
    let ds = load_dataset(&args.data)?;
    let records = ds.split(Split::Test);
    if records.is_empty() {
        return Err(vdnet::Error::EmptyDataset.into());
    }
    let det = load_detector(&args.detector)?;
    let arm = load_ventral_arm(args.ventral.as_ref(), mask_cfg.clone())?;
    write_echo(
        &args.out,
        &serde_json::json!({
            "command": "eval",
            "data": args.data,
            "detector": args.detector,
            "ventral": args.ventral,
            "baseline": args.baseline,
            "mask": if args.ventral.is_some() { Some(&mask_cfg) } else { None },
            "score_thresh": args.score_thresh,
            "nms_thresh": args.nms_thresh,
            "iou_thresh": args.iou_thresh,
            "jobs": args.jobs,
        }),
    )?;

    let (pairs, coverages) = eval_records(
        &det,
        arm.as_ref(),
        &ds,
        &records,
        args.score_thresh,
        args.nms_thresh,
        args.jobs,
    )?;
    write_detections(&args.out.join("detections.jsonl"), &records, &pairs)?;
    let report = metrics::evaluate(&pairs, args.iou_thresh)?;
    write_json(&args.out.join("report.json"), &report)?;
    println!(
        "mAP@{}: {:.4} over {} images ({} classes)",
        args.iou_thresh,
        report.mean_ap,
        report.image_count,
        report.classes.len()
    );

    if let Some(baseline_path) = &args.baseline {
        let baseline = load_detector(baseline_path)?;
        let (base_pairs, _) = eval_records(
            &baseline,
            None,
            &ds,
            &records,
            args.score_thresh,
            args.nms_thresh,
            args.jobs,
        )?;
        write_detections(&args.out.join("baseline_detections.jsonl"), &records, &base_pairs)?;
        let base_report = metrics::evaluate(&base_pairs, args.iou_thresh)?;
        write_json(&args.out.join("baseline_report.json"), &base_report)?;

        let comparison = metrics::compare_masked_unmasked(
            &base_report,
            &report,
            coverages.as_deref().unwrap_or(&[]),
        )?;
        write_json(&args.out.join("comparison.json"), &comparison)?;
        let table = comparison.to_table();
        fs::write(args.out.join("comparison.txt"), format!("{table}\n"))
            .map_err(|e| vdnet::Error::io(args.out.join("comparison.txt"), e))?;
        println!("{table}");
    }
    Ok(())
}

/// One row of the variance-sweep report.
#[derive(Serialize)]
struct AblationRow {
    variance: f64,
    mean_ap: f64,
    mask_coverage: f64,
    in_tuned_band: bool,
}

/// The band the blur variance was originally tuned in; rows inside it
/// get a marker in the emitted table.
const TUNED_BAND: (f64, f64) = (25.0, 35.0);

pub fn ablate_sigma(args: AblateSigmaArgs) -> CResult<()> {
    if args.variances.is_empty() {
        return Err(usage("--variances needs at least one value"));
    }
    if args.variances.iter().any(|&v| v <= 0.0) {
        return Err(usage("--variances must be positive"));
    }
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let ds = load_dataset(&args.data)?;
    let records = ds.split(Split::Test);
    if records.is_empty() {
        return Err(vdnet::Error::EmptyDataset.into());
    }
    let det = load_detector(&args.detector)?;
    let model = load_checkpoint(&args.ventral)?;
    write_echo(
        &args.out,
        &serde_json::json!({
            "command": "ablate-sigma",
            "data": args.data,
            "ventral": args.ventral,
            "detector": args.detector,
            "variances": args.variances,
            "aggregation": args.aggregation,
            "kernel_radius": args.kernel_radius,
            "score_thresh": args.score_thresh,
            "nms_thresh": args.nms_thresh,
            "iou_thresh": args.iou_thresh,
            "jobs": args.jobs,
        }),
    )?;

    let mut rows = Vec::with_capacity(args.variances.len());
    for &variance in &args.variances {
        let cfg = VentralConfig {
            variance,
            kernel_radius: args.kernel_radius,
            aggregation: args.aggregation,
        };
        let arm = (model.clone(), cfg);
        let (pairs, coverages) = eval_records(
            &det,
            Some(&arm),
            &ds,
            &records,
            args.score_thresh,
            args.nms_thresh,
            args.jobs,
        )?;
        let report = metrics::evaluate(&pairs, args.iou_thresh)?;
        let coverages = coverages.expect("masked arm always reports coverage");
        rows.push(AblationRow {
            variance,
            mean_ap: report.mean_ap,
            mask_coverage: coverages.iter().sum::<f64>() / coverages.len() as f64,
            in_tuned_band: variance >= TUNED_BAND.0 && variance <= TUNED_BAND.1,
        });
    }

    let mut table = format!(
        "{:>10}{:>10}{:>10}   tuned band [{}, {}]\n",
        "variance", "mAP", "coverage", TUNED_BAND.0, TUNED_BAND.1
    );
    for row in &rows {
        table.push_str(&format!(
            "{:>10.1}{:>10.3}{:>10.3}{}\n",
            row.variance,
            row.mean_ap,
            row.mask_coverage,
            if row.in_tuned_band { "   *" } else { "" }
        ));
    }
    write_json(
        &args.out.join("ablation.json"),
        &serde_json::json!({ "iou_threshold": args.iou_thresh, "rows": rows }),
    )?;
    fs::write(args.out.join("ablation.txt"), &table)
        .map_err(|e| vdnet::Error::io(args.out.join("ablation.txt"), e))?;
    print!("{table}");
    Ok(())
}
