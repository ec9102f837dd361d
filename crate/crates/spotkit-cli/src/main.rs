//! Command-line entry points for the spotting pipeline: synthetic dataset
//! generation, training, inference, and evaluation.
//!
//! Exit codes: 0 ok, 2 usage/validation error, 3 training failure,
//! 4 checkpoint/artifact mismatch.

use clap::{Args, Parser, Subcommand};
use ndarray::Array4;
use serde::Serialize;
use spotkit::core::{SpotError, SpotPrediction};
use spotkit::data::{
    load_manifest, load_video_flow, load_video_frames, AugmentConfig, DatasetManifest, Split,
    SyntheticConfig,
};
use spotkit::evaluation::{average_map_seconds, map_at_deltas, pr_points, EvalReport};
use spotkit::inference::{
    ensemble, infer_scores, nms, preprocess_flow, read_predictions, scores_to_predictions,
    write_predictions,
};
use spotkit::model::{
    frames_to_input, load_checkpoint, save_checkpoint, BackboneConfig, HeadConfig, HeadKind,
    ShiftMode, SpotModel,
};
use spotkit::training::{train, TrainConfig};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spotkit", about = "Temporally precise event spotting in video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic bouncing-ball benchmark.
    Synth(SynthArgs),
    /// Train a spotting model.
    Train(TrainArgs),
    /// Run whole-video inference with a trained checkpoint.
    Infer(InferArgs),
    /// Score a prediction file against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Full generator configuration as a JSON file (alternative to flags).
    #[arg(long, conflicts_with_all = ["videos", "frames", "height", "width", "fps", "radius", "gravity", "seed"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config", default_value_t = 0, hide_default_value = true)]
    videos: usize,
    #[arg(long, required_unless_present = "config", default_value_t = 0, hide_default_value = true)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    #[arg(long, default_value_t = 0.5)]
    gravity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    clip_len: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 50)]
    cycles: usize,
    #[arg(long, default_value_t = 625)]
    steps_per_cycle: usize,
    #[arg(long, default_value_t = 3)]
    warmup_cycles: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 5.0)]
    fg_weight: f32,
    #[arg(long, default_value_t = 0)]
    dilate: usize,
    #[arg(long, default_value_t = 0.0)]
    mixup_alpha: f32,
    #[arg(long, default_value_t = 0.0)]
    jitter: f32,
    #[arg(long, default_value_t = 0.0)]
    blur: f32,
    /// Crop width; 0 keeps the full frame width.
    #[arg(long, default_value_t = 0)]
    crop_width: usize,
    #[arg(long, default_value = "gsm")]
    shift: String,
    #[arg(long, default_value = "bigru")]
    head: String,
    /// Backbone preset: tiny (desk default) or small (368-dim features).
    #[arg(long, default_value = "tiny")]
    backbone: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true)]
    deterministic: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Clip length; 0 reuses the training clip length from the checkpoint.
    #[arg(long, default_value_t = 0)]
    clip_len: usize,
    /// Temporal suppression window: "off" or a frame count.
    #[arg(long, default_value = "1")]
    nms_window: String,
    #[arg(long, default_value_t = 0.0)]
    min_score: f32,
    /// Optional second-stream checkpoint trained on optical flow.
    #[arg(long)]
    flow_checkpoint: Option<PathBuf>,
    /// Directory holding one flow directory per video id.
    #[arg(long)]
    flow_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Comma-separated frame tolerances.
    #[arg(long, default_value = "1,2")]
    deltas: String,
    /// Optional comma-separated second-scale tolerances for average-mAP.
    #[arg(long)]
    tolerances_sec: Option<String>,
    /// Restrict ground truth to one split ("all" disables).
    #[arg(long, default_value = "test")]
    split: String,
    /// Echoed into the report: the NMS window used to produce the file.
    #[arg(long)]
    nms_window: Option<usize>,
    /// Write one PR-curve CSV per class per delta into this directory.
    #[arg(long)]
    pr_out: Option<PathBuf>,
    /// Optional output directory for the report and resolved config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                SpotError::Diverged { .. } => 3,
                SpotError::Checkpoint(_) | SpotError::CheckpointVersion { .. } => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

/// Parallel-worker bound from the environment (informational; the pipeline
/// currently runs single-threaded).
fn num_workers() -> Result<usize, SpotError> {
    match std::env::var("SPOTKIT_NUM_WORKERS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| SpotError::invalid(format!("SPOTKIT_NUM_WORKERS must be a positive integer, got {:?}", v))),
        Err(_) => Ok(1),
    }
}

/// Write the fully resolved configuration next to a run's outputs.
fn write_resolved_config(out: &Path, name: &str, value: &serde_json::Value) -> Result<(), SpotError> {
    let path = out.join(name);
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    std::fs::write(&path, text).map_err(|e| SpotError::io(path.display().to_string(), e))
}

fn parse_split(s: &str) -> Result<Split, SpotError> {
    s.parse::<Split>().map_err(SpotError::Invalid)
}

fn cmd_synth(args: SynthArgs) -> Result<(), SpotError> {
    let workers = num_workers()?;
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .map_err(|e| SpotError::invalid(format!("bad generator config {}: {}", path.display(), e)))?
        }
        None => SyntheticConfig {
            num_videos: args.videos,
            frames_per_video: args.frames,
            frame_height: args.height,
            frame_width: args.width,
            fps: args.fps,
            ball_radius: args.radius,
            gravity: args.gravity,
            seed: args.seed,
            ..SyntheticConfig::default()
        },
    };
    config.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| SpotError::io(args.out.display().to_string(), e))?;
    let manifest = spotkit::data::generate_synthetic(&config, &args.out)?;
    let mut resolved = serde_json::to_value(&config).expect("config serializes");
    resolved["num_workers"] = workers.into();
    write_resolved_config(&args.out, "synth_config.json", &resolved)?;
    let mut histogram = vec![0usize; manifest.class_table.num_classes() + 1];
    for e in &manifest.events {
        histogram[e.class_id] += 1;
    }
    println!("manifest: {}", args.out.join("manifest.json").display());
    for (i, name) in manifest.class_table.names().iter().enumerate() {
        println!("events[{}]: {}", name, histogram[i + 1]);
    }
    Ok(())
}

fn build_model(args: &TrainArgs, num_classes: usize) -> Result<SpotModel<f32>, SpotError> {
    let shift: ShiftMode = args.shift.parse().map_err(SpotError::Invalid)?;
    let kind: HeadKind = args.head.parse().map_err(SpotError::Invalid)?;
    let mut backbone = match args.backbone.as_str() {
        "tiny" => BackboneConfig::tiny(3),
        "small" => BackboneConfig::small(3),
        other => {
            return Err(SpotError::invalid(format!(
                "unknown backbone {:?} (expected tiny or small)",
                other
            )))
        }
    };
    backbone.shift_mode = shift;
    let head = HeadConfig::new(kind, backbone.feature_dim(), num_classes);
    SpotModel::new(&backbone, &head, args.seed)
}

fn cmd_train(args: TrainArgs) -> Result<(), SpotError> {
    let workers = num_workers()?;
    let manifest = load_manifest(&args.manifest)?;
    std::fs::create_dir_all(&args.out).map_err(|e| SpotError::io(args.out.display().to_string(), e))?;
    // the crop default keeps the full frame width (synthetic frames are
    // already square; width-only cropping matters for wide sources)
    let crop_width = if args.crop_width > 0 {
        args.crop_width
    } else {
        let v = manifest
            .videos
            .first()
            .ok_or_else(|| SpotError::invalid("manifest has no videos"))?;
        spotkit::data::load_video_frames(&v.meta.frame_source, 1)?.width()
    };
    let config = TrainConfig {
        clip_len: args.clip_len,
        batch_clips: args.batch,
        steps_per_cycle: args.steps_per_cycle,
        num_cycles: args.cycles,
        base_lr: args.lr,
        warmup_cycles: args.warmup_cycles,
        weight_decay: args.weight_decay,
        fg_weight: args.fg_weight,
        dilate_radius: args.dilate,
        augment: AugmentConfig {
            crop_width,
            jitter_strength: args.jitter,
            blur_probability: args.blur,
            mixup_alpha: args.mixup_alpha,
        },
        seed: args.seed,
        deterministic: args.deterministic,
        progress: true,
    };
    let mut resolved = serde_json::to_value(&config).expect("config serializes");
    resolved["shift"] = args.shift.clone().into();
    resolved["head"] = args.head.clone().into();
    resolved["backbone"] = args.backbone.clone().into();
    resolved["manifest"] = args.manifest.display().to_string().into();
    resolved["num_workers"] = workers.into();
    write_resolved_config(&args.out, "train_config.json", &resolved)?;

    let mut model = build_model(&args, manifest.class_table.num_classes())?;
    let outcome = train(&manifest, &mut model, &config)?;

    let log_path = args.out.join("train_log.txt");
    let mut f = std::fs::File::create(&log_path).map_err(|e| SpotError::io(log_path.display().to_string(), e))?;
    for row in &outcome.log {
        writeln!(
            f,
            "cycle={} mean_loss={:.6} lr={:.8} val_mAP@1={:.6}",
            row.cycle, row.mean_loss, row.lr, row.val_map
        )
        .map_err(|e| SpotError::io(log_path.display().to_string(), e))?;
    }
    let ckpt_path = args.out.join("checkpoint.ckpt");
    save_checkpoint(&model, &ckpt_path)?;
    println!("checkpoint: {}", ckpt_path.display());
    println!(
        "best cycle {} with val mAP@1 {:.4}",
        outcome.best_cycle, outcome.best_val_map
    );
    Ok(())
}

fn infer_stream(
    model: &SpotModel<f32>,
    input: &Array4<f32>,
    clip_len: usize,
) -> Result<spotkit::core::ScoreSeq, SpotError> {
    let (scores, _) = infer_scores(model, input, clip_len)?;
    Ok(scores)
}

fn cmd_infer(args: InferArgs) -> Result<(), SpotError> {
    let workers = num_workers()?;
    let manifest = load_manifest(&args.manifest)?;
    let split = parse_split(&args.split)?;
    let model: SpotModel<f32> = load_checkpoint(&args.checkpoint)?;
    if model.num_classes() != manifest.class_table.num_classes() {
        return Err(SpotError::Checkpoint(format!(
            "checkpoint predicts {} classes but the manifest defines {}",
            model.num_classes(),
            manifest.class_table.num_classes()
        )));
    }
    let flow_model: Option<SpotModel<f32>> = match (&args.flow_checkpoint, &args.flow_root) {
        (Some(p), Some(_)) => {
            let m: SpotModel<f32> = load_checkpoint(p)?;
            if m.num_classes() != model.num_classes() {
                return Err(SpotError::Checkpoint(
                    "flow checkpoint class count disagrees with the RGB checkpoint".into(),
                ));
            }
            Some(m)
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(SpotError::invalid(
                "--flow-checkpoint and --flow-root must be given together",
            ))
        }
        (None, None) => None,
    };
    let clip_len = if args.clip_len > 0 {
        args.clip_len
    } else {
        model
            .meta
            .train_config
            .as_ref()
            .and_then(|c| c.get("clip_len"))
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .unwrap_or(100)
    };
    let nms_window: Option<usize> = match args.nms_window.as_str() {
        "off" => None,
        s => Some(
            s.parse()
                .map_err(|_| SpotError::invalid(format!("--nms-window must be \"off\" or an integer, got {:?}", s)))?,
        ),
    };
    std::fs::create_dir_all(&args.out).map_err(|e| SpotError::io(args.out.display().to_string(), e))?;

    let mut all_preds: Vec<SpotPrediction> = Vec::new();
    for v in manifest.videos_in_split(split) {
        let frames = load_video_frames(&v.meta.frame_source, v.meta.num_frames)?;
        let input = frames_to_input::<f32>(&frames.clip_f32(0, v.meta.num_frames).view());
        let mut scores = infer_stream(&model, &input, clip_len)?;
        if let (Some(fm), Some(root)) = (&flow_model, &args.flow_root) {
            let flow = load_video_flow(root.join(&v.meta.id), v.meta.num_frames)?;
            let flow = preprocess_flow(&flow);
            let flow_input = frames_to_input::<f32>(&flow.view());
            let flow_scores = infer_stream(fm, &flow_input, clip_len)?;
            scores = ensemble(&scores, &flow_scores)?;
        }
        let mut preds = scores_to_predictions(&scores, &v.meta.id, args.min_score);
        if let Some(w) = nms_window {
            preds = nms(&preds, w);
        }
        all_preds.extend(preds);
    }
    let pred_path = args.out.join("predictions.csv");
    write_predictions(&pred_path, &all_preds)?;
    let resolved = serde_json::json!({
        "manifest": args.manifest.display().to_string(),
        "checkpoint": args.checkpoint.display().to_string(),
        "split": args.split,
        "clip_len": clip_len,
        "nms_window": nms_window,
        "min_score": args.min_score,
        "flow_checkpoint": args.flow_checkpoint.as_ref().map(|p| p.display().to_string()),
        "flow_root": args.flow_root.as_ref().map(|p| p.display().to_string()),
        "num_workers": workers,
    });
    write_resolved_config(&args.out, "infer_config.json", &resolved)?;
    println!("predictions: {}", pred_path.display());
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, SpotError> {
    s.split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| SpotError::invalid(format!("bad {} list {:?}", what, s)))
}

fn print_report(report: &EvalReport) {
    print!("{:<12}", "class");
    for d in &report.deltas {
        print!(" AP@{:<8}", d);
    }
    println!();
    for c in &report.classes {
        print!("{:<12}", c.name);
        for ap in &c.ap_by_delta {
            match ap {
                Some(v) => print!(" {:<10.4}", v),
                None => print!(" {:<10}", "-"),
            }
        }
        println!();
    }
    print!("{:<12}", "mAP");
    for v in &report.map_by_delta {
        print!(" {:<10.4}", v);
    }
    println!();
}

fn cmd_eval(args: EvalArgs) -> Result<(), SpotError> {
    let workers = num_workers()?;
    let manifest = load_manifest(&args.manifest)?;
    let scoped: DatasetManifest = if args.split == "all" {
        manifest
    } else {
        spotkit::training::split_manifest(&manifest, parse_split(&args.split)?)?
    };
    let preds = read_predictions(&args.predictions)?;
    let deltas: Vec<usize> = parse_list(&args.deltas, "delta")?;
    let report = map_at_deltas(&preds, &scoped, &deltas, args.nms_window)?;
    print_report(&report);
    if report.delta_zero_caveat {
        println!("note: delta 0 scores exact frames and is sensitive to annotation ambiguity");
    }
    if let Some(ts) = &args.tolerances_sec {
        let tolerances: Vec<f64> = parse_list(ts, "tolerance")?;
        let avg = average_map_seconds(&preds, &scoped, &tolerances)?;
        println!("average-mAP over {:?}s: {:.4}", tolerances, avg);
    }
    if let Some(pr_dir) = &args.pr_out {
        std::fs::create_dir_all(pr_dir).map_err(|e| SpotError::io(pr_dir.display().to_string(), e))?;
        for class_id in 1..=scoped.class_table.num_classes() {
            let cp: Vec<SpotPrediction> = preds.iter().filter(|p| p.class_id == class_id).cloned().collect();
            let cg: Vec<_> = scoped.events.iter().filter(|e| e.class_id == class_id).cloned().collect();
            for &d in &deltas {
                let pts = pr_points(&cp, &cg, d);
                let name = scoped.class_table.name_of(class_id).unwrap_or("unknown");
                let path = pr_dir.join(format!("pr_{}_delta{}.csv", name, d));
                let mut f =
                    std::fs::File::create(&path).map_err(|e| SpotError::io(path.display().to_string(), e))?;
                writeln!(f, "recall,precision,interp_precision")
                    .map_err(|e| SpotError::io(path.display().to_string(), e))?;
                for p in pts {
                    writeln!(f, "{:.6},{:.6},{:.6}", p.recall, p.precision, p.interp_precision)
                        .map_err(|e| SpotError::io(path.display().to_string(), e))?;
                }
            }
        }
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| SpotError::io(out.display().to_string(), e))?;
        let report_path = out.join("eval_report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&report_path, text).map_err(|e| SpotError::io(report_path.display().to_string(), e))?;
        let resolved = serde_json::json!({
            "manifest": args.manifest.display().to_string(),
            "predictions": args.predictions.display().to_string(),
            "deltas": deltas,
            "tolerances_sec": args.tolerances_sec,
            "split": args.split,
            "nms_window": args.nms_window,
            "num_workers": workers,
        });
        write_resolved_config(out, "eval_config.json", &resolved)?;
        println!("report: {}", report_path.display());
    }
    Ok(())
}
