//! `massfusion` — batch pipeline for multi-scale detection fusion.
//!
//! Subcommands: `synth` (seeded benchmark generation), `fuse`
//! (multi-scale JSONL -> fused candidates), `pipeline` (full two-stage
//! run with evaluation report), `eval` (score external artifacts),
//! `sweep` (threshold sweep) and `anchors` (k-means anchor sizes).
//!
//! Exit codes: 0 success, 1 validation failure, 2 partial per-image
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use massfusion::geometry::ImageSize;
use massfusion::ingest::{self, kmeans_anchors, load_manifest, rasterize_truth, BoxSize};
use massfusion::interchange;
use massfusion::metrics::{froc_csv, pr_curve_csv, PrCurve};
use massfusion::pipeline::{
    default_scales, evaluate_files, fuse_records, run_pipeline, sweep_lambda, DetectorBinding,
    PipelineConfig, SegmenterBinding,
};
use massfusion::raster::pgm;
use massfusion::synth::{write_dataset, DetectionNoiseSpec, PhantomSpec, SynthDatasetSpec};

#[derive(Parser)]
#[command(
    name = "massfusion",
    version,
    about = "Multi-scale detection fusion, synthetic benchmarks and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic benchmark (images, masks, manifest,
    /// per-scale detections).
    Synth(SynthArgs),
    /// Fuse multi-scale detections into per-image candidate boxes.
    Fuse(FuseArgs),
    /// Run the full two-stage pipeline and write an evaluation report.
    Pipeline(PipelineArgs),
    /// Evaluate externally produced detections and/or masks.
    Eval(EvalArgs),
    /// Sweep the majority-voting threshold and report operating points.
    Sweep(SweepArgs),
    /// Recompute anchor box sizes from manifest truth.
    Anchors(AnchorArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the generated benchmark.
    #[arg(long)]
    out_dir: PathBuf,
    /// Master seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of images (overrides the config file).
    #[arg(long)]
    count: Option<u32>,
    /// Generation parameters (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prediction scales as WxH pairs, comma separated.
    #[arg(long, value_parser = parse_scales)]
    scales: Option<std::vec::Vec<ImageSize>>,
}

#[derive(Args)]
struct FuseArgs {
    /// Dataset manifest (provides native frame sizes).
    #[arg(long)]
    manifest: PathBuf,
    /// Multi-scale detections, JSON Lines.
    #[arg(long)]
    detections: PathBuf,
    /// Majority-voting threshold.
    #[arg(long, default_value_t = 0.6)]
    lambda: f64,
    /// Output JSONL of fused candidates (native frame, peak scores).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Pipeline configuration (JSON mirroring the config schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the majority-voting threshold.
    #[arg(long)]
    lambda: Option<f64>,
    /// Use external detections (JSONL) instead of the builtin detector.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Use external per-candidate masks instead of the builtin segmenter.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Override prediction scales (WxH, comma separated).
    #[arg(long, value_parser = parse_scales)]
    scales: Option<std::vec::Vec<ImageSize>>,
    /// Write full-image masks, candidates and patches here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the evaluation report here (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Worker threads (0 = default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Native-frame detections to score (JSONL).
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Directory of full-image predicted masks (<image_id>.pgm).
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Box-match IoU threshold.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Write the report here (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write PR and FROC curves as CSV with this path prefix.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// External detections (JSONL); builtin detector when omitted.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Thresholds to sweep, comma separated.
    #[arg(long, value_parser = parse_lambdas, default_value = "0,0.5,0.6,0.7")]
    lambda: std::vec::Vec<f64>,
    /// Override prediction scales (WxH, comma separated).
    #[arg(long, value_parser = parse_scales)]
    scales: Option<std::vec::Vec<ImageSize>>,
    /// Write the rows as JSON here (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct AnchorArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the anchor line here (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_scales(text: &str) -> Result<Vec<ImageSize>, String> {
    text.split(',')
        .map(|token| {
            let (w, h) = token
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| format!("scale {token:?} is not WxH"))?;
            let w: u32 = w.trim().parse().map_err(|e| format!("{token:?}: {e}"))?;
            let h: u32 = h.trim().parse().map_err(|e| format!("{token:?}: {e}"))?;
            if w == 0 || h == 0 {
                return Err(format!("scale {token:?} has a zero dimension"));
            }
            Ok(ImageSize::new(w, h))
        })
        .collect()
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|token| token.trim().parse::<f64>().map_err(|e| format!("{token:?}: {e}")))
        .collect()
}

/// Synth generation parameters (JSON).
#[derive(Deserialize)]
#[serde(default)]
struct SynthConfig {
    native: ImageSize,
    count: u32,
    mass_count_range: [u32; 2],
    mass_radius_range: [u32; 2],
    boundary_irregularity: f64,
    background_noise_sigma: f64,
    detection_probability: f64,
    center_jitter_sigma: f64,
    size_jitter_sigma: f64,
    confidence_mean: f64,
    confidence_sigma: f64,
    false_positive_rate: f64,
    scales: Vec<ImageSize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            native: ImageSize::new(1024, 2048),
            count: 8,
            mass_count_range: [1, 3],
            mass_radius_range: [40, 120],
            boundary_irregularity: 0.15,
            background_noise_sigma: 6.0,
            detection_probability: 0.9,
            center_jitter_sigma: 0.03,
            size_jitter_sigma: 0.03,
            confidence_mean: 0.8,
            confidence_sigma: 0.05,
            false_positive_rate: 1.0,
            scales: default_scales(),
        }
    }
}

fn write_or_print(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, contents)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{contents}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(count) = args.count {
        config.count = count;
    }
    if let Some(scales) = args.scales {
        config.scales = scales;
    }
    let spec = SynthDatasetSpec {
        phantom: PhantomSpec {
            native: config.native,
            mass_count_range: (config.mass_count_range[0], config.mass_count_range[1]),
            mass_radius_range: (config.mass_radius_range[0], config.mass_radius_range[1]),
            boundary_irregularity: config.boundary_irregularity,
            background_noise_sigma: config.background_noise_sigma,
            seed: args.seed,
        },
        noise: DetectionNoiseSpec {
            detection_probability: config.detection_probability,
            center_jitter_sigma: config.center_jitter_sigma,
            size_jitter_sigma: config.size_jitter_sigma,
            confidence_mean: config.confidence_mean,
            confidence_sigma: config.confidence_sigma,
            false_positive_rate: config.false_positive_rate,
            seed: args.seed,
        },
        scales: config.scales,
        count: config.count,
    };
    let paths = write_dataset(&args.out_dir, &spec)?;
    eprintln!(
        "wrote {} images to {} (manifest: {}, detections: {})",
        paths.image_count,
        args.out_dir.display(),
        paths.manifest.display(),
        paths.detections.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_fuse(args: FuseArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.manifest)?;
    let records = interchange::read_jsonl(&args.detections)?;
    let fused = fuse_records(&records, &manifest, args.lambda)?;
    interchange::write_jsonl(&args.out, &fused)?;
    let candidates: usize = fused.iter().map(|r| r.boxes.len()).sum();
    eprintln!(
        "fused {} images at lambda {}: {} candidates -> {}",
        fused.len(),
        args.lambda,
        candidates,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_pipeline(args: PipelineArgs) -> Result<ExitCode> {
    let manifest_dir = manifest_dir(&args.manifest);
    let manifest = load_manifest(&args.manifest)?;
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(lambda) = args.lambda {
        config.lambda = lambda;
    }
    if let Some(scales) = args.scales {
        config.scales = scales;
    }
    if let Some(detections) = args.detections {
        config.detector = DetectorBinding::ExternalFiles { detections };
    }
    if let Some(masks_dir) = args.masks {
        config.segmenter = SegmenterBinding::ExternalFiles { masks_dir };
    }
    if args.threads > 0 {
        config.threads = args.threads;
    }

    let patch_dir = args.out_dir.as_ref().map(|dir| dir.join("patches"));
    let outcome = run_pipeline(&manifest_dir, &manifest, &config, patch_dir.as_deref())?;

    if let Some(out_dir) = &args.out_dir {
        let masks_dir = out_dir.join("masks");
        std::fs::create_dir_all(&masks_dir)?;
        let mut records = Vec::with_capacity(outcome.results.len());
        for result in &outcome.results {
            pgm::write_mask(
                &masks_dir.join(format!("{}.pgm", result.image_id)),
                &result.full_mask,
            )?;
            records.push(interchange::DetectionRecord::from_candidates(
                &result.image_id,
                result.full_mask.size(),
                &result.candidates,
            ));
        }
        interchange::write_jsonl(&out_dir.join("candidates.jsonl"), &records)?;
    }

    write_or_print(args.report.as_deref(), &outcome.report.to_json())?;
    for failure in &outcome.failures {
        eprintln!("error: {}: {}", failure.image_id, failure.message);
    }
    let total_ms: f64 = outcome
        .results
        .iter()
        .map(|r| r.timing.detect_ms + r.timing.fuse_ms + r.timing.segment_ms)
        .sum();
    eprintln!(
        "processed {} image(s), {} failure(s), {:.0} ms total stage time",
        outcome.results.len(),
        outcome.failures.len(),
        total_ms
    );
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    if args.detections.is_none() && args.masks.is_none() {
        bail!("eval needs --detections and/or --masks");
    }
    let manifest_dir = manifest_dir(&args.manifest);
    let manifest = load_manifest(&args.manifest)?;
    let records = match &args.detections {
        Some(path) => Some(interchange::read_jsonl(path)?),
        None => None,
    };
    let report = evaluate_files(
        &manifest_dir,
        &manifest,
        records.as_deref(),
        args.masks.as_deref(),
        args.iou,
    )?;
    if let Some(prefix) = &args.csv {
        let curve = PrCurve {
            points: report.pr_points.clone(),
        };
        std::fs::write(with_suffix(prefix, "_pr.csv"), pr_curve_csv(&curve))?;
        std::fs::write(with_suffix(prefix, "_froc.csv"), froc_csv(&report.froc_points))?;
    }
    write_or_print(args.report.as_deref(), &report.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let manifest_dir = manifest_dir(&args.manifest);
    let manifest = load_manifest(&args.manifest)?;
    let mut config = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(scales) = args.scales {
        config.scales = scales;
    }
    if let Some(detections) = args.detections {
        config.detector = DetectorBinding::ExternalFiles { detections };
    }
    if args.threads > 0 {
        config.threads = args.threads;
    }
    let rows = sweep_lambda(&manifest_dir, &manifest, &config, &args.lambda)?;
    let mut json = serde_json::to_string_pretty(&rows)?;
    json.push('\n');
    write_or_print(args.report.as_deref(), &json)?;
    for row in &rows {
        eprintln!("lambda {:>5}: TPR {:.4} @ FPavg {:.4}", row.lambda, row.tpr, row.fp_avg);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_anchors(args: AnchorArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.manifest)?;
    let mut boxes = Vec::new();
    for entry in &manifest.entries {
        let (_, truth_boxes) = rasterize_truth(entry)?;
        boxes.extend(truth_boxes.iter().map(BoxSize::of));
    }
    if boxes.len() < ingest::ANCHOR_COUNT {
        bail!(
            "k-means needs at least {} truth boxes, manifest has {}",
            ingest::ANCHOR_COUNT,
            boxes.len()
        );
    }
    let anchors = kmeans_anchors(&boxes, args.seed)?;
    let mut line = anchors.to_config_text();
    line.push('\n');
    write_or_print(args.out.as_deref(), &line)?;
    Ok(ExitCode::SUCCESS)
}

fn manifest_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    // usage errors are validation failures (exit 1); --help/--version exit 0
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let failed = err.use_stderr();
            let _ = err.print();
            return if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Anchors(args) => cmd_anchors(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
