//! End-to-end orchestration: multi-scale detection (builtin provider or
//! external files), fusion, candidate-patch extraction, segmentation
//! (builtin or external), full-image reconstruction and evaluation.
//!
//! Images are independent work units; with `threads > 1` they run on a
//! bounded worker pool, and results are reduced in manifest order, so
//! the emitted report bytes never depend on the parallel degree. The
//! pipeline never consults ground truth before the evaluation step and
//! has no interactive inputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    build_fused_mask, components_to_candidates, label_components, threshold_mask, FusedCandidate,
    FusionError, ScaleDetectionSet,
};
use crate::geometry::{
    extract_patch, reconstruct_mask, GeometryError, ImageSize, PatchTransform, ScoredBox,
};
use crate::ingest::{rasterize_truth, DatasetManifest, IngestError, ManifestEntry};
use crate::interchange::{DetectionRecord, InterchangeError};
use crate::metrics::{
    average_precision, confusion, dice_from_counts, froc, match_detections, operating_point,
    pr_curve, ConfusionCounts, EvalReport, FrocPoint, ImageReport, ImageSample, MetricsError,
};
use crate::providers::{detect_blobs, segment_patch, BlobDetectorParams};
use crate::raster::{pgm, BinaryMask, GrayImage, RasterError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{image_id}: no external detections for scale {scale}")]
    MissingDetections { image_id: String, scale: ImageSize },
    #[error("{image_id}: external mask {path} has size {got}, expected {expected}")]
    ExternalMaskSize {
        image_id: String,
        path: PathBuf,
        got: ImageSize,
        expected: ImageSize,
    },
    #[error("{image_id}: truth mask size {got} does not match native size {expected}")]
    TruthMaskSize {
        image_id: String,
        got: ImageSize,
        expected: ImageSize,
    },
    #[error("{image_id}: raster size {got} does not match the manifest's native size {expected}")]
    RasterSizeMismatch {
        image_id: String,
        got: ImageSize,
        expected: ImageSize,
    },
}

/// Detection provider binding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorBinding {
    BuiltinBlobDetector {
        #[serde(default)]
        threshold: Option<u8>,
        #[serde(default = "default_min_area_fraction")]
        min_area_fraction: f64,
    },
    ExternalFiles { detections: PathBuf },
}

fn default_min_area_fraction() -> f64 {
    BlobDetectorParams::default().min_area_fraction
}

impl Default for DetectorBinding {
    fn default() -> Self {
        let params = BlobDetectorParams::default();
        Self::BuiltinBlobDetector {
            threshold: params.threshold,
            min_area_fraction: params.min_area_fraction,
        }
    }
}

/// Segmentation provider binding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmenterBinding {
    #[default]
    BuiltinThresholdSegmenter,
    ExternalFiles { masks_dir: PathBuf },
}

/// Pipeline parameters; the JSON config file mirrors this struct.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    pub scales: Vec<ImageSize>,
    pub lambda: f64,
    pub patch_size: ImageSize,
    pub iou_threshold: f64,
    pub detector: DetectorBinding,
    pub segmenter: SegmenterBinding,
    /// Histogram-equalize candidate patches at extraction time, before
    /// they are saved or segmented. Intended for external learned
    /// segmenters that expect contrast-enhanced inputs; the builtin
    /// threshold segmenter separates raw intensities better, so this
    /// defaults to off.
    pub equalize_patches: bool,
    /// Worker threads; 0 uses the global default.
    pub threads: usize,
}

/// The five default prediction scales (width x height).
pub fn default_scales() -> Vec<ImageSize> {
    vec![
        ImageSize::new(160, 320),
        ImageSize::new(256, 512),
        ImageSize::new(320, 640),
        ImageSize::new(416, 832),
        ImageSize::new(480, 960),
    ]
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scales: default_scales(),
            lambda: 0.6,
            patch_size: ImageSize::new(256, 256),
            iou_threshold: 0.5,
            detector: DetectorBinding::default(),
            segmenter: SegmenterBinding::default(),
            equalize_patches: false,
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.scales.is_empty() {
            return Err(PipelineError::Config("at least one scale is required".into()));
        }
        // lambda above 1 is allowed: fused values are unclamped, and an
        // over-threshold run (empty output everywhere) is a valid outcome
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(PipelineError::Config(format!(
                "lambda {} must be finite and non-negative",
                self.lambda
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(PipelineError::Config(format!(
                "iou threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialization");
        s.push('\n');
        s
    }
}

/// External detections indexed by `(image_id, scale)`.
#[derive(Debug, Default)]
pub struct ExternalDetections {
    sets: HashMap<(String, (u32, u32)), ScaleDetectionSet>,
}

impl ExternalDetections {
    pub fn from_records(records: &[DetectionRecord]) -> Result<Self, PipelineError> {
        let mut sets = HashMap::new();
        for record in records {
            let set = record.into_set()?;
            sets.insert(
                (record.image_id.clone(), (record.scale_w, record.scale_h)),
                set,
            );
        }
        Ok(Self { sets })
    }

    fn get(&self, image_id: &str, scale: ImageSize) -> Option<&ScaleDetectionSet> {
        self.sets
            .get(&(image_id.to_string(), (scale.width(), scale.height())))
    }
}

/// A detector binding resolved against its data source.
pub enum ResolvedDetector<'a> {
    Builtin(BlobDetectorParams),
    External(&'a ExternalDetections),
}

/// A segmenter binding resolved against its data source.
pub enum ResolvedSegmenter<'a> {
    Builtin,
    External { masks_dir: &'a Path },
}

/// Stage 1: one detection set per configured scale.
pub fn detect_stage(
    image: &GrayImage,
    image_id: &str,
    scales: &[ImageSize],
    detector: &ResolvedDetector<'_>,
) -> Result<Vec<ScaleDetectionSet>, PipelineError> {
    scales
        .iter()
        .map(|&scale| match detector {
            ResolvedDetector::Builtin(params) => Ok(detect_blobs(image, scale, params)),
            ResolvedDetector::External(store) => store
                .get(image_id, scale)
                .cloned()
                .ok_or_else(|| PipelineError::MissingDetections {
                    image_id: image_id.to_string(),
                    scale,
                }),
        })
        .collect()
}

/// Stage 2: one mask per candidate patch. Patches arrive already
/// preprocessed (see [`PipelineConfig::equalize_patches`]).
pub fn segment_stage(
    patches: &[GrayImage],
    image_id: &str,
    patch_size: ImageSize,
    segmenter: &ResolvedSegmenter<'_>,
) -> Result<Vec<BinaryMask>, PipelineError> {
    patches
        .iter()
        .enumerate()
        .map(|(idx, patch)| match segmenter {
            ResolvedSegmenter::Builtin => Ok(segment_patch(patch)),
            ResolvedSegmenter::External { masks_dir } => {
                let path = masks_dir.join(candidate_mask_name(image_id, idx));
                let mask = pgm::read_mask(&path)?;
                if mask.size() != patch_size {
                    return Err(PipelineError::ExternalMaskSize {
                        image_id: image_id.to_string(),
                        path,
                        got: mask.size(),
                        expected: patch_size,
                    });
                }
                Ok(mask)
            }
        })
        .collect()
}

/// File name convention for per-candidate patch masks and patches.
pub fn candidate_mask_name(image_id: &str, index: usize) -> String {
    format!("{image_id}_cand{index:03}.pgm")
}

/// Per-image stage timings, milliseconds. Diagnostic only; never part
/// of the serialized report.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImageTiming {
    pub detect_ms: f64,
    pub fuse_ms: f64,
    pub segment_ms: f64,
}

/// Everything the pipeline produced for one image.
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub image_id: String,
    pub candidates: Vec<FusedCandidate>,
    pub transforms: Vec<PatchTransform>,
    pub full_mask: BinaryMask,
    pub truth_boxes: Vec<crate::geometry::BoundingBox>,
    pub truth_mask: BinaryMask,
    pub timing: ImageTiming,
}

/// One failed image.
#[derive(Debug, Clone)]
pub struct ImageFailure {
    pub image_id: String,
    pub message: String,
}

/// Pipeline output: per-image results in manifest order, the aggregate
/// report, and any per-image failures (excluded from the report).
#[derive(Debug)]
pub struct PipelineOutcome {
    pub results: Vec<ImageResult>,
    pub report: EvalReport,
    pub failures: Vec<ImageFailure>,
}

fn load_truth(
    manifest_dir: &Path,
    entry: &ManifestEntry,
) -> Result<(BinaryMask, Vec<crate::geometry::BoundingBox>), PipelineError> {
    let (rasterized, boxes) = rasterize_truth(entry)?;
    let mask = match &entry.mask_path {
        Some(rel) => {
            let mask = pgm::read_mask(&manifest_dir.join(rel))?;
            if mask.size() != entry.native_size {
                return Err(PipelineError::TruthMaskSize {
                    image_id: entry.image_id.clone(),
                    got: mask.size(),
                    expected: entry.native_size,
                });
            }
            mask
        }
        None => rasterized,
    };
    Ok((mask, boxes))
}

fn process_image(
    manifest_dir: &Path,
    entry: &ManifestEntry,
    config: &PipelineConfig,
    detector: &ResolvedDetector<'_>,
    segmenter: &ResolvedSegmenter<'_>,
    patch_dir: Option<&Path>,
) -> Result<ImageResult, PipelineError> {
    let image = pgm::read_gray(&manifest_dir.join(&entry.image_path))?;
    let native = entry.native_size;
    if image.size() != native {
        return Err(PipelineError::RasterSizeMismatch {
            image_id: entry.image_id.clone(),
            got: image.size(),
            expected: native,
        });
    }

    let t0 = Instant::now();
    let sets = detect_stage(&image, &entry.image_id, &config.scales, detector)?;
    let t1 = Instant::now();

    let fused = build_fused_mask(&sets, native)?;
    let kept = threshold_mask(&fused, config.lambda);
    let labels = label_components(&kept);
    let candidates = components_to_candidates(&labels, &fused)?;
    let t2 = Instant::now();

    let mut patches = Vec::with_capacity(candidates.len());
    let mut transforms = Vec::with_capacity(candidates.len());
    for (idx, candidate) in candidates.iter().enumerate() {
        let (patch, transform) = extract_patch(&image, candidate.bbox, config.patch_size)?;
        let patch = if config.equalize_patches {
            crate::ingest::hist_equalize(&patch)
        } else {
            patch
        };
        if let Some(dir) = patch_dir {
            pgm::write_gray(&dir.join(candidate_mask_name(&entry.image_id, idx)), &patch)?;
        }
        patches.push(patch);
        transforms.push(transform);
    }
    let masks = segment_stage(&patches, &entry.image_id, config.patch_size, segmenter)?;
    let mut full_mask = BinaryMask::empty(native);
    for (mask, transform) in masks.iter().zip(&transforms) {
        let fragment = reconstruct_mask(mask, transform, native)?;
        full_mask.or_assign(&fragment);
    }
    let t3 = Instant::now();

    // evaluation inputs are loaded last; no stage above sees them
    let (truth_mask, truth_boxes) = load_truth(manifest_dir, entry)?;

    Ok(ImageResult {
        image_id: entry.image_id.clone(),
        candidates,
        transforms,
        full_mask,
        truth_boxes,
        truth_mask,
        timing: ImageTiming {
            detect_ms: (t1 - t0).as_secs_f64() * 1e3,
            fuse_ms: (t2 - t1).as_secs_f64() * 1e3,
            segment_ms: (t3 - t2).as_secs_f64() * 1e3,
        },
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Builds the evaluation report from per-image results (manifest order).
pub fn build_report(results: &[ImageResult], iou_threshold: f64) -> EvalReport {
    let samples: Vec<ImageSample> = results
        .iter()
        .map(|r| ImageSample {
            predictions: r
                .candidates
                .iter()
                .map(|c| ScoredBox {
                    bbox: c.bbox,
                    score: c.peak,
                })
                .collect(),
            truths: r.truth_boxes.clone(),
        })
        .collect();
    let total_truths: usize = samples.iter().map(|s| s.truths.len()).sum();

    let (ap, pr_points, froc_points, op) = if total_truths > 0 && !samples.is_empty() {
        let curve = pr_curve(&samples, iou_threshold).expect("truths present");
        let ap = average_precision(&curve);
        let froc_points = froc(&samples, iou_threshold).expect("truths present");
        let op = operating_point(&samples, iou_threshold).expect("truths present");
        (Some(ap), curve.points, froc_points, Some(op))
    } else {
        (None, Vec::new(), Vec::new(), None)
    };

    let mut per_image = Vec::with_capacity(results.len());
    let mut dice_sum = 0.0;
    let mut pooled = ConfusionCounts::default();
    for (result, sample) in results.iter().zip(&samples) {
        let counts = confusion(&result.full_mask, &result.truth_mask)
            .expect("masks share the native frame");
        let image_dice = dice_from_counts(&counts);
        dice_sum += image_dice;
        pooled.accumulate(&counts);
        let matched = match_detections(&sample.predictions, &sample.truths, iou_threshold);
        per_image.push(ImageReport {
            image_id: result.image_id.clone(),
            dice: Some(image_dice),
            tp_boxes: matched.pairs.len() as u32,
            fp_boxes: matched.unmatched_predictions.len() as u32,
            fn_boxes: matched.unmatched_truths.len() as u32,
        });
    }
    let (mean_dice, pooled_dice) = if results.is_empty() {
        (None, None)
    } else {
        (
            Some(dice_sum / results.len() as f64),
            Some(dice_from_counts(&pooled)),
        )
    };

    EvalReport {
        ap,
        pr_points,
        froc_points,
        operating_point: op,
        per_image,
        mean_dice,
        pixel_pooled_dice: pooled_dice,
    }
}

/// Runs the full pipeline over a manifest.
///
/// Per-image errors do not abort the run; failed images are reported in
/// `failures` and excluded from the report. `patch_dir`, when given,
/// receives every extracted candidate patch as a PGM (the input
/// contract for external segmenters).
pub fn run_pipeline(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    patch_dir: Option<&Path>,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let external_records;
    let external_store;
    let detector = match &config.detector {
        DetectorBinding::BuiltinBlobDetector {
            threshold,
            min_area_fraction,
        } => ResolvedDetector::Builtin(BlobDetectorParams {
            threshold: *threshold,
            min_area_fraction: *min_area_fraction,
        }),
        DetectorBinding::ExternalFiles { detections } => {
            external_records = crate::interchange::read_jsonl(detections)?;
            external_store = ExternalDetections::from_records(&external_records)?;
            ResolvedDetector::External(&external_store)
        }
    };
    let segmenter = match &config.segmenter {
        SegmenterBinding::BuiltinThresholdSegmenter => ResolvedSegmenter::Builtin,
        SegmenterBinding::ExternalFiles { masks_dir } => ResolvedSegmenter::External {
            masks_dir: masks_dir.as_path(),
        },
    };
    if let Some(dir) = patch_dir {
        std::fs::create_dir_all(dir)?;
    }

    let detector_ref = &detector;
    let segmenter_ref = &segmenter;
    let outcomes: Vec<Result<ImageResult, PipelineError>> = with_pool(config.threads, || {
        use rayon::prelude::*;
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                process_image(manifest_dir, entry, config, detector_ref, segmenter_ref, patch_dir)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Ok(result) => results.push(result),
            Err(err) => failures.push(ImageFailure {
                image_id: entry.image_id.clone(),
                message: err.to_string(),
            }),
        }
    }
    let report = build_report(&results, config.iou_threshold);
    Ok(PipelineOutcome {
        results,
        report,
        failures,
    })
}

/// One row of a lambda sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub tpr: f64,
    pub fp_avg: f64,
}

/// Sweeps the majority-voting threshold over fixed fused masks.
///
/// Detection and mask construction run once per image; each lambda is a
/// fresh threshold + candidate extraction, evaluated as an operating
/// point. Duplicate lambdas are collapsed; rows come back sorted by
/// lambda ascending.
pub fn sweep_lambda(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    lambdas: &[f64],
) -> Result<Vec<LambdaRow>, PipelineError> {
    config.validate()?;
    if lambdas.is_empty() {
        return Err(PipelineError::Config("lambda list is empty".into()));
    }
    let mut unique: Vec<f64> = lambdas.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    for &lambda in &unique {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(PipelineError::Config(format!(
                "lambda {lambda} must be finite and non-negative"
            )));
        }
    }

    let external_records;
    let external_store;
    let detector = match &config.detector {
        DetectorBinding::BuiltinBlobDetector {
            threshold,
            min_area_fraction,
        } => ResolvedDetector::Builtin(BlobDetectorParams {
            threshold: *threshold,
            min_area_fraction: *min_area_fraction,
        }),
        DetectorBinding::ExternalFiles { detections } => {
            external_records = crate::interchange::read_jsonl(detections)?;
            external_store = ExternalDetections::from_records(&external_records)?;
            ResolvedDetector::External(&external_store)
        }
    };

    // per image: candidates per lambda + truths
    struct SweepImage {
        per_lambda: Vec<Vec<ScoredBox>>,
        truths: Vec<crate::geometry::BoundingBox>,
    }
    let detector_ref = &detector;
    let unique_ref = &unique;
    let images: Vec<Result<SweepImage, PipelineError>> = with_pool(config.threads, || {
        use rayon::prelude::*;
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let sets = match detector_ref {
                    ResolvedDetector::Builtin(_) => {
                        let image = pgm::read_gray(&manifest_dir.join(&entry.image_path))?;
                        detect_stage(&image, &entry.image_id, &config.scales, detector_ref)?
                    }
                    ResolvedDetector::External(_) => {
                        // no pixel data needed for a box-level sweep
                        detect_stage(
                            &GrayImage::filled(entry.native_size, 0),
                            &entry.image_id,
                            &config.scales,
                            detector_ref,
                        )?
                    }
                };
                let fused = build_fused_mask(&sets, entry.native_size)?;
                let per_lambda = unique_ref
                    .iter()
                    .map(|&lambda| {
                        let kept = threshold_mask(&fused, lambda);
                        let labels = label_components(&kept);
                        let candidates = components_to_candidates(&labels, &fused)?;
                        Ok(candidates
                            .iter()
                            .map(|c| ScoredBox {
                                bbox: c.bbox,
                                score: c.peak,
                            })
                            .collect())
                    })
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                let (_, truths) = rasterize_truth(entry)?;
                Ok(SweepImage {
                    per_lambda,
                    truths,
                })
            })
            .collect()
    });
    let images = images.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(unique.len());
    for (li, &lambda) in unique.iter().enumerate() {
        let samples: Vec<ImageSample> = images
            .iter()
            .map(|img| ImageSample {
                predictions: img.per_lambda[li].clone(),
                truths: img.truths.clone(),
            })
            .collect();
        let point: FrocPoint = operating_point(&samples, config.iou_threshold)?;
        rows.push(LambdaRow {
            lambda,
            tpr: point.tpr,
            fp_avg: point.fp_avg,
        });
    }
    Ok(rows)
}

/// Fuses pre-computed multi-scale detections (interchange records) into
/// per-image candidate records in the native frame.
pub fn fuse_records(
    records: &[DetectionRecord],
    manifest: &DatasetManifest,
    lambda: f64,
) -> Result<Vec<DetectionRecord>, PipelineError> {
    let mut by_image: HashMap<&str, Vec<&DetectionRecord>> = HashMap::new();
    for record in records {
        by_image.entry(record.image_id.as_str()).or_default().push(record);
    }
    let mut out = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let image_records = by_image.remove(entry.image_id.as_str()).unwrap_or_default();
        let sets = image_records
            .iter()
            .map(|r| r.into_set())
            .collect::<Result<Vec<_>, _>>()?;
        let candidates = if sets.is_empty() {
            Vec::new()
        } else {
            crate::fusion::msf(&sets, entry.native_size, lambda)?
        };
        out.push(DetectionRecord::from_candidates(
            &entry.image_id,
            entry.native_size,
            &candidates,
        ));
    }
    Ok(out)
}

/// Evaluates externally produced artifacts against manifest truth:
/// native-frame detection records (box metrics) and/or full-image
/// predicted masks named `<image_id>.pgm` (Dice).
pub fn evaluate_files(
    manifest_dir: &Path,
    manifest: &DatasetManifest,
    detections: Option<&[DetectionRecord]>,
    masks_dir: Option<&Path>,
    iou_threshold: f64,
) -> Result<EvalReport, PipelineError> {
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut per_image = Vec::with_capacity(manifest.entries.len());
    let mut dice_sum = 0.0;
    let mut pooled = ConfusionCounts::default();
    let mut dice_count = 0usize;

    let by_image: HashMap<&str, &DetectionRecord> = detections
        .unwrap_or(&[])
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();

    for entry in &manifest.entries {
        let (truth_mask, truth_boxes) = load_truth(manifest_dir, entry)?;
        let predictions = match by_image.get(entry.image_id.as_str()) {
            Some(record) => record.scored_boxes()?,
            None => Vec::new(),
        };
        let image_dice = match masks_dir {
            Some(dir) => {
                let path = dir.join(format!("{}.pgm", entry.image_id));
                let predicted = pgm::read_mask(&path)?;
                if predicted.size() != entry.native_size {
                    return Err(PipelineError::RasterSizeMismatch {
                        image_id: entry.image_id.clone(),
                        got: predicted.size(),
                        expected: entry.native_size,
                    });
                }
                let counts = confusion(&predicted, &truth_mask)?;
                pooled.accumulate(&counts);
                dice_count += 1;
                let d = dice_from_counts(&counts);
                dice_sum += d;
                Some(d)
            }
            None => None,
        };
        let matched = match_detections(&predictions, &truth_boxes, iou_threshold);
        per_image.push(ImageReport {
            image_id: entry.image_id.clone(),
            dice: image_dice,
            tp_boxes: matched.pairs.len() as u32,
            fp_boxes: matched.unmatched_predictions.len() as u32,
            fn_boxes: matched.unmatched_truths.len() as u32,
        });
        samples.push(ImageSample {
            predictions,
            truths: truth_boxes,
        });
    }

    let total_truths: usize = samples.iter().map(|s| s.truths.len()).sum();
    let have_boxes = detections.is_some() && total_truths > 0 && !samples.is_empty();
    let (ap, pr_points, froc_points, op) = if have_boxes {
        let curve = pr_curve(&samples, iou_threshold)?;
        let ap = average_precision(&curve);
        let froc_points = froc(&samples, iou_threshold)?;
        let op = operating_point(&samples, iou_threshold)?;
        (Some(ap), curve.points, froc_points, Some(op))
    } else {
        (None, Vec::new(), Vec::new(), None)
    };
    let (mean_dice, pooled_dice) = if dice_count > 0 {
        (
            Some(dice_sum / dice_count as f64),
            Some(dice_from_counts(&pooled)),
        )
    } else {
        (None, None)
    };
    Ok(EvalReport {
        ap,
        pr_points,
        froc_points,
        operating_point: op,
        per_image,
        mean_dice,
        pixel_pooled_dice: pooled_dice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_has_five_scales_and_operating_defaults() {
        let config = PipelineConfig::default();
        assert_eq!(config.scales.len(), 5);
        assert_eq!(config.scales[0], ImageSize::new(160, 320));
        assert_eq!(config.scales[4], ImageSize::new(480, 960));
        assert_eq!(config.lambda, 0.6);
        assert_eq!(config.patch_size, ImageSize::new(256, 256));
        assert_eq!(config.iou_threshold, 0.5);
        config.validate().unwrap();
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = PipelineConfig {
            lambda: 0.5,
            detector: DetectorBinding::ExternalFiles {
                detections: PathBuf::from("dets.jsonl"),
            },
            ..PipelineConfig::default()
        };
        let text = config.to_json();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, config);
        assert!(text.contains("external_files"));
    }

    #[test]
    fn config_rejects_bad_lambda_and_empty_scales() {
        let mut config = PipelineConfig {
            lambda: -0.1,
            ..PipelineConfig::default()
        };
        assert!(config.validate().is_err());
        config.lambda = f64::NAN;
        assert!(config.validate().is_err());
        // an over-threshold lambda is allowed (empty output everywhere)
        config.lambda = 1.01;
        config.validate().unwrap();
        config.scales.clear();
        assert!(config.validate().is_err());
    }

    #[test]
    fn provider_kind_tags_match_schema() {
        let detector = serde_json::to_value(DetectorBinding::default()).unwrap();
        assert_eq!(detector["kind"], "builtin_blob_detector");
        let segmenter = serde_json::to_value(SegmenterBinding::default()).unwrap();
        assert_eq!(segmenter["kind"], "builtin_threshold_segmenter");
    }
}
