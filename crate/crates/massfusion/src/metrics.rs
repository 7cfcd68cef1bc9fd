//! Detection and segmentation evaluation: IoU matching, precision-recall
//! and average precision, FROC curves with operating points, and
//! pixel-level confusion counts with Dice scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, ImageSize, ScoredBox};
use crate::raster::BinaryMask;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth boxes: recall is undefined")]
    NoGroundTruth,
    #[error("at least one image is required")]
    NoImages,
    #[error("mask size mismatch: {a} vs {b}")]
    MaskSizeMismatch { a: ImageSize, b: ImageSize },
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageSample {
    pub predictions: Vec<ScoredBox>,
    pub truths: Vec<BoundingBox>,
}

/// One matched (prediction, truth) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub prediction: usize,
    pub truth: usize,
    pub iou: f64,
}

/// Outcome of greedy IoU matching in one image. Every prediction and
/// every truth appears in at most one pair; every paired IoU meets the
/// threshold.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_truths: Vec<usize>,
}

/// Greedy matching in descending prediction score.
///
/// Each prediction claims the unmatched truth with the highest IoU, if
/// that IoU reaches `iou_threshold`. Score ties keep input order; IoU
/// ties go to the lowest truth index.
pub fn match_detections(
    predictions: &[ScoredBox],
    truths: &[BoundingBox],
    iou_threshold: f64,
) -> MatchResult {
    debug_assert!(iou_threshold > 0.0 && iou_threshold <= 1.0);
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));

    let mut truth_taken = vec![false; truths.len()];
    let mut result = MatchResult::default();
    for &pred_idx in &order {
        let pred_box = predictions[pred_idx].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (truth_idx, truth_box) in truths.iter().enumerate() {
            if truth_taken[truth_idx] {
                continue;
            }
            let iou = pred_box.iou(truth_box);
            let better = match best {
                Some((_, best_iou)) => iou > best_iou,
                None => true,
            };
            if better {
                best = Some((truth_idx, iou));
            }
        }
        match best {
            Some((truth_idx, iou)) if iou >= iou_threshold => {
                truth_taken[truth_idx] = true;
                result.pairs.push(MatchedPair {
                    prediction: pred_idx,
                    truth: truth_idx,
                    iou,
                });
            }
            _ => result.unmatched_predictions.push(pred_idx),
        }
    }
    result
        .unmatched_truths
        .extend((0..truths.len()).filter(|&t| !truth_taken[t]));
    result
}

/// One point of a precision-recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_threshold: f64,
}

/// Precision-recall curve: one point per unique prediction score,
/// recalls non-decreasing along the sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Labels every prediction TP/FP by greedy matching, then flattens to
/// `(score, is_tp)` over all images together with the truth total.
fn greedy_labels(samples: &[ImageSample], iou_threshold: f64) -> (Vec<(f64, bool)>, u64) {
    let mut labels: Vec<(f64, bool)> = Vec::new();
    let mut total_truths = 0u64;
    for sample in samples {
        total_truths += sample.truths.len() as u64;
        let matched = match_detections(&sample.predictions, &sample.truths, iou_threshold);
        let mut is_tp = vec![false; sample.predictions.len()];
        for pair in &matched.pairs {
            is_tp[pair.prediction] = true;
        }
        for (pred, &tp) in sample.predictions.iter().zip(&is_tp) {
            debug_assert!(pred.score.is_finite());
            labels.push((pred.score, tp));
        }
    }
    labels.sort_by(|a, b| b.0.total_cmp(&a.0));
    (labels, total_truths)
}

/// Sweeps unique scores in descending order and reports cumulative
/// precision/recall against the total truth count.
pub fn pr_curve(samples: &[ImageSample], iou_threshold: f64) -> Result<PrCurve, MetricsError> {
    let (labels, total_truths) = greedy_labels(samples, iou_threshold);
    if total_truths == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    for (i, &(score, is_tp)) in labels.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let is_last_of_score = labels.get(i + 1).is_none_or(|next| next.0 != score);
        if is_last_of_score {
            points.push(PrPoint {
                recall: tp as f64 / total_truths as f64,
                precision: tp as f64 / (tp + fp) as f64,
                score_threshold: score,
            });
        }
    }
    Ok(PrCurve { points })
}

/// Area under the precision envelope (all-point interpolation): the sum
/// over recall increments of the maximum precision at or beyond that
/// recall. An empty curve scores 0.
pub fn average_precision(curve: &PrCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let n = curve.points.len();
    // envelope[i] = max precision over points i..
    let mut envelope = vec![0.0f64; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (point, &env) in curve.points.iter().zip(&envelope) {
        ap += (point.recall - prev_recall) * env;
        prev_recall = point.recall;
    }
    ap
}

/// One point of a free-response operating characteristic: true-positive
/// rate against average false positives per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub tpr: f64,
    pub fp_avg: f64,
}

/// FROC sweep: one point per unique score threshold, in descending
/// score order. With no predictions at all the curve is the single
/// point `(0, 0)`.
pub fn froc(samples: &[ImageSample], iou_threshold: f64) -> Result<Vec<FrocPoint>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoImages);
    }
    let (labels, total_truths) = greedy_labels(samples, iou_threshold);
    if total_truths == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    let image_count = samples.len() as f64;
    if labels.is_empty() {
        return Ok(vec![FrocPoint { tpr: 0.0, fp_avg: 0.0 }]);
    }
    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    for (i, &(score, is_tp)) in labels.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let is_last_of_score = labels.get(i + 1).is_none_or(|next| next.0 != score);
        if is_last_of_score {
            points.push(FrocPoint {
                tpr: tp as f64 / total_truths as f64,
                fp_avg: fp as f64 / image_count,
            });
        }
    }
    Ok(points)
}

/// Single operating point of a fixed candidate set (no score sweep):
/// every prediction counts, matched truths give the TPR and unmatched
/// predictions the average false positives per image.
pub fn operating_point(
    samples: &[ImageSample],
    iou_threshold: f64,
) -> Result<FrocPoint, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoImages);
    }
    let mut total_truths = 0u64;
    let mut matched = 0u64;
    let mut false_pos = 0u64;
    for sample in samples {
        total_truths += sample.truths.len() as u64;
        let result = match_detections(&sample.predictions, &sample.truths, iou_threshold);
        matched += result.pairs.len() as u64;
        false_pos += result.unmatched_predictions.len() as u64;
    }
    if total_truths == 0 {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(FrocPoint {
        tpr: matched as f64 / total_truths as f64,
        fp_avg: false_pos as f64 / samples.len() as f64,
    })
}

/// Pixel-level confusion counts between a predicted and a truth mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Accumulates another image's counts (pixel pooling).
    pub fn accumulate(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts, MetricsError> {
    if pred.size() != truth.size() {
        return Err(MetricsError::MaskSizeMismatch {
            a: pred.size(),
            b: truth.size(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        match (p, t) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_pos += 1,
            (false, true) => counts.false_neg += 1,
            (false, false) => counts.true_neg += 1,
        }
    }
    Ok(counts)
}

/// Dice from confusion counts: `2TP / (2TP + FP + FN)`. Two empty masks
/// (no foreground anywhere) score 1.
pub fn dice_from_counts(counts: &ConfusionCounts) -> f64 {
    let denom = 2 * counts.true_pos + counts.false_pos + counts.false_neg;
    if denom == 0 {
        return 1.0;
    }
    2.0 * counts.true_pos as f64 / denom as f64
}

pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64, MetricsError> {
    Ok(dice_from_counts(&confusion(pred, truth)?))
}

/// Per-image line of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub dice: Option<f64>,
    pub tp_boxes: u32,
    pub fp_boxes: u32,
    pub fn_boxes: u32,
}

/// Aggregate evaluation output, serialized as JSON by the pipeline.
///
/// `mean_dice` averages per-image Dice scores; `pixel_pooled_dice`
/// pools confusion counts over all images before the ratio. Curve and
/// AP fields are absent when the input had no ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: Option<f64>,
    pub pr_points: Vec<PrPoint>,
    pub froc_points: Vec<FrocPoint>,
    pub operating_point: Option<FrocPoint>,
    pub per_image: Vec<ImageReport>,
    pub mean_dice: Option<f64>,
    pub pixel_pooled_dice: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

/// CSV export of a PR curve: `recall,precision,score_threshold`.
pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("recall,precision,score_threshold\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.recall, p.precision, p.score_threshold));
    }
    out
}

/// CSV export of FROC points: `fp_avg,tpr`.
pub fn froc_csv(points: &[FrocPoint]) -> String {
    let mut out = String::from("fp_avg,tpr\n");
    for p in points {
        out.push_str(&format!("{},{}\n", p.fp_avg, p.tpr));
    }
    out
}
