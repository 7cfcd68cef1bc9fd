//! Built-in classical detection and segmentation providers.
//!
//! These stand in for learned models so the full pipeline can run and
//! be verified end to end: a threshold-plus-components blob detector
//! for stage one and an Otsu patch segmenter for stage two. External
//! neural providers plug in through the detections interchange file and
//! per-candidate mask files instead (see the pipeline module).

use crate::fusion::{label_components, ScaleDetectionSet};
use crate::geometry::{extract_patch, BoundingBox, ImageSize, ScoredBox};
use crate::raster::{BinaryMask, GrayImage, Grid};

/// Parameters of the built-in blob detector.
#[derive(Debug, Clone)]
pub struct BlobDetectorParams {
    /// Fixed foreground threshold; `None` selects Otsu's threshold.
    pub threshold: Option<u8>,
    /// Components smaller than this fraction of the frame are dropped.
    pub min_area_fraction: f64,
}

impl Default for BlobDetectorParams {
    fn default() -> Self {
        Self {
            threshold: None,
            min_area_fraction: 1e-4,
        }
    }
}

/// Otsu's threshold over an intensity histogram: the split maximizing
/// between-class variance. `None` when the histogram has a single
/// occupied bin (nothing separable). Foreground is `value > t`.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if total == 0 || occupied < 2 {
        return None;
    }
    let weighted_sum: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let mut best = (0u8, f64::NEG_INFINITY);
    let mut w_bg = 0.0f64;
    let mut sum_bg = 0.0f64;
    for (t, &count) in hist.iter().enumerate().take(255) {
        w_bg += count as f64;
        if w_bg == 0.0 {
            continue;
        }
        let w_fg = total as f64 - w_bg;
        if w_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * count as f64;
        let mean_bg = sum_bg / w_bg;
        let mean_fg = (weighted_sum - sum_bg) / w_fg;
        let var = w_bg * w_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if var > best.1 {
            best = (t as u8, var);
        }
    }
    Some(best.0)
}

fn histogram(image: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in image.as_slice() {
        hist[v as usize] += 1;
    }
    hist
}

/// Runs the blob detector at one prediction scale: the image is
/// resampled to `scale`, thresholded, and each sufficiently large
/// 8-connected component becomes a detection whose confidence is the
/// normalized mean intensity contrast between the component interior
/// and the background.
pub fn detect_blobs(
    image: &GrayImage,
    scale: ImageSize,
    params: &BlobDetectorParams,
) -> ScaleDetectionSet {
    let full = BoundingBox::new(0, 0, image.width(), image.height()).expect("image frame");
    let (scaled, _) = extract_patch(image, full, scale).expect("full window fits");
    let foreground = match params.threshold.or_else(|| otsu_threshold(&histogram(&scaled))) {
        Some(t) => binarize(&scaled, t),
        None => return ScaleDetectionSet::new(scale, Vec::new()).expect("empty set"),
    };
    let labels = label_components(&foreground);
    if labels.count() == 0 {
        return ScaleDetectionSet::new(scale, Vec::new()).expect("empty set");
    }

    let min_area = (params.min_area_fraction * scale.pixel_count() as f64).max(1.0) as u64;
    let k = labels.count() as usize;
    let mut areas = vec![0u64; k];
    let mut intensity_sums = vec![0u64; k];
    let mut bounds: Vec<Option<(u32, u32, u32, u32)>> = vec![None; k];
    let mut bg_sum = 0u64;
    let mut bg_count = 0u64;
    for y in 0..scale.height() {
        for x in 0..scale.width() {
            let value = *scaled.get(x, y) as u64;
            let label = labels.label(x, y);
            if label == 0 {
                bg_sum += value;
                bg_count += 1;
                continue;
            }
            let idx = (label - 1) as usize;
            areas[idx] += 1;
            intensity_sums[idx] += value;
            bounds[idx] = Some(match bounds[idx] {
                Some((lx, ly, hx, hy)) => (lx.min(x), ly.min(y), hx.max(x), hy.max(y)),
                None => (x, y, x, y),
            });
        }
    }
    let bg_mean = if bg_count > 0 {
        bg_sum as f64 / bg_count as f64
    } else {
        0.0
    };
    let mut detections = Vec::new();
    for idx in 0..k {
        if areas[idx] < min_area {
            continue;
        }
        let (lx, ly, hx, hy) = bounds[idx].expect("labelled component has pixels");
        let mean = intensity_sums[idx] as f64 / areas[idx] as f64;
        let score = ((mean - bg_mean) / 255.0).clamp(0.0, 1.0);
        detections.push(ScoredBox {
            bbox: BoundingBox::new(lx, ly, hx + 1, hy + 1).expect("component extent"),
            score,
        });
    }
    ScaleDetectionSet::new(scale, detections).expect("detections lie within the frame")
}

fn binarize(image: &GrayImage, threshold: u8) -> BinaryMask {
    let bits: Vec<bool> = image.as_slice().iter().map(|&v| v > threshold).collect();
    BinaryMask::from_grid(Grid::from_vec(image.size(), bits))
}

/// Segments one candidate patch: Otsu threshold, keep only the largest
/// foreground component. A patch with nothing separable (uniform
/// intensity) yields an empty mask.
pub fn segment_patch(patch: &GrayImage) -> BinaryMask {
    let threshold = match otsu_threshold(&histogram(patch)) {
        Some(t) => t,
        None => return BinaryMask::empty(patch.size()),
    };
    let foreground = binarize(patch, threshold);
    let labels = label_components(&foreground);
    if labels.count() == 0 {
        return BinaryMask::empty(patch.size());
    }
    let mut areas = vec![0u64; labels.count() as usize];
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            let label = labels.label(x, y);
            if label > 0 {
                areas[(label - 1) as usize] += 1;
            }
        }
    }
    let largest = 1 + areas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one component") as u32;
    let mut mask = BinaryMask::empty(patch.size());
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            if labels.label(x, y) == largest {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
