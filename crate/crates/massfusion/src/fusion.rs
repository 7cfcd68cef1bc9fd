//! Multi-scale detection fusion.
//!
//! Detections from several prediction scales are combined into one
//! confidence mask at native resolution: each box paints its confidence
//! score into its interior, the per-box masks are summed and the sum is
//! normalized by `N * max(c_1..c_B)` where `N` is the number of scale
//! sets and `c_i` the confidence scores. Pixels where many scales agree
//! end up near 1; a majority-voting threshold `lambda` then keeps the
//! consensus regions, whose connected components become the fused
//! candidate boxes.
//!
//! Values are never clamped: overlapping boxes from the same scale can
//! push the mask above 1, and `lambda` applies to the raw values.

use thiserror::Error;

use crate::geometry::{scale_box, BoundingBox, GeometryError, ImageSize, ScoredBox};
use crate::raster::{BinaryMask, Grid};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("at least one scale detection set is required")]
    NoScaleSets,
    #[error("detection box {bbox} lies outside its scale frame {scale}")]
    DetectionOutsideScale { bbox: BoundingBox, scale: ImageSize },
    #[error("confidence {score} outside [0, 1]")]
    InvalidConfidence { score: f64 },
    #[error("size mismatch: labels {labels} vs mask {mask}")]
    FrameMismatch { labels: ImageSize, mask: ImageSize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Detections produced at one prediction scale: boxes in that scale's
/// pixel coordinates with confidence scores in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ScaleDetectionSet {
    scale: ImageSize,
    detections: Vec<ScoredBox>,
}

impl ScaleDetectionSet {
    pub fn new(scale: ImageSize, detections: Vec<ScoredBox>) -> Result<Self, FusionError> {
        for det in &detections {
            if !det.bbox.fits_within(scale) {
                return Err(FusionError::DetectionOutsideScale {
                    bbox: det.bbox,
                    scale,
                });
            }
            if !(0.0..=1.0).contains(&det.score) || det.score.is_nan() {
                return Err(FusionError::InvalidConfidence { score: det.score });
            }
        }
        Ok(Self { scale, detections })
    }

    pub fn scale(&self) -> ImageSize {
        self.scale
    }

    pub fn detections(&self) -> &[ScoredBox] {
        &self.detections
    }
}

/// Fused per-pixel confidence grid at native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMask {
    values: Grid<f64>,
}

impl FusionMask {
    pub fn size(&self) -> ImageSize {
        self.values.size()
    }

    #[inline]
    pub fn value(&self, x: u32, y: u32) -> f64 {
        *self.values.get(x, y)
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.as_slice().iter().all(|&v| v == 0.0)
    }
}

/// Candidate region extracted from the thresholded fusion mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedCandidate {
    /// Tight half-open bound of the connected component, native coords.
    pub bbox: BoundingBox,
    /// Maximum fused-mask value inside the component.
    pub peak: f64,
    /// Label assigned by [`label_components`] (1-based).
    pub component_id: u32,
}

/// Builds the normalized fusion mask from one detection set per scale.
///
/// Boxes are mapped into the native frame with outward rounding before
/// their scores are accumulated; confidence masks are never rasterized
/// at scale resolution. With no detections at any scale the mask is all
/// zero.
pub fn build_fused_mask(
    sets: &[ScaleDetectionSet],
    native: ImageSize,
) -> Result<FusionMask, FusionError> {
    if sets.is_empty() {
        return Err(FusionError::NoScaleSets);
    }
    let mut values = Grid::filled(native, 0.0f64);
    let mut max_score = 0.0f64;
    let mut detection_count = 0usize;
    for set in sets {
        for det in set.detections() {
            detection_count += 1;
            max_score = max_score.max(det.score);
        }
    }
    if detection_count == 0 || max_score == 0.0 {
        return Ok(FusionMask { values });
    }
    for set in sets {
        for det in set.detections() {
            let native_box = scale_box(&det.bbox, set.scale(), native)?;
            for y in native_box.min_y()..native_box.max_y() {
                let row = values.row_mut(y);
                for v in &mut row[native_box.min_x() as usize..native_box.max_x() as usize] {
                    *v += det.score;
                }
            }
        }
    }
    let denom = sets.len() as f64 * max_score;
    for v in values.as_mut_slice() {
        *v /= denom;
    }
    Ok(FusionMask { values })
}

/// Majority-voting threshold.
///
/// Keeps pixels with mask value `>= lambda`. `lambda = 0` is read as
/// "keep every detected region", i.e. pixels with a strictly positive
/// value; the literal `>= 0` would keep the entire image.
pub fn threshold_mask(mask: &FusionMask, lambda: f64) -> BinaryMask {
    debug_assert!(lambda >= 0.0);
    let bits: Vec<bool> = mask
        .values
        .as_slice()
        .iter()
        .map(|&v| if lambda == 0.0 { v > 0.0 } else { v >= lambda })
        .collect();
    BinaryMask::from_grid(Grid::from_vec(mask.size(), bits))
}

/// Connected-component labelling of a binary mask.
#[derive(Debug, Clone)]
pub struct ComponentLabels {
    labels: Grid<u32>,
    count: u32,
}

impl ComponentLabels {
    pub fn size(&self) -> ImageSize {
        self.labels.size()
    }

    /// 0 for background, `1..=count()` for components.
    #[inline]
    pub fn label(&self, x: u32, y: u32) -> u32 {
        *self.labels.get(x, y)
    }

    pub fn count(&self) -> u32 {
        self.count
    }
}

/// Labels 8-connected components `1..=K` in raster-scan discovery order.
pub fn label_components(mask: &BinaryMask) -> ComponentLabels {
    let size = mask.size();
    let (w, h) = (size.width(), size.height());
    let mut labels = Grid::filled(size, 0u32);
    let mut count = 0u32;
    let mut queue: Vec<(u32, u32)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || *labels.get(x, y) != 0 {
                continue;
            }
            count += 1;
            labels.set(x, y, count);
            queue.push((x, y));
            while let Some((cx, cy)) = queue.pop() {
                let x_lo = cx.saturating_sub(1);
                let x_hi = (cx + 1).min(w - 1);
                let y_lo = cy.saturating_sub(1);
                let y_hi = (cy + 1).min(h - 1);
                for ny in y_lo..=y_hi {
                    for nx in x_lo..=x_hi {
                        if mask.get(nx, ny) && *labels.get(nx, ny) == 0 {
                            labels.set(nx, ny, count);
                            queue.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    ComponentLabels { labels, count }
}

/// Extracts one candidate per component: the tight half-open bounding
/// box and the peak mask value inside it. Candidates are ordered by
/// peak descending, ties broken by `(min_y, min_x)`.
pub fn components_to_candidates(
    labels: &ComponentLabels,
    mask: &FusionMask,
) -> Result<Vec<FusedCandidate>, FusionError> {
    if labels.size() != mask.size() {
        return Err(FusionError::FrameMismatch {
            labels: labels.size(),
            mask: mask.size(),
        });
    }
    let k = labels.count() as usize;
    if k == 0 {
        return Ok(Vec::new());
    }
    struct Extent {
        min_x: u32,
        min_y: u32,
        max_x: u32,
        max_y: u32,
        peak: f64,
    }
    let mut extents: Vec<Option<Extent>> = Vec::new();
    extents.resize_with(k, || None);
    for y in 0..labels.size().height() {
        for x in 0..labels.size().width() {
            let label = labels.label(x, y);
            if label == 0 {
                continue;
            }
            let value = mask.value(x, y);
            let slot = &mut extents[(label - 1) as usize];
            match slot {
                Some(e) => {
                    e.min_x = e.min_x.min(x);
                    e.min_y = e.min_y.min(y);
                    e.max_x = e.max_x.max(x);
                    e.max_y = e.max_y.max(y);
                    e.peak = e.peak.max(value);
                }
                None => {
                    *slot = Some(Extent {
                        min_x: x,
                        min_y: y,
                        max_x: x,
                        max_y: y,
                        peak: value,
                    });
                }
            }
        }
    }
    let mut candidates: Vec<FusedCandidate> = extents
        .into_iter()
        .enumerate()
        .filter_map(|(i, e)| {
            e.map(|e| FusedCandidate {
                bbox: BoundingBox::new(e.min_x, e.min_y, e.max_x + 1, e.max_y + 1)
                    .expect("component extent is non-empty"),
                peak: e.peak,
                component_id: (i + 1) as u32,
            })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.peak
            .total_cmp(&a.peak)
            .then_with(|| a.bbox.min_y().cmp(&b.bbox.min_y()))
            .then_with(|| a.bbox.min_x().cmp(&b.bbox.min_x()))
    });
    Ok(candidates)
}

/// Full multi-scale fusion: build the mask, threshold at `lambda`,
/// label the result and extract candidate boxes.
pub fn msf(
    sets: &[ScaleDetectionSet],
    native: ImageSize,
    lambda: f64,
) -> Result<Vec<FusedCandidate>, FusionError> {
    let mask = build_fused_mask(sets, native)?;
    let kept = threshold_mask(&mask, lambda);
    let labels = label_components(&kept);
    components_to_candidates(&labels, &mask)
}
