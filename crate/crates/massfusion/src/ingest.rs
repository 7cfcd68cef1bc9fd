//! Dataset manifests, ground-truth rasterization, contrast preprocessing
//! and anchor recomputation.
//!
//! The manifest is a JSON document listing images with their native size
//! and truth geometry (polygon contours and/or boxes); paths are kept as
//! written and resolved against the manifest's directory by callers.
//! An entry may carry a `mask_path` pointing at an exact PGM truth mask,
//! which takes precedence over rasterized geometry during evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, GeometryError, ImageSize};
use crate::raster::{BinaryMask, GrayImage};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),
    #[error("{image_id}: native size {width}x{height} must have positive dimensions")]
    InvalidNativeSize {
        image_id: String,
        width: u32,
        height: u32,
    },
    #[error("{image_id}: truth geometry outside the {size} native frame")]
    GeometryOutOfBounds { image_id: String, size: ImageSize },
    #[error("degenerate polygon with {vertices} vertices (need at least 3)")]
    DegeneratePolygon { vertices: usize },
    #[error("{image_id}: polygon vertex is not finite")]
    NonFiniteVertex { image_id: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("k-means needs at least {need} boxes, got {got}")]
    TooFewBoxes { got: usize, need: usize },
    #[error("box dimensions must be finite and positive")]
    InvalidBoxSize,
}

/// Truth geometry of one lesion: a closed polygon contour (pixel
/// coordinates, implicitly closed) or an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthShape {
    Polygon(Vec<[f64; 2]>),
    Box(BoundingBox),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    pub native_size: ImageSize,
    /// Optional exact truth mask (PGM, values {0,255}).
    pub mask_path: Option<PathBuf>,
    pub truth: Vec<TruthShape>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

// ---------------------------------------------------------------------------
// JSON wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    image_id: String,
    image_path: String,
    native_width: u32,
    native_height: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    mask_path: Option<String>,
    #[serde(default)]
    truth: Vec<ShapeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShapeRecord {
    Polygon { polygon: Vec<[f64; 2]> },
    Box { r#box: TruthBoxRecord },
}

#[derive(Serialize, Deserialize)]
struct TruthBoxRecord {
    min_x: u32,
    min_y: u32,
    max_x: u32,
    max_y: u32,
}

fn validate_entry(record: EntryRecord) -> Result<ManifestEntry, IngestError> {
    if record.native_width == 0 || record.native_height == 0 {
        return Err(IngestError::InvalidNativeSize {
            image_id: record.image_id,
            width: record.native_width,
            height: record.native_height,
        });
    }
    let native = ImageSize::new(record.native_width, record.native_height);
    let mut truth = Vec::with_capacity(record.truth.len());
    for shape in record.truth {
        match shape {
            ShapeRecord::Polygon { polygon } => {
                if polygon.len() < 3 {
                    return Err(IngestError::DegeneratePolygon {
                        vertices: polygon.len(),
                    });
                }
                for &[x, y] in &polygon {
                    if !x.is_finite() || !y.is_finite() {
                        return Err(IngestError::NonFiniteVertex {
                            image_id: record.image_id,
                        });
                    }
                    if x < 0.0 || y < 0.0 || x > native.width() as f64 || y > native.height() as f64
                    {
                        return Err(IngestError::GeometryOutOfBounds {
                            image_id: record.image_id,
                            size: native,
                        });
                    }
                }
                truth.push(TruthShape::Polygon(polygon));
            }
            ShapeRecord::Box { r#box } => {
                let bbox =
                    BoundingBox::new(r#box.min_x, r#box.min_y, r#box.max_x, r#box.max_y)?;
                if !bbox.fits_within(native) {
                    return Err(IngestError::GeometryOutOfBounds {
                        image_id: record.image_id,
                        size: native,
                    });
                }
                truth.push(TruthShape::Box(bbox));
            }
        }
    }
    Ok(ManifestEntry {
        image_id: record.image_id,
        image_path: PathBuf::from(record.image_path),
        native_size: native,
        mask_path: record.mask_path.map(PathBuf::from),
        truth,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest, IngestError> {
    let file: ManifestFile = serde_json::from_str(text)?;
    let mut entries = Vec::with_capacity(file.entries.len());
    let mut seen = std::collections::HashSet::new();
    for record in file.entries {
        if !seen.insert(record.image_id.clone()) {
            return Err(IngestError::DuplicateImageId(record.image_id));
        }
        entries.push(validate_entry(record)?);
    }
    Ok(DatasetManifest { entries })
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<(), IngestError> {
    std::fs::write(path, manifest_to_json(manifest))?;
    Ok(())
}

pub fn manifest_to_json(manifest: &DatasetManifest) -> String {
    let file = ManifestFile {
        entries: manifest
            .entries
            .iter()
            .map(|e| EntryRecord {
                image_id: e.image_id.clone(),
                image_path: e.image_path.to_string_lossy().into_owned(),
                native_width: e.native_size.width(),
                native_height: e.native_size.height(),
                mask_path: e.mask_path.as_ref().map(|p| p.to_string_lossy().into_owned()),
                truth: e
                    .truth
                    .iter()
                    .map(|shape| match shape {
                        TruthShape::Polygon(v) => ShapeRecord::Polygon { polygon: v.clone() },
                        TruthShape::Box(b) => ShapeRecord::Box {
                            r#box: TruthBoxRecord {
                                min_x: b.min_x(),
                                min_y: b.min_y(),
                                max_x: b.max_x(),
                                max_y: b.max_y(),
                            },
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("manifest serialization");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Ground-truth rasterization
// ---------------------------------------------------------------------------

/// Fills one polygon onto `mask` using the even-odd rule evaluated at
/// pixel centers; centers lying exactly on the contour count as inside.
///
/// Scanline spans are inclusive at both ends, and an extra pass marks
/// centers that sit on edges or vertices the spans cannot see
/// (horizontal edges, tip vertices).
pub(crate) fn fill_polygon_into(
    mask: &mut BinaryMask,
    polygon: &[[f64; 2]],
) -> Result<(), IngestError> {
    if polygon.len() < 3 {
        return Err(IngestError::DegeneratePolygon {
            vertices: polygon.len(),
        });
    }
    let (w, h) = (mask.width(), mask.height());
    let mut crossings: Vec<f64> = Vec::new();
    for y in 0..h {
        let cy = y as f64 + 0.5;
        crossings.clear();
        for i in 0..polygon.len() {
            let [px, py] = polygon[i];
            let [qx, qy] = polygon[(i + 1) % polygon.len()];
            if (py > cy) != (qy > cy) {
                crossings.push(px + (cy - py) * (qx - px) / (qy - py));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for pair in crossings.chunks_exact(2) {
            let (x0, x1) = (pair[0], pair[1]);
            // centers cx = x + 0.5 with x0 <= cx <= x1
            let lo = (x0 - 0.5).ceil().max(0.0) as i64;
            let hi = (x1 - 0.5).floor().min(w as f64 - 1.0) as i64;
            for x in lo..=hi {
                mask.set(x as u32, y, true);
            }
        }
    }
    mark_contour_centers(mask, polygon);
    Ok(())
}

/// Marks pixel centers lying exactly on the polygon contour.
fn mark_contour_centers(mask: &mut BinaryMask, polygon: &[[f64; 2]]) {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let mut set_center = |cx: f64, cy: f64| {
        let px = cx - 0.5;
        let py = cy - 0.5;
        if px >= 0.0 && py >= 0.0 && px < w && py < h && px == px.floor() && py == py.floor() {
            mask.set(px as u32, py as u32, true);
        }
    };
    for i in 0..polygon.len() {
        let [px, py] = polygon[i];
        let [qx, qy] = polygon[(i + 1) % polygon.len()];
        set_center(px, py);
        if py == qy {
            // horizontal edge: centers along the row cy == py
            let cy = py;
            if (cy - 0.5).fract() == 0.0 && cy >= 0.5 {
                let (lo, hi) = (px.min(qx), px.max(qx));
                let start = (lo - 0.5).ceil().max(0.0) as i64;
                let end = (hi - 0.5).floor().min(w - 1.0) as i64;
                for x in start..=end {
                    set_center(x as f64 + 0.5, cy);
                }
            }
        } else {
            // rows whose center height falls inside the edge's y-span
            let (y_lo, y_hi) = (py.min(qy), py.max(qy));
            let first_row = (y_lo - 0.5).ceil().max(0.0) as i64;
            let last_row = ((y_hi - 0.5).floor()).min(h - 1.0) as i64;
            for row in first_row..=last_row {
                let cy = row as f64 + 0.5;
                if cy < y_lo || cy > y_hi {
                    continue;
                }
                let x_on = px + (cy - py) * (qx - px) / (qy - py);
                set_center(x_on, cy);
            }
        }
    }
}

fn tight_bound(mask: &BinaryMask) -> Option<BoundingBox> {
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                bounds = Some(match bounds {
                    Some((lx, ly, hx, hy)) => (lx.min(x), ly.min(y), hx.max(x), hy.max(y)),
                    None => (x, y, x, y),
                });
            }
        }
    }
    bounds.map(|(lx, ly, hx, hy)| {
        BoundingBox::new(lx, ly, hx + 1, hy + 1).expect("non-empty extent")
    })
}

/// Rasterizes an entry's truth geometry into a native-resolution mask
/// plus one tight box per shape (shapes that cover no pixel centers
/// contribute no box).
pub fn rasterize_truth(
    entry: &ManifestEntry,
) -> Result<(BinaryMask, Vec<BoundingBox>), IngestError> {
    let mut combined = BinaryMask::empty(entry.native_size);
    let mut boxes = Vec::new();
    for shape in &entry.truth {
        match shape {
            TruthShape::Polygon(polygon) => {
                let mut single = BinaryMask::empty(entry.native_size);
                fill_polygon_into(&mut single, polygon)?;
                if let Some(bbox) = tight_bound(&single) {
                    boxes.push(bbox);
                }
                combined.or_assign(&single);
            }
            TruthShape::Box(bbox) => {
                for y in bbox.min_y()..bbox.max_y() {
                    for x in bbox.min_x()..bbox.max_x() {
                        combined.set(x, y, true);
                    }
                }
                boxes.push(*bbox);
            }
        }
    }
    Ok((combined, boxes))
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Histogram equalization by CDF remap.
///
/// `out(v) = round((cdf(v) - cdf_min) * 255 / (N - cdf_min))` with
/// `cdf_min` the CDF at the lowest occupied bin. A constant image is
/// returned unchanged.
pub fn hist_equalize(image: &GrayImage) -> GrayImage {
    let mut counts = [0u64; 256];
    for &v in image.as_slice() {
        counts[v as usize] += 1;
    }
    let total = image.size().pixel_count();
    let mut cdf = [0u64; 256];
    let mut running = 0u64;
    for (bin, &count) in counts.iter().enumerate() {
        running += count;
        cdf[bin] = running;
    }
    let cdf_min = counts
        .iter()
        .zip(cdf.iter())
        .find(|(&count, _)| count > 0)
        .map(|(_, &c)| c)
        .unwrap_or(0);
    if cdf_min == total {
        return image.clone();
    }
    let denom = total - cdf_min;
    let mut lut = [0u8; 256];
    for (bin, entry) in lut.iter_mut().enumerate() {
        let num = (cdf[bin].saturating_sub(cdf_min)) * 255;
        *entry = ((num + denom / 2) / denom) as u8;
    }
    let data = image.as_slice().iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_vec(image.size(), data)
}

// ---------------------------------------------------------------------------
// Anchor recomputation
// ---------------------------------------------------------------------------

/// Number of anchors in a YOLO-style anchor set.
pub const ANCHOR_COUNT: usize = 9;

/// Box dimensions in pixels, the clustering space for anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSize {
    pub width: f64,
    pub height: f64,
}

impl BoxSize {
    pub fn of(bbox: &BoundingBox) -> Self {
        Self {
            width: bbox.width() as f64,
            height: bbox.height() as f64,
        }
    }
}

/// IoU of two boxes aligned at their centers.
fn centered_iou(a: &BoxSize, b: &BoxSize) -> f64 {
    let inter = a.width.min(b.width) * a.height.min(b.height);
    let union = a.width * a.height + b.width * b.height - inter;
    inter / union
}

/// `1 - IoU` of centered boxes: the YOLO anchor-clustering distance.
pub fn anchor_distance(a: &BoxSize, b: &BoxSize) -> f64 {
    1.0 - centered_iou(a, b)
}

/// Nine anchor dimensions, sorted by area ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<BoxSize>,
}

impl AnchorSet {
    pub fn anchors(&self) -> &[BoxSize] {
        &self.anchors
    }

    /// Detector config text convention: rounded `w,h` pairs, e.g.
    /// `10,13, 16,30, 33,23, ...`.
    pub fn to_config_text(&self) -> String {
        self.anchors
            .iter()
            .map(|a| format!("{},{}", a.width.round() as i64, a.height.round() as i64))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Result of one k-means clustering run.
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    pub centroids: Vec<BoxSize>,
    /// Mean `1 - IoU` to the nearest centroid, one entry per iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_EPSILON: f64 = 1e-6;

/// Seeded k-means over `(w, h)` pairs with the `1 - IoU` distance.
///
/// k-means++ initialization, centroid update by arithmetic mean, at most
/// 300 iterations; stops when the mean distance improves by less than
/// 1e-6 or would increase (the update is then discarded, which keeps the
/// objective history non-increasing).
pub fn kmeans_box_clusters(
    boxes: &[BoxSize],
    k: usize,
    seed: u64,
) -> Result<KmeansOutcome, IngestError> {
    if boxes.len() < k {
        return Err(IngestError::TooFewBoxes {
            got: boxes.len(),
            need: k,
        });
    }
    for b in boxes {
        if !(b.width.is_finite() && b.height.is_finite() && b.width > 0.0 && b.height > 0.0) {
            return Err(IngestError::InvalidBoxSize);
        }
    }
    let mut rng = Rng::new(seed);

    // k-means++ seeding
    let mut centroids: Vec<BoxSize> = Vec::with_capacity(k);
    centroids.push(boxes[rng.next_below(boxes.len() as u64) as usize]);
    let mut nearest_d2: Vec<f64> = boxes
        .iter()
        .map(|b| anchor_distance(b, &centroids[0]).powi(2))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest_d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.next_f64() * total;
            let mut pick = boxes.len() - 1;
            for (i, &d2) in nearest_d2.iter().enumerate() {
                if target < d2 {
                    pick = i;
                    break;
                }
                target -= d2;
            }
            pick
        } else {
            rng.next_below(boxes.len() as u64) as usize
        };
        let centroid = boxes[chosen];
        for (slot, b) in nearest_d2.iter_mut().zip(boxes) {
            *slot = slot.min(anchor_distance(b, &centroid).powi(2));
        }
        centroids.push(centroid);
    }

    let assign = |centroids: &[BoxSize]| -> (Vec<usize>, f64) {
        let mut assignments = vec![0usize; boxes.len()];
        let mut total = 0.0;
        for (i, b) in boxes.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c_idx, c) in centroids.iter().enumerate() {
                let d = anchor_distance(b, c);
                if d < best.1 {
                    best = (c_idx, d);
                }
            }
            assignments[i] = best.0;
            total += best.1;
        }
        (assignments, total / boxes.len() as f64)
    };

    let (mut assignments, mut objective) = assign(&centroids);
    let mut objective_history = vec![objective];
    for _ in 1..KMEANS_MAX_ITER {
        let mut sums = vec![(0.0f64, 0.0f64, 0u64); k];
        for (b, &c_idx) in boxes.iter().zip(&assignments) {
            sums[c_idx].0 += b.width;
            sums[c_idx].1 += b.height;
            sums[c_idx].2 += 1;
        }
        let mut next = centroids.clone();
        for (c_idx, &(w_sum, h_sum, n)) in sums.iter().enumerate() {
            if n > 0 {
                next[c_idx] = BoxSize {
                    width: w_sum / n as f64,
                    height: h_sum / n as f64,
                };
            }
        }
        if next == centroids {
            break;
        }
        // evaluate the update before committing, so the history never rises
        // (the mean update is a heuristic under the IoU distance)
        let (next_assignments, next_objective) = assign(&next);
        if next_objective > objective {
            break;
        }
        centroids = next;
        assignments = next_assignments;
        let improvement = objective - next_objective;
        objective = next_objective;
        objective_history.push(objective);
        if improvement < KMEANS_EPSILON {
            break;
        }
    }

    let iterations = objective_history.len();
    Ok(KmeansOutcome {
        centroids,
        objective_history,
        iterations,
    })
}

/// Recomputes the nine anchor settings from truth box dimensions.
pub fn kmeans_anchors(boxes: &[BoxSize], seed: u64) -> Result<AnchorSet, IngestError> {
    let outcome = kmeans_box_clusters(boxes, ANCHOR_COUNT, seed)?;
    let mut anchors = outcome.centroids;
    anchors.sort_by(|a, b| {
        (a.width * a.height)
            .total_cmp(&(b.width * b.height))
            .then(a.width.total_cmp(&b.width))
    });
    Ok(AnchorSet { anchors })
}
