//! Brute-force reference implementations shared by the property and
//! acceptance suites. These deliberately take different computational
//! routes from the library (per-pixel evaluation, label propagation,
//! point-in-polygon) so agreement is meaningful.

// not every test binary uses every oracle
#![allow(dead_code)]

use massfusion::fusion::ScaleDetectionSet;
use massfusion::geometry::{scale_box, BoundingBox, ImageSize, ScoredBox};
use massfusion::raster::BinaryMask;
use massfusion::rng::Rng;

/// Candidate produced by the reference fusion: tight box and peak value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCandidate {
    pub bbox: BoundingBox,
    pub peak: f64,
}

/// Literal per-pixel evaluation of the fusion definition: every pixel
/// sums the confidences of the (native-frame) boxes covering it, the
/// grid is normalized by `N * max(c)`, thresholded at `lambda`, and
/// 8-connected regions are grouped by iterative label propagation.
pub fn oracle_msf(
    sets: &[ScaleDetectionSet],
    native: ImageSize,
    lambda: f64,
) -> Vec<OracleCandidate> {
    let (w, h) = (native.width() as usize, native.height() as usize);
    let mut values = vec![0.0f64; w * h];
    let mut max_score = 0.0f64;
    let mut detections = 0usize;
    for set in sets {
        for det in set.detections() {
            detections += 1;
            max_score = max_score.max(det.score);
        }
    }
    if detections > 0 && max_score > 0.0 {
        for set in sets {
            for det in set.detections() {
                let native_box = scale_box(&det.bbox, set.scale(), native).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        if native_box.contains(x as u32, y as u32) {
                            values[y * w + x] += det.score;
                        }
                    }
                }
            }
        }
        let denom = sets.len() as f64 * max_score;
        for v in &mut values {
            *v /= denom;
        }
    }

    let kept: Vec<bool> = values
        .iter()
        .map(|&v| if lambda == 0.0 { v > 0.0 } else { v >= lambda })
        .collect();

    // iterative min-label propagation until fixpoint
    let mut labels: Vec<usize> = (0..w * h).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !kept[i] {
                    continue;
                }
                let mut best = labels[i];
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if kept[j] && labels[j] < best {
                            best = labels[j];
                        }
                    }
                }
                if best < labels[i] {
                    labels[i] = best;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut groups: std::collections::HashMap<usize, (u32, u32, u32, u32, f64)> =
        std::collections::HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !kept[i] {
                continue;
            }
            let entry = groups
                .entry(labels[i])
                .or_insert((x as u32, y as u32, x as u32, y as u32, values[i]));
            entry.0 = entry.0.min(x as u32);
            entry.1 = entry.1.min(y as u32);
            entry.2 = entry.2.max(x as u32);
            entry.3 = entry.3.max(y as u32);
            entry.4 = entry.4.max(values[i]);
        }
    }
    let mut candidates: Vec<OracleCandidate> = groups
        .into_values()
        .map(|(lx, ly, hx, hy, peak)| OracleCandidate {
            bbox: BoundingBox::new(lx, ly, hx + 1, hy + 1).unwrap(),
            peak,
        })
        .collect();
    candidates.sort_by_key(|c| c.bbox);
    candidates
}

/// Random fusion instance: up to `max_scales` scale sets with up to
/// `max_boxes` boxes each on a grid of at most `max_dim`, plus a lambda.
pub fn random_fusion_instance(
    rng: &mut Rng,
    max_scales: u32,
    max_boxes: u32,
    max_dim: u32,
) -> (Vec<ScaleDetectionSet>, ImageSize, f64) {
    let native = ImageSize::new(rng.uniform_u32(8, max_dim), rng.uniform_u32(8, max_dim));
    let n_scales = rng.uniform_u32(1, max_scales);
    let sets = (0..n_scales)
        .map(|_| {
            let scale = ImageSize::new(rng.uniform_u32(4, max_dim), rng.uniform_u32(4, max_dim));
            let n_boxes = rng.uniform_u32(0, max_boxes);
            let detections = (0..n_boxes)
                .map(|_| {
                    let min_x = rng.uniform_u32(0, scale.width() - 1);
                    let min_y = rng.uniform_u32(0, scale.height() - 1);
                    let max_x = rng.uniform_u32(min_x + 1, scale.width());
                    let max_y = rng.uniform_u32(min_y + 1, scale.height());
                    ScoredBox {
                        bbox: BoundingBox::new(min_x, min_y, max_x, max_y).unwrap(),
                        // dyadic scores keep float sums exactly associative
                        score: rng.uniform_u32(1, 256) as f64 / 256.0,
                    }
                })
                .collect();
            ScaleDetectionSet::new(scale, detections).unwrap()
        })
        .collect();
    let lambda = rng.uniform_u32(0, 100) as f64 / 100.0;
    (sets, native, lambda)
}

/// Sorts library candidates into the oracle's comparison order.
pub fn sorted_library_candidates(
    candidates: &[massfusion::fusion::FusedCandidate],
) -> Vec<OracleCandidate> {
    let mut out: Vec<OracleCandidate> = candidates
        .iter()
        .map(|c| OracleCandidate {
            bbox: c.bbox,
            peak: c.peak,
        })
        .collect();
    out.sort_by_key(|c| c.bbox);
    out
}

/// Point-in-polygon reference: even-odd crossing count (strict) or the
/// center lying exactly on a contour segment.
pub fn oracle_polygon_mask(polygon: &[[f64; 2]], size: ImageSize) -> BinaryMask {
    let mut mask = BinaryMask::empty(size);
    for y in 0..size.height() {
        for x in 0..size.width() {
            let cx = x as f64 + 0.5;
            let cy = y as f64 + 0.5;
            let mut inside = false;
            let mut on_boundary = false;
            for i in 0..polygon.len() {
                let [px, py] = polygon[i];
                let [qx, qy] = polygon[(i + 1) % polygon.len()];
                // exact collinearity + segment bounds
                let cross = (qx - px) * (cy - py) - (qy - py) * (cx - px);
                if cross == 0.0
                    && cx >= px.min(qx)
                    && cx <= px.max(qx)
                    && cy >= py.min(qy)
                    && cy <= py.max(qy)
                {
                    on_boundary = true;
                    break;
                }
                if (py > cy) != (qy > cy) {
                    let x_int = px + (cy - py) * (qx - px) / (qy - py);
                    if cx < x_int {
                        inside = !inside;
                    }
                }
            }
            if inside || on_boundary {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
