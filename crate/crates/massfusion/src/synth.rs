//! Seeded synthetic phantoms and detection-noise simulation.
//!
//! Phantoms are radially perturbed ellipses with an intensity plateau
//! over a noisy background; the mask geometry uses only integer and
//! exact IEEE arithmetic (no libm), so a given `(spec, seed)` produces
//! bit-identical images, masks and detections on every platform.
//!
//! [`simulate_detections`] turns truth boxes into per-scale detection
//! sets with Bernoulli misses, center/size jitter and Poisson false
//! positives, standing in for a real detector when exercising fusion
//! and evaluation at desk scale.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::fusion::ScaleDetectionSet;
use crate::geometry::{scale_box, BoundingBox, ImageSize, ScoredBox};
use crate::ingest::{self, DatasetManifest, ManifestEntry, TruthShape};
use crate::interchange::{self, DetectionRecord};
use crate::raster::{pgm, BinaryMask, GrayImage, RasterError};
use crate::rng::{substream, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("could not place mass {index} after {retries} retries")]
    PlacementFailed { index: u32, retries: u32 },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Interchange(#[from] interchange::InterchangeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Background gray level of generated phantoms.
pub const BACKGROUND_LEVEL: f64 = 40.0;
/// Plateau gray level inside masses.
pub const MASS_LEVEL: f64 = 180.0;

const PLACEMENT_RETRIES: u32 = 200;
const PLACEMENT_GAP: u32 = 4;
const BOUNDARY_VERTICES: usize = 64;

/// Parameters of one synthetic phantom image.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub native: ImageSize,
    /// Inclusive range for the number of masses.
    pub mass_count_range: (u32, u32),
    /// Inclusive range for each semi-axis, in pixels.
    pub mass_radius_range: (u32, u32),
    /// Radial perturbation fraction; 0 gives exact ellipses.
    pub boundary_irregularity: f64,
    /// Standard deviation of the additive background noise, gray levels.
    pub background_noise_sigma: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Largest half-extent a mass can reach, including the perturbation.
    fn effective_radius(&self, radius: u32) -> u32 {
        (radius as f64 * (1.0 + self.boundary_irregularity)).ceil() as u32 + 1
    }

    fn validate(&self) -> Result<(), SynthError> {
        let (count_lo, count_hi) = self.mass_count_range;
        if count_lo > count_hi {
            return Err(SynthError::InvalidSpec(format!(
                "mass count range ({count_lo}, {count_hi}) is empty"
            )));
        }
        let (r_lo, r_hi) = self.mass_radius_range;
        if count_hi > 0 {
            if r_lo == 0 || r_lo > r_hi {
                return Err(SynthError::InvalidSpec(format!(
                    "mass radius range ({r_lo}, {r_hi}) is empty or zero"
                )));
            }
            let reach = 2 * self.effective_radius(r_hi) + 2;
            let min_dim = self.native.width().min(self.native.height());
            if reach > min_dim {
                return Err(SynthError::InvalidSpec(format!(
                    "masses of radius {r_hi} do not fit inside {}",
                    self.native
                )));
            }
        }
        if self.boundary_irregularity < 0.0 || !self.boundary_irregularity.is_finite() {
            return Err(SynthError::InvalidSpec(
                "boundary irregularity must be a finite non-negative value".into(),
            ));
        }
        if self.background_noise_sigma < 0.0 || !self.background_noise_sigma.is_finite() {
            return Err(SynthError::InvalidSpec(
                "background noise sigma must be a finite non-negative value".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Per-scale detection noise model.
#[derive(Debug, Clone)]
pub struct DetectionNoiseSpec {
    /// Probability that a truth box produces a detection.
    pub detection_probability: f64,
    /// Center offset sigma as a fraction of the box dimensions.
    pub center_jitter_sigma: f64,
    /// Multiplicative size jitter sigma (fraction).
    pub size_jitter_sigma: f64,
    pub confidence_mean: f64,
    pub confidence_sigma: f64,
    /// Expected false positives per image (Poisson).
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl DetectionNoiseSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.detection_probability) {
            return Err(SynthError::InvalidSpec(
                "detection probability must lie in [0, 1]".into(),
            ));
        }
        if self.false_positive_rate < 0.0 || !self.false_positive_rate.is_finite() {
            return Err(SynthError::InvalidSpec(
                "false positive rate must be a finite non-negative value".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// One generated phantom: image, combined truth mask, per-mass boxes.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub truth_boxes: Vec<BoundingBox>,
}

// cos/sin of 2*pi*k/64, k = 0..63, as exact f64 literals so the boundary
// geometry never touches platform libm.
#[allow(clippy::approx_constant)]
#[rustfmt::skip]
const UNIT_COS: [f64; 64] = [
    1.0, 0.9951847266721969, 0.9807852804032304, 0.9569403357322088,
    0.9238795325112867, 0.881921264348355, 0.8314696123025452, 0.773010453362737,
    0.7071067811865476, 0.6343932841636455, 0.5555702330196023, 0.4713967368259978,
    0.38268343236508984, 0.29028467725446233, 0.19509032201612833, 0.09801714032956077,
    6.123233995736766e-17, -0.09801714032956065, -0.1950903220161282, -0.29028467725446216,
    -0.3826834323650897, -0.4713967368259977, -0.555570233019602, -0.6343932841636454,
    -0.7071067811865475, -0.773010453362737, -0.8314696123025453, -0.8819212643483549,
    -0.9238795325112867, -0.9569403357322088, -0.9807852804032304, -0.9951847266721968,
    -1.0, -0.9951847266721969, -0.9807852804032304, -0.9569403357322089,
    -0.9238795325112868, -0.881921264348355, -0.8314696123025455, -0.7730104533627371,
    -0.7071067811865477, -0.6343932841636459, -0.5555702330196022, -0.47139673682599786,
    -0.38268343236509034, -0.29028467725446244, -0.19509032201612866, -0.09801714032956045,
    -1.8369701987210297e-16, 0.09801714032956009, 0.1950903220161283, 0.29028467725446205,
    0.38268343236509, 0.4713967368259976, 0.5555702330196018, 0.6343932841636456,
    0.7071067811865474, 0.7730104533627367, 0.8314696123025452, 0.8819212643483548,
    0.9238795325112865, 0.9569403357322088, 0.9807852804032303, 0.9951847266721969,
];
#[allow(clippy::approx_constant)]
#[rustfmt::skip]
const UNIT_SIN: [f64; 64] = [
    0.0, 0.0980171403295606, 0.19509032201612825, 0.29028467725446233,
    0.3826834323650898, 0.47139673682599764, 0.5555702330196022, 0.6343932841636455,
    0.7071067811865475, 0.773010453362737, 0.8314696123025452, 0.8819212643483549,
    0.9238795325112867, 0.9569403357322089, 0.9807852804032304, 0.9951847266721968,
    1.0, 0.9951847266721969, 0.9807852804032304, 0.9569403357322089,
    0.9238795325112867, 0.881921264348355, 0.8314696123025455, 0.7730104533627371,
    0.7071067811865476, 0.6343932841636455, 0.5555702330196022, 0.47139673682599786,
    0.3826834323650899, 0.2902846772544624, 0.1950903220161286, 0.09801714032956083,
    1.2246467991473532e-16, -0.09801714032956059, -0.19509032201612836, -0.2902846772544621,
    -0.38268343236508967, -0.47139673682599764, -0.555570233019602, -0.6343932841636453,
    -0.7071067811865475, -0.7730104533627367, -0.8314696123025452, -0.8819212643483549,
    -0.9238795325112865, -0.9569403357322088, -0.9807852804032303, -0.9951847266721969,
    -1.0, -0.9951847266721969, -0.9807852804032304, -0.9569403357322089,
    -0.9238795325112866, -0.881921264348355, -0.8314696123025455, -0.7730104533627369,
    -0.7071067811865477, -0.6343932841636459, -0.5555702330196022, -0.4713967368259979,
    -0.3826834323650904, -0.2902846772544625, -0.19509032201612872, -0.0980171403295605,
];

struct MassGeometry {
    center_x: u32,
    center_y: u32,
    radius_x: u32,
    radius_y: u32,
    /// Boundary radius multipliers; empty for exact ellipses.
    multipliers: Vec<f64>,
}

/// Fills one mass into `mask`, returning its tight pixel bound (or
/// `None` when it covers no pixel center, which cannot happen for the
/// radii accepted by validation).
fn rasterize_mass(mask: &mut BinaryMask, mass: &MassGeometry) -> Option<BoundingBox> {
    if mass.multipliers.is_empty() {
        // exact ellipse at pixel centers, pure integer arithmetic:
        // (dx*ry)^2 + (dy*rx)^2 <= (rx*ry)^2
        let (cx, cy) = (mass.center_x as i64, mass.center_y as i64);
        let (rx, ry) = (mass.radius_x as i64, mass.radius_y as i64);
        let rhs = (rx * ry) * (rx * ry);
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for y in (cy - ry).max(0)..=(cy + ry).min(mask.height() as i64 - 1) {
            let dy = y - cy;
            for x in (cx - rx).max(0)..=(cx + rx).min(mask.width() as i64 - 1) {
                let dx = x - cx;
                if (dx * ry) * (dx * ry) + (dy * rx) * (dy * rx) <= rhs {
                    mask.set(x as u32, y as u32, true);
                    bounds = Some(match bounds {
                        Some((lx, ly, hx, hy)) => {
                            (lx.min(x as u32), ly.min(y as u32), hx.max(x as u32), hy.max(y as u32))
                        }
                        None => (x as u32, y as u32, x as u32, y as u32),
                    });
                }
            }
        }
        bounds.map(|(lx, ly, hx, hy)| BoundingBox::new(lx, ly, hx + 1, hy + 1).expect("mass extent"))
    } else {
        let cx = mass.center_x as f64 + 0.5;
        let cy = mass.center_y as f64 + 0.5;
        let polygon: Vec<[f64; 2]> = (0..BOUNDARY_VERTICES)
            .map(|k| {
                let m = mass.multipliers[k];
                [
                    cx + m * mass.radius_x as f64 * UNIT_COS[k],
                    cy + m * mass.radius_y as f64 * UNIT_SIN[k],
                ]
            })
            .collect();
        let mut single = BinaryMask::empty(mask.size());
        ingest::fill_polygon_into(&mut single, &polygon).ok()?;
        let bound = tight_bound(&single);
        mask.or_assign(&single);
        bound
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
    bounds.map(|(lx, ly, hx, hy)| BoundingBox::new(lx, ly, hx + 1, hy + 1).expect("extent"))
}

/// Smoothed zero-mean boundary perturbation in `[-1, 1]` per vertex.
fn boundary_multipliers(rng: &mut Rng, irregularity: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..BOUNDARY_VERTICES)
        .map(|_| rng.uniform_f64(-1.0, 1.0))
        .collect();
    // circular moving average, window 5
    let smoothed: Vec<f64> = (0..BOUNDARY_VERTICES)
        .map(|k| {
            let mut sum = 0.0;
            for offset in -2i64..=2 {
                let idx = (k as i64 + offset).rem_euclid(BOUNDARY_VERTICES as i64) as usize;
                sum += raw[idx];
            }
            sum / 5.0
        })
        .collect();
    let mean = smoothed.iter().sum::<f64>() / BOUNDARY_VERTICES as f64;
    smoothed
        .iter()
        .map(|p| (1.0 + irregularity * (p - mean)).max(0.1))
        .collect()
}

/// Generates one phantom. Deterministic in `spec` (including its seed).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, SynthError> {
    spec.validate()?;
    let mut geom_rng = Rng::new(substream(spec.seed, 0));
    let mut noise_rng = Rng::new(substream(spec.seed, 1));

    let count = {
        let (lo, hi) = spec.mass_count_range;
        geom_rng.uniform_u32(lo, hi)
    };

    let mut mask = BinaryMask::empty(spec.native);
    let mut truth_boxes = Vec::with_capacity(count as usize);
    let mut occupied: Vec<BoundingBox> = Vec::new();
    for index in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let (r_lo, r_hi) = spec.mass_radius_range;
            let radius_x = geom_rng.uniform_u32(r_lo, r_hi);
            let radius_y = geom_rng.uniform_u32(r_lo, r_hi);
            let eff_x = spec.effective_radius(radius_x);
            let eff_y = spec.effective_radius(radius_y);
            let center_x = geom_rng.uniform_u32(eff_x, spec.native.width() - 1 - eff_x);
            let center_y = geom_rng.uniform_u32(eff_y, spec.native.height() - 1 - eff_y);
            let reach = BoundingBox::new(
                (center_x - eff_x).saturating_sub(PLACEMENT_GAP),
                (center_y - eff_y).saturating_sub(PLACEMENT_GAP),
                (center_x + eff_x + 1 + PLACEMENT_GAP).min(spec.native.width()),
                (center_y + eff_y + 1 + PLACEMENT_GAP).min(spec.native.height()),
            )
            .expect("reach box is non-empty");
            if occupied.iter().any(|o| o.intersection(&reach).is_some()) {
                continue;
            }
            let multipliers = if spec.boundary_irregularity == 0.0 {
                Vec::new()
            } else {
                boundary_multipliers(&mut geom_rng, spec.boundary_irregularity)
            };
            let mass = MassGeometry {
                center_x,
                center_y,
                radius_x,
                radius_y,
                multipliers,
            };
            if let Some(bbox) = rasterize_mass(&mut mask, &mass) {
                truth_boxes.push(bbox);
            }
            occupied.push(reach);
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::PlacementFailed {
                index,
                retries: PLACEMENT_RETRIES,
            });
        }
    }

    // single noise field; masses are a plateau on top of it
    let sigma = spec.background_noise_sigma;
    let mut data = Vec::with_capacity(spec.native.pixel_count() as usize);
    for y in 0..spec.native.height() {
        for x in 0..spec.native.width() {
            let level = if mask.get(x, y) { MASS_LEVEL } else { BACKGROUND_LEVEL };
            let value = if sigma == 0.0 {
                level
            } else {
                level + sigma * noise_rng.gaussian_coarse()
            };
            data.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Phantom {
        image: GrayImage::from_vec(spec.native, data),
        mask,
        truth_boxes,
    })
}

// False-positive box dimensions, native pixels, derived from the frame.
fn fp_size_range(native: ImageSize) -> (u32, u32) {
    let min_dim = native.width().min(native.height());
    let lo = (min_dim / 16).clamp(4, 24);
    let hi = (min_dim / 4).clamp(lo + 1, 96);
    (lo, hi)
}

/// Simulates the detections one detector pass at `scale` would produce
/// for an image with the given truth boxes (native frame).
///
/// Each truth box is kept with `detection_probability`; kept boxes get
/// center and size jitter in the native frame before being mapped to
/// `scale` coordinates. False positives are Poisson-distributed and
/// placed uniformly, excluding the truth boxes dilated by half their
/// own size per side, so evaluation never confuses them with hits.
pub fn simulate_detections(
    truth_boxes: &[BoundingBox],
    native: ImageSize,
    scale: ImageSize,
    noise: &DetectionNoiseSpec,
) -> Result<ScaleDetectionSet, SynthError> {
    noise.validate()?;
    let mut rng = Rng::new(noise.seed);
    let mut detections: Vec<ScoredBox> = Vec::new();

    let push_native_box = |rng: &mut Rng, bbox: BoundingBox, dets: &mut Vec<ScoredBox>| {
        if let Ok(scaled) = scale_box(&bbox, native, scale) {
            let score = (noise.confidence_mean + rng.gaussian() * noise.confidence_sigma)
                .clamp(0.0, 1.0);
            dets.push(ScoredBox {
                bbox: scaled,
                score,
            });
        }
    };

    for truth in truth_boxes {
        if rng.next_f64() >= noise.detection_probability {
            continue;
        }
        let w = truth.width() as f64;
        let h = truth.height() as f64;
        let center_x = truth.min_x() as f64 + w / 2.0 + rng.gaussian() * noise.center_jitter_sigma * w;
        let center_y = truth.min_y() as f64 + h / 2.0 + rng.gaussian() * noise.center_jitter_sigma * h;
        let half_w = (w * (1.0 + rng.gaussian() * noise.size_jitter_sigma) / 2.0).max(0.5);
        let half_h = (h * (1.0 + rng.gaussian() * noise.size_jitter_sigma) / 2.0).max(0.5);
        let min_x = ((center_x - half_w).round().max(0.0)) as u32;
        let min_y = ((center_y - half_h).round().max(0.0)) as u32;
        let max_x = ((center_x + half_w).round()).min(native.width() as f64) as u32;
        let max_y = ((center_y + half_h).round()).min(native.height() as f64) as u32;
        let bbox = match BoundingBox::new(min_x, min_y, max_x.max(min_x + 1), max_y.max(min_y + 1))
            .ok()
            .and_then(|b| b.clip_to(native))
        {
            Some(b) => b,
            None => continue,
        };
        push_native_box(&mut rng, bbox, &mut detections);
    }

    // dilated truth regions excluded from false-positive placement
    let exclusions: Vec<BoundingBox> = truth_boxes
        .iter()
        .map(|t| {
            let dx = t.width() / 2;
            let dy = t.height() / 2;
            BoundingBox::new(
                t.min_x().saturating_sub(dx),
                t.min_y().saturating_sub(dy),
                (t.max_x() + dx).min(native.width()),
                (t.max_y() + dy).min(native.height()),
            )
            .expect("dilated box is non-empty")
        })
        .collect();

    let fp_count = rng.poisson(noise.false_positive_rate);
    let (fp_lo, fp_hi) = fp_size_range(native);
    for _ in 0..fp_count {
        for _ in 0..PLACEMENT_RETRIES {
            let fw = rng.uniform_u32(fp_lo, fp_hi);
            let fh = rng.uniform_u32(fp_lo, fp_hi);
            if fw >= native.width() || fh >= native.height() {
                continue;
            }
            let min_x = rng.uniform_u32(0, native.width() - fw - 1);
            let min_y = rng.uniform_u32(0, native.height() - fh - 1);
            let bbox = BoundingBox::new(min_x, min_y, min_x + fw, min_y + fh)
                .expect("positive dimensions");
            if exclusions.iter().any(|e| e.intersection(&bbox).is_some()) {
                continue;
            }
            push_native_box(&mut rng, bbox, &mut detections);
            break;
        }
    }

    Ok(ScaleDetectionSet::new(scale, detections).expect("simulated detections are valid"))
}

/// One synthetic image with its simulated per-scale detections.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image_id: String,
    pub phantom: Phantom,
    pub detections: Vec<ScaleDetectionSet>,
}

/// Dataset-level generation parameters.
#[derive(Debug, Clone)]
pub struct SynthDatasetSpec {
    pub phantom: PhantomSpec,
    pub noise: DetectionNoiseSpec,
    pub scales: Vec<ImageSize>,
    pub count: u32,
}

/// Generates `count` images; image `i` derives its phantom and per-scale
/// noise streams from `substream(seed, i)`, so images are independent
/// and the set is reproducible regardless of generation order.
pub fn generate_dataset(spec: &SynthDatasetSpec) -> Result<Vec<SynthImage>, SynthError> {
    (0..spec.count)
        .map(|i| {
            let base = substream(spec.phantom.seed, i as u64);
            let phantom = generate_phantom(&spec.phantom.with_seed(substream(base, 0)))?;
            let detections = spec
                .scales
                .iter()
                .enumerate()
                .map(|(s, &scale)| {
                    let noise = spec.noise.with_seed(substream(base, 1 + s as u64));
                    simulate_detections(&phantom.truth_boxes, spec.phantom.native, scale, &noise)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SynthImage {
                image_id: format!("img_{i:04}"),
                phantom,
                detections,
            })
        })
        .collect()
}

/// Files written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub manifest: PathBuf,
    pub detections: PathBuf,
    pub image_count: u32,
}

/// Emits a complete on-disk benchmark: PGM images and truth masks, a
/// manifest with truth boxes and mask paths, and a JSONL detections
/// file covering every configured scale.
pub fn write_dataset(dir: &Path, spec: &SynthDatasetSpec) -> Result<DatasetPaths, SynthError> {
    let images = generate_dataset(spec)?;
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;

    let mut entries = Vec::with_capacity(images.len());
    let mut records = Vec::new();
    for img in &images {
        let image_rel = format!("images/{}.pgm", img.image_id);
        let mask_rel = format!("masks/{}.pgm", img.image_id);
        pgm::write_gray(&dir.join(&image_rel), &img.phantom.image)?;
        pgm::write_mask(&dir.join(&mask_rel), &img.phantom.mask)?;
        entries.push(ManifestEntry {
            image_id: img.image_id.clone(),
            image_path: PathBuf::from(image_rel),
            native_size: spec.phantom.native,
            mask_path: Some(PathBuf::from(mask_rel)),
            truth: img.phantom.truth_boxes.iter().copied().map(TruthShape::Box).collect(),
        });
        for set in &img.detections {
            records.push(DetectionRecord::from_set(&img.image_id, set));
        }
    }
    let manifest_path = dir.join("manifest.json");
    ingest::save_manifest(&manifest_path, &DatasetManifest { entries })?;
    let detections_path = dir.join("detections.jsonl");
    interchange::write_jsonl(&detections_path, &records)?;
    Ok(DatasetPaths {
        manifest: manifest_path,
        detections: detections_path,
        image_count: spec.count,
    })
}
