//! Box and raster geometry: areas, IoU, frame changes between prediction
//! scales and native resolution, patch extraction and mask reconstruction.
//!
//! All boxes use half-open pixel intervals: pixel `(x, y)` lies inside a
//! box iff `min_x <= x < max_x` and `min_y <= y < max_y`. Frame changes
//! round the minimum corner down and the maximum corner up, so a box
//! never loses pixel coverage when moved between resolutions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{BinaryMask, Grid, GrayImage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("invalid box ({min_x},{min_y},{max_x},{max_y}): min must be strictly below max")]
    InvalidBox {
        min_x: u32,
        min_y: u32,
        max_x: u32,
        max_y: u32,
    },
    #[error("box {bbox} lies outside frame {frame}")]
    OutsideFrame { bbox: BoundingBox, frame: ImageSize },
    #[error("window {window} does not fit image {image}")]
    WindowOutsideImage { window: BoundingBox, image: ImageSize },
    #[error("patch size {got} does not match transform patch size {expected}")]
    PatchSizeMismatch { got: ImageSize, expected: ImageSize },
}

/// Positive pixel dimensions of a raster frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawImageSize")]
pub struct ImageSize {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct RawImageSize {
    width: u32,
    height: u32,
}

impl TryFrom<RawImageSize> for ImageSize {
    type Error = String;

    fn try_from(raw: RawImageSize) -> Result<Self, String> {
        if raw.width == 0 || raw.height == 0 {
            return Err(format!(
                "image size {}x{} must have positive dimensions",
                raw.width, raw.height
            ));
        }
        Ok(ImageSize::new(raw.width, raw.height))
    }
}

impl ImageSize {
    /// Panics if either dimension is zero.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

impl std::fmt::Display for ImageSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Half-open pixel rectangle `[min_x, max_x) x [min_y, max_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundingBox {
    min_x: u32,
    min_y: u32,
    max_x: u32,
    max_y: u32,
}

impl BoundingBox {
    pub fn new(min_x: u32, min_y: u32, max_x: u32, max_y: u32) -> Result<Self, GeometryError> {
        if min_x >= max_x || min_y >= max_y {
            return Err(GeometryError::InvalidBox {
                min_x,
                min_y,
                max_x,
                max_y,
            });
        }
        Ok(Self {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn min_x(&self) -> u32 {
        self.min_x
    }

    pub fn min_y(&self) -> u32 {
        self.min_y
    }

    pub fn max_x(&self) -> u32 {
        self.max_x
    }

    pub fn max_y(&self) -> u32 {
        self.max_y
    }

    pub fn width(&self) -> u32 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> u32 {
        self.max_y - self.min_y
    }

    /// Pixel count of the (half-open) interior.
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.min_x <= x && x < self.max_x && self.min_y <= y && y < self.max_y
    }

    pub fn fits_within(&self, frame: ImageSize) -> bool {
        self.max_x <= frame.width() && self.max_y <= frame.height()
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let min_x = self.min_x.max(other.min_x);
        let min_y = self.min_y.max(other.min_y);
        let max_x = self.max_x.min(other.max_x);
        let max_y = self.max_y.min(other.max_y);
        if min_x < max_x && min_y < max_y {
            Some(BoundingBox {
                min_x,
                min_y,
                max_x,
                max_y,
            })
        } else {
            None
        }
    }

    /// Intersection-over-union; 0 for disjoint boxes.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = match self.intersection(other) {
            Some(b) => b.area(),
            None => return 0.0,
        };
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Restricts the box to `frame`; `None` if nothing remains.
    pub fn clip_to(&self, frame: ImageSize) -> Option<BoundingBox> {
        let max_x = self.max_x.min(frame.width());
        let max_y = self.max_y.min(frame.height());
        if self.min_x < max_x && self.min_y < max_y {
            Some(BoundingBox {
                min_x: self.min_x,
                min_y: self.min_y,
                max_x,
                max_y,
            })
        } else {
            None
        }
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.min_x, self.min_y, self.max_x, self.max_y
        )
    }
}

/// A bounding box with an attached confidence score: the currency of
/// detection providers, fusion input and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Maps `b` from the `from` frame into the `to` frame.
///
/// Coordinates are scaled per axis with exact integer arithmetic; the
/// minimum corner rounds down and the maximum corner rounds up, so the
/// result covers every pixel the source box covered and never collapses
/// to zero area.
pub fn scale_box(
    b: &BoundingBox,
    from: ImageSize,
    to: ImageSize,
) -> Result<BoundingBox, GeometryError> {
    if !b.fits_within(from) {
        return Err(GeometryError::OutsideFrame { bbox: *b, frame: from });
    }
    let floor_scale = |v: u32, num: u32, den: u32| (v as u64 * num as u64 / den as u64) as u32;
    let ceil_scale = |v: u32, num: u32, den: u32| {
        ((v as u64 * num as u64).div_ceil(den as u64)) as u32
    };
    Ok(BoundingBox {
        min_x: floor_scale(b.min_x, to.width(), from.width()),
        min_y: floor_scale(b.min_y, to.height(), from.height()),
        max_x: ceil_scale(b.max_x, to.width(), from.width()),
        max_y: ceil_scale(b.max_y, to.height(), from.height()),
    })
}

/// Resampling rule recorded in a [`PatchTransform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    Nearest,
}

/// Exact record of how a patch was cut from a native-resolution window,
/// sufficient to map patch pixels back onto the source canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchTransform {
    source_window: BoundingBox,
    patch_size: ImageSize,
    resampling: Resampling,
}

impl PatchTransform {
    pub fn source_window(&self) -> BoundingBox {
        self.source_window
    }

    pub fn patch_size(&self) -> ImageSize {
        self.patch_size
    }

    pub fn resampling(&self) -> Resampling {
        self.resampling
    }

    /// Horizontal scale factor as the exact rational `(patch_w, window_w)`.
    pub fn scale_x(&self) -> (u32, u32) {
        (self.patch_size.width(), self.source_window.width())
    }

    /// Vertical scale factor as the exact rational `(patch_h, window_h)`.
    pub fn scale_y(&self) -> (u32, u32) {
        (self.patch_size.height(), self.source_window.height())
    }
}

/// Cuts `window` out of `image` and resizes it to `out` with
/// nearest-neighbor sampling.
///
/// The caller clips the window to the image beforehand; a window that
/// does not fit is an error. Patch pixel `(px, py)` samples source pixel
/// `(min_x + px*win_w/out_w, min_y + py*win_h/out_h)` (floor division).
pub fn extract_patch(
    image: &GrayImage,
    window: BoundingBox,
    out: ImageSize,
) -> Result<(GrayImage, PatchTransform), GeometryError> {
    if !window.fits_within(image.size()) {
        return Err(GeometryError::WindowOutsideImage {
            window,
            image: image.size(),
        });
    }
    let win_w = window.width() as u64;
    let win_h = window.height() as u64;
    let mut data = Vec::with_capacity(out.pixel_count() as usize);
    for py in 0..out.height() {
        let sy = window.min_y + (py as u64 * win_h / out.height() as u64) as u32;
        for px in 0..out.width() {
            let sx = window.min_x + (px as u64 * win_w / out.width() as u64) as u32;
            data.push(*image.get(sx, sy));
        }
    }
    let transform = PatchTransform {
        source_window: window,
        patch_size: out,
        resampling: Resampling::Nearest,
    };
    Ok((GrayImage::from_vec(out, data), transform))
}

/// Resamples a patch-resolution mask back into its source window on a
/// zero canvas of size `canvas`. Pixels outside the window stay unset;
/// canvas pixel `(x, y)` inside the window samples patch pixel
/// `((x-min_x)*out_w/win_w, (y-min_y)*out_h/win_h)` (floor division),
/// the inverse of the [`extract_patch`] index map.
pub fn reconstruct_mask(
    patch_mask: &BinaryMask,
    transform: &PatchTransform,
    canvas: ImageSize,
) -> Result<BinaryMask, GeometryError> {
    if patch_mask.size() != transform.patch_size {
        return Err(GeometryError::PatchSizeMismatch {
            got: patch_mask.size(),
            expected: transform.patch_size,
        });
    }
    let window = transform.source_window;
    if !window.fits_within(canvas) {
        return Err(GeometryError::WindowOutsideImage {
            window,
            image: canvas,
        });
    }
    let win_w = window.width() as u64;
    let win_h = window.height() as u64;
    let out_w = transform.patch_size.width() as u64;
    let out_h = transform.patch_size.height() as u64;
    let mut grid = Grid::filled(canvas, false);
    for y in window.min_y..window.max_y {
        let py = ((y - window.min_y) as u64 * out_h / win_h) as u32;
        for x in window.min_x..window.max_x {
            let px = ((x - window.min_x) as u64 * out_w / win_w) as u32;
            if patch_mask.get(px, py) {
                grid.set(x, y, true);
            }
        }
    }
    Ok(BinaryMask::from_grid(grid))
}
