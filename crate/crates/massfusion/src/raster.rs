//! Raster containers shared by every stage: a generic row-major grid,
//! 8-bit grayscale images and binary masks, plus PGM (P5) file I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::geometry::ImageSize;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: not a binary PGM (expected magic 'P5', found {found:?})")]
    BadMagic { path: String, found: String },
    #[error("{path}: malformed PGM header: {reason}")]
    BadHeader { path: String, reason: String },
    #[error("{path}: PGM maxval {maxval} unsupported (only 8-bit, maxval <= 255)")]
    UnsupportedMaxval { path: String, maxval: u32 },
    #[error("{path}: truncated pixel data (expected {expected} bytes, got {got})")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
}

/// Row-major 2-D grid with `u32` pixel coordinates.
///
/// `(x, y)` addresses column `x` of row `y`; row 0 is the top of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(size: ImageSize, value: T) -> Self {
        let len = size.width() as usize * size.height() as usize;
        Self {
            width: size.width(),
            height: size.height(),
            data: vec![value; len],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing buffer. `data.len()` must equal `width * height`.
    pub fn from_vec(size: ImageSize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            size.width() as usize * size.height() as usize,
            "buffer length does not match grid dimensions"
        );
        Self {
            width: size.width(),
            height: size.height(),
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, y: u32) -> &[T] {
        let start = y as usize * self.width as usize;
        &self.data[start..start + self.width as usize]
    }

    pub fn row_mut(&mut self, y: u32) -> &mut [T] {
        let start = y as usize * self.width as usize;
        let w = self.width as usize;
        &mut self.data[start..start + w]
    }
}

/// 8-bit grayscale image.
pub type GrayImage = Grid<u8>;

/// Binary segmentation raster. Ground truth or predicted; one bit per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    grid: Grid<bool>,
}

impl BinaryMask {
    pub fn empty(size: ImageSize) -> Self {
        Self {
            grid: Grid::filled(size, false),
        }
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self { grid }
    }

    pub fn size(&self) -> ImageSize {
        self.grid.size()
    }

    pub fn width(&self) -> u32 {
        self.grid.width()
    }

    pub fn height(&self) -> u32 {
        self.grid.height()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        *self.grid.get(x, y)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.grid.set(x, y, value);
    }

    pub fn as_slice(&self) -> &[bool] {
        self.grid.as_slice()
    }

    /// Number of set pixels.
    pub fn count_set(&self) -> u64 {
        self.grid.as_slice().iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.grid.as_slice().iter().any(|&b| b)
    }

    /// Pixel-wise logical OR of `other` into `self`. Sizes must match.
    pub fn or_assign(&mut self, other: &BinaryMask) {
        assert_eq!(self.size(), other.size(), "mask size mismatch in or_assign");
        for (dst, &src) in self
            .grid
            .as_mut_slice()
            .iter_mut()
            .zip(other.grid.as_slice())
        {
            *dst |= src;
        }
    }

    /// Coordinates of all set pixels in raster-scan order.
    pub fn set_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.get(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// PGM (P5, binary, 8-bit) reading and writing.
///
/// Images are plain grayscale; masks are written with the two values
/// `{0, 255}` and read back by thresholding at 128.
pub mod pgm {
    use super::*;

    pub fn write_gray(path: &Path, image: &GrayImage) -> Result<(), RasterError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "P5\n{} {}\n255\n", image.width(), image.height())?;
        file.write_all(image.as_slice())?;
        file.flush()?;
        Ok(())
    }

    pub fn read_gray(path: &Path) -> Result<GrayImage, RasterError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let name = path.display().to_string();
        let (size, maxval) = read_header(&mut reader, &name)?;
        if maxval > 255 {
            return Err(RasterError::UnsupportedMaxval {
                path: name,
                maxval,
            });
        }
        let expected = size.width() as usize * size.height() as usize;
        let mut data = vec![0u8; expected];
        let got = read_fully(&mut reader, &mut data)?;
        if got != expected {
            return Err(RasterError::Truncated {
                path: name,
                expected,
                got,
            });
        }
        Ok(GrayImage::from_vec(size, data))
    }

    pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), RasterError> {
        let bytes: Vec<u8> = mask
            .as_slice()
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect();
        write_gray(path, &GrayImage::from_vec(mask.size(), bytes))
    }

    pub fn read_mask(path: &Path) -> Result<BinaryMask, RasterError> {
        let image = read_gray(path)?;
        let bits: Vec<bool> = image.as_slice().iter().map(|&v| v >= 128).collect();
        Ok(BinaryMask::from_grid(Grid::from_vec(image.size(), bits)))
    }

    fn read_fully<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize, std::io::Error> {
        let mut filled = 0;
        while filled < buf.len() {
            let n = reader.read(&mut buf[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        Ok(filled)
    }

    /// Parses "P5 <width> <height> <maxval>" allowing `#` comments and any
    /// whitespace, consuming the single whitespace byte before pixel data.
    fn read_header<R: BufRead>(
        reader: &mut R,
        path: &str,
    ) -> Result<(ImageSize, u32), RasterError> {
        let mut magic = [0u8; 2];
        reader.read_exact(&mut magic)?;
        if &magic != b"P5" {
            return Err(RasterError::BadMagic {
                path: path.to_string(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut fields = [0u32; 3];
        for field in fields.iter_mut() {
            *field = read_header_int(reader, path)?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(RasterError::BadHeader {
                path: path.to_string(),
                reason: "zero width or height".to_string(),
            });
        }
        Ok((ImageSize::new(width, height), maxval))
    }

    fn read_header_int<R: BufRead>(reader: &mut R, path: &str) -> Result<u32, RasterError> {
        let mut value: Option<u32> = None;
        loop {
            let mut byte = [0u8; 1];
            if reader.read(&mut byte)? == 0 {
                return Err(RasterError::BadHeader {
                    path: path.to_string(),
                    reason: "unexpected end of header".to_string(),
                });
            }
            match byte[0] {
                b'#' => {
                    // comment runs to end of line
                    let mut skipped = Vec::new();
                    reader.read_until(b'\n', &mut skipped)?;
                }
                b'0'..=b'9' => {
                    let digit = (byte[0] - b'0') as u32;
                    value = Some(
                        value
                            .unwrap_or(0)
                            .checked_mul(10)
                            .and_then(|v| v.checked_add(digit))
                            .ok_or_else(|| RasterError::BadHeader {
                                path: path.to_string(),
                                reason: "header value overflow".to_string(),
                            })?,
                    );
                }
                b' ' | b'\t' | b'\r' | b'\n' => {
                    if let Some(v) = value {
                        return Ok(v);
                    }
                }
                other => {
                    return Err(RasterError::BadHeader {
                        path: path.to_string(),
                        reason: format!("unexpected byte {other:#04x}"),
                    });
                }
            }
        }
    }
}
