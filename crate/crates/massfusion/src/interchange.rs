//! JSON Lines detections interchange.
//!
//! One record per `(image_id, scale)`:
//!
//! ```json
//! {"image_id":"img_000","scale_w":160,"scale_h":320,"boxes":[{"min_x":4,"min_y":9,"max_x":31,"max_y":60,"score":0.83}]}
//! ```
//!
//! Fused candidate output reuses the schema with the native frame as the
//! scale and an added `peak` field per box (the fused-mask peak, also
//! mirrored into `score` so downstream sweeps need no special casing).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusedCandidate, FusionError, ScaleDetectionSet};
use crate::geometry::{BoundingBox, GeometryError, ImageSize, ScoredBox};

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: malformed detection record: {source}")]
    Malformed {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {source}")]
    InvalidBox {
        path: String,
        line: usize,
        source: GeometryError,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoxRecord {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub peak: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub scale_w: u32,
    pub scale_h: u32,
    pub boxes: Vec<BoxRecord>,
}

impl DetectionRecord {
    pub fn from_set(image_id: &str, set: &ScaleDetectionSet) -> Self {
        Self {
            image_id: image_id.to_string(),
            scale_w: set.scale().width(),
            scale_h: set.scale().height(),
            boxes: set
                .detections()
                .iter()
                .map(|d| BoxRecord {
                    min_x: d.bbox.min_x(),
                    min_y: d.bbox.min_y(),
                    max_x: d.bbox.max_x(),
                    max_y: d.bbox.max_y(),
                    score: d.score,
                    peak: None,
                })
                .collect(),
        }
    }

    /// Fused candidates in the native frame; `peak` recorded per box and
    /// mirrored into `score`.
    pub fn from_candidates(
        image_id: &str,
        native: ImageSize,
        candidates: &[FusedCandidate],
    ) -> Self {
        Self {
            image_id: image_id.to_string(),
            scale_w: native.width(),
            scale_h: native.height(),
            boxes: candidates
                .iter()
                .map(|c| BoxRecord {
                    min_x: c.bbox.min_x(),
                    min_y: c.bbox.min_y(),
                    max_x: c.bbox.max_x(),
                    max_y: c.bbox.max_y(),
                    score: c.peak,
                    peak: Some(c.peak),
                })
                .collect(),
        }
    }

    pub fn scale(&self) -> Option<ImageSize> {
        if self.scale_w == 0 || self.scale_h == 0 {
            None
        } else {
            Some(ImageSize::new(self.scale_w, self.scale_h))
        }
    }

    pub fn scored_boxes(&self) -> Result<Vec<ScoredBox>, GeometryError> {
        self.boxes
            .iter()
            .map(|b| {
                Ok(ScoredBox {
                    bbox: BoundingBox::new(b.min_x, b.min_y, b.max_x, b.max_y)?,
                    score: b.score,
                })
            })
            .collect()
    }

    /// Validates the record into a [`ScaleDetectionSet`].
    pub fn into_set(&self) -> Result<ScaleDetectionSet, InterchangeError> {
        let scale = self.scale().ok_or_else(|| {
            InterchangeError::Malformed {
                path: String::new(),
                line: 0,
                source: serde::de::Error::custom("zero scale dimensions"),
            }
        })?;
        let boxes = self.scored_boxes().map_err(|source| InterchangeError::InvalidBox {
            path: String::new(),
            line: 0,
            source,
        })?;
        Ok(ScaleDetectionSet::new(scale, boxes)?)
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<DetectionRecord>, InterchangeError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let name = path.display().to_string();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(&line).map_err(|source| InterchangeError::Malformed {
                path: name.clone(),
                line: idx + 1,
                source,
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_jsonl(path: &Path, records: &[DetectionRecord]) -> Result<(), InterchangeError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let dir = std::env::temp_dir().join("massfusion-interchange-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dets.jsonl");
        let records = vec![
            DetectionRecord {
                image_id: "a".into(),
                scale_w: 160,
                scale_h: 320,
                boxes: vec![BoxRecord {
                    min_x: 1,
                    min_y: 2,
                    max_x: 5,
                    max_y: 9,
                    score: 0.25,
                    peak: None,
                }],
            },
            DetectionRecord {
                image_id: "b".into(),
                scale_w: 320,
                scale_h: 640,
                boxes: vec![],
            },
        ];
        write_jsonl(&path, &records).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), records);
    }

    #[test]
    fn record_validates_into_scale_set() {
        let record = DetectionRecord {
            image_id: "a".into(),
            scale_w: 64,
            scale_h: 64,
            boxes: vec![BoxRecord {
                min_x: 10,
                min_y: 10,
                max_x: 90,
                max_y: 20,
                score: 0.5,
                peak: None,
            }],
        };
        assert!(record.into_set().is_err()); // box exceeds the 64x64 frame
    }

    #[test]
    fn malformed_line_reports_location() {
        let dir = std::env::temp_dir().join("massfusion-interchange-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        std::fs::write(&path, "{\"image_id\": 3}\n").unwrap();
        match read_jsonl(&path) {
            Err(InterchangeError::Malformed { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }
}
