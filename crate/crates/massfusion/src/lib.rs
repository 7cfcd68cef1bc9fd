//! Multi-scale detection fusion and evaluation for full-image mass
//! segmentation pipelines.
//!
//! The crate covers the skeleton of a two-stage localize-then-segment
//! system at native image resolution:
//!
//! - [`geometry`] — half-open bounding boxes, IoU, frame changes,
//!   candidate-patch extraction and exact mask reconstruction;
//! - [`fusion`] — the multi-scale fusion algorithm: per-box confidence
//!   masks, normalized fused mask, majority-voting threshold and
//!   connected-component candidate extraction;
//! - [`metrics`] — greedy IoU matching, precision-recall/AP, FROC
//!   curves and operating points, pixel confusion counts and Dice;
//! - [`ingest`] — dataset manifests, polygon rasterization, histogram
//!   equalization and k-means anchor recomputation;
//! - [`synth`] — seeded synthetic phantoms and detection-noise
//!   simulation for reproducible desk-scale benchmarks;
//! - [`pipeline`] — end-to-end orchestration with pluggable detection
//!   and segmentation providers, plus report generation.
//!
//! Neural models never run in-process: detectors and segmenters are
//! either the built-in classical providers or external programs talking
//! through the JSONL detections format ([`interchange`]) and PGM masks.
//!
//! ```
//! use massfusion::fusion::{msf, ScaleDetectionSet};
//! use massfusion::geometry::{BoundingBox, ImageSize, ScoredBox};
//!
//! let native = ImageSize::new(64, 64);
//! let mass = BoundingBox::new(10, 12, 30, 34)?;
//! // three of five scales agree on the same region
//! let sets: Vec<ScaleDetectionSet> = (0..5)
//!     .map(|i| {
//!         let dets = if i < 3 {
//!             vec![ScoredBox { bbox: mass, score: 0.8 }]
//!         } else {
//!             vec![]
//!         };
//!         ScaleDetectionSet::new(native, dets)
//!     })
//!     .collect::<Result<_, _>>()?;
//! let candidates = msf(&sets, native, 0.6)?;
//! assert_eq!(candidates.len(), 1);
//! assert_eq!(candidates[0].bbox, mass);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod fusion;
pub mod geometry;
pub mod ingest;
pub mod interchange;
pub mod metrics;
pub mod pipeline;
pub mod providers;
pub mod raster;
pub mod rng;
pub mod synth;

pub use fusion::{FusedCandidate, FusionMask, ScaleDetectionSet};
pub use geometry::{BoundingBox, ImageSize, PatchTransform, ScoredBox};
pub use metrics::{ConfusionCounts, EvalReport, FrocPoint, PrCurve};
pub use pipeline::{PipelineConfig, PipelineOutcome};
pub use raster::{BinaryMask, GrayImage};
