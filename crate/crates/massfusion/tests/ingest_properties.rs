//! Property tests for rasterization, equalization and anchor clustering.

mod common;

use std::path::PathBuf;

use common::oracle_polygon_mask;
use massfusion::geometry::ImageSize;
use massfusion::ingest::{
    hist_equalize, kmeans_box_clusters, rasterize_truth, BoxSize, DatasetManifest, ManifestEntry,
    TruthShape,
};
use massfusion::raster::GrayImage;
use proptest::prelude::*;

fn star_polygon(cx: f64, cy: f64, radii: &[f64]) -> Vec<[f64; 2]> {
    let n = radii.len();
    (0..n)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [cx + radii[i] * angle.cos(), cy + radii[i] * angle.sin()]
        })
        .collect()
}

fn entry_with_polygon(polygon: Vec<[f64; 2]>) -> ManifestEntry {
    ManifestEntry {
        image_id: "p".into(),
        image_path: PathBuf::from("p.pgm"),
        native_size: ImageSize::new(64, 64),
        mask_path: None,
        truth: vec![TruthShape::Polygon(polygon)],
    }
}

proptest! {
    /// Scanline fill agrees with the per-pixel point-in-polygon oracle on
    /// random star polygons.
    #[test]
    fn polygon_fill_matches_point_oracle(
        cx in 18.0f64..46.0,
        cy in 18.0f64..46.0,
        radii in prop::collection::vec(2.0f64..14.0, 5..16),
    ) {
        let polygon = star_polygon(cx, cy, &radii);
        let entry = entry_with_polygon(polygon.clone());
        let (mask, _) = rasterize_truth(&entry).unwrap();
        let want = oracle_polygon_mask(&polygon, ImageSize::new(64, 64));
        prop_assert_eq!(mask, want);
    }

    /// Reported boxes are exactly the tight bounds of the rasterized
    /// shapes.
    #[test]
    fn truth_boxes_are_tight_bounds(
        cx in 20.0f64..44.0,
        cy in 20.0f64..44.0,
        radii in prop::collection::vec(3.0f64..14.0, 5..12),
    ) {
        let polygon = star_polygon(cx, cy, &radii);
        let entry = entry_with_polygon(polygon);
        let (mask, boxes) = rasterize_truth(&entry).unwrap();
        prop_assume!(!mask.is_empty());
        prop_assert_eq!(boxes.len(), 1);
        let bbox = boxes[0];
        let pixels = mask.set_pixels();
        let min_x = pixels.iter().map(|p| p.0).min().unwrap();
        let min_y = pixels.iter().map(|p| p.1).min().unwrap();
        let max_x = pixels.iter().map(|p| p.0).max().unwrap();
        let max_y = pixels.iter().map(|p| p.1).max().unwrap();
        prop_assert_eq!(bbox.min_x(), min_x);
        prop_assert_eq!(bbox.min_y(), min_y);
        prop_assert_eq!(bbox.max_x(), max_x + 1);
        prop_assert_eq!(bbox.max_y(), max_y + 1);
    }

    /// On images whose histogram is uniform over all 256 levels, the
    /// equalized CDF stays within one gray-level bin of uniform.
    #[test]
    fn equalize_uniform_histogram_cdf(seed in 0u64..500) {
        // 4 pixels per level, shuffled
        let mut data: Vec<u8> = (0..1024).map(|i| (i / 4) as u8).collect();
        let mut rng = massfusion::rng::Rng::new(seed);
        for i in (1..data.len()).rev() {
            let j = rng.next_below(i as u64 + 1) as usize;
            data.swap(i, j);
        }
        let image = GrayImage::from_vec(ImageSize::new(32, 32), data);
        let out = hist_equalize(&image);

        let mut counts = [0u64; 256];
        for &v in out.as_slice() {
            counts[v as usize] += 1;
        }
        let total = 1024u64;
        let mut running = 0u64;
        for (level, &count) in counts.iter().enumerate() {
            running += count;
            let cdf = running as f64 / total as f64;
            let uniform = (level as f64 + 1.0) / 256.0;
            prop_assert!(
                (cdf - uniform).abs() <= 1.0 / 256.0 + 1e-12,
                "level {level}: cdf {cdf} vs uniform {uniform}"
            );
        }
    }

    /// The k-means objective history never rises, for any seed.
    #[test]
    fn kmeans_objective_never_rises(seed in 0u64..300) {
        let mut rng = massfusion::rng::Rng::new(seed);
        let boxes: Vec<BoxSize> = (0..80)
            .map(|_| BoxSize {
                width: rng.uniform_f64(5.0, 300.0),
                height: rng.uniform_f64(5.0, 300.0),
            })
            .collect();
        let outcome = kmeans_box_clusters(&boxes, 9, seed).unwrap();
        prop_assert!(!outcome.objective_history.is_empty());
        for pair in outcome.objective_history.windows(2) {
            prop_assert!(pair[1] <= pair[0]);
        }
    }
}

#[test]
fn manifest_paths_resolve_relative_to_manifest_dir() {
    // loader keeps paths verbatim; this is the documented contract
    let manifest = DatasetManifest {
        entries: vec![ManifestEntry {
            image_id: "x".into(),
            image_path: PathBuf::from("images/x.pgm"),
            native_size: ImageSize::new(8, 8),
            mask_path: None,
            truth: vec![],
        }],
    };
    let text = massfusion::ingest::manifest_to_json(&manifest);
    let back = massfusion::ingest::parse_manifest(&text).unwrap();
    assert_eq!(back.entries[0].image_path, PathBuf::from("images/x.pgm"));
}
