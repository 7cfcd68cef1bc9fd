//! Acceptance suite: one test per release criterion, each printing a
//! PASS line when it holds (run with `--nocapture` to see them).
//!
//! Thresholds, seeds and tolerances are pinned here; a red test means
//! the build does not meet its contract.

mod common;

use std::time::Instant;

use common::{oracle_msf, random_fusion_instance, sorted_library_candidates};
use massfusion::fusion::{build_fused_mask, msf, threshold_mask};
use massfusion::geometry::{
    extract_patch, reconstruct_mask, scale_box, BoundingBox, ImageSize, ScoredBox,
};
use massfusion::ingest::{kmeans_box_clusters, load_manifest, BoxSize};
use massfusion::metrics::{
    average_precision, dice, froc, operating_point, pr_curve, FrocPoint, ImageSample,
};
use massfusion::pipeline::{run_pipeline, PipelineConfig};
use massfusion::raster::{BinaryMask, GrayImage};
use massfusion::rng::{substream, Rng};
use massfusion::synth::{
    generate_phantom, simulate_detections, write_dataset, DetectionNoiseSpec, PhantomSpec,
    SynthDatasetSpec,
};

fn pass(name: &str) {
    println!("acceptance: {name} ... PASS");
}

// ---------------------------------------------------------------------------
// 1. Fusion oracle equivalence
// ---------------------------------------------------------------------------
#[test]
fn fusion_oracle_equivalence_1000_instances() {
    let started = Instant::now();
    let mut rng = Rng::new(0x0acce97);
    for instance in 0..1000 {
        let (sets, native, lambda) = random_fusion_instance(&mut rng, 4, 3, 64);
        let got = sorted_library_candidates(&msf(&sets, native, lambda).unwrap());
        let want = oracle_msf(&sets, native, lambda);
        assert_eq!(
            got.len(),
            want.len(),
            "instance {instance}: candidate count {} vs oracle {}",
            got.len(),
            want.len()
        );
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.bbox, w.bbox, "instance {instance}");
            assert_eq!(g.peak.to_bits(), w.peak.to_bits(), "instance {instance}");
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, budget 10 s");
    pass("fusion oracle equivalence (1000 instances, exact match)");
}

// ---------------------------------------------------------------------------
// 2. Lambda monotonicity on synthetic images
// ---------------------------------------------------------------------------
#[test]
fn lambda_monotonicity_on_200_synthetic_images() {
    let native = ImageSize::new(512, 1024);
    let scales = [
        ImageSize::new(80, 160),
        ImageSize::new(128, 256),
        ImageSize::new(160, 320),
        ImageSize::new(208, 416),
        ImageSize::new(240, 480),
    ];
    let lambdas = [0.0, 0.5, 0.6, 0.7];
    let master_seed = 7u64;

    let mut per_lambda_samples: Vec<Vec<ImageSample>> = vec![Vec::new(); lambdas.len()];
    for i in 0..200u64 {
        let base = substream(master_seed, i);
        let phantom = generate_phantom(&PhantomSpec {
            native,
            mass_count_range: (1, 3),
            mass_radius_range: (20, 60),
            boundary_irregularity: 0.15,
            background_noise_sigma: 0.0,
            seed: substream(base, 0),
        })
        .unwrap();
        let sets: Vec<_> = scales
            .iter()
            .enumerate()
            .map(|(s, &scale)| {
                simulate_detections(
                    &phantom.truth_boxes,
                    native,
                    scale,
                    &DetectionNoiseSpec {
                        detection_probability: 0.8,
                        center_jitter_sigma: 0.05,
                        size_jitter_sigma: 0.05,
                        confidence_mean: 0.75,
                        confidence_sigma: 0.1,
                        false_positive_rate: 1.5,
                        seed: substream(base, 1 + s as u64),
                    },
                )
                .unwrap()
            })
            .collect();

        let mask = build_fused_mask(&sets, native).unwrap();
        let kept: Vec<BinaryMask> = lambdas.iter().map(|&l| threshold_mask(&mask, l)).collect();
        for window in kept.windows(2) {
            // exact set containment: higher lambda keeps a subset
            for (hi, lo) in window[1].as_slice().iter().zip(window[0].as_slice()) {
                assert!(!hi || *lo, "image {i}: kept-pixel sets not nested");
            }
        }
        for (li, kept_mask) in kept.iter().enumerate() {
            let labels = massfusion::fusion::label_components(kept_mask);
            let candidates =
                massfusion::fusion::components_to_candidates(&labels, &mask).unwrap();
            per_lambda_samples[li].push(ImageSample {
                predictions: candidates
                    .iter()
                    .map(|c| ScoredBox {
                        bbox: c.bbox,
                        score: c.peak,
                    })
                    .collect(),
                truths: phantom.truth_boxes.clone(),
            });
        }
    }

    let points: Vec<FrocPoint> = per_lambda_samples
        .iter()
        .map(|samples| operating_point(samples, 0.5).unwrap())
        .collect();
    for pair in points.windows(2) {
        assert!(
            pair[1].fp_avg <= pair[0].fp_avg,
            "FPavg rose along lambda: {} -> {}",
            pair[0].fp_avg,
            pair[1].fp_avg
        );
    }
    pass("lambda monotonicity (200 images: nested pixel sets, FPavg non-increasing)");
}

// ---------------------------------------------------------------------------
// 3. Synthetic operating-characteristics analog
// ---------------------------------------------------------------------------
#[test]
fn synthetic_operating_point_analog() {
    let started = Instant::now();
    // portrait native frame (1024 wide, 2048 tall) and the five default
    // prediction scales
    let native = ImageSize::new(1024, 2048);
    let scales = massfusion::pipeline::default_scales();
    let master_seed = 42u64;

    let mut msf_samples: Vec<ImageSample> = Vec::new();
    let mut single_scale_samples: Vec<Vec<ImageSample>> = vec![Vec::new(); scales.len()];
    for i in 0..100u64 {
        let base = substream(master_seed, i);
        let phantom = generate_phantom(&PhantomSpec {
            native,
            mass_count_range: (1, 3),
            mass_radius_range: (40, 120),
            boundary_irregularity: 0.15,
            background_noise_sigma: 8.0,
            seed: substream(base, 0),
        })
        .unwrap();
        let sets: Vec<_> = scales
            .iter()
            .enumerate()
            .map(|(s, &scale)| {
                simulate_detections(
                    &phantom.truth_boxes,
                    native,
                    scale,
                    &DetectionNoiseSpec {
                        detection_probability: 0.8,
                        center_jitter_sigma: 0.05,
                        size_jitter_sigma: 0.05,
                        // uniform confidences: the max-normalization then
                        // makes lambda = 0.6 exactly a 3-of-5 majority vote
                        confidence_mean: 0.8,
                        confidence_sigma: 0.0,
                        false_positive_rate: 1.5,
                        seed: substream(base, 1 + s as u64),
                    },
                )
                .unwrap()
            })
            .collect();

        // fused candidates at the operating threshold
        let candidates = msf(&sets, native, 0.6).unwrap();
        msf_samples.push(ImageSample {
            predictions: candidates
                .iter()
                .map(|c| ScoredBox {
                    bbox: c.bbox,
                    score: c.peak,
                })
                .collect(),
            truths: phantom.truth_boxes.clone(),
        });

        // lambda-free single-scale pass-through: every detection kept,
        // mapped to the native frame
        for (s, set) in sets.iter().enumerate() {
            let predictions = set
                .detections()
                .iter()
                .map(|d| ScoredBox {
                    bbox: scale_box(&d.bbox, set.scale(), native).unwrap(),
                    score: d.score,
                })
                .collect();
            single_scale_samples[s].push(ImageSample {
                predictions,
                truths: phantom.truth_boxes.clone(),
            });
        }
    }

    let fused = operating_point(&msf_samples, 0.5).unwrap();
    let singles: Vec<FrocPoint> = single_scale_samples
        .iter()
        .map(|samples| operating_point(samples, 0.5).unwrap())
        .collect();
    let best_single_tpr = singles.iter().map(|p| p.tpr).fold(0.0, f64::max);

    println!(
        "  fused: TPR {:.4} @ FPavg {:.4}; single-scale TPRs {:?}",
        fused.tpr,
        fused.fp_avg,
        singles.iter().map(|p| (p.tpr, p.fp_avg)).collect::<Vec<_>>()
    );
    assert!(fused.fp_avg <= 0.5, "fused FPavg {} exceeds 0.5", fused.fp_avg);
    assert!(
        fused.tpr >= 0.9 * best_single_tpr,
        "fused TPR {} below 0.9 x best single-scale TPR {}",
        fused.tpr,
        best_single_tpr
    );
    for (s, point) in singles.iter().enumerate() {
        assert!(
            point.fp_avg >= 1.0,
            "scale {s}: pass-through FPavg {} below 1.0",
            point.fp_avg
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    pass("synthetic operating point (fusion cuts FPavg, preserves TPR)");
}

// ---------------------------------------------------------------------------
// 4. Metric unit oracle
// ---------------------------------------------------------------------------
#[test]
fn metric_hand_derived_oracle_values() {
    const TOL: f64 = 1e-9;

    // PR points and AP = 5/6 for [0.9 TP, 0.8 FP, 0.7 TP] over 2 truths
    let truth_a = BoundingBox::new(0, 0, 10, 10).unwrap();
    let truth_b = BoundingBox::new(20, 20, 30, 30).unwrap();
    let samples = vec![ImageSample {
        predictions: vec![
            ScoredBox { bbox: truth_a, score: 0.9 },
            ScoredBox {
                bbox: BoundingBox::new(40, 40, 50, 50).unwrap(),
                score: 0.8,
            },
            ScoredBox { bbox: truth_b, score: 0.7 },
        ],
        truths: vec![truth_a, truth_b],
    }];
    let curve = pr_curve(&samples, 0.5).unwrap();
    let expect = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
    assert_eq!(curve.points.len(), 3);
    for (point, &(recall, precision)) in curve.points.iter().zip(&expect) {
        assert!((point.recall - recall).abs() < TOL);
        assert!((point.precision - precision).abs() < TOL);
    }
    assert!((average_precision(&curve) - 5.0 / 6.0).abs() < TOL);

    // Dice quadrant case = 0.5
    let size = ImageSize::new(10, 10);
    let mut left = BinaryMask::empty(size);
    let mut top = BinaryMask::empty(size);
    for y in 0..10 {
        for x in 0..10 {
            if x < 5 {
                left.set(x, y, true);
            }
            if y < 5 {
                top.set(x, y, true);
            }
        }
    }
    assert!((dice(&left, &top).unwrap() - 0.5).abs() < TOL);

    // FROC (0.9, 0.3): 10 images, 10 truths, 9 matched, 3 false positives
    let far = BoundingBox::new(60, 60, 70, 70).unwrap();
    let mut froc_samples = Vec::new();
    for i in 0..10 {
        let mut predictions = Vec::new();
        if i < 9 {
            predictions.push(ScoredBox { bbox: truth_a, score: 0.5 });
        }
        if i < 3 {
            predictions.push(ScoredBox { bbox: far, score: 0.5 });
        }
        froc_samples.push(ImageSample {
            predictions,
            truths: vec![truth_a],
        });
    }
    let points = froc(&froc_samples, 0.5).unwrap();
    assert_eq!(points.len(), 1);
    assert!((points[0].tpr - 0.9).abs() < TOL);
    assert!((points[0].fp_avg - 0.3).abs() < TOL);

    pass("metric unit oracle (PR points, AP 5/6, Dice 0.5, FROC 0.9@0.3)");
}

// ---------------------------------------------------------------------------
// 5. Geometry round trips
// ---------------------------------------------------------------------------
#[test]
fn geometry_roundtrips_and_coverage() {
    // identity: bit-exact copy both ways
    let size = ImageSize::new(64, 64);
    let image = GrayImage::from_vec(size, (0..64 * 64).map(|i| (i % 251) as u8).collect());
    let window = BoundingBox::new(0, 0, 64, 64).unwrap();
    let (patch, transform) = extract_patch(&image, window, size).unwrap();
    assert_eq!(patch, image);
    let mut mask = BinaryMask::empty(size);
    mask.set(8, 9, true);
    mask.set(63, 0, true);
    assert_eq!(reconstruct_mask(&mask, &transform, size).unwrap(), mask);

    // integer factor: constant-on-source masks survive exactly
    let window = BoundingBox::new(4, 4, 20, 20).unwrap();
    let out = ImageSize::new(48, 48); // 3x
    let (_, transform) = extract_patch(&image, window, out).unwrap();
    let mut source = BinaryMask::empty(size);
    let mut rng = Rng::new(5);
    for y in 4..20 {
        for x in 4..20 {
            if rng.next_f64() < 0.5 {
                source.set(x, y, true);
            }
        }
    }
    let mut patch_mask = BinaryMask::empty(out);
    for py in 0..48 {
        for px in 0..48 {
            patch_mask.set(px, py, source.get(4 + px / 3, 4 + py / 3));
        }
    }
    assert_eq!(reconstruct_mask(&patch_mask, &transform, size).unwrap(), source);

    // 500 random windows: outward rounding never loses a covered pixel
    let mut rng = Rng::new(99);
    for _ in 0..500 {
        let from = ImageSize::new(rng.uniform_u32(16, 256), rng.uniform_u32(16, 256));
        let to = ImageSize::new(rng.uniform_u32(8, 256), rng.uniform_u32(8, 256));
        let min_x = rng.uniform_u32(0, from.width() - 1);
        let min_y = rng.uniform_u32(0, from.height() - 1);
        let max_x = rng.uniform_u32(min_x + 1, from.width());
        let max_y = rng.uniform_u32(min_y + 1, from.height());
        let original = BoundingBox::new(min_x, min_y, max_x, max_y).unwrap();
        let there = scale_box(&original, from, to).unwrap();
        assert!(there.fits_within(to));
        let back = scale_box(&there, to, from).unwrap();
        assert!(
            back.min_x() <= original.min_x()
                && back.min_y() <= original.min_y()
                && back.max_x() >= original.max_x()
                && back.max_y() >= original.max_y(),
            "coverage lost: {original} -> {there} -> {back}"
        );
    }
    pass("geometry round trips (identity/integer bit-exact, 500 windows no pixel lost)");
}

// ---------------------------------------------------------------------------
// 6. End-to-end zero-noise run
// ---------------------------------------------------------------------------
#[test]
fn end_to_end_zero_noise_builtin_providers() {
    let started = Instant::now();
    let dir = std::env::temp_dir().join(format!("massfusion-acc6-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let spec = SynthDatasetSpec {
        phantom: PhantomSpec {
            native: ImageSize::new(1024, 2048),
            mass_count_range: (1, 2),
            mass_radius_range: (40, 120),
            boundary_irregularity: 0.0,
            background_noise_sigma: 0.0,
            seed: 6,
        },
        // detections are unused here (builtin detector), but the dataset
        // writer emits them for completeness
        noise: DetectionNoiseSpec {
            detection_probability: 1.0,
            center_jitter_sigma: 0.0,
            size_jitter_sigma: 0.0,
            confidence_mean: 0.8,
            confidence_sigma: 0.0,
            false_positive_rate: 0.0,
            seed: 6,
        },
        scales: massfusion::pipeline::default_scales(),
        count: 8,
    };
    write_dataset(&dir, &spec).unwrap();
    let manifest = load_manifest(&dir.join("manifest.json")).unwrap();

    let config = PipelineConfig::default(); // builtin providers, lambda 0.6
    let outcome = run_pipeline(&dir, &manifest, &config, None).unwrap();
    assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures);

    let op = outcome.report.operating_point.unwrap();
    let mean_dice = outcome.report.mean_dice.unwrap();
    println!("  zero-noise e2e: TPR {:.4}, FPavg {:.4}, mean dice {:.4}", op.tpr, op.fp_avg, mean_dice);
    assert_eq!(op.tpr, 1.0, "TPR must be 1.0 on zero-noise consensus phantoms");
    assert!(mean_dice >= 0.95, "mean dice {mean_dice} below 0.95");

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 1 min");
    pass("end-to-end zero-noise run (TPR 1.0, mean Dice >= 0.95)");
}

// ---------------------------------------------------------------------------
// 7. Anchor recovery
// ---------------------------------------------------------------------------
#[test]
fn anchor_recovery_from_nine_clusters() {
    let cluster_centers: [(f64, f64); 9] = [
        (20.0, 30.0),
        (42.0, 26.0),
        (60.0, 80.0),
        (95.0, 52.0),
        (130.0, 130.0),
        (185.0, 95.0),
        (260.0, 200.0),
        (400.0, 300.0),
        (610.0, 500.0),
    ];
    let mut rng = Rng::new(4242);
    let mut boxes = Vec::new();
    let mut true_centroids = Vec::new();
    for &(w, h) in &cluster_centers {
        let mut sum = (0.0, 0.0);
        for _ in 0..20 {
            // +-2% uniform jitter
            let bw = w * rng.uniform_f64(0.98, 1.02);
            let bh = h * rng.uniform_f64(0.98, 1.02);
            sum.0 += bw;
            sum.1 += bh;
            boxes.push(BoxSize {
                width: bw,
                height: bh,
            });
        }
        true_centroids.push(BoxSize {
            width: sum.0 / 20.0,
            height: sum.1 / 20.0,
        });
    }
    // interleave clusters
    let mut shuffled = Vec::with_capacity(boxes.len());
    for i in 0..20 {
        for c in 0..9 {
            shuffled.push(boxes[c * 20 + i]);
        }
    }

    let outcome = kmeans_box_clusters(&shuffled, 9, 42).unwrap();
    for pair in outcome.objective_history.windows(2) {
        assert!(pair[1] <= pair[0], "objective rose: {pair:?}");
    }

    let mut anchors = outcome.centroids.clone();
    anchors.sort_by(|a, b| (a.width * a.height).total_cmp(&(b.width * b.height)));
    true_centroids.sort_by(|a, b| (a.width * a.height).total_cmp(&(b.width * b.height)));
    for (anchor, truth) in anchors.iter().zip(&true_centroids) {
        let err_w = (anchor.width - truth.width).abs() / truth.width;
        let err_h = (anchor.height - truth.height).abs() / truth.height;
        assert!(
            err_w <= 0.05 && err_h <= 0.05,
            "anchor ({:.1},{:.1}) vs centroid ({:.1},{:.1}): errors {:.3}/{:.3}",
            anchor.width,
            anchor.height,
            truth.width,
            truth.height,
            err_w,
            err_h
        );
    }
    pass("anchor recovery (9 clusters within 5%, objective non-increasing)");
}

// ---------------------------------------------------------------------------
// 8. Determinism
// ---------------------------------------------------------------------------
#[test]
fn byte_identical_reports_across_runs_and_parallel_degrees() {
    let dir = std::env::temp_dir().join(format!("massfusion-acc8-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let spec = SynthDatasetSpec {
        phantom: PhantomSpec {
            native: ImageSize::new(512, 1024),
            mass_count_range: (1, 2),
            mass_radius_range: (24, 60),
            boundary_irregularity: 0.2,
            background_noise_sigma: 6.0,
            seed: 8,
        },
        noise: DetectionNoiseSpec {
            detection_probability: 0.9,
            center_jitter_sigma: 0.03,
            size_jitter_sigma: 0.03,
            confidence_mean: 0.8,
            confidence_sigma: 0.05,
            false_positive_rate: 1.0,
            seed: 8,
        },
        scales: vec![
            ImageSize::new(80, 160),
            ImageSize::new(128, 256),
            ImageSize::new(160, 320),
            ImageSize::new(208, 416),
            ImageSize::new(240, 480),
        ],
        count: 6,
    };
    write_dataset(&dir, &spec).unwrap();
    let manifest = load_manifest(&dir.join("manifest.json")).unwrap();

    let config = PipelineConfig {
        scales: spec.scales.clone(),
        detector: massfusion::pipeline::DetectorBinding::ExternalFiles {
            detections: dir.join("detections.jsonl"),
        },
        ..PipelineConfig::default()
    };
    let first = run_pipeline(&dir, &manifest, &config, None).unwrap().report.to_json();
    let second = run_pipeline(&dir, &manifest, &config, None).unwrap().report.to_json();
    assert_eq!(first.as_bytes(), second.as_bytes(), "consecutive runs differ");

    let one = PipelineConfig { threads: 1, ..config.clone() };
    let eight = PipelineConfig { threads: 8, ..config };
    let a = run_pipeline(&dir, &manifest, &one, None).unwrap().report.to_json();
    let b = run_pipeline(&dir, &manifest, &eight, None).unwrap().report.to_json();
    assert_eq!(a.as_bytes(), b.as_bytes(), "parallel degree changed the bytes");
    assert_eq!(first.as_bytes(), a.as_bytes());
    pass("determinism (byte-identical reports across runs and 1 vs 8 threads)");
}
