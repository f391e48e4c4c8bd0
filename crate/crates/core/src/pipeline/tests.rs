use super::*;
use crate::groundtruth::{Instance, InstanceSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Constant(f64);

impl Predictor for Constant {
    fn predict(&self, patch: &Patch) -> Result<Plane> {
        Ok(Plane::filled(patch.density.height, patch.density.width, self.0))
    }
}

/// Reads the answer from a stored map, whatever the input.
struct Oracle(Plane);

impl Predictor for Oracle {
    fn predict(&self, patch: &Patch) -> Result<Plane> {
        let (r, c) = patch.origin;
        Ok(self.0.window(r, c, patch.density.height, patch.density.width, 0.0))
    }
}

/// Pointwise function of the input density.
struct Pointwise;

impl Predictor for Pointwise {
    fn predict(&self, patch: &Patch) -> Result<Plane> {
        Ok(Plane {
            data: patch.density.data.iter().map(|&x| 1.0 / (1.0 + libm::exp(-4.0 * x + 1.0))).collect(),
            ..patch.density
        })
    }
}

fn grid(size: usize, stride: usize) -> PatchGrid {
    PatchGrid {
        patch_size: size,
        stride,
    }
}

fn random_rgb(h: usize, w: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RgbImage::new(h, w, (0..h * w).map(|_| [rng.random_range(0..200); 3]).collect()).unwrap()
}

#[test]
fn grid_offsets_match_flush_rule() {
    let g = PatchGrid::default();
    assert_eq!(g.origins(256, 256), vec![(0, 0)]);
    assert_eq!(g.axis_offsets(512), vec![0, 192, 256]);
    assert_eq!(g.origins(512, 512).len(), 9);
    assert_eq!(g.axis_offsets(300), vec![0, 44]);
    assert_eq!(g.origins(300, 300), vec![(0, 0), (0, 44), (44, 0), (44, 44)]);
    assert_eq!(g.axis_offsets(100), vec![0]);
    assert!(grid(8, 9).validate().is_err());
    assert!(grid(0, 0).validate().is_err());
}

#[test]
fn extraction_is_raster_ordered() {
    let img = Plane::new(300, 300, (0..90_000).map(|i| i as f64).collect()).unwrap();
    let patches = extract_patches(&img, &PatchGrid::default()).unwrap();
    assert_eq!(patches.len(), 4);
    assert_eq!(patches[1].origin, (0, 44));
    assert_eq!(patches[1].density.get(0, 0), 44.0);
    assert_eq!(patches[3].density.get(255, 255), img.get(299, 299));
}

#[test]
fn tissue_filter_boundaries() {
    assert!(!tissue_filter(&RgbImage::filled(16, 16, [255; 3])));
    assert!(tissue_filter(&RgbImage::filled(16, 16, [128; 3])));
    let mut img = RgbImage::filled(10, 10, [100; 3]);
    for p in img.data.iter_mut().take(60) {
        *p = [230, 240, 250];
    }
    assert!(tissue_filter(&img), "exactly 60% white is kept");
    img.data[60] = [221, 221, 221];
    assert!(!tissue_filter(&img));
    // one dark channel makes a pixel non-white
    img.data[..61].iter_mut().for_each(|p| p[2] = 220);
    assert!(tissue_filter(&img));
}

#[test]
fn single_patch_stitch_is_identity() {
    let p = Plane::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    assert_eq!(stitch(&[(0, 0, p.clone())], 2, 3).unwrap(), p);
}

#[test]
fn half_overlap_averages() {
    let a = Plane::filled(4, 4, 0.2);
    let b = Plane::filled(4, 4, 0.8);
    let out = stitch(&[(0, 0, a), (0, 2, b)], 4, 6).unwrap();
    assert_eq!(out.get(1, 0), 0.2);
    assert!((out.get(1, 2) - 0.5).abs() < 1e-15);
    assert!((out.get(3, 3) - 0.5).abs() < 1e-15);
    assert_eq!(out.get(1, 5), 0.8);
}

#[test]
fn uncovered_pixel_is_an_error() {
    assert!(stitch(&[(0, 0, Plane::filled(2, 2, 1.0))], 3, 3).is_err());
}

#[test]
fn constant_model_stitches_exactly() {
    let img = random_rgb(300, 420, 1);
    for value in [0.1, 0.3, 0.7, 1.0 / 3.0] {
        let cfg = PipelineConfig {
            grid: grid(64, 40),
            ..PipelineConfig::default()
        };
        let (res, _) = run_slide("x", &img, &Constant(value), &StainMode::None, &cfg, &NoClock).unwrap();
        assert!(res.probability.data.iter().all(|&v| v == value));
    }
}

#[test]
fn pointwise_model_stitches_to_whole_image_prediction() {
    let img = random_rgb(100, 130, 2);
    let cfg = PipelineConfig {
        grid: grid(32, 20),
        ..PipelineConfig::default()
    };
    let (res, _) = run_slide("x", &img, &Pointwise, &StainMode::None, &cfg, &NoClock).unwrap();
    let whole = Pointwise
        .predict(&Patch {
            origin: (0, 0),
            density: stainsep::gray_density(&img),
        })
        .unwrap();
    assert_eq!(res.probability, whole);
}

#[test]
fn zero_map_has_no_centroids() {
    let det = postprocess(&Plane::filled(20, 20, 0.0), &PostprocessConfig::default());
    assert!(det.centroids.is_empty());
    assert_eq!(det.mask.count(), 0);
}

#[test]
fn block_centroid() {
    let mut p = Plane::filled(20, 20, 0.0);
    for r in 9..=11 {
        for c in 9..=11 {
            p.set(r, c, 0.9);
        }
    }
    assert_eq!(postprocess(&p, &PostprocessConfig::default()).centroids, vec![(10.0, 10.0)]);
}

#[test]
fn diagonal_contact_joins_blocks() {
    let mut p = Plane::filled(10, 10, 0.0);
    for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2), (3, 3), (3, 4), (4, 3), (4, 4)] {
        p.set(r, c, 0.9);
    }
    assert_eq!(postprocess(&p, &PostprocessConfig::default()).centroids.len(), 1);
    p.set(3, 3, 0.0);
    p.set(3, 4, 0.0);
    p.set(4, 3, 0.0);
    p.set(4, 4, 0.0);
    p.set(4, 4, 0.9);
    p.set(4, 5, 0.9);
    assert_eq!(postprocess(&p, &PostprocessConfig::default()).centroids.len(), 2);
}

#[test]
fn threshold_is_strict_and_min_area_gates() {
    let mut p = Plane::filled(5, 5, 0.35);
    p.set(0, 0, 0.36);
    assert!(postprocess(&p, &PostprocessConfig::default()).centroids.is_empty());
    let cfg = PostprocessConfig {
        min_area: 1,
        ..PostprocessConfig::default()
    };
    assert_eq!(postprocess(&p, &cfg).centroids, vec![(0.0, 0.0)]);
}

#[test]
fn ring_centroid_snaps_into_component() {
    let mut p = Plane::filled(7, 7, 0.0);
    for i in 1..6 {
        p.set(1, i, 1.0);
        p.set(5, i, 1.0);
        p.set(i, 1, 1.0);
        p.set(i, 5, 1.0);
    }
    let det = postprocess(&p, &PostprocessConfig::default());
    let (r, c) = det.centroids[0];
    assert!(det.mask.get(r as usize, c as usize));
}

fn blob_map(seed: u64, h: usize, w: usize) -> Plane {
    // radially decreasing bumps whose supports never touch
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Plane::filled(h, w, 0.0);
    let mut centres: Vec<(f64, f64)> = Vec::new();
    for _ in 0..40 {
        let c = (rng.random_range(4.0..h as f64 - 4.0), rng.random_range(4.0..w as f64 - 4.0));
        if centres.iter().any(|d| (d.0 - c.0).abs().max((d.1 - c.1).abs()) < 10.0) {
            continue;
        }
        centres.push(c);
        let peak = rng.random_range(0.2..1.0);
        for r in 0..h {
            for cc in 0..w {
                let d = ((r as f64 - c.0).powi(2) + (cc as f64 - c.1).powi(2)).sqrt();
                if d < 4.0 {
                    p.set(r, cc, peak * (1.0 - d / 4.0));
                }
            }
        }
    }
    p
}

#[test]
fn raising_threshold_never_adds_centroids_on_blob_maps() {
    for seed in 0..100 {
        let p = blob_map(seed, 48, 48);
        let mut last = usize::MAX;
        for t in [0.0, 0.1, 0.2, 0.35, 0.5, 0.7, 0.9] {
            let n = postprocess(&p, &PostprocessConfig { threshold: t, min_area: 2 }).centroids.len();
            assert!(n <= last, "seed {seed}: {n} > {last} at {t}");
            last = n;
        }
    }
}

proptest! {
    #[test]
    fn every_pixel_covered(h in 1usize..300, w in 1usize..300, size in 1usize..64, frac in 0.05..1.0f64) {
        let stride = ((size as f64 * frac) as usize).max(1);
        let g = grid(size, stride);
        let mut covered = vec![false; h * w];
        for (r, c) in g.origins(h, w) {
            prop_assert!(r == 0 || r + size <= h);
            prop_assert!(c == 0 || c + size <= w);
            for rr in r..(r + size).min(h) {
                for cc in c..(c + size).min(w) {
                    covered[rr * w + cc] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&x| x));
    }

    #[test]
    fn stitch_ignores_patch_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid(8, 5);
        let mut preds: Vec<(usize, usize, Plane)> = g
            .origins(20, 23)
            .into_iter()
            .map(|(r, c)| (r, c, Plane::new(8, 8, (0..64).map(|_| rng.random()).collect()).unwrap()))
            .collect();
        let a = stitch(&preds, 20, 23).unwrap();
        for i in (1..preds.len()).rev() {
            let j = rng.random_range(0..=i);
            preds.swap(i, j);
        }
        let b = stitch(&preds, 20, 23).unwrap();
        prop_assert_eq!(&a, &b);
        // convex combination: each value lies within the covering range
        for r in 0..20 {
            for c in 0..23 {
                let vals: Vec<f64> = preds.iter().filter(|(pr, pc, _)| r >= *pr && r < pr + 8 && c >= *pc && c < pc + 8)
                    .map(|(pr, pc, p)| p.get(r - pr, c - pc)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a.get(r, c) >= lo - 1e-15 && a.get(r, c) <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn foreground_shrinks_with_threshold(bits in proptest::collection::vec(0.0..1.0f64, 100), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let p = Plane::new(10, 10, bits).unwrap();
        let cfg = |t| PostprocessConfig { threshold: t, min_area: 1 };
        let lo = postprocess(&p, &cfg(t1.min(t2))).mask;
        let hi = postprocess(&p, &cfg(t1.max(t2))).mask;
        prop_assert!(hi.is_subset_of(&lo));
    }
}

#[test]
fn blank_slide_is_empty_and_filtered() {
    let img = RgbImage::filled(512, 512, [255; 3]);
    let (res, report) = run_slide("blank", &img, &Constant(0.9), &StainMode::None, &PipelineConfig::default(), &NoClock).unwrap();
    assert!(res.centroids.is_empty());
    assert_eq!(report.patches, 9);
    assert_eq!(report.patches_kept, 0);
}

#[test]
fn planted_scene_recovered_by_oracle() {
    let (h, w) = (300, 340);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut instances = Vec::new();
    let mut centres: Vec<(f64, f64)> = Vec::new();
    while instances.len() < 25 {
        let c = (rng.random_range(8.0..h as f64 - 8.0), rng.random_range(8.0..w as f64 - 8.0));
        if centres.iter().any(|d| (d.0 - c.0).hypot(d.1 - c.1) < 16.0) {
            continue;
        }
        centres.push(c);
        let rad = rng.random_range(3.0..6.0);
        let px: Vec<(usize, usize)> = (0..h)
            .flat_map(|r| (0..w).map(move |cc| (r, cc)))
            .filter(|&(r, cc)| (r as f64 - c.0).hypot(cc as f64 - c.1) <= rad)
            .collect();
        instances.push(Instance::new(instances.len() as u32 + 1, px).unwrap());
    }
    let set = InstanceSet::new(h, w, instances).unwrap();
    let truth = set.union_mask().to_plane();
    let img = RgbImage::new(h, w, truth.data.iter().map(|&v| if v > 0.0 { [60, 40, 120] } else { [200, 180, 200] }).collect()).unwrap();
    let (res, report) = run_slide("planted", &img, &Oracle(truth), &StainMode::None, &PipelineConfig::default(), &NoClock).unwrap();
    assert_eq!(res.centroids.len(), 25);
    assert_eq!(report.patches, 4);
    for inst in &set.instances {
        let (r, c) = inst.centroid();
        assert!(res.centroids.iter().any(|p| (p.0 - r).hypot(p.1 - c) <= 1.0));
    }
}

#[test]
fn stage_errors_name_the_stage() {
    let img = RgbImage::filled(64, 64, [255; 3]);
    let err = run_slide("x", &img, &Constant(0.5), &StainMode::Fit(StainFitConfig::default()), &PipelineConfig::default(), &NoClock)
        .unwrap_err();
    match err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "stain");
            assert!(matches!(*source, Error::InsufficientPixels { .. }));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn patch_size_must_suit_the_model() {
    let model = crate::fcn::build(crate::fcn::UNetSpec::default(), 0).unwrap();
    let cfg = PipelineConfig {
        grid: grid(20, 16),
        ..PipelineConfig::default()
    };
    let img = random_rgb(40, 40, 0);
    assert!(matches!(
        run_slide("x", &img, &model, &StainMode::None, &cfg, &NoClock),
        Err(Error::InvalidArgument { .. })
    ));
    let cfg = PipelineConfig {
        grid: grid(16, 12),
        ..PipelineConfig::default()
    };
    let (res, _) = run_slide("x", &img, &model, &StainMode::None, &cfg, &NoClock).unwrap();
    assert!(res.probability.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn timing_report_lists_stages() {
    struct Tick(core::cell::Cell<f64>);
    impl Clock for Tick {
        fn now(&self) -> f64 {
            let t = self.0.get();
            self.0.set(t + 1.0);
            t
        }
    }
    let img = random_rgb(64, 64, 3);
    let cfg = PipelineConfig {
        grid: grid(32, 32),
        ..PipelineConfig::default()
    };
    let (_, report) = run_slide("x", &img, &Constant(0.5), &StainMode::None, &cfg, &Tick(core::cell::Cell::new(0.0))).unwrap();
    let names: Vec<&str> = report.stages.iter().map(|(s, _)| s.as_str()).collect();
    assert_eq!(names, vec!["stain", "extract", "predict", "stitch", "postprocess"]);
    assert!(report.total > 0.0);
}
