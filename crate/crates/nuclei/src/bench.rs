//! Whole-slide runtime against image size.

use std::path::Path;

use nuclei_core::pipeline::{self, PipelineConfig, Predictor, StainMode};
use nuclei_core::synth::{colorize_two_stain, generate_scene, jittered_he_basis, SceneSpec};
use nuclei_core::RgbImage;
use serde::Serialize;

use crate::error::{Context, Error, Result};
use crate::experiment::{Parallel, WallClock};
use crate::plot;

/// Side of the synthetic scene tiled to fill each bench image.
const SCENE_SIDE: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub megapixels: f64,
    pub height: usize,
    pub width: usize,
    pub seconds: f64,
    pub patches: usize,
    pub patches_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares `seconds = intercept + slope * pixels`.
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// A two-stain synthetic scene repeated to `height x width`, so every size
/// carries the same tissue density.
pub fn bench_image(height: usize, width: usize, seed: u64) -> Result<RgbImage> {
    let scene = generate_scene(&SceneSpec {
        height: SCENE_SIDE,
        width: SCENE_SIDE,
        count: (0, 4096),
        seed,
        ..SceneSpec::default()
    })?;
    let tile = colorize_two_stain(&scene, jittered_he_basis(seed, 0.05), [1.5, 4.0])?.rgb;
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        let row = (r % SCENE_SIDE) * SCENE_SIDE;
        data.extend((0..width).map(|c| tile.data[row + c % SCENE_SIDE]));
    }
    Ok(RgbImage::new(height, width, data)?)
}

/// Times [`pipeline::run_slide`] on square images of the given sizes.
pub fn run<P: Predictor + Sync>(
    predictor: &P,
    megapixels: &[f64],
    stain: &StainMode,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BenchReport> {
    if megapixels.is_empty() || megapixels.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Usage("bench sizes must be positive megapixel counts".into()));
    }
    let par = Parallel(predictor);
    let mut rows = Vec::with_capacity(megapixels.len());
    for &mp in megapixels {
        let side = (mp * 1e6).sqrt().round().max(1.0) as usize;
        let img = bench_image(side, side, seed)?;
        let clock = WallClock::new();
        let (_, t) = pipeline::run_slide("bench", &img, &par, stain, cfg, &clock)?;
        rows.push(BenchRow {
            megapixels: (side * side) as f64 / 1e6,
            height: side,
            width: side,
            seconds: t.total,
            patches: t.patches,
            patches_kept: t.patches_kept,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.megapixels * 1e6, r.seconds)).collect();
    let (intercept, slope, r_squared) = plot::linear_fit(&points);
    Ok(BenchReport {
        rows,
        intercept,
        slope,
        r_squared,
    })
}

/// Writes `bench.csv`, `bench.svg` and `bench.json` into `dir`.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    let path = dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["megapixels", "height", "width", "seconds", "patches", "patches_kept"]).at(&path)?;
    for r in &report.rows {
        w.write_record([
            format!("{:.6}", r.megapixels),
            r.height.to_string(),
            r.width.to_string(),
            format!("{:.4}", r.seconds),
            r.patches.to_string(),
            r.patches_kept.to_string(),
        ])
        .at(&path)?;
    }
    w.flush().at(&path)?;
    let points: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.megapixels, r.seconds)).collect();
    plot::write_line_plot(
        &dir.join("bench.svg"),
        &format!("run time vs image size (R² = {:.4})", report.r_squared),
        "megapixels",
        "seconds",
        &points,
    )?;
    crate::io::write_json(&dir.join("bench.json"), report)
}
