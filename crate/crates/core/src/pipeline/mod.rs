//! Whole-image inference: stain density, overlapping patches, tissue
//! filtering, patch prediction, averaging stitch, thresholding and
//! connected-component centroids.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fcn::Model;
use crate::morph::connected_components;
use crate::raster::{Mask, Plane, RgbImage};
use crate::stainsep::{self, StainFitConfig, StainModel};

/// Square patch tiling with flush edge patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for PatchGrid {
    fn default() -> Self {
        PatchGrid {
            patch_size: 256,
            stride: 192,
        }
    }
}

impl PatchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 || self.stride > self.patch_size {
            return Err(Error::invalid("patch grid", "need 0 < stride <= patch_size"));
        }
        Ok(())
    }

    /// Offsets along one axis of length `len`: multiples of the stride,
    /// then one patch flush with the far edge. A short axis gets one patch
    /// at 0 that overhangs the image.
    pub fn axis_offsets(&self, len: usize) -> Vec<usize> {
        let mut offs = vec![0];
        let mut last = 0;
        while last + self.patch_size < len {
            let next = last + self.stride;
            if next + self.patch_size >= len {
                offs.push(len - self.patch_size);
                break;
            }
            offs.push(next);
            last = next;
        }
        offs
    }

    /// Patch origins `(row, col)` in raster order.
    pub fn origins(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let cols = self.axis_offsets(width);
        self.axis_offsets(height)
            .into_iter()
            .flat_map(|r| cols.iter().map(move |&c| (r, c)))
            .collect()
    }
}

/// One extracted patch. Pixels beyond the image read as 0 density.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub density: Plane,
}

/// Cuts `image` into grid patches in raster order.
pub fn extract_patches(image: &Plane, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.validate()?;
    Ok(grid
        .origins(image.height, image.width)
        .into_iter()
        .map(|(r, c)| Patch {
            origin: (r, c),
            density: image.window(r, c, grid.patch_size, grid.patch_size, 0.0),
        })
        .collect())
}

/// Tissue filter thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TissueFilter {
    /// A pixel is white when its smallest channel exceeds this.
    pub white_level: u8,
    /// Patches with strictly more white than this fraction are skipped.
    pub max_white_fraction: f64,
}

impl Default for TissueFilter {
    fn default() -> Self {
        TissueFilter {
            white_level: 220,
            max_white_fraction: 0.6,
        }
    }
}

impl TissueFilter {
    /// True if the patch holds enough tissue to be worth predicting.
    pub fn keep(&self, patch: &RgbImage) -> bool {
        let white = patch
            .data
            .iter()
            .filter(|p| p[0].min(p[1]).min(p[2]) > self.white_level)
            .count();
        white as f64 <= self.max_white_fraction * patch.data.len() as f64
    }
}

/// Default-threshold tissue filter.
pub fn tissue_filter(patch: &RgbImage) -> bool {
    TissueFilter::default().keep(patch)
}

/// Averages overlapping patch predictions into a `height x width` map.
///
/// Patches are folded in origin order with a running mean, so the result
/// does not depend on the order of `predictions` and a constant prediction
/// stitches to exactly that constant.
pub fn stitch(predictions: &[(usize, usize, Plane)], height: usize, width: usize) -> Result<Plane> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by_key(|&i| (predictions[i].0, predictions[i].1));
    let mut acc = Stitcher::new(height, width);
    for i in order {
        let (r, c, ref p) = predictions[i];
        acc.add(r, c, p);
    }
    acc.finish()
}

/// Incremental running-mean stitcher; patches must arrive in a fixed order.
pub struct Stitcher {
    mean: Plane,
    count: Vec<u32>,
}

impl Stitcher {
    pub fn new(height: usize, width: usize) -> Self {
        Stitcher {
            mean: Plane::filled(height, width, 0.0),
            count: vec![0; height * width],
        }
    }

    pub fn add(&mut self, row: usize, col: usize, patch: &Plane) {
        let w = self.mean.width;
        for r in 0..patch.height.min(self.mean.height.saturating_sub(row)) {
            for c in 0..patch.width.min(w.saturating_sub(col)) {
                let i = (row + r) * w + col + c;
                self.count[i] += 1;
                let x = patch.data[r * patch.width + c];
                self.mean.data[i] += (x - self.mean.data[i]) / self.count[i] as f64;
            }
        }
    }

    pub fn finish(self) -> Result<Plane> {
        if let Some(i) = self.count.iter().position(|&n| n == 0) {
            return Err(Error::invalid(
                "stitch",
                alloc::format!("pixel ({}, {}) is covered by no patch", i / self.mean.width, i % self.mean.width),
            ));
        }
        Ok(self.mean)
    }
}

/// Thresholding and component filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PostprocessConfig {
    /// Foreground is probability strictly above this.
    pub threshold: f64,
    /// Components with fewer pixels are dropped.
    pub min_area: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: 0.35,
            min_area: 2,
        }
    }
}

/// Centroids and foreground of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    /// `(row, col)` in raster order of each component's first pixel.
    pub centroids: Vec<(f64, f64)>,
    pub mask: Mask,
}

/// Thresholds `prob`, labels 8-connected components and returns their
/// centroids. A centroid that falls outside its own (non-convex) component
/// is moved to the component pixel nearest to it.
pub fn postprocess(prob: &Plane, cfg: &PostprocessConfig) -> Detections {
    let raw = prob.threshold(cfg.threshold);
    let cc = connected_components(&raw);
    let mut mask = Mask::empty(prob.height, prob.width);
    let mut centroids = Vec::new();
    for (k, px) in cc.pixels().into_iter().enumerate() {
        if px.len() < cfg.min_area.max(1) {
            continue;
        }
        let n = px.len() as f64;
        let (sr, sc) = px.iter().fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
        let mut centroid = (sr / n, sc / n);
        let (rr, rc) = (libm::round(centroid.0) as usize, libm::round(centroid.1) as usize);
        if cc.labels[rr * prob.width + rc] as usize != k + 1 {
            let nearest = px
                .iter()
                .min_by(|a, b| {
                    let d2 = |p: &(usize, usize)| {
                        let (dr, dc) = (p.0 as f64 - centroid.0, p.1 as f64 - centroid.1);
                        dr * dr + dc * dc
                    };
                    d2(a).total_cmp(&d2(b))
                })
                .copied()
                .unwrap_or((rr, rc));
            centroid = (nearest.0 as f64, nearest.1 as f64);
        }
        for &(r, c) in &px {
            mask.set(r, c, true);
        }
        centroids.push(centroid);
    }
    Detections { centroids, mask }
}

/// Per-patch probability model.
pub trait Predictor {
    /// Patch sides must be a multiple of this.
    fn size_multiple(&self) -> usize {
        1
    }

    fn predict(&self, patch: &Patch) -> Result<Plane>;

    /// Predicts a batch; the result is in input order. Override to run
    /// patches concurrently.
    fn predict_batch(&self, patches: &[Patch]) -> Result<Vec<Plane>> {
        patches.iter().map(|p| self.predict(p)).collect()
    }
}

impl Predictor for Model {
    fn size_multiple(&self) -> usize {
        self.spec().size_multiple()
    }

    fn predict(&self, patch: &Patch) -> Result<Plane> {
        Model::predict(self, &patch.density)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn size_multiple(&self) -> usize {
        (**self).size_multiple()
    }

    fn predict(&self, patch: &Patch) -> Result<Plane> {
        (**self).predict(patch)
    }

    fn predict_batch(&self, patches: &[Patch]) -> Result<Vec<Plane>> {
        (**self).predict_batch(patches)
    }
}

/// Seconds since an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that always reads zero, for builds without a time source.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// How the network input is derived from RGB.
#[derive(Debug, Clone, PartialEq)]
pub enum StainMode {
    /// Fit a stain model to this image, then take its H channel.
    Fit(StainFitConfig),
    /// H channel under a given model.
    Model(StainModel),
    /// Input is already single-stain or grayscale: density = 1 - gray/255.
    None,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub grid: PatchGrid,
    pub tissue: TissueFilter,
    pub postprocess: PostprocessConfig,
    /// Patches predicted per batch; bounds memory on large images.
    pub batch: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid: PatchGrid::default(),
            tissue: TissueFilter::default(),
            postprocess: PostprocessConfig::default(),
            batch: 16,
        }
    }
}

/// Wall-clock seconds per stage plus patch counts.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimingReport {
    pub stages: Vec<(String, f64)>,
    pub total: f64,
    pub patches: usize,
    pub patches_kept: usize,
    pub pixels: usize,
}

impl TimingReport {
    fn add(&mut self, stage: &str, seconds: f64) {
        match self.stages.iter_mut().find(|(s, _)| s == stage) {
            Some((_, t)) => *t += seconds,
            None => self.stages.push((String::from(stage), seconds)),
        }
    }
}

/// Output of [`run_slide`].
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub image_id: String,
    pub centroids: Vec<(f64, f64)>,
    pub mask: Mask,
    pub probability: Plane,
}

fn timed<T>(clock: &dyn Clock, report: &mut TimingReport, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = clock.now();
    let out = f().map_err(|e| e.in_stage(stage));
    report.add(stage, clock.now() - t0);
    out
}

/// Input density map for `image` under `mode`.
pub fn input_density(image: &RgbImage, mode: &StainMode) -> Result<Plane> {
    Ok(match mode {
        StainMode::Fit(cfg) => {
            let model = stainsep::fit_stain_model_rgb(image, cfg)?.model;
            stainsep::h_channel(image, &model)
        }
        StainMode::Model(model) => stainsep::h_channel(image, model),
        StainMode::None => stainsep::gray_density(image),
    })
}

/// Full detection pipeline on one image.
pub fn run_slide<P: Predictor + ?Sized>(
    image_id: &str,
    image: &RgbImage,
    predictor: &P,
    stain: &StainMode,
    cfg: &PipelineConfig,
    clock: &dyn Clock,
) -> Result<(DetectionResult, TimingReport)> {
    let start = clock.now();
    let mut report = TimingReport {
        pixels: image.data.len(),
        ..TimingReport::default()
    };
    if image.data.is_empty() {
        return Err(Error::Empty("run_slide image"));
    }
    cfg.grid.validate()?;
    let multiple = predictor.size_multiple().max(1);
    if cfg.grid.patch_size % multiple != 0 {
        return Err(Error::invalid(
            "run_slide",
            alloc::format!("patch size {} is not a multiple of {multiple}", cfg.grid.patch_size),
        ));
    }
    let density = timed(clock, &mut report, "stain", || input_density(image, stain))?;

    let origins = cfg.grid.origins(image.height, image.width);
    report.patches = origins.len();
    let size = cfg.grid.patch_size;
    let mut stitcher = Stitcher::new(image.height, image.width);
    let zeros = Plane::filled(size, size, 0.0);
    for chunk in origins.chunks(cfg.batch.max(1)) {
        let (kept, patches) = timed(clock, &mut report, "extract", || {
            let mut kept = Vec::with_capacity(chunk.len());
            let mut patches = Vec::new();
            for &(r, c) in chunk {
                let h = size.min(image.height - r);
                let w = size.min(image.width - c);
                let keep = cfg.tissue.keep(&image.window(r, c, h, w, [255; 3]));
                kept.push(keep);
                if keep {
                    patches.push(Patch {
                        origin: (r, c),
                        density: density.window(r, c, size, size, 0.0),
                    });
                }
            }
            Ok((kept, patches))
        })?;
        report.patches_kept += patches.len();
        let preds = timed(clock, &mut report, "predict", || {
            let preds = predictor.predict_batch(&patches)?;
            if preds.len() != patches.len() || preds.iter().any(|p| p.height != size || p.width != size) {
                return Err(Error::Internal(String::from("predictor returned the wrong number or size of patches")));
            }
            Ok(preds)
        })?;
        timed(clock, &mut report, "stitch", || {
            let mut next = preds.iter();
            for (&(r, c), &keep) in chunk.iter().zip(&kept) {
                let p = if keep { next.next().unwrap_or(&zeros) } else { &zeros };
                stitcher.add(r, c, p);
            }
            Ok(())
        })?;
    }
    let probability = timed(clock, &mut report, "stitch", || stitcher.finish())?;
    let det = timed(clock, &mut report, "postprocess", || Ok(postprocess(&probability, &cfg.postprocess)))?;
    report.total = clock.now() - start;
    Ok((
        DetectionResult {
            image_id: String::from(image_id),
            centroids: det.centroids,
            mask: det.mask,
            probability,
        },
        report,
    ))
}

#[cfg(test)]
mod tests;
