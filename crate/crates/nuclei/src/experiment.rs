//! Dataset loading and the train / evaluate protocol shared by the CLI
//! commands and the acceptance suite.

use std::path::Path;
use std::time::Instant;

use nuclei_core::fcn::{self, Sample, TrainOutcome};
use nuclei_core::groundtruth::{build_label_map, InstanceSet};
use nuclei_core::losses::LossKind;
use nuclei_core::metrics::{evaluate_run, RunReport};
use nuclei_core::pipeline::{self, Clock, DetectionResult, Patch, Predictor, StainMode, TimingReport};
use nuclei_core::synth::{generate_scene, SceneSpec};
use nuclei_core::{Plane, RgbImage};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io;

/// Wall clock backed by [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        WallClock(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Runs a predictor's batches on the rayon pool.
pub struct Parallel<P>(pub P);

impl<P: Predictor + Sync> Predictor for Parallel<P> {
    fn size_multiple(&self) -> usize {
        self.0.size_multiple()
    }

    fn predict(&self, patch: &Patch) -> nuclei_core::Result<Plane> {
        self.0.predict(patch)
    }

    fn predict_batch(&self, patches: &[Patch]) -> nuclei_core::Result<Vec<Plane>> {
        patches.par_iter().map(|p| self.0.predict(p)).collect()
    }
}

/// Sets the global worker count from `NUCLEI_THREADS` when present.
pub fn init_thread_pool() -> Result<()> {
    if let Ok(v) = std::env::var("NUCLEI_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Usage(format!("NUCLEI_THREADS must be a positive integer, got '{v}'")))?;
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

/// Images with their annotations.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    pub truths: Vec<InstanceSet>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Reads every image in `dir` together with its `<stem>.jsonl` annotation.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{}: not a directory", dir.display())));
    }
    let mut ds = Dataset::default();
    for (id, path) in io::list_images(dir)? {
        let img = io::read_rgb(&path)?;
        let ann = dir.join(format!("{id}.jsonl"));
        if !ann.is_file() {
            return Err(Error::Data(format!("{}: missing annotation {}", path.display(), ann.display())));
        }
        let truth = io::read_instances(&ann, Some((img.height, img.width)))?;
        if (truth.height, truth.width) != (img.height, img.width) {
            return Err(Error::Data(format!("{}: annotation canvas differs from the image", ann.display())));
        }
        ds.ids.push(id);
        ds.images.push(img);
        ds.truths.push(truth);
    }
    if ds.is_empty() {
        return Err(Error::Data(format!("{}: no images found", dir.display())));
    }
    Ok(ds)
}

/// `count` grayscale scenes with seeds `spec.seed, spec.seed + 1, ...`.
pub fn synth_dataset(spec: &SceneSpec, count: usize) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for i in 0..count {
        let s = generate_scene(&SceneSpec {
            seed: spec.seed + i as u64,
            ..spec.clone()
        })?;
        ds.ids.push(format!("scene_{i:04}"));
        ds.images.push(io::density_to_rgb(&s.image));
        ds.truths.push(s.instances);
    }
    Ok(ds)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for ((id, img), truth) in ds.ids.iter().zip(&ds.images).zip(&ds.truths) {
        io::write_rgb_png(&dir.join(format!("{id}.png")), img)?;
        io::write_instances(&dir.join(format!("{id}.jsonl")), truth)?;
    }
    Ok(())
}

/// Network inputs and shrunken labels.
pub fn training_samples(ds: &Dataset, cfg: &RunConfig, stain: &StainMode) -> Result<Vec<Sample>> {
    ds.images
        .iter()
        .zip(&ds.truths)
        .map(|(img, truth)| {
            Ok(Sample {
                image: pipeline::input_density(img, stain)?,
                label: build_label_map(truth, cfg.shrink_fraction)?.to_plane(),
            })
        })
        .collect()
}

/// Builds a fresh model from `cfg.model` and `cfg.seed` and trains it.
pub fn train_model(samples: &[Sample], loss: LossKind, cfg: &RunConfig) -> Result<TrainOutcome> {
    let model = fcn::build(cfg.model, cfg.seed)?;
    let tcfg = fcn::TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    Ok(fcn::train(model, samples, loss, &cfg.loss, &tcfg, &cfg.augment)?)
}

/// Runs the full pipeline on every image and scores the detections.
pub fn evaluate<P: Predictor + Sync>(
    predictor: &P,
    ds: &Dataset,
    cfg: &RunConfig,
    stain: &StainMode,
) -> Result<(Vec<DetectionResult>, Vec<TimingReport>, RunReport)> {
    let clock = WallClock::new();
    let par = Parallel(predictor);
    let mut results = Vec::with_capacity(ds.len());
    let mut timings = Vec::with_capacity(ds.len());
    for (id, img) in ds.ids.iter().zip(&ds.images) {
        let (res, t) = pipeline::run_slide(id, img, &par, stain, &cfg.pipeline, &clock)?;
        results.push(res);
        timings.push(t);
    }
    let report = evaluate_run(&results, &ds.truths, &cfg.criterion)?;
    Ok((results, timings, report))
}
