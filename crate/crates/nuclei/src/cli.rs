//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nuclei_core::fcn::Model;
use nuclei_core::gradsuite;
use nuclei_core::losses::{LossConfig, LossKind};
use nuclei_core::metrics::{detection_f1, dice_score, DetectionScores, ImageReport, MatchCriterion, RunReport};
use nuclei_core::pipeline::{self, StainMode};
use nuclei_core::synth::{colorize_two_stain, generate_scene, jittered_he_basis, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Context, Error, Result};
use crate::experiment::{self, Parallel, WallClock};
use crate::{bench, io, plot};

#[derive(Debug, Parser)]
#[command(name = "nuclei", version, about = "Class-imbalance-aware nucleus detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with instance annotations.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy U-Net on an annotated image directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `paths.train_data` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// switching, dice, bce_dice, focal or balanced.
        #[arg(long, default_value = "switching")]
        loss: String,
        /// fit, none, or a stain model file.
        #[arg(long, default_value = "none")]
        stain: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect nuclei in an image, a tile directory, or a directory of images.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "none")]
        stain: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score centroid CSVs and mask PNGs against annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// inside_mask, radius, or radius:<pixels>.
        #[arg(long, default_value = "inside_mask")]
        criterion: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model per lambda value.
    SweepLambda {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,0.8,1.0")]
        values: Vec<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        stain: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time whole-slide inference against image size.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        sizes: Vec<f64>,
        /// Untrained weights from the config seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "fit")]
        stain: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Contents of the `synth --spec` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub scenes: usize,
    /// Scene `i` uses seed `scene.seed + i`.
    pub scene: SceneSpec,
    /// Render through a jittered H&E stain pair instead of grayscale.
    pub two_stain: Option<TwoStainSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStainSpec {
    pub jitter: f64,
    /// Density multipliers for the nuclear and background stains.
    pub scale: [f64; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            scenes: 10,
            scene: SceneSpec::default(),
            two_stain: None,
        }
    }
}

impl Default for TwoStainSpec {
    fn default() -> Self {
        TwoStainSpec {
            jitter: 0.1,
            scale: [1.5, 4.0],
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Train {
            config,
            data,
            loss,
            stain,
            out,
        } => train(config.as_deref(), data, &loss, &stain, out),
        Command::Infer {
            weights,
            image,
            stain,
            config,
            out,
        } => infer(&weights, &image, &stain, config.as_deref(), &out),
        Command::Eval {
            pred,
            gt,
            criterion,
            out,
        } => eval(&pred, &gt, &criterion, &out),
        Command::SweepLambda {
            config,
            values,
            data,
            eval,
            stain,
            out,
        } => sweep_lambda(config.as_deref(), &values, data, eval, &stain, out),
        Command::Gradcheck { seeds, out } => gradcheck(seeds, out.as_deref()),
        Command::Bench {
            sizes,
            weights,
            config,
            stain,
            out,
        } => bench_cmd(&sizes, weights.as_deref(), config.as_deref(), &stain, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Usage(format!("--{name} is required (or set it under paths in the config)")))
}

/// Parses `fit`, `none`, or a stain model path.
pub fn parse_stain(text: &str, cfg: &RunConfig) -> Result<StainMode> {
    match text {
        "fit" => Ok(StainMode::Fit(cfg.stain.clone())),
        "none" => Ok(StainMode::None),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(Error::Usage(format!("--stain must be fit, none, or a stain model file; got '{path}'")));
            }
            Ok(StainMode::Model(io::read_stain_model(p)?))
        }
    }
}

fn parse_loss(text: &str) -> Result<LossKind> {
    LossKind::parse(text).ok_or_else(|| {
        Error::Usage(format!("unknown loss '{text}'; expected switching, dice, bce_dice, focal or balanced"))
    })
}

fn synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path).at(spec_path)?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", spec_path.display())))?;
    spec.scene
        .validate()
        .map_err(|e| Error::Usage(format!("{}: {e}", spec_path.display())))?;
    create_dir(out)?;
    for i in 0..spec.scenes {
        let seed = spec.scene.seed + i as u64;
        let scene = generate_scene(&SceneSpec {
            seed,
            ..spec.scene.clone()
        })?;
        let id = format!("scene_{i:04}");
        let rgb = match &spec.two_stain {
            None => io::density_to_rgb(&scene.image),
            Some(ts) => colorize_two_stain(&scene, jittered_he_basis(seed, ts.jitter), ts.scale)?.rgb,
        };
        io::write_rgb_png(&out.join(format!("{id}.png")), &rgb)?;
        io::write_instances(&out.join(format!("{id}.jsonl")), &scene.instances)?;
    }
    io::write_json(&out.join("synth_spec.json"), &spec)?;
    println!("wrote {} scenes to {}", spec.scenes, out.display());
    Ok(())
}

fn train(config: Option<&Path>, data: Option<PathBuf>, loss: &str, stain: &str, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let loss = parse_loss(loss)?;
    let stain = parse_stain(stain, &cfg)?;
    let data = required(data, &cfg.paths.train_data, "data")?;
    let out = required(out, &cfg.paths.out, "out")?;
    let ds = experiment::load_dataset(&data)?;
    create_dir(&out)?;
    cfg.echo(&out)?;
    let samples = experiment::training_samples(&ds, &cfg, &stain)?;
    let outcome = experiment::train_model(&samples, loss, &cfg)?;
    io::write_weights(&out.join("weights.bin"), &outcome.model)?;
    io::write_loss_history(&out.join("loss_history.csv"), &outcome.history)?;
    if let Some(last) = outcome.history.last() {
        println!("trained {} epochs on {} images, final loss {:.6}", outcome.history.len(), ds.len(), last.loss);
    }
    Ok(())
}

fn infer(weights: &Path, image: &Path, stain: &str, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let stain = parse_stain(stain, &cfg)?;
    let model = io::read_weights(weights, None)?;
    let inputs: Vec<(String, PathBuf)> = if image.is_dir() && !io::is_tile_dir(image) {
        let found = io::list_images(image)?;
        if found.is_empty() {
            return Err(Error::Data(format!("{}: no images found", image.display())));
        }
        found
    } else {
        let stem = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        vec![(stem, image.to_path_buf())]
    };
    create_dir(out)?;
    cfg.echo(out)?;
    let par = Parallel(&model);
    for (id, path) in inputs {
        let img = io::read_input(&path)?;
        let clock = WallClock::new();
        let (res, timing) = pipeline::run_slide(&id, &img, &par, &stain, &cfg.pipeline, &clock)?;
        io::write_centroids(&out.join(format!("{id}.csv")), &res.centroids)?;
        io::write_mask_png(&out.join(format!("{id}.mask.png")), &res.mask)?;
        io::write_json(&out.join(format!("{id}.timing.json")), &timing)?;
        println!("{id}: {} nuclei in {:.3}s", res.centroids.len(), timing.total);
    }
    Ok(())
}

/// Scores every `<id>.jsonl` in `gt` against `<id>.csv` and `<id>.mask.png`
/// in `pred`.
pub fn evaluate_dirs(pred: &Path, gt: &Path, crit: &MatchCriterion) -> Result<RunReport> {
    let mut ids: Vec<String> = fs::read_dir(gt)
        .at(gt)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("{}: no .jsonl annotations found", gt.display())));
    }
    let mut images = Vec::with_capacity(ids.len());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for id in ids {
        let mask = io::read_mask_png(&pred.join(format!("{id}.mask.png")))?;
        let truth = io::read_instances(&gt.join(format!("{id}.jsonl")), Some((mask.height, mask.width)))?;
        let centroids = io::read_centroids(&pred.join(format!("{id}.csv")))?;
        let scores = detection_f1(&centroids, &truth, crit)?;
        let dice = dice_score(&mask, &truth.union_mask())?;
        tp += scores.tp;
        fp += scores.fp;
        fn_ += scores.fn_;
        images.push(ImageReport {
            image_id: id,
            scores,
            dice,
        });
    }
    let mean_dice = images.iter().map(|i| i.dice).sum::<f64>() / images.len() as f64;
    Ok(RunReport {
        images,
        pooled: DetectionScores::from_counts(tp, fp, fn_),
        mean_dice,
    })
}

fn eval(pred: &Path, gt: &Path, criterion: &str, out: &Path) -> Result<()> {
    let crit = MatchCriterion::parse(criterion).map_err(|e| Error::Usage(e.to_string()))?;
    for dir in [pred, gt] {
        if !dir.is_dir() {
            return Err(Error::Data(format!("{}: not a directory", dir.display())));
        }
    }
    let report = evaluate_dirs(pred, gt, &crit)?;
    create_dir(out)?;
    io::write_metrics(out, &report)?;
    let s = &report.pooled;
    println!(
        "{} images: tp {} fp {} fn {} precision {:.4} recall {:.4} F1 {:.4} mean dice {:.4}",
        report.images.len(),
        s.tp,
        s.fp,
        s.fn_,
        s.precision,
        s.recall,
        s.f1,
        report.mean_dice
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_dice: f64,
}

/// Trains one switching-loss model per lambda on the same data and seed.
pub fn sweep(
    cfg: &RunConfig,
    values: &[f64],
    train: &experiment::Dataset,
    held_out: &experiment::Dataset,
    stain: &StainMode,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Usage("--values needs at least one lambda".into()));
    }
    let samples = experiment::training_samples(train, cfg, stain)?;
    let mut rows = Vec::with_capacity(values.len());
    for &lambda in values {
        let run_cfg = RunConfig {
            loss: LossConfig { lambda, ..cfg.loss },
            ..cfg.clone()
        };
        run_cfg.validate()?;
        let model: Model = experiment::train_model(&samples, LossKind::Switching, &run_cfg)?.model;
        let (_, _, report) = experiment::evaluate(&model, held_out, &run_cfg, stain)?;
        rows.push(SweepRow {
            lambda,
            f1: report.pooled.f1,
            precision: report.pooled.precision,
            recall: report.pooled.recall,
            mean_dice: report.mean_dice,
        });
    }
    Ok(rows)
}

pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    let path = dir.join("sweep_lambda.csv");
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["lambda", "f1", "precision", "recall", "mean_dice"]).at(&path)?;
    for r in rows {
        w.write_record([r.lambda, r.f1, r.precision, r.recall, r.mean_dice].map(|v| format!("{v:.6}")))
            .at(&path)?;
    }
    w.flush().at(&path)?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.f1)).collect();
    plot::write_line_plot(&dir.join("sweep_lambda.svg"), "F1 vs lambda", "lambda", "F1", &points)
}

fn sweep_lambda(
    config: Option<&Path>,
    values: &[f64],
    data: Option<PathBuf>,
    eval: Option<PathBuf>,
    stain: &str,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let stain = parse_stain(stain, &cfg)?;
    let data = required(data, &cfg.paths.train_data, "data")?;
    let eval = required(eval, &cfg.paths.eval_data, "eval")?;
    let out = required(out, &cfg.paths.out, "out")?;
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Usage(format!("lambda {bad} not in [0, 1]")));
    }
    let train = experiment::load_dataset(&data)?;
    let held_out = experiment::load_dataset(&eval)?;
    create_dir(&out)?;
    cfg.echo(&out)?;
    let rows = sweep(&cfg, values, &train, &held_out, &stain)?;
    write_sweep(&out, &rows)?;
    for r in &rows {
        println!("lambda {:.3}: F1 {:.4}", r.lambda, r.f1);
    }
    Ok(())
}

fn gradcheck(seeds: u64, out: Option<&Path>) -> Result<()> {
    let report = gradsuite::run(seeds).map_err(|e| Error::Usage(e.to_string()))?;
    for e in &report.entries {
        println!(
            "{:<22} {} seeds  {:>6} coords  max deviation {:.2e} (tol {:.0e})  {}",
            e.name,
            e.seeds,
            e.checked,
            e.max_deviation,
            e.tolerance,
            if e.passed { "ok" } else { "FAILED" }
        );
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        io::write_json(&dir.join("gradcheck.json"), &report)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Numerical("gradient suite failed".into()))
    }
}

fn bench_cmd(sizes: &[f64], weights: Option<&Path>, config: Option<&Path>, stain: &str, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let stain = parse_stain(stain, &cfg)?;
    let model = match weights {
        Some(w) => io::read_weights(w, None)?,
        None => nuclei_core::fcn::build(cfg.model, cfg.seed)?,
    };
    let report = bench::run(&model, sizes, &stain, &cfg.pipeline, cfg.seed)?;
    create_dir(out)?;
    cfg.echo(out)?;
    bench::write_report(out, &report)?;
    for r in &report.rows {
        println!("{:>8.3} Mpx  {:>9.3}s  {} patches", r.megapixels, r.seconds, r.patches_kept);
    }
    println!("linear fit R² {:.4}", report.r_squared);
    Ok(())
}
