//! The full finite-difference gradient suite: convolution and pooling,
//! every loss (both switching branches), and the end-to-end toy network.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradient_check, GradCheckOptions, GradCheckReport, Graph, Var};
use crate::error::{Error, Result};
use crate::fcn::{build, unet_forward, UNetSpec};
use crate::losses::{self, Branch, LossConfig, LossKind};
use crate::tensor::Tensor;

/// Tolerance for losses and single operations.
pub const LOSS_TOLERANCE: f64 = 1e-5;
/// Tolerance for the end-to-end network gradient.
pub const NETWORK_TOLERANCE: f64 = 1e-4;

/// Outcome of one named check over all seeds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuiteEntry {
    pub name: String,
    pub seeds: usize,
    pub checked: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed)
    }
}

struct Acc {
    entry: SuiteEntry,
}

impl Acc {
    fn new(name: String, tolerance: f64) -> Self {
        Acc {
            entry: SuiteEntry {
                name,
                seeds: 0,
                checked: 0,
                max_deviation: 0.0,
                tolerance,
                passed: true,
            },
        }
    }

    fn add(&mut self, report: &GradCheckReport) {
        let e = &mut self.entry;
        e.seeds += 1;
        e.checked += report.checked;
        e.max_deviation = e.max_deviation.max(report.max_deviation);
        e.passed &= report.passed();
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid shape")
}

fn binary(n: usize, fg: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(fg) { 1.0 } else { 0.0 }).collect()
}

fn opts(tolerance: f64, seed: u64, max_coords: Option<usize>) -> GradCheckOptions {
    GradCheckOptions {
        tolerance,
        max_coords,
        seed,
        ..GradCheckOptions::default()
    }
}

type LossFn = fn(&mut Graph, Var, Var, &LossConfig) -> Result<Var>;

fn kind(g: &mut Graph, p: Var, t: Var, cfg: &LossConfig, kind: LossKind) -> Result<Var> {
    losses::graph::loss(g, kind, p, t, cfg).map(|(l, _)| l)
}

/// Name, label foreground fraction, required switching branch, loss.
const LOSS_CASES: [(&str, f64, Option<Branch>, LossFn); 9] = [
    ("bce", 0.3, None, |g, p, t, _| losses::graph::bce(g, p, t)),
    ("dice", 0.3, None, |g, p, t, c| losses::graph::dice(g, p, t, c.epsilon)),
    ("inverted_dice", 0.3, None, |g, p, t, c| losses::graph::inverted_dice(g, p, t, c.epsilon)),
    ("focal", 0.3, None, |g, p, t, c| losses::graph::focal(g, p, t, c.gamma, false)),
    ("focal_positive_only", 0.3, None, |g, p, t, c| losses::graph::focal(g, p, t, c.gamma, true)),
    ("bce_dice", 0.3, None, |g, p, t, c| kind(g, p, t, c, LossKind::BceDice)),
    ("balanced", 0.3, None, |g, p, t, c| kind(g, p, t, c, LossKind::Balanced)),
    // tau 0.2: half foreground is dense, 5% sparse
    ("switching_dense", 0.5, Some(Branch::Dense), |g, p, t, c| kind(g, p, t, c, LossKind::Switching)),
    ("switching_sparse", 0.05, Some(Branch::Sparse), |g, p, t, c| kind(g, p, t, c, LossKind::Switching)),
];

/// Runs every check on seeds `0..seeds`.
pub fn run(seeds: u64) -> Result<SuiteReport> {
    if seeds == 0 {
        return Err(Error::invalid("gradient suite", "need at least one seed"));
    }
    let mut entries = Vec::new();

    let mut conv = Acc::new("conv2d".into(), LOSS_TOLERANCE);
    let mut pool = Acc::new("maxpool2d".into(), LOSS_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[1, 2, 5, 5], &mut rng, -1.0, 1.0);
        let k = random(&[3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let w = random(&[1, 3, 5, 5], &mut rng, -1.0, 1.0);
        conv.add(&gradient_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], 1, 1)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x, k],
            &opts(LOSS_TOLERANCE, seed, None),
        )?);
        // distinct offsets keep every pooling window untied
        let mut x = random(&[1, 1, 4, 4], &mut rng, 0.0, 1.0);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v += i as f64 * 1e-3;
        }
        let w = random(&[1, 1, 2, 2], &mut rng, -1.0, 1.0);
        pool.add(&gradient_check(
            |g, v| {
                let y = g.maxpool2d(v[0], 2, 2)?;
                let wv = g.input(w.clone());
                let p = g.mul(y, wv)?;
                Ok(g.sum(p))
            },
            &[x],
            &opts(LOSS_TOLERANCE, seed, None),
        )?);
    }
    entries.push(conv.entry);
    entries.push(pool.entry);

    for (name, fg, expected, loss) in LOSS_CASES {
        let mut acc = Acc::new(name.into(), LOSS_TOLERANCE);
        let cfg = LossConfig::default();
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random(&[64], &mut rng, 0.05, 0.95);
            let gt = Tensor::new([64], binary(64, fg, &mut rng))?;
            if let Some(expected) = expected {
                if losses::switching_loss(p.data(), gt.data(), &cfg)?.1 != expected {
                    return Err(Error::invalid("gradient suite", format!("{name}: seed {seed} took the other branch")));
                }
            }
            acc.add(&gradient_check(
                |g, v| {
                    let gv = g.input(gt.clone());
                    loss(g, v[0], gv, &cfg)
                },
                &[p],
                &opts(LOSS_TOLERANCE, seed, None),
            )?);
        }
        entries.push(acc.entry);
    }

    entries.push(network(seeds)?);
    Ok(SuiteReport { entries })
}

/// predict followed by the switching loss on a 1x1x16x16 input.
fn network(seeds: u64) -> Result<SuiteEntry> {
    let spec = UNetSpec {
        depth: 3,
        base_channels: 2,
        input_channels: 1,
    };
    let cfg = LossConfig::default();
    let mut acc = Acc::new("network".into(), NETWORK_TOLERANCE);
    for seed in 0..seeds {
        let model = build(spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = random(&[1, 1, 16, 16], &mut rng, 0.0, 1.0);
        let labels = Tensor::new([1, 1, 16, 16], binary(256, 0.1, &mut rng))?;
        let objective = |g: &mut Graph, v: &[Var]| {
            let prob = unet_forward(g, &spec, &v[1..], v[0])?;
            let gv = g.input(labels.clone());
            losses::graph::switching(g, prob, gv, &cfg).map(|(l, _)| l)
        };
        // zero biases park dead channels exactly on the ReLU kink, so redraw
        // them until every unit sits clear of it
        let mut points = Vec::new();
        for _ in 0..100 {
            points = vec![image.clone()];
            for (p, (name, _)) in model.params().iter().zip(spec.param_layout()) {
                let mut p = p.clone();
                if name.ends_with(".bias") {
                    p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
                }
                points.push(p);
            }
            let mut g = Graph::new();
            let vars: Vec<_> = points.iter().map(|p| g.input(p.clone())).collect();
            objective(&mut g, &vars)?;
            if g.kink_margin() > 1e-5 {
                break;
            }
            points.clear();
        }
        if points.is_empty() {
            return Err(Error::invalid("gradient suite", format!("no kink-free network point for seed {seed}")));
        }
        acc.add(&gradient_check(objective, &points, &opts(NETWORK_TOLERANCE, seed, Some(12)))?);
    }
    Ok(acc.entry)
}
