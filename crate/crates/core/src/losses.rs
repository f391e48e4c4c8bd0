//! Segmentation losses for binary maps and the density-switching combination.
//!
//! Every loss exists twice: a plain evaluator over slices, and a builder that
//! emits the same expression into an autodiff [`Graph`]. Cross-entropy style
//! losses are pixel means; the Dice family sums over the whole batch.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Probabilities entering a logarithm are clamped to `[CLAMP, 1 - CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Dice smoothing used when a Dice value is reported as a metric.
pub const EVAL_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LossConfig {
    /// Weight of the emphasised Dice term, in `[0, 1]`.
    pub lambda: f64,
    /// Foreground-ratio switching threshold, in `[0, 1]`.
    pub tau: f64,
    /// Focal exponent, `>= 0`.
    pub gamma: f64,
    /// Dice smoothing constant, `> 0`.
    pub epsilon: f64,
    /// Use the one-sided (positive class only) focal term.
    pub focal_positive_only: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.8,
            tau: 0.2,
            gamma: 5.0,
            epsilon: 1.0,
            focal_positive_only: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.lambda) {
            return Err(Error::invalid("loss config", alloc::format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !unit(self.tau) {
            return Err(Error::invalid("loss config", alloc::format!("tau {} not in [0, 1]", self.tau)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::invalid("loss config", alloc::format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("loss config", alloc::format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }

    /// λ heuristic: one minus the mean foreground fraction of the dataset.
    pub fn lambda_for_foreground_fraction(mean_fraction: f64) -> f64 {
        (1.0 - mean_fraction).clamp(0.0, 1.0)
    }
}

/// Foreground pixel counts of a mini-batch's ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub foreground_count: usize,
    pub total_count: usize,
    pub ratio: f64,
}

/// Which weighting of Dice vs inverted Dice a batch used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Foreground ratio above τ: λ on Dice, 1-λ on inverted Dice.
    Dense,
    /// Foreground ratio at or below τ: 1-λ on Dice, λ on inverted Dice.
    Sparse,
}

impl Branch {
    pub fn select(stats: &BatchStats, tau: f64) -> Branch {
        if stats.ratio > tau {
            Branch::Dense
        } else {
            Branch::Sparse
        }
    }

    /// `(dice weight, inverted dice weight)`.
    pub fn weights(self, lambda: f64) -> (f64, f64) {
        match self {
            Branch::Dense => (lambda, 1.0 - lambda),
            Branch::Sparse => (1.0 - lambda, lambda),
        }
    }
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// BCE plus density-switched Dice / inverted Dice.
    Switching,
    /// BCE plus equally weighted Dice and inverted Dice.
    Balanced,
    /// BCE plus Dice.
    BceDice,
    /// Dice alone.
    Dice,
    /// Focal loss with `gamma`.
    Focal,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Switching,
        LossKind::Balanced,
        LossKind::BceDice,
        LossKind::Dice,
        LossKind::Focal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Switching => "switching",
            LossKind::Balanced => "balanced",
            LossKind::BceDice => "bce_dice",
            LossKind::Dice => "dice",
            LossKind::Focal => "focal",
        }
    }

    pub fn parse(name: &str) -> Option<LossKind> {
        LossKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

fn check_inputs(p: &[f64], g: &[f64]) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::shape("loss", &[p.len()], &[g.len()]));
    }
    if p.is_empty() {
        return Err(Error::Empty("loss"));
    }
    check_binary(g)
}

fn check_binary(g: &[f64]) -> Result<()> {
    match g.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        Some((index, &value)) => Err(Error::NonBinaryLabel { index, value }),
        None => Ok(()),
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy.
pub fn bce(p: &[f64], g: &[f64]) -> Result<f64> {
    check_inputs(p, g)?;
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            let pc = clamp_prob(pv);
            gv * libm::log(pc) + (1.0 - gv) * libm::log(1.0 - pc)
        })
        .sum();
    Ok(-total / p.len() as f64)
}

fn soft_dice(p: impl Iterator<Item = f64> + Clone, g: impl Iterator<Item = f64> + Clone, epsilon: f64) -> f64 {
    let inter: f64 = p.clone().zip(g.clone()).map(|(a, b)| a * b).sum();
    let sp: f64 = p.sum();
    let sg: f64 = g.sum();
    1.0 - (2.0 * inter + epsilon) / (sp + sg + epsilon)
}

/// `1 - (2 Σpg + ε) / (Σp + Σg + ε)` over the whole batch.
pub fn dice(p: &[f64], g: &[f64], epsilon: f64) -> Result<f64> {
    check_inputs(p, g)?;
    Ok(soft_dice(p.iter().copied(), g.iter().copied(), epsilon))
}

/// Dice computed on the background: `dice(1 - p, 1 - g)`.
pub fn inverted_dice(p: &[f64], g: &[f64], epsilon: f64) -> Result<f64> {
    check_inputs(p, g)?;
    Ok(soft_dice(
        p.iter().map(|v| 1.0 - v),
        g.iter().map(|v| 1.0 - v),
        epsilon,
    ))
}

/// Mean focal loss. The symmetric form weights the background term by
/// `p^γ`; `positive_only` keeps just `-(1-p)^γ log p` on foreground pixels.
pub fn focal(p: &[f64], g: &[f64], gamma: f64, positive_only: bool) -> Result<f64> {
    check_inputs(p, g)?;
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&pv, &gv)| {
            let pc = clamp_prob(pv);
            let pos = gv * libm::pow(1.0 - pc, gamma) * libm::log(pc);
            if positive_only {
                pos
            } else {
                pos + (1.0 - gv) * libm::pow(pc, gamma) * libm::log(1.0 - pc)
            }
        })
        .sum();
    Ok(-total / p.len() as f64)
}

/// Foreground statistics over every pixel of the batch's ground truth.
pub fn foreground_ratio(g: &[f64]) -> Result<BatchStats> {
    if g.is_empty() {
        return Err(Error::Empty("foreground_ratio"));
    }
    check_binary(g)?;
    let foreground_count = g.iter().filter(|&&v| v == 1.0).count();
    Ok(BatchStats {
        foreground_count,
        total_count: g.len(),
        ratio: foreground_count as f64 / g.len() as f64,
    })
}

/// BCE plus the Dice / inverted-Dice mix chosen from the batch's
/// foreground ratio. The branch depends on `g` only.
pub fn switching_loss(p: &[f64], g: &[f64], cfg: &LossConfig) -> Result<(f64, Branch)> {
    cfg.validate()?;
    let stats = foreground_ratio(g)?;
    let branch = Branch::select(&stats, cfg.tau);
    let (wd, wi) = branch.weights(cfg.lambda);
    let loss = bce(p, g)? + wd * dice(p, g, cfg.epsilon)? + wi * inverted_dice(p, g, cfg.epsilon)?;
    Ok((loss, branch))
}

/// Plain evaluation of any [`LossKind`]; the branch is reported for
/// `Switching` only.
pub fn evaluate(kind: LossKind, p: &[f64], g: &[f64], cfg: &LossConfig) -> Result<(f64, Option<Branch>)> {
    let eps = cfg.epsilon;
    Ok(match kind {
        LossKind::Switching => {
            let (l, b) = switching_loss(p, g, cfg)?;
            (l, Some(b))
        }
        LossKind::Balanced => (
            bce(p, g)? + 0.5 * dice(p, g, eps)? + 0.5 * inverted_dice(p, g, eps)?,
            None,
        ),
        LossKind::BceDice => (bce(p, g)? + dice(p, g, eps)?, None),
        LossKind::Dice => (dice(p, g, eps)?, None),
        LossKind::Focal => (focal(p, g, cfg.gamma, cfg.focal_positive_only)?, None),
    })
}

/// Graph builders mirroring the plain evaluators. `p` and `g` must share a
/// shape; `g` is treated as a constant.
pub mod graph {
    use super::*;

    fn labels(graph: &Graph, p: Var, g: Var) -> Result<Vec<f64>> {
        let (pt, gt) = (graph.value(p), graph.value(g));
        if pt.shape() != gt.shape() {
            return Err(Error::shape("loss", pt.shape(), gt.shape()));
        }
        check_binary(gt.data())?;
        Ok(gt.data().to_vec())
    }

    pub fn bce(graph: &mut Graph, p: Var, g: Var) -> Result<Var> {
        labels(graph, p, g)?;
        let pc = graph.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let lp = graph.log(pc)?;
        let q = graph.one_minus(pc)?;
        let lq = graph.log(q)?;
        let ng = graph.one_minus(g)?;
        let pos = graph.mul(g, lp)?;
        let neg = graph.mul(ng, lq)?;
        let both = graph.add(pos, neg)?;
        let m = graph.mean(both);
        Ok(graph.scale(m, -1.0))
    }

    fn soft_dice(graph: &mut Graph, p: Var, g: Var, epsilon: f64) -> Result<Var> {
        let pg = graph.mul(p, g)?;
        let inter = graph.sum(pg);
        let num = graph.affine(inter, 2.0, epsilon);
        let sp = graph.sum(p);
        let sg = graph.sum(g);
        let den0 = graph.add(sp, sg)?;
        let den = graph.affine(den0, 1.0, epsilon);
        let ratio = graph.div(num, den)?;
        graph.one_minus(ratio)
    }

    pub fn dice(graph: &mut Graph, p: Var, g: Var, epsilon: f64) -> Result<Var> {
        labels(graph, p, g)?;
        soft_dice(graph, p, g, epsilon)
    }

    pub fn inverted_dice(graph: &mut Graph, p: Var, g: Var, epsilon: f64) -> Result<Var> {
        labels(graph, p, g)?;
        let ip = graph.one_minus(p)?;
        let ig = graph.one_minus(g)?;
        soft_dice(graph, ip, ig, epsilon)
    }

    pub fn focal(graph: &mut Graph, p: Var, g: Var, gamma: f64, positive_only: bool) -> Result<Var> {
        labels(graph, p, g)?;
        let pc = graph.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let q = graph.one_minus(pc)?;
        let lp = graph.log(pc)?;
        let wq = graph.pow(q, gamma)?;
        let t = graph.mul(wq, lp)?;
        let mut total = graph.mul(g, t)?;
        if !positive_only {
            let lq = graph.log(q)?;
            let wp = graph.pow(pc, gamma)?;
            let t2 = graph.mul(wp, lq)?;
            let ng = graph.one_minus(g)?;
            let neg = graph.mul(ng, t2)?;
            total = graph.add(total, neg)?;
        }
        let m = graph.mean(total);
        Ok(graph.scale(m, -1.0))
    }

    fn weighted(graph: &mut Graph, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = terms[0].0;
        if terms[0].1 != 1.0 {
            acc = graph.scale(acc, terms[0].1);
        }
        for &(v, w) in &terms[1..] {
            let s = graph.scale(v, w);
            acc = graph.add(acc, s)?;
        }
        Ok(acc)
    }

    pub fn switching(graph: &mut Graph, p: Var, g: Var, cfg: &LossConfig) -> Result<(Var, Branch)> {
        cfg.validate()?;
        let stats = foreground_ratio(&labels(graph, p, g)?)?;
        let branch = Branch::select(&stats, cfg.tau);
        let (wd, wi) = branch.weights(cfg.lambda);
        let c = bce(graph, p, g)?;
        let d = dice(graph, p, g, cfg.epsilon)?;
        let i = inverted_dice(graph, p, g, cfg.epsilon)?;
        Ok((weighted(graph, &[(c, 1.0), (d, wd), (i, wi)])?, branch))
    }

    /// Emits the loss for `kind`.
    pub fn loss(graph: &mut Graph, kind: LossKind, p: Var, g: Var, cfg: &LossConfig) -> Result<(Var, Option<Branch>)> {
        let eps = cfg.epsilon;
        Ok(match kind {
            LossKind::Switching => {
                let (v, b) = switching(graph, p, g, cfg)?;
                (v, Some(b))
            }
            LossKind::Balanced => {
                let c = bce(graph, p, g)?;
                let d = dice(graph, p, g, eps)?;
                let i = inverted_dice(graph, p, g, eps)?;
                (weighted(graph, &[(c, 1.0), (d, 0.5), (i, 0.5)])?, None)
            }
            LossKind::BceDice => {
                let c = bce(graph, p, g)?;
                let d = dice(graph, p, g, eps)?;
                (graph.add(c, d)?, None)
            }
            LossKind::Dice => (dice(graph, p, g, eps)?, None),
            LossKind::Focal => (focal(graph, p, g, cfg.gamma, cfg.focal_positive_only)?, None),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradient_check, GradCheckOptions};
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_pair(n: usize, seed: u64, fg: f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let g = (0..n).map(|_| if rng.random_bool(fg) { 1.0 } else { 0.0 }).collect();
        (p, g)
    }

    #[test]
    fn bce_examples() {
        let g = [1.0, 0.0, 1.0];
        let l = bce(&[1.0, 0.0, 1.0], &g).unwrap();
        assert!(l > 0.0 && close(l, 1e-7, 1e-9), "{l}");
        assert!(close(bce(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap(), core::f64::consts::LN_2, 1e-15));
        let expect = -(libm::log(0.9) + libm::log(0.9)) / 2.0;
        assert!(close(bce(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), expect, 1e-15));
        assert!(close(expect, 0.10536, 1e-5));
    }

    #[test]
    fn bce_rejects_bad_inputs() {
        assert!(matches!(bce(&[0.5, 0.5], &[1.0]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(
            bce(&[0.5, 0.5], &[1.0, 0.5]),
            Err(Error::NonBinaryLabel { index: 1, .. })
        ));
    }

    #[test]
    fn dice_examples() {
        let g = [1.0, 0.0, 1.0, 1.0];
        for eps in [1e-6, 1.0, 10.0] {
            assert_eq!(dice(&g, &g, eps).unwrap(), 0.0);
        }
        assert_eq!(dice(&[0.0; 4], &[0.0; 4], 1e-6).unwrap(), 0.0);
        assert!(close(dice(&[0.5; 4], &[1.0, 0.0, 0.0, 0.0], 1.0).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn inverted_dice_examples() {
        let g = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(inverted_dice(&g, &g, 1.0).unwrap(), 0.0);
        let v = inverted_dice(&[0.5; 4], &[1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(close(v, 1.0 - 4.0 / 6.0, 1e-15));
    }

    #[test]
    fn inverted_dice_is_dice_of_complements() {
        for seed in 0..20 {
            let (p, g) = random_pair(50, seed, 0.3);
            let ip: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
            let ig: Vec<f64> = g.iter().map(|v| 1.0 - v).collect();
            assert_eq!(inverted_dice(&p, &g, 0.7).unwrap(), dice(&ip, &ig, 0.7).unwrap());
            // 1 - (1 - p) need not round back to p
            assert!(close(dice(&p, &g, 0.7).unwrap(), inverted_dice(&ip, &ig, 0.7).unwrap(), 1e-12));
        }
    }

    #[test]
    fn focal_examples() {
        for seed in 0..10 {
            let (p, g) = random_pair(40, seed, 0.4);
            assert_eq!(focal(&p, &g, 0.0, false).unwrap(), bce(&p, &g).unwrap());
        }
        let v = focal(&[0.9], &[1.0], 5.0, false).unwrap();
        let expect = -libm::pow(0.1, 5.0) * libm::log(0.9);
        assert!(close(v, expect, 1e-20));
        assert!(close(v, 1.0536e-6, 1e-10));
        // one-sided form ignores background pixels entirely
        assert_eq!(focal(&[0.9, 0.3], &[1.0, 0.0], 5.0, true).unwrap(), v / 2.0);
    }

    #[test]
    fn foreground_ratio_examples() {
        assert_eq!(foreground_ratio(&[0.0; 100]).unwrap().ratio, 0.0);
        let mut g = vec![0.0; 100];
        g[..20].fill(1.0);
        assert_eq!(foreground_ratio(&g).unwrap().ratio, 0.2);
        // two 2x2 images, one and three foreground pixels
        let batch = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let s = foreground_ratio(&batch).unwrap();
        assert_eq!((s.foreground_count, s.total_count, s.ratio), (4, 8, 0.5));
        assert!(matches!(foreground_ratio(&[]), Err(Error::Empty(_))));
    }

    fn labels_with_ratio(n: usize, fg: usize) -> Vec<f64> {
        let mut g = vec![0.0; n];
        g[..fg].fill(1.0);
        g
    }

    #[test]
    fn switching_branches() {
        let cfg = LossConfig {
            lambda: 0.8,
            tau: 0.2,
            ..Default::default()
        };
        let p: Vec<f64> = (0..100).map(|i| 0.05 + 0.009 * i as f64).collect();
        let parts = |g: &[f64]| {
            (
                bce(&p, g).unwrap(),
                dice(&p, g, cfg.epsilon).unwrap(),
                inverted_dice(&p, g, cfg.epsilon).unwrap(),
            )
        };

        let g = labels_with_ratio(100, 30);
        let (c, d, i) = parts(&g);
        let (l, b) = switching_loss(&p, &g, &cfg).unwrap();
        assert_eq!(b, Branch::Dense);
        assert!(close(l, c + 0.8 * d + 0.2 * i, 1e-12));

        let g = labels_with_ratio(100, 5);
        let (c, d, i) = parts(&g);
        let (l, b) = switching_loss(&p, &g, &cfg).unwrap();
        assert_eq!(b, Branch::Sparse);
        assert!(close(l, c + 0.2 * d + 0.8 * i, 1e-12));

        // ratio exactly tau takes the sparse branch
        let g = labels_with_ratio(100, 20);
        assert_eq!(switching_loss(&p, &g, &cfg).unwrap().1, Branch::Sparse);
    }

    #[test]
    fn switching_half_lambda_is_branch_free() {
        let cfg = LossConfig {
            lambda: 0.5,
            ..Default::default()
        };
        let (p, _) = random_pair(64, 3, 0.5);
        for fg in [1, 40] {
            let g = labels_with_ratio(64, fg);
            let (l, _) = switching_loss(&p, &g, &cfg).unwrap();
            let expect = bce(&p, &g).unwrap() + 0.5 * dice(&p, &g, 1.0).unwrap() + 0.5 * inverted_dice(&p, &g, 1.0).unwrap();
            assert_eq!(l, expect);
        }
    }

    #[test]
    fn switching_extreme_lambdas() {
        let (p, _) = random_pair(64, 4, 0.5);
        let g = labels_with_ratio(64, 40);
        let c = bce(&p, &g).unwrap();
        let d = dice(&p, &g, 1.0).unwrap();
        let i = inverted_dice(&p, &g, 1.0).unwrap();
        let one = LossConfig { lambda: 1.0, ..Default::default() };
        let zero = LossConfig { lambda: 0.0, ..Default::default() };
        assert_eq!(switching_loss(&p, &g, &one).unwrap().0, c + d);
        assert_eq!(switching_loss(&p, &g, &zero).unwrap().0, c + i);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        for bad in [
            LossConfig { lambda: 1.5, ..Default::default() },
            LossConfig { tau: -0.1, ..Default::default() },
            LossConfig { gamma: -1.0, ..Default::default() },
            LossConfig { epsilon: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(LossConfig::lambda_for_foreground_fraction(0.2), 0.8);
    }

    #[test]
    fn losses_vanish_at_perfect_binary_prediction() {
        let g = labels_with_ratio(50, 17);
        let cfg = LossConfig::default();
        for kind in LossKind::ALL {
            let (l, _) = evaluate(kind, &g, &g, &cfg).unwrap();
            assert!((0.0..1e-6).contains(&l), "{kind:?}: {l}");
        }
    }

    #[test]
    fn dice_penalises_false_positives_less_when_foreground_dominates() {
        let n = 256;
        let k = 10;
        for (fg, dice_grows_more) in [(200, false), (20, true)] {
            let g = labels_with_ratio(n, fg);
            let mut p = g.clone();
            for v in p[fg..fg + k].iter_mut() {
                *v = 1.0;
            }
            let dd = dice(&p, &g, EVAL_EPSILON).unwrap() - dice(&g, &g, EVAL_EPSILON).unwrap();
            let di = inverted_dice(&p, &g, EVAL_EPSILON).unwrap() - inverted_dice(&g, &g, EVAL_EPSILON).unwrap();
            if dice_grows_more {
                assert!(dd > di, "fg {fg}: dice {dd} inverted {di}");
            } else {
                assert!(di > dd, "fg {fg}: dice {dd} inverted {di}");
            }
        }
    }

    #[test]
    fn branch_ignores_predictions() {
        let cfg = LossConfig::default();
        let g = labels_with_ratio(100, 21);
        for seed in 0..20 {
            let (p, _) = random_pair(100, seed, 0.5);
            assert_eq!(switching_loss(&p, &g, &cfg).unwrap().1, Branch::Dense);
        }
    }

    fn graph_value(kind: LossKind, p: &[f64], g: &[f64], cfg: &LossConfig) -> f64 {
        let mut gr = Graph::new();
        let pv = gr.input(Tensor::new([p.len()], p.to_vec()).unwrap());
        let gv = gr.input(Tensor::new([g.len()], g.to_vec()).unwrap());
        let (l, _) = graph::loss(&mut gr, kind, pv, gv, cfg).unwrap();
        gr.value(l).item()
    }

    #[test]
    fn graph_and_plain_evaluators_agree() {
        for seed in 0..10 {
            let (p, g) = random_pair(30, seed, 0.3);
            for positive_only in [false, true] {
                let cfg = LossConfig { focal_positive_only: positive_only, ..Default::default() };
                for kind in LossKind::ALL {
                    let a = evaluate(kind, &p, &g, &cfg).unwrap().0;
                    let b = graph_value(kind, &p, &g, &cfg);
                    assert!(close(a, b, 1e-12), "{kind:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn every_loss_passes_gradcheck() {
        let opts = GradCheckOptions::default();
        for seed in 0..10 {
            // fg 0.5 gives dense batches under tau 0.2, fg 0.05 sparse ones
            for fg in [0.5, 0.05] {
                let (p, g) = random_pair(64, seed, fg);
                let gt = Tensor::new([64], g).unwrap();
                for positive_only in [false, true] {
                    let cfg = LossConfig { focal_positive_only: positive_only, ..Default::default() };
                    for kind in LossKind::ALL {
                        let report = gradient_check(
                            |gr, v| {
                                let gv = gr.input(gt.clone());
                                graph::loss(gr, kind, v[0], gv, &cfg).map(|(l, _)| l)
                            },
                            &[Tensor::new([64], p.clone()).unwrap()],
                            &opts,
                        )
                        .unwrap();
                        assert!(report.passed(), "{kind:?} seed {seed} fg {fg}: {:?}", report.failures);
                    }
                }
            }
        }
    }
}
