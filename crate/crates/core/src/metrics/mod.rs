//! Detection F1 under one-to-one centroid matching, and the Dice overlap
//! score.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::groundtruth::InstanceSet;
use crate::pipeline::DetectionResult;
use crate::raster::Mask;

/// When a predicted centroid may be matched to an annotated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields))]
pub enum MatchCriterion {
    /// The centroid's nearest pixel lies inside the instance's full mask.
    InsideMask,
    /// The centroid is within `radius` pixels of the instance centroid.
    Radius { radius: f64 },
}

impl Default for MatchCriterion {
    fn default() -> Self {
        MatchCriterion::InsideMask
    }
}

impl MatchCriterion {
    pub const DEFAULT_RADIUS: f64 = 6.0;

    pub fn validate(&self) -> Result<()> {
        match *self {
            MatchCriterion::Radius { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::invalid("match criterion", "radius must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Parses `inside_mask`, `radius` or `radius:<px>`.
    pub fn parse(text: &str) -> Result<Self> {
        let c = match text.trim() {
            "inside_mask" => MatchCriterion::InsideMask,
            "radius" => MatchCriterion::Radius {
                radius: Self::DEFAULT_RADIUS,
            },
            other => match other.strip_prefix("radius:").map(str::parse::<f64>) {
                Some(Ok(radius)) => MatchCriterion::Radius { radius },
                _ => {
                    return Err(Error::invalid(
                        "match criterion",
                        alloc::format!("expected inside_mask, radius or radius:<px>, got '{other}'"),
                    ))
                }
            },
        };
        c.validate()?;
        Ok(c)
    }
}

/// Detection counts and the rates derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionScores {
    pub tp: usize,
    pub fp: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DetectionScores {
    /// Rates from counts. With nothing predicted and nothing annotated all
    /// rates are 1; an empty denominator otherwise gives 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if tp + fp + fn_ == 0 {
                1.0
            } else {
                0.0
            }
        };
        DetectionScores {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

/// Candidate `(distance, pred, gt)` pairs allowed by `crit`.
pub fn candidate_pairs(pred: &[(f64, f64)], gt: &InstanceSet, crit: &MatchCriterion) -> Vec<(f64, usize, usize)> {
    let mut pairs = Vec::new();
    for (pi, &(r, c)) in pred.iter().enumerate() {
        let pixel = (libm::round(r), libm::round(c));
        for (gi, inst) in gt.instances.iter().enumerate() {
            let (gr, gc) = inst.centroid();
            let d = libm::sqrt((r - gr) * (r - gr) + (c - gc) * (c - gc));
            let ok = match *crit {
                MatchCriterion::InsideMask => {
                    pixel.0 >= 0.0 && pixel.1 >= 0.0 && inst.contains(pixel.0 as usize, pixel.1 as usize)
                }
                MatchCriterion::Radius { radius } => d <= radius,
            };
            if ok {
                pairs.push((d, pi, gi));
            }
        }
    }
    pairs
}

/// Greedy one-to-one matching by ascending distance, ties broken by
/// prediction index then instance index. Returns matched `(pred, gt)`.
pub fn greedy_match(pred: &[(f64, f64)], gt: &InstanceSet, crit: &MatchCriterion) -> Vec<(usize, usize)> {
    let mut pairs = candidate_pairs(pred, gt, crit);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = alloc::vec![false; pred.len()];
    let mut gt_used = alloc::vec![false; gt.len()];
    let mut out = Vec::new();
    for (_, p, g) in pairs {
        if !pred_used[p] && !gt_used[g] {
            pred_used[p] = true;
            gt_used[g] = true;
            out.push((p, g));
        }
    }
    out
}

pub fn detection_f1(pred: &[(f64, f64)], gt: &InstanceSet, crit: &MatchCriterion) -> Result<DetectionScores> {
    crit.validate()?;
    let tp = greedy_match(pred, gt, crit).len();
    Ok(DetectionScores::from_counts(tp, pred.len() - tp, gt.len() - tp))
}

/// `2|P and G| / (|P| + |G|)`; 1 when both are empty.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape("dice_score", &[pred.height, pred.width], &[gt.height, gt.width]));
    }
    let inter = pred.data.iter().zip(&gt.data).filter(|(a, b)| **a && **b).count();
    let total = pred.count() + gt.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageReport {
    pub image_id: String,
    pub scores: DetectionScores,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub images: Vec<ImageReport>,
    /// Rates from TP/FP/FN pooled over all images.
    pub pooled: DetectionScores,
    /// Mean of the per-image Dice scores.
    pub mean_dice: f64,
}

/// Scores each result against the ground truth at the same index. Dice
/// compares the predicted mask with the union of full instance masks.
pub fn evaluate_run(results: &[DetectionResult], gt: &[InstanceSet], crit: &MatchCriterion) -> Result<RunReport> {
    if results.is_empty() {
        return Err(Error::Empty("evaluate_run"));
    }
    if results.len() != gt.len() {
        return Err(Error::shape("evaluate_run", &[results.len()], &[gt.len()]));
    }
    let mut images = Vec::with_capacity(results.len());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (res, truth) in results.iter().zip(gt) {
        let scores = detection_f1(&res.centroids, truth, crit)?;
        let dice = dice_score(&res.mask, &truth.union_mask())?;
        tp += scores.tp;
        fp += scores.fp;
        fn_ += scores.fn_;
        images.push(ImageReport {
            image_id: res.image_id.clone(),
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
