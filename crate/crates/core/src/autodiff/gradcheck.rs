use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed deviation (see [`GradCheckReport::max_deviation`]).
    pub tolerance: f64,
    /// Denominator floor, so coordinates whose true derivative is ~0 are
    /// judged on absolute rather than relative error.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input, sampled with `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            abs_floor: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|a - n| / max(|a|, |n|, abs_floor)`.
    pub max_deviation: f64,
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
    /// `(input, index)` pairs where a perturbed evaluation was not finite.
    pub non_finite: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.non_finite.is_empty()
    }
}

/// Compares reverse-mode gradients of the scalar function `f` at `points`
/// with central finite differences.
///
/// `f` receives a fresh graph and one leaf per point and must return the
/// scalar output node.
pub fn gradient_check<F>(f: F, points: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.input(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (graph, vars, out) = eval(points)?;
    let grads = graph.backward(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = points.to_vec();

    for (input, point) in points.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[input], point);
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < point.len() => {
                let mut v = index::sample(&mut rng, point.len(), m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..point.len()).collect(),
        };
        for idx in coords {
            let orig = point.data()[idx];
            work[input].data_mut()[idx] = orig + opts.step;
            let (gp, _, op) = eval(&work)?;
            let plus = gp.value(op).item();
            work[input].data_mut()[idx] = orig - opts.step;
            let (gm, _, om) = eval(&work)?;
            let minus = gm.value(om).item();
            work[input].data_mut()[idx] = orig;

            if !plus.is_finite() || !minus.is_finite() {
                report.non_finite.push((input, idx));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let deviation = (a - numeric).abs() / denom;
            report.checked += 1;
            report.max_deviation = report.max_deviation.max(deviation);
            if deviation > opts.tolerance {
                report.failures.push(GradCheckFailure {
                    input,
                    index: idx,
                    analytic: a,
                    numeric,
                    deviation,
                });
            }
        }
    }
    Ok(report)
}
