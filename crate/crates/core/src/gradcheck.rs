//! Finite-difference verification of tape gradients.
//!
//! The scalar loss is `sum_k <c_k, y_k>` over every block output `y_k` with
//! fixed seeded cotangents `c_k`. Analytic leaf gradients come from one
//! reverse sweep; each probed element is then perturbed by `+-h` and the
//! central difference is formed from the output differences directly, which
//! keeps exact zeros exact.
//!
//! Probes whose perturbation changes any piecewise branch (ReLU sign, max
//! selection) are skipped: the function is not differentiable across them.

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOMINATOR_FLOOR: f64 = 1e-8;
/// Multiple of machine epsilon allowed per unit of |cotangent * output| in
/// the difference quotient before a discrepancy counts as error.
const ROUNDOFF_FACTOR: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Elements probed per leaf tensor; smaller tensors are probed exhaustively.
    pub max_probes_per_tensor: usize,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(tolerance: f64, seed: u64) -> Self {
        GradCheckOptions { step: DEFAULT_STEP, tolerance, max_probes_per_tensor: 24, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckResult {
    pub max_relative_error: f64,
    /// Total number of scalar leaf elements (inputs and parameters).
    pub parameter_count: usize,
    pub probes: usize,
    pub skipped_nonsmooth: usize,
    /// Leaf element with the largest relative error, as `name[index]`.
    pub worst: String,
    pub pass: bool,
}

/// A named leaf tensor fed to the checked function.
pub type Leaf = (String, Tensor);

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_above_noise(analytic, numeric, 0.0)
}

/// Relative error after discounting `noise`, an absolute bound on the
/// rounding error of the numeric estimate. Gradients that are exactly zero
/// (e.g. a bias feeding a shift-invariant softmax) would otherwise compare
/// rounding noise against the denominator floor.
pub fn relative_error_above_noise(analytic: f64, numeric: f64, noise: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    ((analytic - numeric).abs() - noise).max(0.0) / denom
}

struct Evaluation {
    outputs: Vec<Tensor>,
    signature: u64,
}

fn evaluate<F>(f: &F, leaves: &[Tensor]) -> Result<Evaluation>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Vec<Var>>,
{
    let mut tape = Tape::probing();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let outs = f(&mut tape, &vars)?;
    Ok(Evaluation {
        outputs: outs.iter().map(|&v| tape.value(v).clone()).collect(),
        signature: tape.branch_signature(),
    })
}

enum Probe {
    Compared { rel: f64 },
    Skipped,
}

pub fn grad_check<F>(f: F, leaves: &[Leaf], opts: GradCheckOptions) -> Result<GradCheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Vec<Var>> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut tape = Tape::recording();
    let vars: Vec<Var> = leaves.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let outs = f(&mut tape, &vars)?;
    let mut seeds = Vec::with_capacity(outs.len());
    for (k, &o) in outs.iter().enumerate() {
        let y = tape.value(o);
        if !y.is_finite() {
            return Err(Error::NonFinite { location: format!("output {k} of the unperturbed forward pass") });
        }
        seeds.push((o, Tensor::uniform_with(y.shape(), -1.0, 1.0, &mut rng)));
    }
    let grads = tape.backward(&seeds)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    let cotangents: Vec<&Tensor> = seeds.iter().map(|(_, c)| c).collect();

    let values: Vec<Tensor> = leaves.iter().map(|(_, t)| t.clone()).collect();
    let base = evaluate(&f, &values)?.signature;

    let mut probes = Vec::new();
    for (li, (_, t)) in leaves.iter().enumerate() {
        let n = t.numel();
        if n <= opts.max_probes_per_tensor {
            probes.extend((0..n).map(|e| (li, e)));
        } else {
            let mut picked = index::sample(&mut rng, n, opts.max_probes_per_tensor).into_vec();
            picked.sort_unstable();
            probes.extend(picked.into_iter().map(|e| (li, e)));
        }
    }
    // Consume one draw so the stream position does not depend on leaf sizes
    // when callers reuse the seed for something else.
    let _: u64 = rng.gen();

    let outcomes: Vec<Probe> = probes
        .par_iter()
        .map(|&(li, e)| {
            let x = values[li].data()[e];
            let (xp, xm) = (x + opts.step, x - opts.step);
            let mut plus = values.clone();
            plus[li] = values[li].with_element(e, xp);
            let mut minus = values.clone();
            minus[li] = values[li].with_element(e, xm);
            let location = || format!("{}[{e}]", leaves[li].0);
            let p = evaluate(&f, &plus)?;
            let m = evaluate(&f, &minus)?;
            if p.signature != base || m.signature != base {
                return Ok(Probe::Skipped);
            }
            let mut delta = 0.0;
            let mut scale = 0.0;
            for ((yp, ym), c) in p.outputs.iter().zip(&m.outputs).zip(&cotangents) {
                for ((a, b), w) in yp.data().iter().zip(ym.data()).zip(c.data()) {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(Error::NonFinite { location: location() });
                    }
                    delta += w * (a - b);
                    scale += w.abs() * (a.abs() + b.abs());
                }
            }
            let numeric = delta / (xp - xm);
            let noise = ROUNDOFF_FACTOR * f64::EPSILON * scale / (xp - xm);
            let rel = relative_error_above_noise(analytic[li].data()[e], numeric, noise);
            Ok(Probe::Compared { rel })
        })
        .collect::<Result<_>>()?;

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut skipped = 0;
    for (&(li, e), outcome) in probes.iter().zip(&outcomes) {
        match outcome {
            Probe::Skipped => skipped += 1,
            Probe::Compared { rel } => {
                if *rel > max_rel || worst.is_empty() {
                    max_rel = max_rel.max(*rel);
                    worst = format!("{}[{e}]", leaves[li].0);
                }
            }
        }
    }
    let compared = probes.len() - skipped;
    if compared == 0 {
        return Err(Error::InvalidArgument("gradient check had no probe inside a differentiable region".into()));
    }
    Ok(GradCheckResult {
        max_relative_error: max_rel,
        parameter_count: leaves.iter().map(|(_, t)| t.numel()).sum(),
        probes: compared,
        skipped_nonsmooth: skipped,
        worst,
        pass: max_rel <= opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::ConvGeometry;
    use crate::tensor::Shape;

    #[test]
    fn pointwise_conv_is_exact_to_roundoff() {
        let leaves = vec![
            ("x".to_string(), Tensor::uniform(Shape::new(1, 3, 4, 4), -1.0, 1.0, 1)),
            ("w".to_string(), Tensor::uniform(Shape::new(2, 3, 1, 1), -1.0, 1.0, 2)),
            ("b".to_string(), Tensor::uniform(Shape::new(1, 2, 1, 1), -1.0, 1.0, 3)),
        ];
        let r = grad_check(
            |t, v| Ok(vec![t.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::default())?]),
            &leaves,
            GradCheckOptions::new(1e-9, 0),
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.parameter_count, 48 + 6 + 2);
        assert_eq!(r.skipped_nonsmooth, 0);
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![-1.0, 0.5, 0.25, 2.0]).unwrap();
        let r = grad_check(|t, v| Ok(vec![t.relu(v[0])]), &[("x".into(), x)], GradCheckOptions::new(1e-6, 0)).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn relu_at_kink_is_skipped() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        let r = grad_check(|t, v| Ok(vec![t.relu(v[0])]), &[("x".into(), x)], GradCheckOptions::new(1e-6, 0)).unwrap();
        assert_eq!(r.skipped_nonsmooth, 1);
        assert_eq!(r.probes, 1);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // Sigmoid forward with a deliberately broken branch: the probe uses the
        // true function, the tape sees relu's derivative.
        let x = Tensor::uniform(Shape::new(1, 1, 2, 2), 0.5, 1.0, 4);
        let r = grad_check(
            |t, v| {
                if t.is_recording() {
                    Ok(vec![t.relu(v[0])])
                } else {
                    Ok(vec![t.sigmoid(v[0])])
                }
            },
            &[("x".into(), x)],
            GradCheckOptions::new(1e-4, 0),
        )
        .unwrap();
        assert!(!r.pass);
    }
}
