//! Central finite-difference gradient checking.
//!
//! Only the forward function is evaluated here, so the check stays
//! independent of the tape's backward rules.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::Tensor;

/// Denominator floor for the relative error; below it both derivatives are
/// indistinguishable from finite-difference round-off.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates that only agreed at a refined step.
    pub refined: usize,
    /// (tensor, element, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic[i]` against `(f(x+h) − f(x−h)) / 2h` for coordinates of
/// every tensor in `inputs`. At most `per_tensor` coordinates are sampled per
/// tensor (all of them when the tensor is smaller).
pub fn check<R: Rng>(
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
    per_tensor: usize,
    rng: &mut R,
    f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheck {
    run(inputs, analytic, h, per_tensor, None, rng, f)
}

/// Like [`check`], but a coordinate that fails at `h` is retried at `h/10`,
/// `h/100`, ... up to `refinements` times and scored by its best step. A relu
/// or max-pool switch close to the point spoils the quotient at large steps
/// only, while a wrong derivative disagrees at every step. Round-off in the
/// quotient grows as 1/step, so the relative-error floor grows by the same
/// factor at refined steps.
#[allow(clippy::too_many_arguments)]
pub fn check_refining<R: Rng>(
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
    per_tensor: usize,
    refinements: usize,
    tol: f64,
    rng: &mut R,
    f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheck {
    run(inputs, analytic, h, per_tensor, Some((refinements, tol)), rng, f)
}

fn central(inputs: &mut [Tensor<f64>], ti: usize, ci: usize, h: f64, f: &mut impl FnMut(&[Tensor<f64>]) -> f64) -> f64 {
    let orig = inputs[ti].data()[ci];
    inputs[ti].data_mut()[ci] = orig + h;
    let plus = f(inputs);
    inputs[ti].data_mut()[ci] = orig - h;
    let minus = f(inputs);
    inputs[ti].data_mut()[ci] = orig;
    (plus - minus) / (2.0 * h)
}

fn run<R: Rng>(
    inputs: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    h: f64,
    per_tensor: usize,
    refine: Option<(usize, f64)>,
    rng: &mut R,
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> GradCheck {
    assert_eq!(inputs.len(), analytic.len());
    let mut report = GradCheck::default();
    for ti in 0..inputs.len() {
        let n = inputs[ti].len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(rng, n, per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for ci in coords {
            let a = analytic[ti].data()[ci];
            let mut numeric = central(inputs, ti, ci, h, &mut f);
            let mut err = relative_error(a, numeric);
            if let Some((refinements, tol)) = refine {
                let mut step = h;
                for _ in 0..refinements {
                    if err < tol {
                        break;
                    }
                    step /= 10.0;
                    let n = central(inputs, ti, ci, step, &mut f);
                    let floor = REL_ERROR_FLOOR * h / step;
                    let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
                    if e < err {
                        (numeric, err) = (n, e);
                    }
                }
                if step < h && err < tol {
                    report.refined += 1;
                }
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, ci, a, numeric));
            }
        }
    }
    report
}
