//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::DiffError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(parameter, element)` where the worst error occurred.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `f` against `(f(p+ε) − f(p−ε)) / 2ε`
/// for every coordinate of every parameter.
///
/// `f` receives a fresh tape and the parameters registered as trainable
/// leaves, in order, and must return a scalar node.
pub fn finite_diff_check<F, E>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, E>,
    E: From<DiffError>,
{
    let evaluate = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var), E> {
        let tape = Tape::new();
        let vars = values.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = evaluate(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let value_at = |values: &[Tensor]| -> Result<f64, E> {
        let (tape, _, out) = evaluate(values)?;
        let v = tape.value(out).item();
        Ok(v)
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, coordinates: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        for ei in 0..grad.len() {
            let original = work[pi].data()[ei];
            work[pi].data_mut()[ei] = original + eps;
            let plus = value_at(&work)?;
            work[pi].data_mut()[ei] = original - eps;
            let minus = value_at(&work)?;
            work[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((pi, ei));
                }
            }
        }
    }
    Ok(report)
}
