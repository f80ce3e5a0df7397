//! Central finite-difference verification of analytic gradients.

use super::{Parameterized, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest relative error over all checked entries.
    pub max_rel_err: f64,
    /// `name[index]` of the entry with the largest error.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `loss` with respect to every parameter entry.
///
/// `loss` returns the loss as a list of summands; the two perturbed
/// evaluations are differenced term by term, so roundoff scales with the
/// individual terms rather than with the total.
pub fn numeric_gradients<M, F>(model: &mut M, mut loss: F, h: f64) -> Result<Vec<Tensor<f64>>>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M) -> Result<Vec<f64>>,
{
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.value.shape().to_vec()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (pi, shape) in shapes.iter().enumerate() {
        let mut g = Tensor::zeros(shape);
        for i in 0..g.len() {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + h;
            let plus = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - h;
            let minus = loss(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            g.data_mut()[i] = plus.iter().zip(&minus).map(|(p, m)| p - m).sum::<f64>() / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compare the analytic gradients currently stored in `model` against
/// central differences of `loss`.
pub fn check_gradients<M, F>(model: &mut M, loss: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M) -> Result<Vec<f64>>,
{
    let analytic: Vec<(String, Tensor<f64>)> =
        model.params().iter().map(|p| (p.name.clone(), p.grad.clone())).collect();
    let numeric = numeric_gradients(model, loss, h)?;
    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst: String::new(), analytic: 0.0, numeric: 0.0, checked: 0 };
    for ((name, a), n) in analytic.iter().zip(&numeric) {
        for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            report.checked += 1;
            let e = rel_err(av, nv, floor);
            if e > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = e;
                report.worst = format!("{name}[{i}]");
                report.analytic = av;
                report.numeric = nv;
            }
        }
    }
    Ok(report)
}
