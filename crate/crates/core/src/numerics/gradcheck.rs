//! Central finite-difference checks of [`Graph::backward`].

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of a multi-input gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Same statistic per input tensor.
    pub per_input: Vec<f64>,
    pub coords_checked: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    Ok(g.value(out).data()[0])
}

/// Coordinates to probe: all of them, or an evenly strided subset of at most `limit`.
fn probe_coords(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => {
            let k = k.max(1);
            (0..k).map(|i| i * len / k).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Checks the gradient of a scalar function of several tensors.
///
/// `limit` caps the number of probed coordinates per input.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    limit: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[k].len()];
        let analytic = g.grad(v).unwrap_or(&zeros).to_vec();
        let mut worst = 0.0f64;
        for i in probe_coords(inputs[k].len(), limit) {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let plus = eval(&f, &probe)?;
            probe[k].data_mut()[i] = orig - step;
            let minus = eval(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            report.coords_checked += 1;
        }
        report.per_input.push(worst);
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    Ok(report)
}

/// Max relative error of the gradient of `f` at `x` against central differences.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), step, None)
        .map(|r| r.max_rel_error)
}
