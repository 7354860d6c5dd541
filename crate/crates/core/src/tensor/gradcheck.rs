use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub passed: bool,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, element by element, over every input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>], track: bool| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), track)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::NotScalar { shape: g.value(out).shape().to_vec() });
        }
        Ok((g, vars, out))
    };

    let (graph, vars, out) = eval(inputs, true)?;
    let grads = graph.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), passed: true };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&graph, *var);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let (gp, _, op) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig - h;
            let (gm, _, om) = eval(&probe, false)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let err = relative_error(analytic[j], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = grad_check(&[x], 1e-5, 1e-4, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let c = Tensor::from_f64(&[1], &[4.0]).unwrap();
        let r = grad_check(&[x, c.clone()], 1e-5, 1e-4, move |g, _| {
            let k = g.leaf(c.clone(), false);
            g.sum(k)
        })
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = grad_check(&[x], 1e-5, 1e-4, |g, v| g.relu(v[0])).unwrap_err();
        assert!(matches!(err, Error::NotScalar { .. }));
    }
}
