//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Compare reverse-mode gradients of a scalar-valued function against
/// central finite differences, for a single input tensor.
///
/// Returns the worst componentwise relative error
/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    gradcheck_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(x), eps)
}

/// [`gradcheck`] over several input tensors at once; every input's gradient
/// is checked.
pub fn gradcheck_multi<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(Error::Usage(format!(
                "gradcheck requires a scalar-valued function, got shape {:?}",
                g.value(out).shape()
            )));
        }
        g.value(out).item()
    };

    // Analytic gradients via one backward pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Usage(format!(
            "gradcheck requires a scalar-valued function, got shape {:?}",
            g.value(out).shape()
        )));
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for (j, &orig) in input.data().iter().enumerate() {
            work[ti].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_matches_analytic_gradient() {
        let x = Tensor::new(vec![5], vec![0.3, -1.2, 2.0, 0.0, 0.7]).unwrap();
        // Backward gradient of sum(x^2) must be exactly 2x.
        let mut g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let sq = g.square(v);
        let loss = g.reduce_sum(sq, None).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(v).unwrap();
        for (gv, xv) in grad.iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }

        let rel = gradcheck(
            |g, v| {
                let sq = g.square(v);
                g.reduce_sum(sq, None)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-7, "rel err {rel}");
    }

    #[test]
    fn sigmoid_chain_depth_five() {
        let x = Tensor::new(vec![4], vec![0.1, -0.4, 0.9, -1.5]).unwrap();
        let rel = gradcheck(
            |g, v| {
                let mut cur = v;
                for _ in 0..5 {
                    cur = g.sigmoid(cur);
                }
                g.reduce_sum(cur, None)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(rel < 1e-5, "rel err {rel}");
    }

    #[test]
    fn non_scalar_function_is_a_usage_error() {
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let err = gradcheck(|g, v| Ok(g.square(v)), &x, 1e-4).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
