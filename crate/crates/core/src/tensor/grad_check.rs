//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// Compare the reverse-mode gradient of a scalar function against central
/// differences, coordinate by coordinate, over every input tensor. Returns
/// the worst relative error `|a - n| / max(1, |a|, |n|)`.
///
/// `f` must be a pure function of its inputs: called repeatedly it must
/// rebuild the same computation (fixed dropout seeds included).
pub fn grad_check_params<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &ids)?;
    if tape.tensor(out).numel() != 1 {
        return Err(Error::invalid(format!(
            "grad_check: function must be scalar-valued, got shape {:?}",
            tape.shape(out)
        )));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| {
            tape.grad(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    // Numeric pass, one coordinate at a time.
    let eval = |target: usize, coord: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = inputs
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let mut q = q.clone();
                if qi == target {
                    q.data[coord] += delta;
                }
                tape.leaf(q)
            })
            .collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.values(out)[0])
    };

    let mut max_err: f64 = 0.0;
    for (pi, t) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..t.numel() {
            let fp = eval(pi, j, eps)?;
            let fm = eval(pi, j, -eps)?;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Single-input convenience wrapper around [`grad_check_params`].
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    grad_check_params(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), eps)
}
