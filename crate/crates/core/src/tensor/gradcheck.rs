use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Max relative error between the tape gradient of `f` at `x` and central
/// differences with step `h`:
/// `max_i |analytic_i − (f(x+h·eᵢ) − f(x−h·eᵢ))/(2h)| / max(|analytic_i|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errs = finite_diff_check_with(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)?;
    Ok(errs[0])
}

/// Multi-input form of [`finite_diff_check`]; returns one error per input.
pub fn finite_diff_check_with<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Parameter(format!("finite difference step must be > 0, got {h}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut worst = 0.0f64;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1e-8));
        }
        errors.push(worst);
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Padding;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_fn(&[4], |i| i[0] as f64 * 0.5 - 1.0);
        let err = finite_diff_check(|t, x| t.sum(x), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn quadratic_is_exact_to_second_order() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = finite_diff_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::zeros(&[1]);
        assert!(finite_diff_check(|t, x| t.sum(x), &x, 0.0).is_err());
    }

    #[test]
    fn conv_softmax_composite() {
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| ((i[1] * 16 + i[2] * 4 + i[3]) as f64 * 0.37).sin());
        let k = Tensor::from_fn(&[2, 2, 3, 3], |i| ((i[0] * 18 + i[1] * 9 + i[2] * 3 + i[3]) as f64 * 0.71).cos() * 0.3);
        let w = Tensor::from_fn(&[1, 2, 4, 4], |i| (i[3] as f64 + 1.0) * 0.25 - i[1] as f64);
        let errs = finite_diff_check_with(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Padding::Same)?;
                let s = t.softmax(y, 3)?;
                let wv = t.constant(w.clone());
                let p = t.mul(s, wv)?;
                t.sum(p)
            },
            &[x, k],
            1e-5,
        )
        .unwrap();
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }
}
