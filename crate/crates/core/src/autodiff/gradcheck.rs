use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares reverse-mode partials of `f` against central differences.
///
/// `f` receives a fresh tape and one parameter leaf per entry of `params`
/// and must return a length-1 node. Returns the largest per-coordinate
/// relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<S, F>(f: F, params: &[Tensor<S>], eps: S) -> Result<S>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if !(S::lit(1e-7)..=S::lit(1e-3)).contains(&eps) {
        return Err(Error::InvalidArgument(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let evaluate = |params: &[Tensor<S>]| -> Result<(Tape<S>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.scalar(out).is_finite() {
            return Err(Error::NonFinite { op: "grad_check objective" });
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = evaluate(params)?;
    let grads = tape.backward(out)?;
    let floor = S::lit(1e-8);
    let two = S::lit(2.0);
    let mut worst = S::zero();
    let mut probe = params.to_vec();
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, var);
        for (i, &a) in analytic.iter().enumerate() {
            let original = probe[p].values()[i];
            probe[p].values_mut()[i] = original + eps;
            let (t_plus, _, o_plus) = evaluate(&probe)?;
            probe[p].values_mut()[i] = original - eps;
            let (t_minus, _, o_minus) = evaluate(&probe)?;
            probe[p].values_mut()[i] = original;
            let numeric = (t_plus.scalar(o_plus) - t_minus.scalar(o_minus)) / (two * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
