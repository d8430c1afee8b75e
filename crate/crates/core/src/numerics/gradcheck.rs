use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms. A central difference at `h = 1e-5` carries rounding noise of about
/// `ε·|f|/h ≈ 1e-11·|f|`, which would swamp the relative error of a
/// gradient near 1e-6.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`, and 0 when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` for every entry of every parameter,
/// returning the worst relative error.
///
/// `f` must record a deterministic forward pass onto the tape and return the
/// `1 × 1` output. Parameter values are restored before returning; the
/// parameters' accumulated gradients are left holding the analytic gradient.
///
/// ```
/// use owl_tal::numerics::{grad_check, ParamSet, Tensor2};
///
/// let mut ps = ParamSet::new();
/// let theta = ps.add("theta", Tensor2::scalar(3.0));
/// let err = grad_check(&mut ps, 1e-5, |tape, ps| {
///     let t = tape.param(ps, theta);
///     tape.mul(t, t)
/// })
/// .unwrap();
/// assert!(err < 1e-10);
/// ```
pub fn grad_check<F>(params: &mut ParamSet, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::Config(format!("finite-difference step {h} outside (0, 1e-3]")));
    }
    params.zero_grads();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, params)?;
        let grads = tape.backward(out)?;
        params.accumulate(&tape, &grads);
    }
    let mut eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, ps)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "grad_check",
                left: v.shape(),
                right: (1, 1),
            });
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).data().len();
        for k in 0..n {
            let original = params.value(id).data()[k];
            params.get_mut(id).value.data_mut()[k] = original + h;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[k] = original - h;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let analytic = params.get(id).grad.data()[k];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor2;

    #[test]
    fn square_at_three() {
        let mut ps = ParamSet::new();
        let theta = ps.add("theta", Tensor2::scalar(3.0));
        let err = grad_check(&mut ps, 1e-5, |tape, ps| {
            let t = tape.param(ps, theta);
            tape.mul(t, t)
        })
        .unwrap();
        assert!(err < 1e-10, "{err}");
        assert!((ps.get(theta).grad.item() - 6.0).abs() < 1e-12);
        assert_eq!(ps.value(theta).item(), 3.0);
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let mut ps = ParamSet::new();
        let theta = ps.add("theta", Tensor2::scalar(-2.0));
        let err = grad_check(&mut ps, 1e-4, |tape, ps| {
            let _ = tape.param(ps, theta);
            Ok(tape.constant(Tensor2::scalar(7.0)))
        })
        .unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(ps.get(theta).grad.item(), 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor2::scalar(1.0));
        for h in [0.0, -1e-5, 1e-2] {
            let r = grad_check(&mut ps, h, |tape, _| Ok(tape.constant(Tensor2::scalar(0.0))));
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn non_finite_objective_propagates() {
        let mut ps = ParamSet::new();
        let theta = ps.add("theta", Tensor2::scalar(1.0));
        let r = grad_check(&mut ps, 1e-5, |tape, ps| {
            let t = tape.param(ps, theta);
            tape.scale(t, f64::INFINITY)
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
