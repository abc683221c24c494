use super::{AutodiffError, Element, Tape, Tensor, Var};

/// Compares reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` receives a fresh tape and the probe point as a leaf and must return a
/// 1x1 value. The result is the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, eps: f64) -> Result<f64, AutodiffError>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = f(&mut tape, x)?;
    let analytic = tape.backward(loss)?.get(x);

    let eval = |p: Tensor<T>, coord: usize| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let out = f(&mut tape, x)?;
        let v = tape.value(out).item().to_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AutodiffError::NonFiniteProbe(coord))
        }
    };

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let base = point.data()[i].to_f64();
        let mut plus = point.clone();
        plus.data_mut()[i] = T::from_f64(base + eps);
        let mut minus = point.clone();
        minus.data_mut()[i] = T::from_f64(base - eps);
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * eps);
        let a = analytic.data()[i].to_f64();
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
