use super::{NumericsError, Tape, Tensor, Var};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Compares the tape gradient of a scalar function against central
/// differences at `point`.
///
/// `f` records its computation on the supplied tape, reading its input from
/// the given variable, and returns the scalar loss variable. The result is
/// `max_i |g_ad - g_fd| / max(1, |g_ad| + |g_fd|)`.
pub fn finite_difference_check<F>(
    f: F,
    point: &Tensor<f64>,
    eps: f64,
) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, NumericsError>,
{
    let eval = |p: &Tensor<f64>| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone(), false);
        let loss = f(&mut tape, x)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(NumericsError::NonScalarLoss(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let first = eval(point)?;
    let second = eval(point)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::NonDeterministicFunction { first, second });
    }

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone(), true);
    let loss = f(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape.grad(x).expect("leaf requires grad");

    let mut probe = point.clone();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let ad = analytic.data()[i];
        let err = (ad - numeric).abs() / (ad.abs() + numeric.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
