use crate::error::{NumError, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// |a − n| / max(1e−8, |a| + |n|)
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F, B>(build_loss: &B, params: &[Tensor<F>]) -> Result<(Tape<F>, Vec<Var>, Var)>
where
    F: Real,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone().with_grad()))
        .collect();
    let loss = build_loss(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(NumError::Contract(
            "gradient check needs a scalar loss".into(),
        ));
    }
    Ok((tape, vars, loss))
}

/// Finite-difference estimator used by [`gradient_check_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiniteDifference {
    /// `(f(x+h) − f(x−h)) / 2h`
    Central { step: f64 },
    /// Richardson extrapolation of central differences at `h` and `2h`;
    /// fourth-order accurate, so a larger step keeps rounding noise low.
    Richardson { step: f64 },
}

impl FiniteDifference {
    /// Central differences with h = 1e−5, or 1e−3 when `F` is single precision.
    pub fn default_for<F: Real>() -> Self {
        // f32 cannot resolve a 1e-5 step
        let step = if F::epsilon().f64() > 1e-10 {
            1e-3
        } else {
            1e-5
        };
        FiniteDifference::Central { step }
    }
}

/// Compares the tape gradient of `build_loss` with central finite differences
/// for every entry of every parameter and returns the worst relative error.
///
/// `build_loss` must be deterministic (no dropout); it is evaluated twice up
/// front and a mismatch is reported as a contract error.
pub fn gradient_check<F, B>(build_loss: B, params: &[Tensor<F>]) -> Result<f64>
where
    F: Real,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    gradient_check_with(build_loss, params, FiniteDifference::default_for::<F>())
}

/// [`gradient_check`] with an explicit estimator.
pub fn gradient_check_with<F, B>(
    build_loss: B,
    params: &[Tensor<F>],
    scheme: FiniteDifference,
) -> Result<f64>
where
    F: Real,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = evaluate(&build_loss, params)?;
    let (again, _, again_loss) = evaluate(&build_loss, params)?;
    if tape.value(loss)[0] != again.value(again_loss)[0] {
        return Err(NumError::Contract("loss is not deterministic".into()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.iter().map(|x| x.f64()).collect(),
            None => vec![0.0; p.len()],
        })
        .collect();

    let mut work: Vec<Tensor<F>> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (ei, &a) in grads.iter().enumerate() {
            let mut central = |h: f64| -> Result<f64> {
                let orig = work[pi].values()[ei];
                work[pi].values_mut()[ei] = F::of(orig.f64() + h);
                let plus = scalar_loss(&build_loss, &work)?;
                work[pi].values_mut()[ei] = F::of(orig.f64() - h);
                let minus = scalar_loss(&build_loss, &work)?;
                work[pi].values_mut()[ei] = orig;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = match scheme {
                FiniteDifference::Central { step } => central(step)?,
                FiniteDifference::Richardson { step } => {
                    let fine = central(step)?;
                    let coarse = central(2.0 * step)?;
                    (4.0 * fine - coarse) / 3.0
                }
            };
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

fn scalar_loss<F, B>(build_loss: &B, params: &[Tensor<F>]) -> Result<f64>
where
    F: Real,
    B: Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let (tape, _, loss) = evaluate(build_loss, params)?;
    Ok(tape.value(loss)[0].f64())
}
