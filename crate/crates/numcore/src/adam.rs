use crate::error::{NumError, Result};
use crate::params::{ParamId, ParamSet};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, allocated per parameter on first update.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Vec<F>>>,
    second: Vec<Option<Vec<F>>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[F], &[F])> {
        let m = self.first.get(id.0)?.as_deref()?;
        let v = self.second.get(id.0)?.as_deref()?;
        Some((m, v))
    }
}

/// One bias-corrected Adam update of the listed parameters; their gradients
/// are cleared afterwards. Every listed parameter must hold a gradient.
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    ids: &[ParamId],
    state: &mut AdamState<F>,
) -> Result<()> {
    if let Some(&missing) = ids.iter().find(|&&id| params.get(id).grad.is_none()) {
        return Err(NumError::Contract(format!(
            "adam step on parameter {} without a gradient",
            params.name(missing)
        )));
    }
    if state.first.len() < params.len() {
        state.first.resize(params.len(), None);
        state.second.resize(params.len(), None);
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (lr, eps) = (F::of(cfg.lr), F::of(cfg.eps));
    let (c1, c2) = (F::of(c1), F::of(c2));

    for &id in ids {
        let tensor = params.get_mut(id);
        let grad = tensor.grad.take().expect("checked above");
        let n = grad.len();
        let m = state.first[id.0].get_or_insert_with(|| vec![F::zero(); n]);
        let v = state.second[id.0].get_or_insert_with(|| vec![F::zero(); n]);
        for (((w, &g), m), v) in tensor.values_mut().iter_mut().zip(&grad).zip(m).zip(v) {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(value: f64) -> (ParamSet<f64>, ParamId) {
        let mut p = ParamSet::new();
        let id = p.register("w", Tensor::from_f64(vec![1], &[value]).unwrap());
        (p, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ParamSet::new();
        let id = p.register("w", Tensor::from_f64(vec![3], &[0.1, -0.2, 0.3]).unwrap());
        let mut st = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            p.get_mut(id).accumulate_grad(&[0.0; 3]);
            adam_step(&mut p, &[id], &mut st).unwrap();
        }
        assert_eq!(p.get(id).values(), &[0.1, -0.2, 0.3]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // step 1: m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
        for g in [1e-3, 0.5, -7.0] {
            let (mut p, id) = single(1.0);
            let mut st = AdamState::new(AdamConfig::default());
            p.get_mut(id).accumulate_grad(&[g]);
            adam_step(&mut p, &[id], &mut st).unwrap();
            let delta = p.get(id).values()[0] - 1.0;
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!(
                (delta - expected).abs() < 1e-15,
                "g={g}: {delta} vs {expected}"
            );
            assert!((delta.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn gradients_cleared_and_step_counter_increments() {
        let (mut p, id) = single(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        for k in 1..=3 {
            p.get_mut(id).accumulate_grad(&[1.0]);
            adam_step(&mut p, &[id], &mut st).unwrap();
            assert!(p.get(id).grad.is_none());
            assert_eq!(st.step_count(), k);
        }
        let (m, v) = st.moments(id).unwrap();
        assert_eq!((m.len(), v.len()), (1, 1));
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let (mut p, id) = single(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &[id], &mut st),
            Err(NumError::Contract(_))
        ));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // loss (w - 3)², gradient 2(w - 3)
        let (mut p, id) = single(0.0);
        let mut st = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        let mut reached = None;
        for step in 1..=2000 {
            let w = p.get(id).values()[0];
            p.get_mut(id).accumulate_grad(&[2.0 * (w - 3.0)]);
            adam_step(&mut p, &[id], &mut st).unwrap();
            if reached.is_none() && (p.get(id).values()[0] - 3.0).abs() < 0.01 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!((p.get(id).values()[0] - 3.0).abs() < 0.01);
    }
}
