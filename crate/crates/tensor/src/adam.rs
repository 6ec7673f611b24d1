use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators for one parameter set, plus the shared
/// step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn restore(m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step: u64) -> Self {
        Self { m, v, step }
    }
}

/// One bias-corrected Adam update. `grads[i] = None` leaves `params[i]`
/// untouched (its moments still decay toward zero is *not* applied; a skipped
/// parameter is treated as having zero gradient).
pub fn adam_step<T: Element>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Dimension(
            "adam_step: params/grads/state length mismatch".into(),
        ));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..params.len() {
        let g = match &grads[i] {
            Some(g) => g,
            None => continue,
        };
        if g.shape() != params[i].shape() {
            return Err(TensorError::ShapeMismatch {
                expected: params[i].shape().to_vec(),
                got: g.shape().to_vec(),
                context: "adam_step gradient".into(),
            });
        }
        let n = params[i].numel();
        let mut m_new = vec![T::ZERO; n];
        let mut v_new = vec![T::ZERO; n];
        let mut p_new = vec![T::ZERO; n];
        let (pm, pv, pp, pg) = (
            state.m[i].data(),
            state.v[i].data(),
            params[i].data(),
            g.data(),
        );
        for j in 0..n {
            let gv = pg[j].to_f64();
            let m = ADAM_BETA1 * pm[j].to_f64() + (1.0 - ADAM_BETA1) * gv;
            let v = ADAM_BETA2 * pv[j].to_f64() + (1.0 - ADAM_BETA2) * gv * gv;
            let mhat = m / bc1;
            let vhat = v / bc2;
            m_new[j] = T::from_f64(m);
            v_new[j] = T::from_f64(v);
            p_new[j] = T::from_f64(pp[j].to_f64() - lr * mhat / (vhat.sqrt() + ADAM_EPS));
        }
        state.m[i] = Tensor::from_parts(params[i].shape().to_vec(), m_new);
        state.v[i] = Tensor::from_parts(params[i].shape().to_vec(), v_new);
        params[i] = Tensor::from_parts(params[i].shape().to_vec(), p_new);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::<f64>::from_vec(vec![1.0, -2.0, 3.0])];
        let before = params[0].clone();
        let mut st = AdamState::new(&params);
        let grads = vec![Some(Tensor::zeros(&[3]))];
        adam_step(&mut params, &grads, &mut st, 0.1).unwrap();
        assert!(params[0].bit_eq(&before));
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With constant gradient g, bias correction makes mhat = g and
        // vhat = g^2, so the first update is exactly lr (up to eps).
        let mut params = vec![Tensor::<f64>::from_vec(vec![0.5])];
        let mut st = AdamState::new(&params);
        let grads = vec![Some(Tensor::from_vec(vec![3.0]))];
        adam_step(&mut params, &grads, &mut st, 0.01).unwrap();
        let delta = 0.5 - params[0].data()[0];
        assert!((delta - 0.01).abs() < 1e-6, "delta = {delta}");
    }

    #[test]
    fn quadratic_descent_matches_scalar_oracle() {
        // Oracle: plain scalar Adam on f(w) = w^2 from w = 1, lr = 0.1.
        let lr = 0.1;
        let mut w_oracle = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut params = vec![Tensor::<f64>::from_vec(vec![1.0])];
        let mut st = AdamState::new(&params);
        for t in 1..=100u32 {
            let g_oracle = 2.0 * w_oracle;
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g_oracle;
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g_oracle * g_oracle;
            let mhat = m / (1.0 - ADAM_BETA1.powi(t as i32));
            let vhat = v / (1.0 - ADAM_BETA2.powi(t as i32));
            w_oracle -= lr * mhat / (vhat.sqrt() + ADAM_EPS);

            let w = params[0].data()[0];
            let grads = vec![Some(Tensor::from_vec(vec![2.0 * w]))];
            adam_step(&mut params, &grads, &mut st, lr).unwrap();
        }
        let w = params[0].data()[0];
        assert!((w - w_oracle).abs() < 1e-12);
        assert!(w.abs() < 0.1, "w after 100 steps: {w}");
    }
}
