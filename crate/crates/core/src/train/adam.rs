use crate::engine::{Real, Tensor};
use crate::error::{Error, Result};
use crate::model::Parameter;

/// First and second moment estimates of every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Parameters are untouched if any gradient
/// is non-finite or mis-shaped.
pub fn adam_step<T: Real>(
    params: &mut [Parameter<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::dim(format!(
                "adam: gradient {:?} does not match parameter `{}` {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{}` at flat index {i} is {}",
                p.name,
                g.data()[i]
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps, one) = (T::of(lr), T::of(state.eps), T::one());
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let iter = p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &g), (m, v)) in iter {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Parameter<f64>> {
        vec![Parameter { name: "w".into(), value: Tensor::scalar(v) }]
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.3);
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s, 0.1).unwrap();
        }
        assert_eq!(p[0].value.data(), &[0.3]);
        assert_eq!(s.step, 3);
    }

    #[test]
    fn first_step_is_sign_like() {
        for g in [1e-3, 1.0, 250.0] {
            let mut p = scalar(1.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::scalar(g)], &mut s, 0.01).unwrap();
            // m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
            let expect = 1.0 - 0.01 * g / (g + 1e-8);
            assert!((p[0].value.data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        let mut reached = None;
        for step in 1..=100 {
            let w = p[0].value.data()[0];
            adam_step(&mut p, &[Tensor::scalar(2.0 * w)], &mut s, 0.1).unwrap();
            if p[0].value.data()[0].abs() < 0.1 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some(), "final w = {}", p[0].value.data()[0]);
    }

    #[test]
    fn nan_gradient_names_parameter_and_aborts() {
        let mut p = vec![
            Parameter { name: "enc0.conv.weight".into(), value: Tensor::<f32>::zeros(vec![2]) },
            Parameter { name: "head.bias".into(), value: Tensor::zeros(vec![1]) },
        ];
        let mut s = AdamState::new(&p);
        let grads = [Tensor::full(vec![2], 1.0), Tensor::full(vec![1], f32::NAN)];
        match adam_step(&mut p, &grads, &mut s, 0.1) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("head.bias")),
            other => panic!("expected non-finite error, got {other:?}"),
        }
        assert_eq!(s.step, 0);
        assert_eq!(p[0].value.data(), &[0.0, 0.0]);
    }
}
