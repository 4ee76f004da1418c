//! ADAM optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::unet::NetworkParams;

#[derive(Debug, Clone)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            lr: T::cast(1e-3),
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
        }
    }
}

/// First/second moment estimates mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>) -> Self {
        let m = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let v = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected ADAM update; `grads` must align with the parameter
/// order. Non-finite gradients abort the step with a diagnostic.
pub fn adam_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<()> {
    if grads.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam_step got {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        g.check_finite(&format!("gradient tensor {i} at adam step {}", state.t + 1))?;
    }

    state.t += 1;
    let t = state.t.min(i32::MAX as u64) as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    let one = T::one();

    for (((param, grad), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} vs parameter shape {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        for ((pv, &gv), (mv, vv)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = cfg.beta1 * *mv + (one - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (one - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::{build_unet, UNetConfig};

    fn single_param(value: f64) -> NetworkParams<f64> {
        let mut params = build_unet(&UNetConfig {
            depth: 2,
            filters: 1,
            kernel: 1,
            slope: 0.1,
            seed: 0,
        })
        .unwrap();
        // collapse to a deterministic single-value state for the scalar tests
        let n = params.count_scalars();
        params.set_flat(&vec![value; n]).unwrap();
        params
    }

    fn grads_like(params: &NetworkParams<f64>, value: f64) -> Vec<Tensor<f64>> {
        params
            .tensors()
            .map(|t| Tensor::full(t.shape(), value))
            .collect()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(0.7);
        let before = params.to_flat();
        let mut state = AdamState::new(&params);
        let grads = grads_like(&params, 0.0);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params.to_flat(), before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // bias correction makes the first step -lr * g / (|g| + eps)
        let mut params = single_param(1.0);
        let before = params.to_flat();
        let mut state = AdamState::new(&params);
        let g = 0.37;
        let cfg = AdamConfig::with_lr(0.001);
        let grads = grads_like(&params, g);
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        for (a, b) in params.to_flat().iter().zip(&before) {
            let step = b - a;
            let expected = cfg.lr * g / (g.abs() + cfg.eps);
            assert!((step - expected).abs() < 1e-12, "step {step}");
        }
    }

    #[test]
    fn matches_independent_reference_loop() {
        // 10 steps on f(w) = w^2 from w = 1 with lr = 0.1
        let cfg = AdamConfig::with_lr(0.1);
        let mut params = single_param(1.0);
        let mut state = AdamState::new(&params);

        // independently coded scalar ADAM
        let (mut w_ref, mut m_ref, mut v_ref) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * params.to_flat()[0];
            let grads = grads_like(&params, g);
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();

            let g_ref = 2.0 * w_ref;
            m_ref = 0.9 * m_ref + 0.1 * g_ref;
            v_ref = 0.999 * v_ref + 0.001 * g_ref * g_ref;
            let m_hat = m_ref / (1.0 - 0.9f64.powi(t));
            let v_hat = v_ref / (1.0 - 0.999f64.powi(t));
            w_ref -= 0.1 * m_hat / (v_hat.sqrt() + 1e-8);

            let w = params.to_flat()[0];
            assert!((w - w_ref).abs() < 1e-12, "step {t}: {w} vs {w_ref}");
        }
    }

    #[test]
    fn lr_zero_is_a_fixed_point() {
        let mut params = single_param(0.3);
        let before = params.to_flat();
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::with_lr(0.0);
        let grads = grads_like(&params, 1.7);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        }
        assert_eq!(params.to_flat(), before);
    }

    #[test]
    fn update_direction_is_scale_equivariant_in_sign() {
        // constant gradients scaled by c > 0 keep every per-step sign
        let run = |gscale: f64| -> Vec<f64> {
            let mut params = single_param(0.5);
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig::default();
            let mut steps = Vec::new();
            for _ in 0..8 {
                let before = params.to_flat()[0];
                let grads = grads_like(&params, 0.9 * gscale);
                adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
                steps.push(params.to_flat()[0] - before);
            }
            steps
        };
        for (a, b) in run(1.0).iter().zip(run(250.0).iter()) {
            assert_eq!(a.signum(), b.signum());
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut params = single_param(0.5);
        let mut state = AdamState::new(&params);
        let mut grads = grads_like(&params, 1.0);
        grads[0].data_mut()[0] = f64::NAN;
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
