use super::{DenoiserModel, ParamStore};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
    pub timestep: u64,
    pub hyper: AdamHyper,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, hyper: AdamHyper) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            timestep: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update, in place. Increments both the optimizer
/// timestep and the model's step count.
pub fn adam_step(model: &mut DenoiserModel, grads: &ParamStore, state: &mut OptimizerState) -> Result<()> {
    model.params.check_compatible(grads)?;
    model.params.check_compatible(&state.first_moment)?;
    model.params.check_compatible(&state.second_moment)?;

    state.timestep += 1;
    let AdamHyper { lr, beta1, beta2, eps } = state.hyper;
    let bias1 = 1.0 - beta1.powi(state.timestep as i32);
    let bias2 = 1.0 - beta2.powi(state.timestep as i32);

    let tensors = model
        .params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.values.len() {
            let gi = g.values[i];
            m.values[i] = beta1 * m.values[i] + (1.0 - beta1) * gi;
            v.values[i] = beta2 * v.values[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m.values[i] / bias1;
            let v_hat = v.values[i] / bias2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    model.step_count += 1;
    Ok(())
}
