use alloc::string::ToString;

use super::BackboneParams;
use crate::error::{contract, Error, Result};

/// `eta * cos(7 pi t / (16 T))`.
pub fn cosine_lr(t: usize, total: usize, eta: f32) -> Result<f32> {
    contract!(total > 0, "total iterations must be positive");
    contract!(t <= total, "iteration {t} exceeds total {total}");
    contract!(eta > 0.0, "base learning rate must be positive, got {eta}");
    let angle = 7.0 * core::f64::consts::PI * t as f64 / (16.0 * total as f64);
    Ok((eta as f64 * libm::cos(angle)) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Cosine,
    Constant,
}

/// Momentum buffers plus the schedule position.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: BackboneParams,
    pub base_lr: f32,
    pub momentum: f32,
    pub iteration: usize,
    pub total: usize,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &BackboneParams, base_lr: f32, momentum: f32, total: usize) -> Result<Self> {
        contract!(base_lr > 0.0, "base learning rate must be positive");
        contract!(
            (0.0..1.0).contains(&momentum),
            "momentum must lie in [0, 1)"
        );
        contract!(total > 0, "total iterations must be positive");
        Ok(OptimizerState {
            velocity: params.zeros_like(),
            base_lr,
            momentum,
            iteration: 0,
            total,
            schedule: LrSchedule::Cosine,
        })
    }

    pub fn current_lr(&self) -> Result<f32> {
        match self.schedule {
            LrSchedule::Cosine => cosine_lr(self.iteration, self.total, self.base_lr),
            LrSchedule::Constant => Ok(self.base_lr),
        }
    }
}

/// `v <- mu v + g; p <- p - lr v`, then advances the iteration counter.
/// Returns the learning rate that was applied. Nothing is modified when a
/// gradient entry is not finite.
pub fn sgd_step(
    params: &mut BackboneParams,
    grads: &BackboneParams,
    opt: &mut OptimizerState,
) -> Result<f32> {
    if params.config != grads.config || params.config != opt.velocity.config {
        return Err(Error::Contract(
            "parameters, gradients and momentum buffers are not congruent".to_string(),
        ));
    }
    for (name, g) in grads.tensors() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: alloc::format!("{name}[{i}]"),
            });
        }
    }
    let lr = opt.current_lr()?;
    let mu = opt.momentum;
    let p_all = params.tensors_mut();
    let v_all = opt.velocity.tensors_mut();
    for (((_, p), (_, v)), (_, g)) in p_all.into_iter().zip(v_all).zip(grads.tensors()) {
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = mu * *vi + *gi;
            *pi -= lr * *vi;
        }
    }
    opt.iteration += 1;
    Ok(lr)
}
