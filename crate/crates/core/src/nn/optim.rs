use candle_core::backprop::GradStore;
use candle_core::Var;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::error::Result;

/// Adam without weight decay.
pub struct Adam {
    inner: AdamW,
    vars: Vec<Var>,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64, beta2: f64) -> Result<Self> {
        let params = ParamsAdamW {
            lr,
            beta1: 0.9,
            beta2,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        Ok(Adam {
            inner: AdamW::new(vars.clone(), params)?,
            vars,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.inner.set_learning_rate(lr);
    }

    /// Clips to `max_norm` (when positive) and applies one update.
    pub fn step(&mut self, grads: &mut GradStore, max_norm: f64) -> Result<f64> {
        let norm = clip_grad_norm(grads, &self.vars, max_norm)?;
        self.inner.step(grads)?;
        Ok(norm)
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut total = 0f64;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g
                .sqr()?
                .sum_all()?
                .to_dtype(candle_core::DType::F64)?
                .to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / (norm + 1e-12);
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}

/// Linear warmup to `base` then cosine decay to `floor * base` at `total`.
pub fn warmup_cosine(step: usize, total: usize, warmup: usize, base: f64, floor: f64) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup.min(step)) as f64 / span).min(1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (floor + (1.0 - floor) * cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert!(warmup_cosine(0, 100, 10, 1.0, 0.1) < 0.2);
        assert_eq!(warmup_cosine(10, 100, 10, 1.0, 0.1), 1.0);
        assert!((warmup_cosine(100, 100, 10, 1.0, 0.1) - 0.1).abs() < 1e-12);
    }
}
