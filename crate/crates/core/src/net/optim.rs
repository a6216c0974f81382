//! SGD with momentum and L2 weight decay, plus the one-cycle schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Velocity buffers, one per parameter tensor; zero on first use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<Vec<T>>,
}

/// `v <- momentum * v + (g + weight_decay * p)`, then `p <- p - lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut SgdState<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        let v = state.velocity.get(k).map_or(usize::MAX, Vec::len);
        if p.len() != g.len() || p.len() != v {
            return Err(Error::shape(format!(
                "tensor {k}: param {}, grad {}, velocity {v}",
                p.len(),
                g.len()
            )));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = momentum * *vi + (gi + weight_decay * *pi);
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Triangular one-cycle schedule: linear warm-up from `max_lr / div_factor`
/// to `max_lr` over the first `pct_start` of the run, then linear decay to
/// `max_lr / (div_factor * final_div_factor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OneCycle {
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub pct_start: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            max_lr: 0.1,
            div_factor: 25.0,
            final_div_factor: 1e3,
            pct_start: 0.3,
        }
    }
}

impl OneCycle {
    pub fn with_max_lr(max_lr: f64) -> Self {
        Self {
            max_lr,
            ..Self::default()
        }
    }

    /// Learning rate at `step` of `total_steps`; `step` is clamped to the run.
    pub fn lr(&self, step: usize, total_steps: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let last = initial / self.final_div_factor;
        if total_steps == 0 {
            return self.max_lr;
        }
        let t = step.min(total_steps) as f64;
        let peak = self.pct_start * total_steps as f64;
        if t <= peak {
            if peak <= 0.0 {
                return self.max_lr;
            }
            initial + (self.max_lr - initial) * t / peak
        } else {
            let span = total_steps as f64 - peak;
            self.max_lr - (self.max_lr - last) * (t - peak) / span
        }
    }
}

/// Default-shaped one-cycle rate.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64) -> f64 {
    OneCycle::with_max_lr(max_lr).lr(step, total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut p = vec![1.0f64, -2.0];
        let g = vec![0.5, 0.25];
        let mut st = SgdState::default();
        sgd_step(&mut [&mut p[..]], &[&g[..]], &mut st, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![0.95, -2.025]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![3.0f64; 4];
        let g = vec![0.0; 4];
        let mut st = SgdState::default();
        sgd_step(&mut [&mut p[..]], &[&g[..]], &mut st, 0.1, 0.5, 0.0).unwrap();
        assert_eq!(p, vec![3.0; 4]);
    }

    #[test]
    fn two_steps_on_a_quadratic() {
        // f(x) = 0.5 * a * x^2, gradient a * x.
        let (a, lr, mu, wd) = (3.0f64, 0.05, 0.5, 5e-4);
        let mut p = vec![2.0f64];
        let mut st = SgdState::default();
        let (mut x, mut v) = (2.0f64, 0.0f64);
        for _ in 0..2 {
            let g = vec![a * p[0]];
            sgd_step(&mut [&mut p[..]], &[&g[..]], &mut st, lr, mu, wd).unwrap();
            v = mu * v + (a * x + wd * x);
            x -= lr * v;
        }
        assert!((p[0] - x).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0f32; 3];
        let g = vec![0.0f32; 2];
        let mut st = SgdState::default();
        assert!(sgd_step(&mut [&mut p[..]], &[&g[..]], &mut st, 0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn one_cycle_shape() {
        let total = 1000;
        assert!((one_cycle_lr(300, total, 0.1) - 0.1).abs() < 1e-15);
        assert!((one_cycle_lr(0, total, 0.1) - 0.004).abs() < 1e-15);
        assert!((one_cycle_lr(total, total, 0.1) - 0.1 / 25_000.0).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=total).map(|s| one_cycle_lr(s, total, 0.1)).collect();
        let peak = lrs.iter().cloned().fold(f64::MIN, f64::max);
        let k = lrs.iter().position(|&v| v == peak).unwrap();
        assert!(lrs[..=k].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[k..].windows(2).all(|w| w[1] <= w[0]));
    }
}
