//! Regression losses.
//!
//! The ground loss is the mean squared error over cells rather than a raw
//! L2 norm, so its scale does not depend on the grid size.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Mean squared error and its gradient `2 (pred - target) / n`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::shape(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len().max(1);
    let scale = T::lit(2.0 / n as f64);
    let mut grad = pred.clone();
    let mut sum = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sum += d.as_f64() * d.as_f64();
        *g = d * scale;
    }
    Ok((T::lit(sum / n as f64), grad))
}

/// Head and foot regression loss of one view.
#[derive(Clone, Debug)]
pub struct SingleViewLoss<T> {
    pub loss: T,
    pub grad_head: Tensor<T>,
    pub grad_foot: Tensor<T>,
}

pub fn single_view_loss<T: Real>(
    pred_head: &Tensor<T>,
    pred_foot: &Tensor<T>,
    tgt_head: &Tensor<T>,
    tgt_foot: &Tensor<T>,
) -> Result<SingleViewLoss<T>> {
    let (lh, grad_head) = mse_loss(pred_head, tgt_head)?;
    let (lf, grad_foot) = mse_loss(pred_foot, tgt_foot)?;
    Ok(SingleViewLoss {
        loss: lh + lf,
        grad_head,
        grad_foot,
    })
}

/// `ground + alpha * mean(singles)`; no single-view term when there are no views.
pub fn combined_loss<T: Real>(ground: T, singles: &[T], alpha: T) -> T {
    if singles.is_empty() {
        return ground;
    }
    let mean = singles.iter().copied().sum::<T>() / T::lit(singles.len() as f64);
    ground + alpha * mean
}
