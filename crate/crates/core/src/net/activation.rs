use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.max(T::zero());
    }
    out
}

/// Passes `grad` where the forward input was positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.same_shape(grad) {
        return Err(Error::shape(format!(
            "relu backward: {:?} vs {:?}",
            x.shape(),
            grad.shape()
        )));
    }
    let mut out = grad.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(out)
}
