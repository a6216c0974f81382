//! Shared fixtures for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::calib::{look_at, CameraCalibration};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Camera on a random ring position looking down at the origin area.
pub fn random_calibration(rng: &mut ChaCha8Rng) -> CameraCalibration<f64> {
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let radius = rng.gen_range(5.0..20.0);
    let eye = [
        radius * angle.cos(),
        radius * angle.sin(),
        rng.gen_range(1.5..8.0),
    ];
    let target = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0];
    look_at(eye, target, rng.gen_range(40.0..90.0), (720, 1280)).unwrap()
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<T> {
    let data = (0..c * h * w)
        .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(c, h, w, data).unwrap()
}
