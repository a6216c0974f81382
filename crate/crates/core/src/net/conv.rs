//! Dilated 2-D convolution (cross-correlation) with "same" zero padding.
//!
//! All three kernels parallelize over an output-owning axis (output channel
//! for forward and weight gradients, input channel for the input gradient),
//! so each value is reduced in a fixed order and results are identical for
//! any thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub c_in: usize,
    pub c_out: usize,
    /// Odd kernel side.
    pub kernel: usize,
    pub dilation: usize,
    /// `c_out x c_in x kernel x kernel`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_x: Option<Tensor<T>>,
    pub grad_w: Vec<T>,
    pub grad_b: Vec<T>,
}

/// Output positions `y` with `0 <= y + offset < n`.
#[inline]
fn valid_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

impl<T: Real> ConvLayer<T> {
    /// Zero-initialized layer.
    pub fn new(c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Result<Self> {
        if kernel % 2 == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "kernel {kernel} must be odd and dilation {dilation} positive"
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            kernel,
            dilation,
            weight: vec![T::zero(); c_out * c_in * kernel * kernel],
            bias: vec![T::zero(); c_out],
        })
    }

    /// Centered uniform init scaled by `1 / sqrt(fan_in)`.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let bound = 1.0 / ((self.c_in * self.kernel * self.kernel).max(1) as f64).sqrt();
        for w in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            *w = T::lit(rng.gen_range(-bound..bound));
        }
    }

    /// Zero padding that preserves H x W.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// Span of input cells one output cell depends on.
    pub fn receptive_span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    #[inline]
    fn widx(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.c_in + ci) * self.kernel + ky) * self.kernel + kx
    }

    #[inline]
    fn tap_offset(&self, k: usize) -> isize {
        (k * self.dilation) as isize - self.padding() as isize
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.shape();
        if c != self.c_in {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let plane = h * w;
        let mut out = Tensor::zeros(self.c_out, h, w);
        out.data_mut()
            .par_chunks_mut(plane.max(1))
            .enumerate()
            .for_each(|(co, o)| {
                o.fill(self.bias[co]);
                for ci in 0..self.c_in {
                    let src = x.channel(ci);
                    for ky in 0..self.kernel {
                        let dy = self.tap_offset(ky);
                        let (y0, y1) = valid_range(dy, h);
                        for kx in 0..self.kernel {
                            let dx = self.tap_offset(kx);
                            let (x0, x1) = valid_range(dx, w);
                            if x0 == x1 {
                                continue;
                            }
                            let wv = self.weight[self.widx(co, ci, ky, kx)];
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let orow = &mut o[y * w + x0..y * w + x1];
                                let srow = &src[sy * w + (x0 as isize + dx) as usize..];
                                for (a, &b) in orow.iter_mut().zip(srow) {
                                    *a += wv * b;
                                }
                            }
                        }
                    }
                }
            });
        Ok(out)
    }

    /// Exact gradients of [`forward`](Self::forward) given `grad_out`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        self.backward_with(x, grad_out, true)
    }

    /// Like [`backward`](Self::backward); skips the input gradient when
    /// `input_grad` is false.
    pub fn backward_with(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        input_grad: bool,
    ) -> Result<ConvGrads<T>> {
        let (c, h, w) = x.shape();
        if c != self.c_in || grad_out.shape() != (self.c_out, h, w) {
            return Err(Error::shape(format!(
                "conv backward: input {:?}, grad {:?}, layer {}->{}",
                x.shape(),
                grad_out.shape(),
                self.c_in,
                self.c_out
            )));
        }
        let k = self.kernel;
        let grad_b: Vec<T> = (0..self.c_out)
            .map(|co| grad_out.channel(co).iter().copied().sum())
            .collect();

        let mut grad_w = vec![T::zero(); self.weight.len()];
        grad_w
            .par_chunks_mut(self.c_in * k * k)
            .enumerate()
            .for_each(|(co, gw)| {
                let g = grad_out.channel(co);
                for ci in 0..self.c_in {
                    let src = x.channel(ci);
                    for ky in 0..k {
                        let dy = self.tap_offset(ky);
                        let (y0, y1) = valid_range(dy, h);
                        for kx in 0..k {
                            let dx = self.tap_offset(kx);
                            let (x0, x1) = valid_range(dx, w);
                            if x0 == x1 {
                                continue;
                            }
                            let mut acc = T::zero();
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let grow = &g[y * w + x0..y * w + x1];
                                let srow = &src[sy * w + (x0 as isize + dx) as usize..];
                                for (&a, &b) in grow.iter().zip(srow) {
                                    acc += a * b;
                                }
                            }
                            gw[(ci * k + ky) * k + kx] = acc;
                        }
                    }
                }
            });

        let grad_x = if input_grad {
            let mut gx = Tensor::zeros(c, h, w);
            gx.data_mut()
                .par_chunks_mut((h * w).max(1))
                .enumerate()
                .for_each(|(ci, gxp)| {
                    for co in 0..self.c_out {
                        let g = grad_out.channel(co);
                        for ky in 0..k {
                            let dy = self.tap_offset(ky);
                            let (y0, y1) = valid_range(dy, h);
                            for kx in 0..k {
                                let dx = self.tap_offset(kx);
                                let (x0, x1) = valid_range(dx, w);
                                if x0 == x1 {
                                    continue;
                                }
                                let wv = self.weight[self.widx(co, ci, ky, kx)];
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    let start = sy * w + (x0 as isize + dx) as usize;
                                    let dst = &mut gxp[start..start + (x1 - x0)];
                                    for (a, &b) in dst.iter_mut().zip(&g[y * w + x0..y * w + x1]) {
                                        *a += wv * b;
                                    }
                                }
                            }
                        }
                    }
                });
            Some(gx)
        } else {
            None
        };

        Ok(ConvGrads {
            grad_x,
            grad_w,
            grad_b,
        })
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            c_in: self.c_in,
            c_out: self.c_out,
            kernel: self.kernel,
            dilation: self.dilation,
            weight: self.weight.iter().map(|v| v.cast()).collect(),
            bias: self.bias.iter().map(|v| v.cast()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop cross-correlation with explicit bounds checks.
    fn naive_conv(layer: &ConvLayer<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (_, h, w) = x.shape();
        let pad = layer.padding() as i64;
        let mut out = Tensor::zeros(layer.c_out, h, w);
        for co in 0..layer.c_out {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = layer.bias[co];
                    for ci in 0..layer.c_in {
                        for ky in 0..layer.kernel {
                            for kx in 0..layer.kernel {
                                let sy = y as i64 + (ky * layer.dilation) as i64 - pad;
                                let sx = xx as i64 + (kx * layer.dilation) as i64 - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += layer.weight[layer.widx(co, ci, ky, kx)]
                                        * x.get(ci, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    out.set(co, y, xx, acc);
                }
            }
        }
        out
    }

    fn random_layer(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        k: usize,
        d: usize,
    ) -> ConvLayer<f64> {
        let mut l = ConvLayer::new(c_in, c_out, k, d).unwrap();
        l.init_uniform(rng);
        l
    }

    fn identity_layer(c: usize) -> ConvLayer<f64> {
        let mut l = ConvLayer::new(c, c, 3, 1).unwrap();
        for ch in 0..c {
            let i = l.widx(ch, ch, 1, 1);
            l.weight[i] = 1.0;
        }
        l
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 3, 5, 6);
        let l = identity_layer(3);
        assert_eq!(l.forward(&x).unwrap(), x);
        let g = random_tensor(&mut rng, 3, 5, 6);
        assert_eq!(l.backward(&x, &g).unwrap().grad_x.unwrap(), g);
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let mut l = ConvLayer::<f32>::new(1, 1, 3, 1).unwrap();
        l.weight.fill(1.0);
        let x = Tensor::filled(1, 5, 5, 2.0);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.get(0, 2, 2), 18.0);
        assert_eq!(y.get(0, 0, 0), 8.0);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, d) in &[(3, 1), (3, 2), (3, 4), (1, 1), (5, 3)] {
            let l = random_layer(&mut rng, 4, 3, k, d);
            let x = random_tensor(&mut rng, 4, 9, 11);
            let fast = l.forward(&x).unwrap();
            let slow = naive_conv(&l, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn maps_smaller_than_the_dilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = random_layer(&mut rng, 2, 2, 3, 4);
        for (h, w) in [(1, 1), (2, 3), (5, 2)] {
            let x = random_tensor(&mut rng, 2, h, w);
            let fast = l.forward(&x).unwrap();
            for (a, b) in fast.data().iter().zip(naive_conv(&l, &x).data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let g = l.backward(&x, &random_tensor(&mut rng, 2, h, w)).unwrap();
            assert_eq!(g.grad_x.unwrap().shape(), (2, h, w));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_layer(&mut rng, 2, 3, 3, 2);
        let x = random_tensor(&mut rng, 2, 6, 7);
        let g = l.backward(&x, &Tensor::zeros(3, 6, 7)).unwrap();
        assert!(g.grad_x.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.iter().chain(&g.grad_b).all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random_layer(&mut rng, 2, 3, 3, 2);
        let x = random_tensor(&mut rng, 2, 5, 6);
        let g = random_tensor(&mut rng, 3, 5, 6);
        let objective = |l: &ConvLayer<f64>, x: &Tensor<f64>| -> f64 {
            l.forward(x)
                .unwrap()
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let grads = l.backward(&x, &g).unwrap();
        let eps = 1e-3;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for i in 0..l.weight.len() {
            let (mut lp, mut lm) = (l.clone(), l.clone());
            lp.weight[i] += eps;
            lm.weight[i] -= eps;
            let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * eps);
            assert!(rel(fd, grads.grad_w[i]) < 1e-4);
        }
        for i in 0..l.bias.len() {
            let (mut lp, mut lm) = (l.clone(), l.clone());
            lp.bias[i] += eps;
            lm.bias[i] -= eps;
            let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * eps);
            assert!(rel(fd, grads.grad_b[i]) < 1e-4);
        }
        let gx = grads.grad_x.unwrap();
        for i in 0..x.data().len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (objective(&l, &xp) - objective(&l, &xm)) / (2.0 * eps);
            assert!(rel(fd, gx.data()[i]) < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ConvLayer::<f32>::new(1, 1, 2, 1).is_err());
        let l = ConvLayer::<f32>::new(2, 1, 3, 1).unwrap();
        assert!(l.forward(&Tensor::zeros(3, 4, 4)).is_err());
        assert!(l
            .backward(&Tensor::zeros(2, 4, 4), &Tensor::zeros(1, 4, 5))
            .is_err());
    }

    #[test]
    fn same_result_on_any_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l: ConvLayer<f32> = random_layer(&mut rng, 5, 6, 3, 2).cast();
        let x: Tensor<f32> = random_tensor(&mut rng, 5, 20, 30);
        let g: Tensor<f32> = random_tensor(&mut rng, 6, 20, 30);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| (l.forward(&x).unwrap(), l.backward(&x, &g).unwrap()))
        };
        let (y1, g1) = run(1);
        let (y4, g4) = run(4);
        assert_eq!(y1, y4);
        assert_eq!(g1.grad_w, g4.grad_w);
        assert_eq!(g1.grad_x, g4.grad_x);
    }
}
