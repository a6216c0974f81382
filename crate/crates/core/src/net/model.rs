//! Trainable heads and the full forward/backward pass.
//!
//! The per-view feature provider and the perspective warp are fixed, so
//! only two heads carry parameters: a 3×3 single-view head predicting head
//! and foot maps, and the ground-plane head predicting the occupancy map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activation::{relu_backward, relu_forward};
use super::conv::{ConvGrads, ConvLayer};
use super::loss::{combined_loss, mse_loss, single_view_loss};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::warp::{project_choice, ProjectionMode, SamplingGrid, ViewSources};

/// Architecture of an [`Mvdet`] model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_views: usize,
    pub mode: ProjectionMode,
    /// Dilated 3×3 stack (1, 2, 4) when true, three 1×1 layers otherwise.
    pub large_kernel: bool,
    pub n_hid: usize,
    /// Channels of each per-view feature map.
    pub feature_channels: usize,
    /// Channels of each raw per-view image.
    pub image_channels: usize,
}

impl ModelConfig {
    pub fn ground_in_channels(&self) -> usize {
        self.n_views
            * self
                .mode
                .channels_per_view(self.image_channels, self.feature_channels)
            + 2
    }
}

/// Activations kept for the ground head's backward pass.
#[derive(Clone, Debug)]
pub struct GroundCache<T> {
    /// Input of each layer (the last two are post-ReLU).
    inputs: Vec<Tensor<T>>,
}

/// Three convolutions with ReLU in between and no output activation.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundHead<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> GroundHead<T> {
    pub const DILATIONS: [usize; 3] = [1, 2, 4];

    /// Hidden layers get uniform fan-in init; the output layer starts at zero.
    pub fn new(
        c_in: usize,
        n_hid: usize,
        large_kernel: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (k, dil) = if large_kernel {
            (3, Self::DILATIONS)
        } else {
            (1, [1, 1, 1])
        };
        let mut l1 = ConvLayer::new(c_in, n_hid, k, dil[0])?;
        let mut l2 = ConvLayer::new(n_hid, n_hid, k, dil[1])?;
        let l3 = ConvLayer::new(n_hid, 1, k, dil[2])?;
        l1.init_uniform(rng);
        l2.init_uniform(rng);
        Ok(Self {
            layers: vec![l1, l2, l3],
        })
    }

    /// Side of the square window of input cells one output cell sees.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| l.receptive_span() - 1)
            .sum::<usize>()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GroundCache<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a)?;
            let next = if k == last { z } else { relu_forward(&z) };
            inputs.push(std::mem::replace(&mut a, next));
        }
        Ok((a, GroundCache { inputs }))
    }

    /// Parameter gradients, first layer first. No gradient w.r.t. the input.
    pub fn backward(
        &self,
        cache: &GroundCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<ConvGrads<T>>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[k];
            let lg = layer.backward_with(x, &g, k > 0)?;
            if let Some(gx) = &lg.grad_x {
                // x is post-ReLU here, so x > 0 exactly where the pre-activation was.
                g = relu_backward(x, gx)?;
            }
            grads.push(lg);
        }
        grads.reverse();
        Ok(grads)
    }
}

/// 3×3 convolution from per-view features to (head, foot) maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleViewHead<T> {
    pub conv: ConvLayer<T>,
}

impl<T: Real> SingleViewHead<T> {
    pub fn new(c_in: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut conv = ConvLayer::new(c_in, 2, 3, 1)?;
        conv.init_uniform(rng);
        Ok(Self { conv })
    }

    /// Channel 0 is the head map, channel 1 the foot map.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.conv.forward(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mvdet<T> {
    pub config: ModelConfig,
    pub ground: GroundHead<T>,
    pub single: SingleViewHead<T>,
}

impl<T: Real> Mvdet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.n_views == 0 || config.n_hid == 0 {
            return Err(Error::Config(
                "model needs at least one view and one hidden unit".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ground = GroundHead::new(
            config.ground_in_channels(),
            config.n_hid,
            config.large_kernel,
            &mut rng,
        )?;
        let single = SingleViewHead::new(config.feature_channels, &mut rng)?;
        Ok(Self {
            config,
            ground,
            single,
        })
    }

    fn layers(&self) -> impl Iterator<Item = (String, &ConvLayer<T>)> {
        self.ground
            .layers
            .iter()
            .enumerate()
            .map(|(k, l)| (format!("ground.{k}"), l))
            .chain(std::iter::once(("single".to_string(), &self.single.conv)))
    }

    /// Names of the parameter tensors, in gradient order.
    pub fn param_names(&self) -> Vec<String> {
        self.layers()
            .flat_map(|(n, _)| [format!("{n}.weight"), format!("{n}.bias")])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .flat_map(|(_, l)| [vec![l.c_out, l.c_in, l.kernel, l.kernel], vec![l.c_out]])
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|(_, l)| [&l.weight[..], &l.bias[..]])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.ground
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.single.conv))
            .flat_map(|l| [&mut l.weight[..], &mut l.bias[..]])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Mvdet<U> {
        Mvdet {
            config: self.config.clone(),
            ground: GroundHead {
                layers: self.ground.layers.iter().map(ConvLayer::cast).collect(),
            },
            single: SingleViewHead {
                conv: self.single.conv.cast(),
            },
        }
    }
}

/// Everything the model sees for one frame.
#[derive(Clone, Debug)]
pub struct RigInputs<'a, T> {
    pub views: Vec<ViewSources<'a, T>>,
    pub grids: &'a [SamplingGrid],
    pub coord: &'a Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct FullOutput<T> {
    pub ground_input: Tensor<T>,
    pub pom: Tensor<T>,
    /// Per view: channel 0 head, channel 1 foot.
    pub single: Vec<Tensor<T>>,
    cache: GroundCache<T>,
}

/// Supervision for one frame.
#[derive(Clone, Debug)]
pub struct FrameTargets<T> {
    pub pom: Tensor<T>,
    pub head: Vec<Tensor<T>>,
    pub foot: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub ground: T,
    pub single: Vec<T>,
}

/// Single-view heads per view, then warp + aggregate, then the ground head.
pub fn forward_full<T: Real>(model: &Mvdet<T>, rig: &RigInputs<'_, T>) -> Result<FullOutput<T>> {
    if rig.views.len() != model.config.n_views {
        return Err(Error::shape(format!(
            "model expects {} views, got {}",
            model.config.n_views,
            rig.views.len()
        )));
    }
    let single = rig
        .views
        .par_iter()
        .map(|v| model.single.forward(v.features))
        .collect::<Result<Vec<_>>>()?;
    let ground_input = project_choice(model.config.mode, &rig.views, rig.grids, rig.coord)?;
    let (pom, cache) = model.ground.forward_cached(&ground_input)?;
    Ok(FullOutput {
        ground_input,
        pom,
        single,
        cache,
    })
}

fn split_head_foot<T: Real>(t: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((t.slice_channels(0..1)?, t.slice_channels(1..2)?))
}

/// Combined loss of a completed forward pass.
pub fn losses<T: Real>(
    out: &FullOutput<T>,
    targets: &FrameTargets<T>,
    alpha: T,
) -> Result<LossBreakdown<T>> {
    let (ground, _) = mse_loss(&out.pom, &targets.pom)?;
    let single = single_losses(out, targets)?
        .into_iter()
        .map(|(l, _)| l)
        .collect::<Vec<_>>();
    Ok(LossBreakdown {
        total: combined_loss(ground, &single, alpha),
        ground,
        single,
    })
}

fn single_losses<T: Real>(
    out: &FullOutput<T>,
    targets: &FrameTargets<T>,
) -> Result<Vec<(T, Tensor<T>)>> {
    if targets.head.len() != out.single.len() || targets.foot.len() != out.single.len() {
        return Err(Error::shape(
            "one head and one foot target per view".to_string(),
        ));
    }
    out.single
        .par_iter()
        .zip(targets.head.par_iter().zip(targets.foot.par_iter()))
        .map(|(pred, (th, tf))| {
            let (ph, pf) = split_head_foot(pred)?;
            let sv = single_view_loss(&ph, &pf, th, tf)?;
            let mut grad = sv.grad_head.into_vec();
            grad.extend(sv.grad_foot.into_vec());
            let (_, h, w) = pred.shape();
            Ok((sv.loss, Tensor::from_vec(2, h, w, grad)?))
        })
        .collect()
}

/// Loss breakdown and gradients of the combined loss for every parameter
/// tensor (same order as [`Mvdet::params`]).
///
/// Per-view gradients are computed in parallel and summed in view order.
pub fn backward_full<T: Real>(
    model: &Mvdet<T>,
    rig: &RigInputs<'_, T>,
    out: &FullOutput<T>,
    targets: &FrameTargets<T>,
    alpha: T,
) -> Result<(LossBreakdown<T>, Vec<Vec<T>>)> {
    let (ground, grad_pom) = mse_loss(&out.pom, &targets.pom)?;
    let ground_grads = model.ground.backward(&out.cache, &grad_pom)?;

    let per_view = single_losses(out, targets)?;
    let n = per_view.len();
    let scale = if n > 0 {
        alpha / T::lit(n as f64)
    } else {
        T::zero()
    };
    let view_grads = rig
        .views
        .par_iter()
        .zip(per_view.par_iter())
        .map(|(v, (_, g))| model.single.conv.backward_with(v.features, g, false))
        .collect::<Result<Vec<_>>>()?;

    let conv = &model.single.conv;
    let mut sw = vec![T::zero(); conv.weight.len()];
    let mut sb = vec![T::zero(); conv.bias.len()];
    for vg in &view_grads {
        for (a, &b) in sw.iter_mut().zip(&vg.grad_w) {
            *a += scale * b;
        }
        for (a, &b) in sb.iter_mut().zip(&vg.grad_b) {
            *a += scale * b;
        }
    }

    let mut grads = Vec::with_capacity(2 * (ground_grads.len() + 1));
    for g in ground_grads {
        grads.push(g.grad_w);
        grads.push(g.grad_b);
    }
    grads.push(sw);
    grads.push(sb);

    let single: Vec<T> = per_view.into_iter().map(|(l, _)| l).collect();
    Ok((
        LossBreakdown {
            total: combined_loss(ground, &single, alpha),
            ground,
            single,
        },
        grads,
    ))
}
