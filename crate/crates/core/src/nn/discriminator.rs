use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::conv::{conv2d_backward, conv2d_forward, ConvCache, ConvShape};
use super::generator::two_mut;
use super::param::{Param, ParamSet};
use super::tensor::{
    concat_channels, global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward,
    sigmoid, Tensor4,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Output channels of the stride-2 convolutions.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Map plus condition planes.
    pub input_channels: usize,
}

impl DiscriminatorConfig {
    pub fn with_base(base: usize) -> Self {
        Self { channels: vec![base, 2 * base, 4 * base, 8 * base], kernel: 3, input_channels: 3 }
    }
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self::with_base(8)
    }
}

/// Strided convolutions, global average pooling and an affine read-out
/// producing one logit per item.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
    convs: Vec<(ConvShape, usize, usize)>,
    head: (usize, usize),
}

pub struct DiscriminatorCache {
    weights: Vec<Vec<f64>>,
    layers: Vec<(ConvCache, Tensor4)>,
    pooled: Vec<f64>,
    last_shape: (usize, usize, usize, usize),
    input_shape: (usize, usize, usize, usize),
    pub logits: Vec<f64>,
}

impl DiscriminatorCache {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.channels.is_empty() || config.kernel == 0 || config.channels.contains(&0) {
            return Err(Error::Parameter(format!("invalid discriminator config {config:?}")));
        }
        let mut ps = ParamSet::default();
        let mut ch = config.input_channels;
        let mut convs = Vec::new();
        for (i, &out) in config.channels.iter().enumerate() {
            let shape = ConvShape { in_ch: ch, out_ch: out, kernel: config.kernel, stride: 2 };
            let fan_in = ch * config.kernel * config.kernel;
            let w = ps.push(Param::he_uniform(
                format!("d.conv{i}.weight"),
                vec![out, ch, config.kernel, config.kernel],
                fan_in,
                seed,
            ));
            let b = ps.push(Param::zeros(format!("d.conv{i}.bias"), vec![out]));
            convs.push((shape, w, b));
            ch = out;
        }
        let hw = ps.push(Param::he_uniform("d.head.weight", vec![1, ch], ch, seed));
        let hb = ps.push(Param::zeros("d.head.bias", vec![1]));
        Ok(Self { config, params: ps, convs, head: (hw, hb) })
    }

    /// Logits for `map` stacked with `condition` along channels.
    pub fn forward(&self, map: &Tensor4, condition: &Tensor4) -> Result<DiscriminatorCache> {
        if map.c != 1 || (condition.n, condition.h, condition.w) != (map.n, map.h, map.w) {
            return Err(Error::InvalidInput(format!(
                "discriminator needs a 1-channel map and matching condition, got {:?} and {:?}",
                map.shape(),
                condition.shape()
            )));
        }
        let x = concat_channels(&[map, condition])?;
        if x.c != self.config.input_channels {
            return Err(Error::InvalidInput(format!(
                "discriminator expects {} input channels, got {}",
                self.config.input_channels, x.c
            )));
        }
        let wts = self.params.to_f64();
        let mut layers: Vec<(ConvCache, Tensor4)> = Vec::with_capacity(self.convs.len());
        let mut cur = x;
        for &(shape, w, b) in &self.convs {
            let (pre, cache) = conv2d_forward(&cur, shape, &wts[w], &wts[b])?;
            cur = leaky_relu(&pre);
            layers.push((cache, pre));
        }
        let pooled = global_avg_pool(&cur);
        let (hw, hb) = self.head;
        let logits = pooled
            .chunks(cur.c)
            .map(|p| wts[hb][0] + p.iter().zip(&wts[hw]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Ok(DiscriminatorCache {
            weights: wts,
            layers,
            pooled,
            last_shape: cur.shape(),
            input_shape: (map.n, self.config.input_channels, map.h, map.w),
            logits,
        })
    }

    /// Parameter gradients and the gradient with respect to the map channel
    /// for `g_logits`, the gradient with respect to each logit.
    pub fn backward(&self, cache: &DiscriminatorCache, g_logits: &[f64]) -> (Vec<Vec<f64>>, Tensor4) {
        let wts = &cache.weights;
        let mut grads = self.params.zero_grads();
        let (n, c, h, w) = cache.last_shape;
        let (hw, hb) = self.head;
        let mut g_pool = vec![0.0; n * c];
        for (i, &g) in g_logits.iter().enumerate() {
            grads[hb][0] += g;
            for k in 0..c {
                grads[hw][k] += g * cache.pooled[i * c + k];
                g_pool[i * c + k] = g * wts[hw][k];
            }
        }
        let mut g = global_avg_pool_backward(&g_pool, n, c, h, w);
        for (&(_, wi, bi), (conv, pre)) in self.convs.iter().zip(&cache.layers).rev() {
            let g_pre = leaky_relu_backward(pre, &g);
            let (gw, gb) = two_mut(&mut grads, wi, bi);
            g = conv2d_backward(conv, &wts[wi], &g_pre, gw, gb);
        }
        let (n, _, h, w) = cache.input_shape;
        let mut g_map = Tensor4::zeros(n, 1, h, w);
        for i in 0..n {
            g_map.item_mut(i).copy_from_slice(g.channel(i, 0));
        }
        (grads, g_map)
    }
}
