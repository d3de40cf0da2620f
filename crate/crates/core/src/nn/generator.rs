use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::conv::{conv2d_backward, conv2d_forward, ConvCache, ConvShape};
use super::param::{Param, ParamSet};
use super::tensor::{
    concat_channels, leaky_relu, leaky_relu_backward, sigmoid, split_channels, upsample_nearest2,
    upsample_nearest2_backward, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayer {
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Optional 2x nearest upsampling, convolution, LeakyReLU, then
/// concatenation of an encoder output and/or the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayer {
    pub out_ch: usize,
    pub kernel: usize,
    pub upsample: bool,
    pub skip: Option<usize>,
    pub concat_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub input_channels: usize,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub output_kernel: usize,
    /// Start the output convolution at zero so the first output is 0.5
    /// everywhere.
    pub zero_init_output: bool,
}

impl GeneratorConfig {
    /// `depth` stride-2 levels starting from `base` channels, 3x3 kernels.
    pub fn reduced(depth: usize, base: usize) -> Self {
        let mut encoder = vec![EncoderLayer { out_ch: base, kernel: 3, stride: 1 }];
        for i in 1..=depth {
            encoder.push(EncoderLayer { out_ch: base << i, kernel: 3, stride: 2 });
        }
        let decoder = (0..depth)
            .rev()
            .map(|i| DecoderLayer {
                out_ch: base << i,
                kernel: 3,
                upsample: true,
                skip: Some(i),
                concat_input: i == 0,
            })
            .collect();
        Self { input_channels: 3, encoder, decoder, output_kernel: 3, zero_init_output: false }
    }

    /// The 18-layer shape with its resolutions, channels and filter sizes;
    /// the skip wiring of the last two decoder layers is inferred from their
    /// channel counts.
    pub fn table1() -> Self {
        let e = |out_ch, kernel, stride| EncoderLayer { out_ch, kernel, stride };
        let d = |out_ch, kernel, upsample, skip, concat_input| DecoderLayer { out_ch, kernel, upsample, skip, concat_input };
        Self {
            input_channels: 3,
            encoder: vec![
                e(6, 5, 1),
                e(40, 5, 2),
                e(50, 5, 2),
                e(60, 5, 1),
                e(100, 3, 2),
                e(100, 5, 1),
                e(150, 5, 2),
                e(300, 5, 2),
                e(500, 4, 2),
            ],
            decoder: vec![
                d(300, 4, true, Some(7), false),
                d(150, 4, true, Some(6), false),
                d(100, 3, true, Some(5), false),
                d(100, 6, false, Some(4), false),
                d(60, 5, true, Some(3), false),
                d(50, 6, false, Some(2), false),
                d(40, 6, true, Some(1), false),
                d(20, 5, true, Some(0), true),
                d(20, 5, false, None, true),
            ],
            output_kernel: 1,
            zero_init_output: false,
        }
    }

    /// Checks the layer wiring for an `h x w` input and returns the number
    /// of channels entering the output convolution.
    pub fn validate(&self, h: usize, w: usize) -> Result<usize> {
        let dim_err = |what: &str| Error::InvalidInput(format!("generator cannot process a {h}x{w} input: {what}"));
        if self.encoder.is_empty() || self.input_channels == 0 || self.output_kernel == 0 {
            return Err(Error::Parameter("generator needs input channels, an encoder and an output kernel".into()));
        }
        let mut res = Vec::with_capacity(self.encoder.len());
        let (mut ch, mut rh, mut rw) = (self.input_channels, h, w);
        for (i, l) in self.encoder.iter().enumerate() {
            if l.out_ch == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(Error::Parameter(format!("encoder layer {i} has a zero size: {l:?}")));
            }
            if rh % l.stride != 0 || rw % l.stride != 0 {
                return Err(dim_err(&format!("encoder layer {i} sees {rh}x{rw}, not divisible by {}", l.stride)));
            }
            rh /= l.stride;
            rw /= l.stride;
            ch = l.out_ch;
            res.push((ch, rh, rw));
        }
        for (j, l) in self.decoder.iter().enumerate() {
            if l.out_ch == 0 || l.kernel == 0 {
                return Err(Error::Parameter(format!("decoder layer {j} has a zero size: {l:?}")));
            }
            if l.upsample {
                rh *= 2;
                rw *= 2;
            }
            ch = l.out_ch;
            if let Some(s) = l.skip {
                let &(sc, sh, sw) = res
                    .get(s)
                    .ok_or_else(|| Error::Parameter(format!("decoder layer {j} skips from missing encoder layer {s}")))?;
                if (sh, sw) != (rh, rw) {
                    return Err(dim_err(&format!("decoder layer {j} at {rh}x{rw} cannot join encoder layer {s} at {sh}x{sw}")));
                }
                ch += sc;
            }
            if l.concat_input {
                if (rh, rw) != (h, w) {
                    return Err(dim_err(&format!("decoder layer {j} at {rh}x{rw} cannot join the input")));
                }
                ch += self.input_channels;
            }
        }
        if (rh, rw) != (h, w) {
            return Err(dim_err(&format!("decoder ends at {rh}x{rw}")));
        }
        Ok(ch)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    shape: ConvShape,
    weight: usize,
    bias: usize,
}

/// Skip-connected encoder-decoder with a sigmoid output.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    enc: Vec<ConvSlot>,
    dec: Vec<ConvSlot>,
    out: ConvSlot,
}

fn add_conv(ps: &mut ParamSet, name: &str, shape: ConvShape, seed: u64, zero: bool) -> ConvSlot {
    let fan_in = shape.in_ch * shape.kernel * shape.kernel;
    let wshape = vec![shape.out_ch, shape.in_ch, shape.kernel, shape.kernel];
    let wname = format!("{name}.weight");
    let weight = ps.push(if zero {
        Param::zeros(wname, wshape)
    } else {
        Param::he_uniform(wname, wshape, fan_in, seed)
    });
    let bias = ps.push(Param::zeros(format!("{name}.bias"), vec![shape.out_ch]));
    ConvSlot { shape, weight, bias }
}

pub struct GeneratorCache {
    input: Tensor4,
    weights: Vec<Vec<f64>>,
    enc: Vec<(ConvCache, Tensor4)>,
    dec: Vec<(ConvCache, Tensor4)>,
    out: ConvCache,
    output: Tensor4,
}

impl GeneratorCache {
    pub fn output(&self) -> &Tensor4 {
        &self.output
    }
}

impl Generator {
    /// Builds and initialises the network for `h x w` inputs.
    pub fn new(config: GeneratorConfig, h: usize, w: usize, seed: u64) -> Result<Self> {
        let final_ch = config.validate(h, w)?;
        let mut ps = ParamSet::default();
        let mut ch = config.input_channels;
        let mut enc_ch = Vec::new();
        let mut enc = Vec::new();
        for (i, l) in config.encoder.iter().enumerate() {
            let shape = ConvShape { in_ch: ch, out_ch: l.out_ch, kernel: l.kernel, stride: l.stride };
            enc.push(add_conv(&mut ps, &format!("g.enc{i}"), shape, seed, false));
            ch = l.out_ch;
            enc_ch.push(ch);
        }
        let mut dec = Vec::new();
        for (j, l) in config.decoder.iter().enumerate() {
            let shape = ConvShape { in_ch: ch, out_ch: l.out_ch, kernel: l.kernel, stride: 1 };
            dec.push(add_conv(&mut ps, &format!("g.dec{j}"), shape, seed, false));
            ch = l.out_ch + l.skip.map_or(0, |s| enc_ch[s]) + if l.concat_input { config.input_channels } else { 0 };
        }
        debug_assert_eq!(ch, final_ch);
        let shape = ConvShape { in_ch: ch, out_ch: 1, kernel: config.output_kernel, stride: 1 };
        let out = add_conv(&mut ps, "g.out", shape, seed, config.zero_init_output);
        Ok(Self { config, params: ps, enc, dec, out })
    }

    pub fn forward(&self, input: &Tensor4) -> Result<GeneratorCache> {
        if input.c != self.config.input_channels {
            return Err(Error::InvalidInput(format!(
                "generator expects {} input channels, got {}",
                self.config.input_channels, input.c
            )));
        }
        self.config.validate(input.h, input.w)?;
        let wts = self.params.to_f64();
        let mut enc = Vec::with_capacity(self.enc.len());
        let mut outs: Vec<Tensor4> = Vec::with_capacity(self.enc.len());
        for (i, s) in self.enc.iter().enumerate() {
            let x = if i == 0 { input } else { &outs[i - 1] };
            let (pre, cache) = conv2d_forward(x, s.shape, &wts[s.weight], &wts[s.bias])?;
            outs.push(leaky_relu(&pre));
            enc.push((cache, pre));
        }
        let mut cur = outs.last().unwrap().clone();
        let mut dec = Vec::with_capacity(self.dec.len());
        for (s, l) in self.dec.iter().zip(&self.config.decoder) {
            let x = if l.upsample { upsample_nearest2(&cur) } else { cur };
            let (pre, cache) = conv2d_forward(&x, s.shape, &wts[s.weight], &wts[s.bias])?;
            let act = leaky_relu(&pre);
            let mut parts = vec![&act];
            if let Some(k) = l.skip {
                parts.push(&outs[k]);
            }
            if l.concat_input {
                parts.push(input);
            }
            cur = concat_channels(&parts)?;
            dec.push((cache, pre));
        }
        let (mut output, out) = conv2d_forward(&cur, self.out.shape, &wts[self.out.weight], &wts[self.out.bias])?;
        output.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(GeneratorCache { input: input.clone(), weights: wts, enc, dec, out, output })
    }

    pub fn predict(&self, input: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(input)?.output)
    }

    /// Parameter gradients and the input gradient for `g_out`, the gradient
    /// with respect to the sigmoid output.
    pub fn backward(&self, cache: &GeneratorCache, g_out: &Tensor4) -> (Vec<Vec<f64>>, Tensor4) {
        let wts = &cache.weights;
        let mut grads = self.params.zero_grads();
        let mut g = g_out.clone();
        g.data
            .iter_mut()
            .zip(&cache.output.data)
            .for_each(|(g, &y)| *g *= y * (1.0 - y));
        let (gw, gb) = two_mut(&mut grads, self.out.weight, self.out.bias);
        let mut g_cur = conv2d_backward(&cache.out, &wts[self.out.weight], &g, gw, gb);
        let mut g_enc: Vec<Option<Tensor4>> = vec![None; self.enc.len()];
        let mut g_input = Tensor4::zeros(cache.input.n, cache.input.c, cache.input.h, cache.input.w);
        let add = |slot: &mut Option<Tensor4>, t: Tensor4| match slot {
            Some(s) => s.data.iter_mut().zip(&t.data).for_each(|(a, b)| *a += b),
            None => *slot = Some(t),
        };
        for (j, (s, l)) in self.dec.iter().zip(&self.config.decoder).enumerate().rev() {
            let mut sizes = vec![l.out_ch];
            if let Some(k) = l.skip {
                sizes.push(self.config.encoder[k].out_ch);
            }
            if l.concat_input {
                sizes.push(self.config.input_channels);
            }
            let mut parts = split_channels(&g_cur, &sizes).into_iter();
            let own = parts.next().unwrap();
            if let Some(k) = l.skip {
                add(&mut g_enc[k], parts.next().unwrap());
            }
            if l.concat_input {
                let gi = parts.next().unwrap();
                g_input.data.iter_mut().zip(&gi.data).for_each(|(a, b)| *a += b);
            }
            let (cache_j, pre) = &cache.dec[j];
            let g_pre = leaky_relu_backward(pre, &own);
            let (gw, gb) = two_mut(&mut grads, s.weight, s.bias);
            let gx = conv2d_backward(cache_j, &wts[s.weight], &g_pre, gw, gb);
            g_cur = if l.upsample { upsample_nearest2_backward(&gx) } else { gx };
        }
        let last = self.enc.len() - 1;
        add(&mut g_enc[last], g_cur);
        for (i, s) in self.enc.iter().enumerate().rev() {
            let Some(g) = g_enc[i].take() else { continue };
            let (cache_i, pre) = &cache.enc[i];
            let g_pre = leaky_relu_backward(pre, &g);
            let (gw, gb) = two_mut(&mut grads, s.weight, s.bias);
            let gx = conv2d_backward(cache_i, &wts[s.weight], &g_pre, gw, gb);
            if i == 0 {
                g_input.data.iter_mut().zip(&gx.data).for_each(|(a, b)| *a += b);
            } else {
                add(&mut g_enc[i - 1], gx);
            }
        }
        (grads, g_input)
    }
}

pub(crate) fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{fd_gradient, rel_err};
    use rand::Rng as _;

    fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut r = crate::rng::rng(seed);
        Tensor4::from_vec(n, 3, h, w, (0..n * 3 * h * w).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_range_and_zero_init() {
        let g = Generator::new(GeneratorConfig::reduced(2, 4), 8, 8, 1).unwrap();
        let y = g.predict(&input(2, 8, 8, 2)).unwrap();
        assert_eq!(y.shape(), (2, 1, 8, 8));
        assert!(y.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let cfg = GeneratorConfig { zero_init_output: true, ..GeneratorConfig::reduced(2, 4) };
        let g = Generator::new(cfg, 8, 8, 1).unwrap();
        assert!(g.predict(&input(1, 8, 8, 3)).unwrap().data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_indivisible_dims() {
        assert!(matches!(Generator::new(GeneratorConfig::reduced(3, 4), 12, 12, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn table1_wiring_is_consistent() {
        let cfg = GeneratorConfig::table1();
        assert_eq!(cfg.validate(256, 256).unwrap(), 23);
        assert_eq!(cfg.encoder.len() + cfg.decoder.len(), 18);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Generator::new(GeneratorConfig::reduced(2, 2), 8, 8, 5).unwrap();
        let x = input(2, 8, 8, 6);
        let mut r = crate::rng::rng(7);
        let probe: Vec<f64> = (0..2 * 64).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = |t: &Tensor4| -> f64 {
            g.predict(t).unwrap().data.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let cache = g.forward(&x).unwrap();
        let gy = Tensor4::from_vec(2, 1, 8, 8, probe.clone()).unwrap();
        let (grads, gx) = g.backward(&cache, &gy);
        let numeric = fd_gradient(&x.data, 1e-3, |v| loss(&Tensor4::from_vec(2, 3, 8, 8, v.to_vec()).unwrap()));
        assert!(rel_err(&gx.data, &numeric) < 1e-4);
        // Parameters are stored in f32, so the perturbed copies carry rounding.
        for k in [0, 1, 4, g.params.len() - 2] {
            let base = g.params.params[k].to_f64();
            let numeric = fd_gradient(&base, 1e-3, |v| {
                let mut h = g.clone();
                h.params.params[k].values = v.iter().map(|&x| x as f32).collect();
                loss_with(&h, &x, &probe)
            });
            assert!(rel_err(&grads[k], &numeric) < 1e-3, "param {k}");
        }
    }

    fn loss_with(g: &Generator, x: &Tensor4, probe: &[f64]) -> f64 {
        g.predict(x).unwrap().data.iter().zip(probe).map(|(a, b)| a * b).sum()
    }
}
