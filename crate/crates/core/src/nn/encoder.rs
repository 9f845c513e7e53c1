use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward_inplace, relu_inplace, Act, Conv2d, ConvCache, GroupNorm,
    NormCache,
};
use super::params::{Grads, Param, ParamSet};
use crate::augment::ImageGrid;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Architecture of the residual encoder: a strided stem, residual stages,
/// global average pooling. The embedding dimension is the last stage width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub stem_width: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub groups: usize,
}

impl EncoderConfig {
    /// Desk-scale default: patchifying stem (64 -> 16) and four single-block
    /// stages.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            stem_kernel: 4,
            stem_stride: 4,
            stem_padding: 0,
            stem_width: 16,
            widths: vec![16, 32, 64, 128],
            blocks: vec![1, 1, 1, 1],
            groups: 8,
        }
    }

    /// Residual-18 layout (two blocks per stage, widths 64..512, d = 512).
    pub fn resnet18() -> Self {
        Self {
            input_size: 64,
            stem_kernel: 3,
            stem_stride: 1,
            stem_padding: 1,
            stem_width: 64,
            widths: vec![64, 128, 256, 512],
            blocks: vec![2, 2, 2, 2],
            groups: 32,
        }
    }

    pub fn dim(&self) -> usize {
        *self.widths.last().unwrap_or(&self.stem_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.len() != self.blocks.len() {
            return Err(Error::config("encoder needs one block count per stage width"));
        }
        if self.stem_kernel == 0 || self.stem_stride == 0 || self.groups == 0 {
            return Err(Error::config("encoder stem kernel, stride and groups must be positive"));
        }
        if self.input_size + 2 * self.stem_padding < self.stem_kernel {
            return Err(Error::config("encoder input smaller than stem kernel"));
        }
        for &w in std::iter::once(&self.stem_width).chain(&self.widths) {
            if w == 0 || w % self.groups != 0 {
                return Err(Error::config(format!("width {w} is not a positive multiple of groups {}", self.groups)));
            }
        }
        if self.blocks.iter().any(|&b| b == 0) {
            return Err(Error::config("every stage needs at least one block"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvNorm {
    conv: Conv2d,
    norm: GroupNorm,
}

struct ConvNormCache {
    conv: ConvCache,
    norm: NormCache,
}

impl ConvNorm {
    fn forward(&self, p: &ParamSet, x: &Act) -> (Act, ConvNormCache) {
        let (y, conv) = self.conv.forward(p, x);
        let (y, norm) = self.norm.forward(p, &y);
        (y, ConvNormCache { conv, norm })
    }

    fn backward(&self, p: &ParamSet, g: &mut Grads, cache: &ConvNormCache, dy: &Act, need_dx: bool) -> Option<Act> {
        let d = self.norm.backward(p, g, &cache.norm, dy);
        self.conv.backward(p, g, &cache.conv, &d, need_dx)
    }
}

#[derive(Debug, Clone)]
struct Block {
    first: ConvNorm,
    second: ConvNorm,
    shortcut: Option<ConvNorm>,
}

struct BlockCache {
    first: ConvNormCache,
    hidden: Act,
    second: ConvNormCache,
    shortcut: Option<ConvNormCache>,
    out: Act,
}

impl Block {
    fn forward(&self, p: &ParamSet, x: &Act) -> (Act, BlockCache) {
        let (mut hidden, first) = self.first.forward(p, x);
        relu_inplace(&mut hidden);
        let (mut out, second) = self.second.forward(p, &hidden);
        let shortcut = match &self.shortcut {
            Some(sc) => {
                let (s, cache) = sc.forward(p, x);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
                Some(cache)
            }
            None => {
                out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v);
                None
            }
        };
        relu_inplace(&mut out);
        let cache = BlockCache {
            first,
            hidden,
            second,
            shortcut,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&self, p: &ParamSet, g: &mut Grads, cache: &BlockCache, mut dy: Act) -> Act {
        relu_backward_inplace(&mut dy, &cache.out);
        let mut dh = self.second.backward(p, g, &cache.second, &dy, true).expect("dx requested");
        relu_backward_inplace(&mut dh, &cache.hidden);
        let mut dx = self.first.backward(p, g, &cache.first, &dh, true).expect("dx requested");
        let skip = match (&self.shortcut, &cache.shortcut) {
            (Some(sc), Some(c)) => sc.backward(p, g, c, &dy, true).expect("dx requested"),
            _ => dy,
        };
        dx.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a += b);
        dx
    }
}

/// Cached activations from a batched forward pass.
pub struct EncoderCache {
    stem: ConvNormCache,
    stem_out: Act,
    blocks: Vec<BlockCache>,
    final_shape: (usize, usize, usize),
}

/// Residual convolutional feature extractor ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamSet,
    stem: ConvNorm,
    blocks: Vec<Block>,
}

fn conv_norm(
    params: &mut ParamSet,
    rng: &mut Rng,
    name: &str,
    (cin, cout, k, stride, pad): (usize, usize, usize, usize, usize),
    groups: usize,
) -> ConvNorm {
    let fan_in = (cin * k * k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
    let data: Vec<f32> = (0..cout * cin * k * k).map(|_| normal.sample(rng) as f32).collect();
    let weight = params.push(Param::new(format!("{name}.conv.weight"), vec![cout, k, k, cin], data));
    let gamma = params.push(Param::new(format!("{name}.norm.gamma"), vec![cout], vec![1.0; cout]));
    let beta = params.push(Param::new(format!("{name}.norm.beta"), vec![cout], vec![0.0; cout]));
    ConvNorm {
        conv: Conv2d {
            weight,
            cin,
            cout,
            k,
            stride,
            pad,
        },
        norm: GroupNorm {
            gamma,
            beta,
            channels: cout,
            groups,
        },
    }
}

impl Encoder {
    /// Fresh encoder with He-normal convolution weights.
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let g = config.groups;
        let stem = conv_norm(
            &mut params,
            rng,
            "stem",
            (1, config.stem_width, config.stem_kernel, config.stem_stride, config.stem_padding),
            g,
        );
        let mut blocks = Vec::new();
        let mut cin = config.stem_width;
        for (s, (&width, &count)) in config.widths.iter().zip(&config.blocks).enumerate() {
            for b in 0..count {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{}.block{}", s + 1, b + 1);
                let first = conv_norm(&mut params, rng, &format!("{name}.conv1"), (cin, width, 3, stride, 1), g);
                let second = conv_norm(&mut params, rng, &format!("{name}.conv2"), (width, width, 3, 1, 1), g);
                let shortcut = (cin != width || stride != 1)
                    .then(|| conv_norm(&mut params, rng, &format!("{name}.shortcut"), (cin, width, 1, stride, 0), g));
                blocks.push(Block { first, second, shortcut });
                cin = width;
            }
        }
        Ok(Self {
            config,
            params,
            stem,
            blocks,
        })
    }

    /// Rebuild from a configuration and a saved parameter set.
    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        let mut enc = Self::new(config, &mut crate::rng::seeded(0))?;
        enc.set_params(params)?;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<()> {
        self.params.check_compatible(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads {
        self.params.zeros_like()
    }

    fn check_images(&self, images: &[&ImageGrid]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::input("no images to encode"));
        }
        let s = self.config.input_size;
        if let Some(bad) = images.iter().find(|im| im.height() != s || im.width() != s) {
            return Err(Error::input(format!(
                "image is {}x{}, encoder expects {s}x{s}",
                bad.height(),
                bad.width()
            )));
        }
        Ok(())
    }

    /// Batched forward pass returning one embedding per image plus the
    /// activations needed for [`Encoder::backward`].
    pub fn forward(&self, images: &[&ImageGrid]) -> Result<(Vec<Vec<f32>>, EncoderCache)> {
        self.check_images(images)?;
        let s = self.config.input_size;
        let mut x = Act::zeros(images.len(), s, s, 1);
        for (b, im) in images.iter().enumerate() {
            x.data[b * s * s..(b + 1) * s * s].copy_from_slice(im.pixels());
        }
        let p = &self.params;
        let (mut h, stem) = self.stem.forward(p, &x);
        relu_inplace(&mut h);
        let stem_out = h.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(p, &h);
            caches.push(cache);
            h = out;
        }
        let emb = global_avg_pool(&h);
        Ok((
            emb,
            EncoderCache {
                stem,
                stem_out,
                blocks: caches,
                final_shape: (h.h, h.w, h.c),
            },
        ))
    }

    /// Accumulate parameter gradients for `d loss / d embedding`.
    pub fn backward(&self, cache: &EncoderCache, grad: &[Vec<f32>], grads: &mut Grads) {
        let p = &self.params;
        let (h, w, c) = cache.final_shape;
        let mut dy = global_avg_pool_backward(grad, h, w, c);
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            dy = block.backward(p, grads, bc, dy);
        }
        relu_backward_inplace(&mut dy, &cache.stem_out);
        self.stem.backward(p, grads, &cache.stem, &dy, false);
    }

    /// Inference-only embeddings, processed in chunks.
    pub fn embed(&self, images: &[&ImageGrid]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            out.extend(self.forward(chunk)?.0);
        }
        Ok(out)
    }
}
