use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::layers::{Conv2d, ConvCache, FeatureMap, Linear};
use super::params::Params;
use crate::error::{ensure, Result};
use crate::Real;

/// Frame encoder: strided 3x3 conv + ReLU blocks, global average pooling and
/// an optional linear projection to the descriptor width.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub convs: Vec<Conv2d<F>>,
    pub projection: Option<Linear<F>>,
}

pub struct EncoderCache<F> {
    convs: Vec<ConvCache<F>>,
    outputs: Vec<FeatureMap<F>>,
    pooled: Array2<F>,
}

impl<F: Real> Encoder<F> {
    pub fn init(in_channels: usize, widths: &[usize], descriptor_dim: usize, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for &w in widths {
            convs.push(Conv2d::init_he(c, w, 2, rng));
            c = w;
        }
        let projection = (c != descriptor_dim).then(|| Linear::init_uniform(c, descriptor_dim, rng));
        Encoder { convs, projection }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn descriptor_dim(&self) -> usize {
        match &self.projection {
            Some(p) => p.output_dim(),
            None => self.convs.last().map_or(0, |c| c.out_channels()),
        }
    }

    /// Zeroes the first-layer weights reading input channel `channel`.
    pub fn zero_input_channel(&mut self, channel: usize) {
        let first = &mut self.convs[0];
        let cin = first.in_channels();
        for k in 0..9 {
            first.w.row_mut(k * cin + channel).fill(F::zero());
        }
    }

    /// Returns a copy accepting one more input channel, with zero weights for
    /// it, so that a 3-channel encoder can take the elapsed-time plane.
    pub fn widen_input(&self) -> Self {
        let mut out = self.clone();
        let first = &self.convs[0];
        let cin = first.in_channels();
        let mut w = Array2::zeros((9 * (cin + 1), first.out_channels()));
        for k in 0..9 {
            w.slice_mut(s![k * (cin + 1)..k * (cin + 1) + cin, ..])
                .assign(&first.w.slice(s![k * cin..(k + 1) * cin, ..]));
        }
        out.convs[0].w = w;
        out
    }

    pub fn forward(&self, x: &FeatureMap<F>) -> Result<(Array2<F>, EncoderCache<F>)> {
        ensure!(
            x.channels() == self.in_channels(),
            "encoder expects {} input channels, got {}",
            self.in_channels(),
            x.channels()
        );
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut outputs: Vec<FeatureMap<F>> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let input = outputs.last().unwrap_or(x);
            let (out, cache) = conv.forward_relu(input);
            caches.push(cache);
            outputs.push(out);
        }
        let pooled = outputs.last().expect("at least one conv").global_avg_pool();
        let desc = match &self.projection {
            Some(p) => p.forward(pooled.view()),
            None => pooled.clone(),
        };
        Ok((
            desc,
            EncoderCache {
                convs: caches,
                outputs,
                pooled,
            },
        ))
    }

    /// Accumulates weight gradients given `dL/d descriptor`. No input gradient is produced.
    pub fn backward(&self, cache: &EncoderCache<F>, d_desc: ArrayView2<F>, grad: &mut Encoder<F>) {
        let d_pooled = match (&self.projection, &mut grad.projection) {
            (Some(p), Some(gp)) => p.backward(cache.pooled.view(), d_desc, gp),
            _ => d_desc.to_owned(),
        };
        let last = cache.outputs.last().expect("at least one conv");
        let mut d = FeatureMap::global_avg_pool_backward(d_pooled.view(), last.height, last.width);
        for k in (0..self.convs.len()).rev() {
            let need_input = k > 0;
            match self.convs[k].backward_relu(&cache.convs[k], &cache.outputs[k], &d, &mut grad.convs[k], need_input) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

impl<F: Real> Params<F> for Encoder<F> {
    fn params(&self) -> Vec<&[F]> {
        let mut p = self.convs.params();
        p.extend(self.projection.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut p = self.convs.params_mut();
        p.extend(self.projection.params_mut());
        p
    }
}
