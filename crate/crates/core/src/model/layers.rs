//! Dense and convolutional building blocks with hand-written backward passes.
//!
//! Feature maps are stored channels-last as a `(batch * height * width, channels)`
//! matrix so that convolutions become a single GEMM over an im2col buffer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::params::Params;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    /// `(in, out)`
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` weights, zero bias.
    pub fn init_uniform(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            w: Array2::from_shape_fn((input, output), |_| F::lit(dist.sample(rng))),
            b: Array1::zeros(output),
        }
    }

    /// He-normal weights for layers followed by a ReLU.
    pub fn init_he(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("finite std");
        Linear {
            w: Array2::from_shape_fn((input, output), |_| F::lit(dist.sample(rng))),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grad: &mut Linear<F>) -> Array2<F> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grad: &mut Linear<F>) {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
    }
}

impl<F: Real> Params<F> for Linear<F> {
    fn params(&self) -> Vec<&[F]> {
        vec![
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Channels-last batch of feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F> {
    /// `(batch * height * width, channels)`
    pub data: Array2<F>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl<F: Real> FeatureMap<F> {
    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            data: Array2::zeros((batch * height * width, channels)),
            batch,
            height,
            width,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    /// Mean over spatial positions, `(batch, channels)`.
    pub fn global_avg_pool(&self) -> Array2<F> {
        let hw = self.height * self.width;
        let inv = F::one() / F::lit(hw as f64);
        let mut out = Array2::zeros((self.batch, self.channels()));
        for b in 0..self.batch {
            let block = self.data.slice(s![b * hw..(b + 1) * hw, ..]);
            out.row_mut(b).assign(&(block.sum_axis(Axis(0)) * inv));
        }
        out
    }

    /// Gradient of [`global_avg_pool`](Self::global_avg_pool) spread back over positions.
    pub fn global_avg_pool_backward(dy: ArrayView2<F>, height: usize, width: usize) -> Array2<F> {
        let hw = height * width;
        let inv = F::one() / F::lit(hw as f64);
        let (batch, c) = dy.dim();
        let mut out = Array2::zeros((batch * hw, c));
        for b in 0..batch {
            let g = dy.row(b).to_owned() * inv;
            out.slice_mut(s![b * hw..(b + 1) * hw, ..]).assign(&g.broadcast((hw, c)).unwrap());
        }
        out
    }
}

/// 3x3 convolution with padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// `(9 * in_channels, out_channels)`, rows ordered `(ky, kx, channel)`.
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub stride: usize,
}

pub struct ConvCache<F> {
    cols: Array2<F>,
    in_height: usize,
    in_width: usize,
}

impl<F: Real> Conv2d<F> {
    pub const K: usize = 3;

    pub fn init_he(in_ch: usize, out_ch: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = 9 * in_ch;
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        Conv2d {
            w: Array2::from_shape_fn((fan_in, out_ch), |_| F::lit(dist.sample(rng))),
            b: Array1::zeros(out_ch),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.nrows() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn im2col(&self, x: &FeatureMap<F>) -> Array2<F> {
        let cin = x.channels();
        let (ho, wo) = self.output_size(x.height, x.width);
        let mut cols = Array2::zeros((x.batch * ho * wo, 9 * cin));
        let src = x.data.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("standard layout");
        let row_len = 9 * cin;
        for b in 0..x.batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= x.width as isize {
                                continue;
                            }
                            let s0 = ((b * x.height + iy as usize) * x.width + ix as usize) * cin;
                            let d0 = row + (ky * 3 + kx) * cin;
                            dst[d0..d0 + cin].copy_from_slice(&src[s0..s0 + cin]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<F>, batch: usize, h: usize, w: usize) -> Array2<F> {
        let cin = self.in_channels();
        let (ho, wo) = self.output_size(h, w);
        let mut out = Array2::zeros((batch * h * w, cin));
        let src = cols.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("standard layout");
        let row_len = 9 * cin;
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d0 = ((b * h + iy as usize) * w + ix as usize) * cin;
                            let s0 = row + (ky * 3 + kx) * cin;
                            for c in 0..cin {
                                dst[d0 + c] += src[s0 + c];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu(&self, x: &FeatureMap<F>) -> (FeatureMap<F>, ConvCache<F>) {
        let cols = self.im2col(x);
        let mut z = cols.dot(&self.w) + &self.b;
        z.mapv_inplace(|v| v.max(F::zero()));
        let (ho, wo) = self.output_size(x.height, x.width);
        (
            FeatureMap {
                data: z,
                batch: x.batch,
                height: ho,
                width: wo,
            },
            ConvCache {
                cols,
                in_height: x.height,
                in_width: x.width,
            },
        )
    }

    /// Backward through ReLU and convolution. `out` is the forward output.
    /// Returns `dL/dx` when `need_input_grad` is set.
    pub fn backward_relu(
        &self,
        cache: &ConvCache<F>,
        out: &FeatureMap<F>,
        d_out: &Array2<F>,
        grad: &mut Conv2d<F>,
        need_input_grad: bool,
    ) -> Option<Array2<F>> {
        let mut dz = d_out.clone();
        ndarray::Zip::from(&mut dz)
            .and(&out.data)
            .for_each(|g, &a| {
                if a <= F::zero() {
                    *g = F::zero();
                }
            });
        grad.w += &cache.cols.t().dot(&dz);
        grad.b += &dz.sum_axis(Axis(0));
        need_input_grad.then(|| {
            let dcols = dz.dot(&self.w.t());
            self.col2im(&dcols, out.batch, cache.in_height, cache.in_width)
        })
    }
}

impl<F: Real> Params<F> for Conv2d<F> {
    fn params(&self) -> Vec<&[F]> {
        vec![
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Row-wise softmax.
pub fn softmax_rows<F: Real>(logits: ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an oracle for im2col.
    fn naive_conv(conv: &Conv2d<f64>, x: &FeatureMap<f64>) -> FeatureMap<f64> {
        let cin = x.channels();
        let cout = conv.out_channels();
        let (ho, wo) = conv.output_size(x.height, x.width);
        let mut out = FeatureMap::zeros(x.batch, ho, wo, cout);
        for b in 0..x.batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..cout {
                        let mut acc = conv.b[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * conv.stride + ky) as isize - 1;
                                let ix = (ox * conv.stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xi = ((b * x.height + iy as usize) * x.width + ix as usize, ci);
                                    acc += x.data[xi] * conv.w[((ky * 3 + kx) * cin + ci, co)];
                                }
                            }
                        }
                        out.data[((b * ho + oy) * wo + ox, co)] = acc.max(0.0);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let conv = Conv2d::<f64>::init_he(3, 5, stride, &mut rng);
            let mut x = FeatureMap::zeros(2, 7, 6, 3);
            x.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let (fast, _) = conv.forward_relu(&x);
            let slow = naive_conv(&conv, &x);
            assert_eq!((fast.height, fast.width), (slow.height, slow.width));
            let diff = (&fast.data - &slow.data).mapv(f64::abs).sum();
            assert!(diff < 1e-10, "stride {stride}: {diff}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = Conv2d::<f64>::init_he(2, 1, 2, &mut rng);
        let mut x = FeatureMap::zeros(1, 5, 5, 2);
        x.data.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let cols = conv.im2col(&x);
        let c = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
        let lhs = (&cols * &c).sum();
        let rhs = (&x.data * &conv.col2im(&c, 1, 5, 5)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let l = ndarray::array![[1.0f64, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let p = softmax_rows(l.view());
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax_rows((&l + 7.5).view());
        assert!((&p - &shifted).mapv(f64::abs).sum() < 1e-12);
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gap_backward_distributes_evenly() {
        let dy = ndarray::array![[4.0f64, 8.0]];
        let dx = FeatureMap::global_avg_pool_backward(dy.view(), 2, 2);
        assert_eq!(dx.dim(), (4, 2));
        assert!(dx.column(0).iter().all(|&v| v == 1.0));
        assert!(dx.column(1).iter().all(|&v| v == 2.0));
    }
}
