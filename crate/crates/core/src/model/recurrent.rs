//! Stacked LSTM / GRU over packed variable-length batches.
//!
//! A packed batch holds several sequences sorted by decreasing length,
//! laid out time-major: the rows of step `t` are the `batch_sizes[t]`
//! sequences still running at `t`. Sequences that have ended simply drop
//! off the end of the prefix, so no masking is needed.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::params::Params;
use crate::error::{ensure, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packed {
    pub batch_sizes: Vec<usize>,
    pub offsets: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Packed {
    /// `lengths` must be non-increasing and non-zero.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        ensure!(!lengths.is_empty(), "packed batch needs at least one sequence");
        ensure!(lengths.iter().all(|&l| l > 0), "sequence lengths must be positive");
        ensure!(
            lengths.windows(2).all(|w| w[0] >= w[1]),
            "sequence lengths must be sorted in decreasing order"
        );
        let steps = lengths[0];
        let batch_sizes: Vec<usize> = (0..steps)
            .map(|t| lengths.iter().take_while(|&&l| l > t).count())
            .collect();
        let mut offsets = Vec::with_capacity(steps);
        let mut acc = 0;
        for &n in &batch_sizes {
            offsets.push(acc);
            acc += n;
        }
        Ok(Packed {
            batch_sizes,
            offsets,
            lengths: lengths.to_vec(),
        })
    }

    pub fn single(len: usize) -> Self {
        Packed::from_lengths(&[len]).expect("positive length")
    }

    pub fn steps(&self) -> usize {
        self.batch_sizes.len()
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn total_rows(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Packed row of `(sequence, step)`.
    pub fn row(&self, seq: usize, t: usize) -> usize {
        debug_assert!(t < self.lengths[seq]);
        self.offsets[t] + seq
    }
}

/// Hidden state of one layer for a batch of sequences. `c` is unused by GRU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F> {
    pub h: Array2<F>,
    pub c: Array2<F>,
}

impl<F: Real> LayerState<F> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LayerState {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }

    /// Rows `0..n`, for carrying state into a batch whose tail sequences have ended.
    pub fn prefix(&self, n: usize) -> Self {
        LayerState {
            h: self.h.slice(s![..n, ..]).to_owned(),
            c: self.c.slice(s![..n, ..]).to_owned(),
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F> {
    /// `(in, 4H)`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Array2<F>,
    pub w_hh: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer<F> {
    /// `(in, 3H)`, gate blocks ordered reset, update, candidate.
    pub w_ih: Array2<F>,
    pub w_hh: Array2<F>,
    pub b_ih: Array1<F>,
    pub b_hh: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentLayer<F> {
    Lstm(LstmLayer<F>),
    Gru(GruLayer<F>),
}

pub struct LayerCache<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    /// LSTM: activated gates `(R, 4H)`. GRU: `[r | z | n]` activations `(R, 3H)`.
    gates: Array2<F>,
    /// LSTM: previous cell state. GRU: `h W_hn + b_hn`.
    aux: Array2<F>,
    /// LSTM: `tanh(c_t)`; unused for GRU.
    tanh_c: Array2<F>,
}

impl<F: Real> RecurrentLayer<F> {
    pub fn init(kind: CellKind, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut u = |r, c| Array2::from_shape_fn((r, c), |_| F::lit(dist.sample(rng)));
        match kind {
            CellKind::Lstm => {
                let w_ih = u(input, 4 * hidden);
                let w_hh = u(hidden, 4 * hidden);
                let mut b = Array1::zeros(4 * hidden);
                b.slice_mut(s![hidden..2 * hidden]).fill(F::one());
                RecurrentLayer::Lstm(LstmLayer { w_ih, w_hh, b })
            }
            CellKind::Gru => RecurrentLayer::Gru(GruLayer {
                w_ih: u(input, 3 * hidden),
                w_hh: u(hidden, 3 * hidden),
                b_ih: Array1::zeros(3 * hidden),
                b_hh: Array1::zeros(3 * hidden),
            }),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(l) => l.w_hh.nrows(),
            RecurrentLayer::Gru(g) => g.w_hh.nrows(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(l) => l.w_ih.nrows(),
            RecurrentLayer::Gru(g) => g.w_ih.nrows(),
        }
    }

    /// Runs the layer over a packed batch. `state` holds the initial state of
    /// every sequence and is updated in place to each sequence's final state.
    pub fn forward(
        &self,
        x: ArrayView2<F>,
        packed: &Packed,
        state: &mut LayerState<F>,
    ) -> (Array2<F>, LayerCache<F>) {
        let hdim = self.hidden();
        let rows = packed.total_rows();
        let mut out = Array2::zeros((rows, hdim));
        let mut h_prev = Array2::zeros((rows, hdim));
        let mut aux = Array2::zeros((rows, hdim));
        let mut tanh_c = Array2::zeros((0, 0));
        let gates = match self {
            RecurrentLayer::Lstm(l) => {
                tanh_c = Array2::zeros((rows, hdim));
                let mut gates = x.dot(&l.w_ih) + &l.b;
                for t in 0..packed.steps() {
                    let (r0, n) = (packed.offsets[t], packed.batch_sizes[t]);
                    let rs = s![r0..r0 + n, ..];
                    let hp = state.h.slice(s![..n, ..]);
                    h_prev.slice_mut(rs).assign(&hp);
                    aux.slice_mut(rs).assign(&state.c.slice(s![..n, ..]));
                    let mut g = gates.slice_mut(rs);
                    g += &hp.dot(&l.w_hh);
                    for mut row in g.rows_mut() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = if (2 * hdim..3 * hdim).contains(&j) { v.tanh() } else { sigmoid(*v) };
                        }
                    }
                    let g = gates.slice(rs);
                    let (i, f) = (g.slice(s![.., ..hdim]), g.slice(s![.., hdim..2 * hdim]));
                    let (gg, o) = (g.slice(s![.., 2 * hdim..3 * hdim]), g.slice(s![.., 3 * hdim..]));
                    let c = &f * &aux.slice(rs) + &i * &gg;
                    let tc = c.mapv(|v| v.tanh());
                    let h = &o * &tc;
                    tanh_c.slice_mut(rs).assign(&tc);
                    out.slice_mut(rs).assign(&h);
                    state.h.slice_mut(s![..n, ..]).assign(&h);
                    state.c.slice_mut(s![..n, ..]).assign(&c);
                }
                gates
            }
            RecurrentLayer::Gru(g) => {
                let xg = x.dot(&g.w_ih) + &g.b_ih;
                let mut gates = Array2::zeros((rows, 3 * hdim));
                for t in 0..packed.steps() {
                    let (r0, n) = (packed.offsets[t], packed.batch_sizes[t]);
                    let rs = s![r0..r0 + n, ..];
                    let hp = state.h.slice(s![..n, ..]).to_owned();
                    h_prev.slice_mut(rs).assign(&hp);
                    let hg = hp.dot(&g.w_hh) + &g.b_hh;
                    let xr = xg.slice(rs);
                    let r = (&xr.slice(s![.., ..hdim]) + &hg.slice(s![.., ..hdim])).mapv(sigmoid);
                    let z = (&xr.slice(s![.., hdim..2 * hdim]) + &hg.slice(s![.., hdim..2 * hdim]))
                        .mapv(sigmoid);
                    let hn = hg.slice(s![.., 2 * hdim..]).to_owned();
                    let nn = (&xr.slice(s![.., 2 * hdim..]) + &(&r * &hn)).mapv(|v| v.tanh());
                    let h = &nn + &(&z * &(&hp - &nn));
                    let mut gr = gates.slice_mut(rs);
                    gr.slice_mut(s![.., ..hdim]).assign(&r);
                    gr.slice_mut(s![.., hdim..2 * hdim]).assign(&z);
                    gr.slice_mut(s![.., 2 * hdim..]).assign(&nn);
                    aux.slice_mut(rs).assign(&hn);
                    out.slice_mut(rs).assign(&h);
                    state.h.slice_mut(s![..n, ..]).assign(&h);
                }
                gates
            }
        };
        (
            out,
            LayerCache {
                x: x.to_owned(),
                h_prev,
                gates,
                aux,
                tanh_c,
            },
        )
    }

    /// Truncated backward pass: no gradient flows into the initial state.
    pub fn backward(
        &self,
        cache: &LayerCache<F>,
        d_out: ArrayView2<F>,
        packed: &Packed,
        grad: &mut RecurrentLayer<F>,
    ) -> Array2<F> {
        let hdim = self.hidden();
        let one = F::one();
        let batch = packed.batch();
        let mut dh_next = Array2::<F>::zeros((batch, hdim));
        match (self, grad) {
            (RecurrentLayer::Lstm(l), RecurrentLayer::Lstm(gl)) => {
                let mut dc_next = Array2::<F>::zeros((batch, hdim));
                let mut d_gates = Array2::zeros(cache.gates.dim());
                for t in (0..packed.steps()).rev() {
                    let (r0, n) = (packed.offsets[t], packed.batch_sizes[t]);
                    let rs = s![r0..r0 + n, ..];
                    let g = cache.gates.slice(rs);
                    let (i, f) = (g.slice(s![.., ..hdim]), g.slice(s![.., hdim..2 * hdim]));
                    let (gg, o) = (g.slice(s![.., 2 * hdim..3 * hdim]), g.slice(s![.., 3 * hdim..]));
                    let tc = cache.tanh_c.slice(rs);
                    let c_prev = cache.aux.slice(rs);
                    let dh = &d_out.slice(rs) + &dh_next.slice(s![..n, ..]);
                    let mut dc = dc_next.slice(s![..n, ..]).to_owned();
                    Zip::from(&mut dc).and(&dh).and(&o).and(&tc).for_each(|dc, &dh, &o, &tc| {
                        *dc += dh * o * (one - tc * tc);
                    });
                    let mut dg = d_gates.slice_mut(rs);
                    Zip::from(dg.slice_mut(s![.., ..hdim])).and(&dc).and(&gg).and(&i).for_each(
                        |d, &dc, &gg, &i| *d = dc * gg * i * (one - i),
                    );
                    Zip::from(dg.slice_mut(s![.., hdim..2 * hdim])).and(&dc).and(&c_prev).and(&f).for_each(
                        |d, &dc, &cp, &f| *d = dc * cp * f * (one - f),
                    );
                    Zip::from(dg.slice_mut(s![.., 2 * hdim..3 * hdim])).and(&dc).and(&i).and(&gg).for_each(
                        |d, &dc, &i, &gg| *d = dc * i * (one - gg * gg),
                    );
                    Zip::from(dg.slice_mut(s![.., 3 * hdim..])).and(&dh).and(&tc).and(&o).for_each(
                        |d, &dh, &tc, &o| *d = dh * tc * o * (one - o),
                    );
                    let dh_prev = dg.dot(&l.w_hh.t());
                    dh_next.slice_mut(s![..n, ..]).assign(&dh_prev);
                    dc_next.slice_mut(s![..n, ..]).assign(&(&dc * &f));
                }
                gl.w_ih += &cache.x.t().dot(&d_gates);
                gl.w_hh += &cache.h_prev.t().dot(&d_gates);
                gl.b += &d_gates.sum_axis(Axis(0));
                d_gates.dot(&l.w_ih.t())
            }
            (RecurrentLayer::Gru(g), RecurrentLayer::Gru(gg)) => {
                let rows = cache.gates.nrows();
                let mut dx_gates = Array2::<F>::zeros((rows, 3 * hdim));
                let mut dh_gates = Array2::<F>::zeros((rows, 3 * hdim));
                for t in (0..packed.steps()).rev() {
                    let (r0, n) = (packed.offsets[t], packed.batch_sizes[t]);
                    let rs = s![r0..r0 + n, ..];
                    let gates = cache.gates.slice(rs);
                    let (r, z, nn) = (
                        gates.slice(s![.., ..hdim]),
                        gates.slice(s![.., hdim..2 * hdim]),
                        gates.slice(s![.., 2 * hdim..]),
                    );
                    let hn = cache.aux.slice(rs);
                    let hp = cache.h_prev.slice(rs);
                    let dh = &d_out.slice(rs) + &dh_next.slice(s![..n, ..]);
                    let dn_pre = Zip::from(&dh).and(&z).and(&nn).map_collect(|&dh, &z, &n| dh * (one - z) * (one - n * n));
                    let dz_pre = Zip::from(&dh).and(&hp).and(&nn).and(&z).map_collect(|&dh, &hp, &n, &z| dh * (hp - n) * z * (one - z));
                    let dr_pre = Zip::from(&dn_pre).and(&hn).and(&r).map_collect(|&dn, &hn, &r| dn * hn * r * (one - r));
                    let mut dxg = dx_gates.slice_mut(rs);
                    dxg.slice_mut(s![.., ..hdim]).assign(&dr_pre);
                    dxg.slice_mut(s![.., hdim..2 * hdim]).assign(&dz_pre);
                    dxg.slice_mut(s![.., 2 * hdim..]).assign(&dn_pre);
                    let mut dhg = dh_gates.slice_mut(rs);
                    dhg.slice_mut(s![.., ..hdim]).assign(&dr_pre);
                    dhg.slice_mut(s![.., hdim..2 * hdim]).assign(&dz_pre);
                    dhg.slice_mut(s![.., 2 * hdim..]).assign(&(&dn_pre * &r));
                    let dh_prev = &dh * &z + &dhg.dot(&g.w_hh.t());
                    dh_next.slice_mut(s![..n, ..]).assign(&dh_prev);
                }
                gg.w_ih += &cache.x.t().dot(&dx_gates);
                gg.b_ih += &dx_gates.sum_axis(Axis(0));
                gg.w_hh += &cache.h_prev.t().dot(&dh_gates);
                gg.b_hh += &dh_gates.sum_axis(Axis(0));
                dx_gates.dot(&g.w_ih.t())
            }
            _ => panic!("gradient accumulator does not match layer kind"),
        }
    }
}

impl<F: Real> Params<F> for RecurrentLayer<F> {
    fn params(&self) -> Vec<&[F]> {
        fn sl<F>(a: &Array2<F>) -> &[F] {
            a.as_slice().expect("standard layout")
        }
        match self {
            RecurrentLayer::Lstm(l) => vec![sl(&l.w_ih), sl(&l.w_hh), l.b.as_slice().unwrap()],
            RecurrentLayer::Gru(g) => vec![
                sl(&g.w_ih),
                sl(&g.w_hh),
                g.b_ih.as_slice().unwrap(),
                g.b_hh.as_slice().unwrap(),
            ],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            RecurrentLayer::Lstm(l) => vec![
                l.w_ih.as_slice_mut().unwrap(),
                l.w_hh.as_slice_mut().unwrap(),
                l.b.as_slice_mut().unwrap(),
            ],
            RecurrentLayer::Gru(g) => vec![
                g.w_ih.as_slice_mut().unwrap(),
                g.w_hh.as_slice_mut().unwrap(),
                g.b_ih.as_slice_mut().unwrap(),
                g.b_hh.as_slice_mut().unwrap(),
            ],
        }
    }
}

/// The temporal network: recurrent layers applied one after another.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentStack<F> {
    pub layers: Vec<RecurrentLayer<F>>,
}

pub struct StackCache<F> {
    layers: Vec<LayerCache<F>>,
}

impl<F: Real> RecurrentStack<F> {
    pub fn init(kind: CellKind, input: usize, hidden: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..n_layers)
            .map(|k| RecurrentLayer::init(kind, if k == 0 { input } else { hidden }, hidden, rng))
            .collect();
        RecurrentStack { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden())
    }

    pub fn zero_state(&self, batch: usize) -> Vec<LayerState<F>> {
        self.layers.iter().map(|l| LayerState::zeros(batch, l.hidden())).collect()
    }

    pub fn forward(
        &self,
        x: ArrayView2<F>,
        packed: &Packed,
        state: &mut [LayerState<F>],
    ) -> (Array2<F>, StackCache<F>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (layer, st) in self.layers.iter().zip(state.iter_mut()) {
            let (out, cache) = layer.forward(h.view(), packed, st);
            caches.push(cache);
            h = out;
        }
        (h, StackCache { layers: caches })
    }

    pub fn backward(
        &self,
        cache: &StackCache<F>,
        d_out: ArrayView2<F>,
        packed: &Packed,
        grad: &mut RecurrentStack<F>,
    ) -> Array2<F> {
        let mut d = d_out.to_owned();
        for ((layer, c), g) in self.layers.iter().zip(&cache.layers).zip(grad.layers.iter_mut()).rev() {
            d = layer.backward(c, d.view(), packed, g);
        }
        d
    }
}

impl<F: Real> Params<F> for RecurrentStack<F> {
    fn params(&self) -> Vec<&[F]> {
        self.layers.params()
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.layers.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn packed_layout() {
        let p = Packed::from_lengths(&[4, 2, 2]).unwrap();
        assert_eq!(p.batch_sizes, vec![3, 3, 1, 1]);
        assert_eq!(p.offsets, vec![0, 3, 6, 7]);
        assert_eq!(p.row(1, 1), 4);
        assert!(Packed::from_lengths(&[2, 3]).is_err());
    }

    /// Running sequences together in one packed batch equals running each alone.
    #[test]
    fn packed_batch_matches_individual_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let stack = RecurrentStack::<f64>::init(kind, 3, 4, 2, &mut rng);
            let lengths = [5, 3, 1];
            let seqs: Vec<_> = lengths.iter().map(|&l| random(l, 3, &mut rng)).collect();
            let packed = Packed::from_lengths(&lengths).unwrap();
            let mut x = Array2::zeros((packed.total_rows(), 3));
            for (j, s) in seqs.iter().enumerate() {
                for t in 0..lengths[j] {
                    x.row_mut(packed.row(j, t)).assign(&s.row(t));
                }
            }
            let mut state = stack.zero_state(3);
            let (out, _) = stack.forward(x.view(), &packed, &mut state);
            for (j, s) in seqs.iter().enumerate() {
                let mut st = stack.zero_state(1);
                let (alone, _) = stack.forward(s.view(), &Packed::single(lengths[j]), &mut st);
                for t in 0..lengths[j] {
                    let d = (&out.row(packed.row(j, t)) - &alone.row(t)).mapv(f64::abs).sum();
                    assert!(d < 1e-12);
                }
                let d = (&state[1].h.row(j) - &st[1].h.row(0)).mapv(f64::abs).sum();
                assert!(d < 1e-12, "final state of sequence {j}");
            }
        }
    }

    /// Splitting a sequence in two and carrying the state reproduces the full run.
    #[test]
    fn state_carry_matches_full_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let stack = RecurrentStack::<f64>::init(kind, 2, 3, 2, &mut rng);
            let x = random(7, 2, &mut rng);
            let mut st = stack.zero_state(1);
            let (full, _) = stack.forward(x.view(), &Packed::single(7), &mut st);
            let mut st = stack.zero_state(1);
            let (a, _) = stack.forward(x.slice(s![..4, ..]), &Packed::single(4), &mut st);
            let (b, _) = stack.forward(x.slice(s![4.., ..]), &Packed::single(3), &mut st);
            let joined = ndarray::concatenate![Axis(0), a, b];
            assert!((&full - &joined).mapv(f64::abs).sum() < 1e-12);
        }
    }

    /// Finite-difference check of the input and weight gradients on a random projection loss.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let stack = RecurrentStack::<f64>::init(kind, 2, 3, 2, &mut rng);
            let lengths = [4, 2];
            let packed = Packed::from_lengths(&lengths).unwrap();
            let x = random(packed.total_rows(), 2, &mut rng);
            let proj = random(packed.total_rows(), 3, &mut rng);
            let loss = |s: &RecurrentStack<f64>, x: &Array2<f64>| {
                let mut st = s.zero_state(2);
                let (out, _) = s.forward(x.view(), &packed, &mut st);
                (&out * &proj).sum()
            };
            let mut st = stack.zero_state(2);
            let (_, cache) = stack.forward(x.view(), &packed, &mut st);
            let mut grad = stack.zeros_like();
            let dx = stack.backward(&cache, proj.view(), &packed, &mut grad);

            let h = 1e-6;
            for idx in [(0, 0), (3, 1), (5, 0)] {
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let num = (loss(&stack, &xp) - loss(&stack, &xm)) / (2.0 * h);
                assert!((num - dx[idx]).abs() < 1e-7, "{kind:?} dx{idx:?}: {num} vs {}", dx[idx]);
            }
            let analytic = grad.flatten();
            let base = stack.flatten();
            for k in (0..base.len()).step_by(5) {
                let mut p = stack.clone();
                let mut v = base.clone();
                v[k] += h;
                p.load_flat(&v);
                let lp = loss(&p, &x);
                v[k] -= 2.0 * h;
                p.load_flat(&v);
                let lm = loss(&p, &x);
                let num = (lp - lm) / (2.0 * h);
                assert!((num - analytic[k]).abs() < 1e-7, "{kind:?} param {k}: {num} vs {}", analytic[k]);
            }
        }
    }
}
