//! Bidirectional Elman recurrence with backpropagation through time.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One direction: `h_t = tanh(w_x x_t + w_h h_{t-1} + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

pub(crate) fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-r..r))
}

impl Direction {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self {
            w_x: glorot(rng, hidden, input),
            w_h: glorot(rng, hidden, hidden),
            b: Array1::zeros(hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_x: Array2::zeros(self.w_x.raw_dim()),
            w_h: Array2::zeros(self.w_h.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    /// Hidden states in processing order, one row per step.
    fn run(&self, xs: ArrayView2<f64>, reverse: bool) -> Array2<f64> {
        let t_len = xs.nrows();
        let h_dim = self.b.len();
        let mut hs = Array2::zeros((t_len, h_dim));
        let mut prev = Array1::zeros(h_dim);
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let a = self.w_x.dot(&xs.row(t)) + self.w_h.dot(&prev) + &self.b;
            let h = a.mapv(f64::tanh);
            hs.row_mut(t).assign(&h);
            prev = h;
        }
        hs
    }

    /// Accumulates parameter gradients into `grad` and returns d loss / d x.
    fn backprop(&self, xs: ArrayView2<f64>, hs: ArrayView2<f64>, d_hs: ArrayView2<f64>, reverse: bool, grad: &mut Direction) -> Array2<f64> {
        let t_len = xs.nrows();
        let h_dim = self.b.len();
        let mut d_xs = Array2::zeros(xs.raw_dim());
        let mut carry = Array1::<f64>::zeros(h_dim);
        for step in (0..t_len).rev() {
            let t = if reverse { t_len - 1 - step } else { step };
            let dh = &d_hs.row(t) + &carry;
            let h = hs.row(t);
            let da = Zip::from(&dh).and(&h).map_collect(|&g, &h| g * (1.0 - h * h));
            let prev_t = if step == 0 {
                None
            } else if reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            let da_col = da.view().insert_axis(Axis(1));
            grad.w_x += &da_col.dot(&xs.row(t).insert_axis(Axis(0)));
            if let Some(p) = prev_t {
                grad.w_h += &da_col.dot(&hs.row(p).insert_axis(Axis(0)));
            }
            grad.b += &da;
            d_xs.row_mut(t).assign(&self.w_x.t().dot(&da));
            carry = self.w_h.t().dot(&da);
        }
        d_xs
    }

    fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w_x.as_slice().expect("standard layout"),
            self.w_h.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w_x.as_slice_mut().expect("standard layout"),
            self.w_h.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiEncoder {
    pub fwd: Direction,
    pub bwd: Direction,
}

/// Forward-pass state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    xs: Array2<f64>,
    hf: Array2<f64>,
    hb: Array2<f64>,
}

impl BiEncoder {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize) -> Self {
        Self {
            fwd: Direction::new(rng, input, hidden),
            bwd: Direction::new(rng, input, hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.b.len()
    }

    pub fn input(&self) -> usize {
        self.fwd.w_x.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
        }
    }

    /// `T x 2H` output: forward states then backward states per position.
    pub fn forward(&self, xs: ArrayView2<f64>) -> (Array2<f64>, EncoderCache) {
        let hf = self.fwd.run(xs, false);
        let hb = self.bwd.run(xs, true);
        let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same row count");
        (
            out,
            EncoderCache {
                xs: xs.to_owned(),
                hf,
                hb,
            },
        )
    }

    /// Parameter gradients plus d loss / d inputs for an upstream `T x 2H`
    /// gradient.
    pub fn backward(&self, cache: &EncoderCache, d_out: ArrayView2<f64>) -> (BiEncoder, Array2<f64>) {
        let h = self.hidden();
        let mut grad = self.zeros_like();
        let dxf = self
            .fwd
            .backprop(cache.xs.view(), cache.hf.view(), d_out.slice(s![.., ..h]), false, &mut grad.fwd);
        let dxb = self
            .bwd
            .backprop(cache.xs.view(), cache.hb.view(), d_out.slice(s![.., h..]), true, &mut grad.bwd);
        (grad, dxf + dxb)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.fwd.tensors().into_iter().chain(self.bwd.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let (f, b) = (&mut self.fwd, &mut self.bwd);
        f.tensors_mut().into_iter().chain(b.tensors_mut()).collect()
    }
}
