//! Minimal CPU building blocks for a small U-shaped encoder-decoder:
//! 3x3 / 1x1 convolutions via im2col + sgemm, ReLU, 2x2 max pooling,
//! nearest-neighbour upsampling and channel concatenation, each with a
//! hand-written backward pass, plus an AdamW optimizer.
//!
//! Activations are stored channel-major as `[C, B, H, W]`, which turns a
//! convolution into a single matrix product and channel concatenation
//! into plain vector appends.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Tensor {
        Tensor {
            c,
            b,
            h,
            w,
            data: vec![0.0; c * b * h * w],
        }
    }

    /// Pixels per channel (`b * h * w`).
    pub fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    fn like(&self, c: usize) -> Tensor {
        Tensor::zeros(c, self.b, self.h, self.w)
    }
}

/// `c = a * b (+ c if accumulate)` for row-major `a: m x k`, `b: k x n`,
/// either operand optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe the full extents of `a` (m*k), `b` (k*n)
    // and `c` (m*n), which the asserts below guarantee.
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `[C*9, B*H*W]` patch matrix for a 3x3 kernel with zero padding 1.
fn im2col3(x: &Tensor, col: &mut Vec<f32>) {
    let (h, w, n) = (x.h, x.w, x.plane());
    col.clear();
    col.resize(x.c * 9 * n, 0.0);
    for ci in 0..x.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..x.b {
                    let src = &x.data[(ci * x.b + bi) * h * w..][..h * w];
                    let dst = &mut row[bi * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &src[sy as usize * w..][..w];
                        let drow = &mut dst[y * w..][..w];
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            drow[xx] = srow[xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`].
fn col2im3(col: &[f32], c: usize, b: usize, h: usize, w: usize) -> Tensor {
    let mut x = Tensor::zeros(c, b, h, w);
    let n = b * h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for bi in 0..b {
                    let src = &row[bi * h * w..][..h * w];
                    let dst = &mut x.data[(ci * b + bi) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[sy as usize * w..][..w];
                        let srow = &src[y * w..][..w];
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w.saturating_sub(1)),
                        };
                        for xx in x0..x1 {
                            drow[xx + kx - 1] += srow[xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// A trainable parameter with its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Vec<f32>,
    #[serde(skip)]
    pub grad: Vec<f32>,
}

impl Param {
    fn new(value: Vec<f32>) -> Param {
        let grad = vec![0.0; value.len()];
        Param { value, grad }
    }

    /// Restores the gradient buffer after deserialization.
    fn ensure_grad(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
    }
}

/// Convolution with kernel 3 (padding 1) or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Param,
    pub bias: Param,
    #[serde(skip)]
    col: Vec<f32>,
    #[serde(skip)]
    in_shape: (usize, usize, usize),
}

impl Conv {
    /// Uniform fan-in initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Conv {
        assert!(k == 1 || k == 3, "kernel must be 1 or 3");
        let fan_in = cin * k * k;
        let bound = (6.0 / fan_in as f32).sqrt();
        let w = (0..cout * fan_in).map(|_| rng.random_range(-bound..bound)).collect();
        Conv {
            cin,
            cout,
            k,
            weight: Param::new(w),
            bias: Param::new(vec![0.0; cout]),
            col: Vec::new(),
            in_shape: (0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Tensor, keep: bool) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        let n = x.plane();
        let mut y = x.like(self.cout);
        let kk = self.cin * self.k * self.k;
        if self.k == 3 {
            let mut col = std::mem::take(&mut self.col);
            im2col3(x, &mut col);
            gemm(self.cout, kk, n, &self.weight.value, false, &col, false, &mut y.data, false);
            self.col = col;
        } else {
            gemm(self.cout, kk, n, &self.weight.value, false, &x.data, false, &mut y.data, false);
            if keep {
                self.col.clear();
                self.col.extend_from_slice(&x.data);
            }
        }
        for (co, &bv) in self.bias.value.iter().enumerate() {
            y.data[co * n..(co + 1) * n].iter_mut().for_each(|v| *v += bv);
        }
        if !keep && self.k == 3 {
            self.col = Vec::new();
        }
        self.in_shape = (x.b, x.h, x.w);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (b, h, w) = self.in_shape;
        let n = b * h * w;
        let kk = self.cin * self.k * self.k;
        assert_eq!(self.col.len(), kk * n, "backward without a cached forward");
        gemm(self.cout, n, kk, &dy.data, false, &self.col, true, &mut self.weight.grad, true);
        for co in 0..self.cout {
            self.bias.grad[co] += dy.data[co * n..(co + 1) * n].iter().sum::<f32>();
        }
        let mut dcol = vec![0.0f32; kk * n];
        gemm(kk, self.cout, n, &self.weight.value, true, &dy.data, false, &mut dcol, false);
        if self.k == 3 {
            col2im3(&dcol, self.cin, b, h, w)
        } else {
            Tensor {
                c: self.cin,
                b,
                h,
                w,
                data: dcol,
            }
        }
    }

    fn params(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

fn relu(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `dy` where the ReLU output was not positive.
fn relu_backward(dy: &mut Tensor, out: &Tensor) {
    for (g, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Two 3x3 convolutions, each followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub c1: Conv,
    pub c2: Conv,
    #[serde(skip)]
    a1: Option<Tensor>,
    #[serde(skip)]
    a2: Option<Tensor>,
}

impl Block {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Block {
        Block {
            c1: Conv::new(cin, cout, 3, rng),
            c2: Conv::new(cout, cout, 3, rng),
            a1: None,
            a2: None,
        }
    }

    fn forward(&mut self, x: &Tensor, keep: bool) -> Tensor {
        let mut h = self.c1.forward(x, keep);
        relu(&mut h);
        let mut y = self.c2.forward(&h, keep);
        relu(&mut y);
        if keep {
            self.a1 = Some(h);
            self.a2 = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, mut dy: Tensor) -> Tensor {
        relu_backward(&mut dy, self.a2.as_ref().expect("cached forward"));
        let mut dh = self.c2.backward(&dy);
        relu_backward(&mut dh, self.a1.as_ref().expect("cached forward"));
        self.c1.backward(&dh)
    }

    fn params(&mut self) -> Vec<&mut Param> {
        let [a, b] = self.c1.params();
        let [c, d] = self.c2.params();
        vec![a, b, c, d]
    }
}

/// 2x2 max pooling (even dims); returns the argmax offsets for backward.
fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.c, x.b, h2, w2);
    let mut idx = vec![0u32; y.data.len()];
    for p in 0..x.c * x.b {
        let src = &x.data[p * x.h * x.w..][..x.h * x.w];
        for yy in 0..h2 {
            for xx in 0..w2 {
                let mut best = f32::NEG_INFINITY;
                let mut at = 0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = (2 * yy + dy) * x.w + 2 * xx + dx;
                    if src[i] > best {
                        best = src[i];
                        at = i;
                    }
                }
                let o = p * h2 * w2 + yy * w2 + xx;
                y.data[o] = best;
                idx[o] = at as u32;
            }
        }
    }
    (y, idx)
}

fn maxpool2_backward(dy: &Tensor, idx: &[u32], h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, dy.b, h, w);
    let per = dy.h * dy.w;
    for (o, &g) in dy.data.iter().enumerate() {
        let p = o / per;
        dx.data[p * h * w + idx[o] as usize] += g;
    }
    dx
}

fn upsample2(x: &Tensor) -> Tensor {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut y = Tensor::zeros(x.c, x.b, h2, w2);
    for p in 0..x.c * x.b {
        let src = &x.data[p * x.h * x.w..][..x.h * x.w];
        let dst = &mut y.data[p * h2 * w2..][..h2 * w2];
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[yy * w2 + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

fn upsample2_backward(dy: &Tensor) -> Tensor {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.c, dy.b, h, w);
    for p in 0..dy.c * dy.b {
        let src = &dy.data[p * dy.h * dy.w..][..dy.h * dy.w];
        let dst = &mut dx.data[p * h * w..][..h * w];
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dst[(yy / 2) * w + xx / 2] += src[yy * dy.w + xx];
            }
        }
    }
    dx
}

fn concat(a: Tensor, b: &Tensor) -> Tensor {
    let mut out = a;
    out.c += b.c;
    out.data.extend_from_slice(&b.data);
    out
}

/// Splits a gradient of `concat(a, b)` back into the `a` and `b` parts.
fn split(t: Tensor, ca: usize) -> (Tensor, Tensor) {
    let n = t.plane();
    let mut a = t;
    let bdata = a.data.split_off(ca * n);
    let b = Tensor {
        c: a.c - ca,
        b: a.b,
        h: a.h,
        w: a.w,
        data: bdata,
    };
    a.c = ca;
    (a, b)
}

/// U-shaped encoder-decoder producing one logit per pixel. `depth` is the
/// number of 2x downsampling steps, so inputs must be divisible by `2^depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNet {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    enc: Vec<Block>,
    bottleneck: Block,
    dec: Vec<Block>,
    head: Conv,
    #[serde(skip)]
    pool_idx: Vec<(Vec<u32>, usize, usize)>,
}

impl UNet {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, base_width: usize, depth: usize, rng: &mut R) -> UNet {
        let width = |l: usize| base_width << l;
        let mut enc = Vec::with_capacity(depth);
        let mut cin = in_channels;
        for l in 0..depth {
            enc.push(Block::new(cin, width(l), rng));
            cin = width(l);
        }
        let bottleneck = Block::new(cin, width(depth), rng);
        let dec = (0..depth)
            .map(|l| Block::new(width(l + 1) + width(l), width(l), rng))
            .collect();
        let head = Conv::new(width(0), 1, 1, rng);
        UNet {
            in_channels,
            base_width,
            depth,
            enc,
            bottleneck,
            dec,
            head,
            pool_idx: Vec::new(),
        }
    }

    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    /// Logits `[1, B, H, W]`. With `keep`, activations are cached for
    /// [`UNet::backward`].
    pub fn forward(&mut self, x: &Tensor, keep: bool) -> Tensor {
        assert_eq!(x.c, self.in_channels, "input channels");
        assert!(
            x.h.is_multiple_of(self.multiple()) && x.w.is_multiple_of(self.multiple()),
            "input dims must be divisible by {}",
            self.multiple()
        );
        self.pool_idx.clear();
        let mut skips = Vec::with_capacity(self.depth);
        let mut h = x.clone();
        for l in 0..self.depth {
            let e = self.enc[l].forward(&h, keep);
            let (p, idx) = maxpool2(&e);
            if keep {
                self.pool_idx.push((idx, e.h, e.w));
            }
            skips.push(e);
            h = p;
        }
        h = self.bottleneck.forward(&h, keep);
        for l in (0..self.depth).rev() {
            let up = upsample2(&h);
            let cat = concat(up, &skips[l]);
            h = self.dec[l].forward(&cat, keep);
        }
        self.head.forward(&h, keep)
    }

    /// Backpropagates `dlogits`, accumulating parameter gradients.
    pub fn backward(&mut self, dlogits: &Tensor) {
        let mut dh = self.head.backward(dlogits);
        let mut dskips = vec![None; self.depth];
        for l in 0..self.depth {
            let dcat = self.dec[l].backward(dh);
            let (dup, dskip) = split(dcat, self.base_width << (l + 1));
            dskips[l] = Some(dskip);
            dh = upsample2_backward(&dup);
        }
        dh = self.bottleneck.backward(dh);
        for l in (0..self.depth).rev() {
            let (idx, h, w) = &self.pool_idx[l];
            let mut de = maxpool2_backward(&dh, idx, *h, *w);
            let ds = dskips[l].take().expect("skip gradient");
            de.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += b);
            dh = self.enc[l].backward(de);
        }
    }

    /// All parameters in a fixed order.
    pub fn params(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in self.enc.iter_mut() {
            out.extend(b.params());
        }
        out.extend(self.bottleneck.params());
        for b in self.dec.iter_mut() {
            out.extend(b.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params() {
            p.ensure_grad();
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(lr: f32, weight_decay: f32) -> AdamW {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= self.lr * self.weight_decay * p.value[i];
                p.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
