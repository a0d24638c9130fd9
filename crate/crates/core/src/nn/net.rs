//! Dilated residual CNN with hand-written backpropagation in f64.
//!
//! Activations are stored channel-major (`[C, H, W]`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_size: usize,
    pub stem_channels: usize,
    /// (channels, dilation) per residual block.
    pub blocks: Vec<(usize, usize)>,
}

impl NetConfig {
    pub fn new(input_size: usize) -> Self {
        Self { input_size, stem_channels: 8, blocks: vec![(8, 1), (16, 2), (16, 4)] }
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::new(224)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.dilation * (self.k - 1) - 1) / self.stride + 1
    }
}

/// Valid output index range `[lo, hi)` for a kernel tap whose input offset
/// is `off` (input index = out * stride + off).
#[inline]
fn tap_range(off: isize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = (n_in as isize - off + s - 1).div_euclid(s).clamp(0, n_out as isize);
    (lo.max(0) as usize, (hi as usize).max(lo.max(0) as usize))
}

/// Visits every in-bounds run of taps as `f(row, i, c0, c1, start)`: `row` is
/// the `(c, u, v)` index of the unrolled kernel, output columns `c0..c1` of
/// output row `i` read the input from offset `start` with the layer's stride.
fn for_each_tap(n: usize, cs: &ConvShape, m: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for c in 0..cs.in_ch {
        for u in 0..cs.k {
            let offr = (cs.dilation * u) as isize - cs.pad as isize;
            let (r0, r1) = tap_range(offr, cs.stride, n, m);
            for v in 0..cs.k {
                let row = (c * cs.k + u) * cs.k + v;
                let offc = (cs.dilation * v) as isize - cs.pad as isize;
                let (c0, c1) = tap_range(offc, cs.stride, n, m);
                for i in r0..r1 {
                    let ii = ((i * cs.stride) as isize + offr) as usize;
                    let base = c * n * n + ii * n;
                    let jj = ((c0 * cs.stride) as isize + offc) as usize;
                    f(row, i, c0, c1, base + jj);
                }
            }
        }
    }
}

/// Unrolls the input into a `[in_ch * k * k, m * m]` matrix (zero padded).
fn im2col(x: &[f64], n: usize, cs: &ConvShape, m: usize) -> Vec<f64> {
    let p = m * m;
    let mut col = vec![0.0; cs.in_ch * cs.k * cs.k * p];
    for_each_tap(n, cs, m, |row, i, c0, c1, start| {
        let dst = &mut col[row * p + i * m + c0..row * p + i * m + c1];
        if cs.stride == 1 {
            dst.copy_from_slice(&x[start..start + (c1 - c0)]);
        } else {
            dst.iter_mut().enumerate().for_each(|(t, d)| *d = x[start + t * cs.stride]);
        }
    });
    col
}

/// Adds the unrolled gradient `dcol` back onto the input positions it came from.
fn col2im(dcol: &[f64], n: usize, cs: &ConvShape, m: usize, dx: &mut [f64]) {
    let p = m * m;
    for_each_tap(n, cs, m, |row, i, c0, c1, start| {
        let src = &dcol[row * p + i * m + c0..row * p + i * m + c1];
        for (t, g) in src.iter().enumerate() {
            dx[start + t * cs.stride] += g;
        }
    });
}

/// `C (rows x cols) = beta * C + A * B` on row-major buffers, where `A` is
/// `rows x inner` and `B` is `inner x cols`. Transposes are given as strides.
#[allow(clippy::too_many_arguments)]
fn gemm(rows: usize, inner: usize, cols: usize, a: &[f64], a_strides: (usize, usize), b: &[f64], b_strides: (usize, usize), beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() == rows * cols);
    // SAFETY: the strides describe matrices that lie within the given slices
    // (checked by the callers' shape validation) and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

/// `out[o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * x[c, i*s + d*u - p, j*s + d*v - p]`,
/// zero padded. Returns the output and its side length.
pub fn conv2d_forward(x: &[f64], n: usize, cs: &ConvShape, w: &[f64], b: &[f64]) -> Result<(Vec<f64>, usize)> {
    if x.len() != cs.in_ch * n * n || w.len() != cs.out_ch * cs.in_ch * cs.k * cs.k || b.len() != cs.out_ch {
        return domain("conv2d shape mismatch");
    }
    let m = cs.out_size(n);
    let (p, kk) = (m * m, cs.in_ch * cs.k * cs.k);
    let mut out = vec![0.0; cs.out_ch * p];
    for (o, plane) in out.chunks_exact_mut(p).enumerate() {
        plane.fill(b[o]);
    }
    let col = im2col(x, n, cs, m);
    gemm(cs.out_ch, kk, p, w, (kk, 1), &col, (p, 1), 1.0, &mut out);
    Ok((out, m))
}

/// Accumulates input, weight and bias gradients of a convolution given the
/// output gradient `dy`. `dx` may be `None` when the input is the image.
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    cs: &ConvShape,
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let m = cs.out_size(n);
    let (p, kk) = (m * m, cs.in_ch * cs.k * cs.k);
    for (o, g) in dy.chunks_exact(p).enumerate() {
        db[o] += g.iter().sum::<f64>();
    }
    let col = im2col(x, n, cs, m);
    // dw += dy * col^T
    gemm(cs.out_ch, p, kk, dy, (p, 1), &col, (1, p), 1.0, dw);
    if let Some(dx) = dx {
        // dcol = w^T * dy
        let mut dcol = vec![0.0; kk * p];
        gemm(kk, cs.out_ch, p, w, (1, kk), dy, (p, 1), 0.0, &mut dcol);
        col2im(&dcol, n, cs, m, dx);
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    shape: ConvShape,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: ConvLayer,
    conv2: ConvLayer,
    proj: Option<ConvLayer>,
}

/// The classifier: strided stem, residual blocks with dilated 3x3 convs,
/// global average pooling and a dense softmax head.
#[derive(Debug, Clone)]
pub struct DilatedResNet {
    pub config: NetConfig,
    pub params: Vec<Param>,
    stem: ConvLayer,
    blocks: Vec<Block>,
    fc_w: usize,
    fc_b: usize,
}

/// Activations kept for the backward pass.
pub struct Cache {
    input: Vec<f64>,
    stem_out: Vec<f64>,
    /// Per block: post-ReLU first conv, block output.
    blocks: Vec<(Vec<f64>, Vec<f64>)>,
    side: usize,
    pooled: Vec<f64>,
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

impl Cache {
    /// Cross-entropy `-ln p[label]`, taken as log-sum-exp of the logits.
    pub fn loss(&self, label: usize) -> f64 {
        let mx = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = self.logits.iter().map(|l| (l - mx).exp()).sum();
        z.ln() + mx - self.logits[label]
    }
}

impl DilatedResNet {
    /// Builds the network with all parameters set to zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        if config.input_size < 2 || config.blocks.is_empty() || config.stem_channels == 0 {
            return domain("invalid network configuration");
        }
        let mut params = Vec::new();
        let mut add_conv = |name: &str, shape: ConvShape| {
            let w = params.len();
            params.push(Param {
                name: format!("{name}.weight"),
                shape: vec![shape.out_ch, shape.in_ch, shape.k, shape.k],
                value: vec![0.0; shape.out_ch * shape.in_ch * shape.k * shape.k],
            });
            params.push(Param { name: format!("{name}.bias"), shape: vec![shape.out_ch], value: vec![0.0; shape.out_ch] });
            ConvLayer { shape, w, b: w + 1 }
        };
        let conv = |i, o, k, stride, dilation, pad| ConvShape { in_ch: i, out_ch: o, k, stride, dilation, pad };
        let stem = add_conv("stem", conv(3, config.stem_channels, 3, 2, 1, 1));
        let mut blocks = Vec::new();
        let mut ch = config.stem_channels;
        for (bi, &(out, d)) in config.blocks.iter().enumerate() {
            let conv1 = add_conv(&format!("block{bi}.conv1"), conv(ch, out, 3, 1, d, d));
            let conv2 = add_conv(&format!("block{bi}.conv2"), conv(out, out, 3, 1, d, d));
            let proj = (ch != out).then(|| add_conv(&format!("block{bi}.proj"), conv(ch, out, 1, 1, 1, 0)));
            blocks.push(Block { conv1, conv2, proj });
            ch = out;
        }
        let fc_w = params.len();
        params.push(Param { name: "fc.weight".into(), shape: vec![NUM_CLASSES, ch], value: vec![0.0; NUM_CLASSES * ch] });
        params.push(Param { name: "fc.bias".into(), shape: vec![NUM_CLASSES], value: vec![0.0; NUM_CLASSES] });
        Ok(Self { config, params, stem, blocks, fc_w, fc_b: fc_w + 1 })
    }

    /// Kaiming-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params.iter_mut().filter(|p| p.shape.len() > 1) {
            let fan_in: usize = p.shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            p.value.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
    }

    fn conv(&self, l: &ConvLayer, x: &[f64], n: usize) -> (Vec<f64>, usize) {
        conv2d_forward(x, n, &l.shape, &self.params[l.w].value, &self.params[l.b].value).expect("layer shapes are consistent")
    }

    /// Forward pass on a `[3, S, S]` input in [0, 1].
    pub fn forward_cached(&self, input: &[f64]) -> Result<Cache> {
        let s = self.config.input_size;
        if input.len() != 3 * s * s {
            return domain(format!("expected {} input values, got {}", 3 * s * s, input.len()));
        }
        let (mut h, n) = self.conv(&self.stem, input, s);
        relu(&mut h);
        let stem_out = h.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (mut y1, _) = self.conv(&b.conv1, &h, n);
            relu(&mut y1);
            let (mut y2, _) = self.conv(&b.conv2, &y1, n);
            match &b.proj {
                Some(p) => {
                    let (sk, _) = self.conv(p, &h, n);
                    y2.iter_mut().zip(&sk).for_each(|(a, s)| *a += s);
                }
                None => y2.iter_mut().zip(&h).for_each(|(a, s)| *a += s),
            }
            relu(&mut y2);
            h = y2.clone();
            blocks.push((y1, y2));
        }
        let ch = self.params[self.fc_w].shape[1];
        let area = (n * n) as f64;
        let pooled: Vec<f64> = (0..ch).map(|c| h[c * n * n..(c + 1) * n * n].iter().sum::<f64>() / area).collect();
        let fw = &self.params[self.fc_w].value;
        let fb = &self.params[self.fc_b].value;
        let mut logits = [0.0; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            logits[k] = fb[k] + (0..ch).map(|c| fw[k * ch + c] * pooled[c]).sum::<f64>();
        }
        let probs = softmax(&logits);
        Ok(Cache { input: input.to_vec(), stem_out, blocks, side: n, pooled, logits, probs })
    }

    pub fn forward(&self, input: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        Ok(self.forward_cached(input)?.probs)
    }

    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }

    /// Cross-entropy loss `-ln p[label]`; gradients are added to `grads`.
    pub fn backward(&self, input: &[f64], label: usize, grads: &mut [Vec<f64>]) -> Result<f64> {
        if label >= NUM_CLASSES {
            return domain(format!("label {label} out of range"));
        }
        let cache = self.forward_cached(input)?;
        self.backward_from(&cache, label, grads);
        Ok(cache.loss(label))
    }

    pub fn backward_from(&self, cache: &Cache, label: usize, grads: &mut [Vec<f64>]) {
        let n = cache.side;
        let ch = self.params[self.fc_w].shape[1];
        let mut dlogits = cache.probs;
        dlogits[label] -= 1.0;
        let fw = &self.params[self.fc_w].value;
        let mut dpool = vec![0.0; ch];
        for k in 0..NUM_CLASSES {
            grads[self.fc_b][k] += dlogits[k];
            for c in 0..ch {
                grads[self.fc_w][k * ch + c] += dlogits[k] * cache.pooled[c];
                dpool[c] += fw[k * ch + c] * dlogits[k];
            }
        }
        let area = (n * n) as f64;
        let mut dh: Vec<f64> = dpool.iter().flat_map(|&g| std::iter::repeat_n(g / area, n * n)).collect();

        for bi in (0..self.blocks.len()).rev() {
            let b = &self.blocks[bi];
            let x = if bi == 0 { &cache.stem_out } else { &cache.blocks[bi - 1].1 };
            let (y1, out) = &cache.blocks[bi];
            dh.iter_mut().zip(out).for_each(|(g, o)| {
                if *o <= 0.0 {
                    *g = 0.0
                }
            });
            let mut dx = vec![0.0; x.len()];
            let mut dy1 = vec![0.0; y1.len()];
            self.conv_back(&b.conv2, y1, n, &dh, Some(&mut dy1), grads);
            dy1.iter_mut().zip(y1).for_each(|(g, o)| {
                if *o <= 0.0 {
                    *g = 0.0
                }
            });
            self.conv_back(&b.conv1, x, n, &dy1, Some(&mut dx), grads);
            match &b.proj {
                Some(p) => self.conv_back(p, x, n, &dh, Some(&mut dx), grads),
                None => dx.iter_mut().zip(&dh).for_each(|(a, g)| *a += g),
            }
            dh = dx;
        }
        dh.iter_mut().zip(&cache.stem_out).for_each(|(g, o)| {
            if *o <= 0.0 {
                *g = 0.0
            }
        });
        self.conv_back(&self.stem, &cache.input, self.config.input_size, &dh, None, grads);
    }

    fn conv_back(&self, l: &ConvLayer, x: &[f64], n: usize, dy: &[f64], dx: Option<&mut [f64]>, grads: &mut [Vec<f64>]) {
        let (dw, db) = two_mut(grads, l.w, l.b);
        conv2d_backward(x, n, &l.shape, &self.params[l.w].value, dy, dx, dw, db);
    }
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e = logits.map(|l| (l - mx).exp());
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= z);
    e
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    /// Direct evaluation of the convolution definition.
    fn conv_oracle(x: &[f64], n: usize, cs: &ConvShape, w: &[f64], b: &[f64]) -> Vec<f64> {
        let m = cs.out_size(n);
        let mut out = vec![0.0; cs.out_ch * m * m];
        for o in 0..cs.out_ch {
            for i in 0..m {
                for j in 0..m {
                    let mut s = b[o];
                    for c in 0..cs.in_ch {
                        for u in 0..cs.k {
                            for v in 0..cs.k {
                                let ii = (i * cs.stride + cs.dilation * u) as isize - cs.pad as isize;
                                let jj = (j * cs.stride + cs.dilation * v) as isize - cs.pad as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                                    s += w[((o * cs.in_ch + c) * cs.k + u) * cs.k + v]
                                        * x[c * n * n + ii as usize * n + jj as usize];
                                }
                            }
                        }
                    }
                    out[(o * m + i) * m + j] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let cs = ConvShape { in_ch: 1, out_ch: 1, k: 1, stride: 1, dilation: 1, pad: 0 };
        let x = rand_vec(25, 1);
        let (y, m) = conv2d_forward(&x, 5, &cs, &[1.0], &[0.0]).unwrap();
        assert_eq!(m, 5);
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_centre_is_sum_over_dilated_taps() {
        let cs = ConvShape { in_ch: 1, out_ch: 1, k: 3, stride: 1, dilation: 2, pad: 2 };
        let x: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let w = vec![1.0; 9];
        let (y, m) = conv2d_forward(&x, 5, &cs, &w, &[0.0]).unwrap();
        assert_eq!(m, 5);
        // taps at rows/cols {0, 2, 4}
        let want: f64 = [0, 2, 4].iter().flat_map(|r| [0, 2, 4].map(|c| (r * 5 + c) as f64)).sum();
        assert_eq!(y[12], want);
    }

    #[test]
    fn output_sizes() {
        let cs = ConvShape { in_ch: 3, out_ch: 8, k: 3, stride: 2, dilation: 1, pad: 1 };
        assert_eq!(cs.out_size(224), 112);
        assert_eq!(cs.out_size(64), 32);
        assert_eq!(cs.out_size(16), 8);
    }

    #[test]
    fn conv_matches_oracle_for_many_shapes() {
        let mut seed = 0;
        for (k, stride, dilation, pad) in [(3, 1, 1, 1), (3, 1, 2, 2), (3, 1, 4, 4), (3, 2, 1, 1), (1, 1, 1, 0), (3, 2, 2, 0)] {
            for n in [5, 8, 9] {
                seed += 1;
                let cs = ConvShape { in_ch: 2, out_ch: 3, k, stride, dilation, pad };
                let x = rand_vec(2 * n * n, seed);
                let w = rand_vec(3 * 2 * k * k, seed + 100);
                let b = rand_vec(3, seed + 200);
                let (y, _) = conv2d_forward(&x, n, &cs, &w, &b).unwrap();
                let want = conv_oracle(&x, n, &cs, &w, &b);
                for (a, e) in y.iter().zip(&want) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <dy, conv(x)> is bilinear; its gradient w.r.t. x and w must match the
        // backward pass, which we test through random directional derivatives.
        for (k, stride, dilation, pad) in [(3, 1, 2, 2), (3, 2, 1, 1), (1, 1, 1, 0)] {
            let n = 7;
            let cs = ConvShape { in_ch: 2, out_ch: 3, k, stride, dilation, pad };
            let x = rand_vec(2 * n * n, 1);
            let w = rand_vec(3 * 2 * k * k, 2);
            let b = vec![0.0; 3];
            let m = cs.out_size(n);
            let dy = rand_vec(3 * m * m, 3);
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; 3];
            conv2d_backward(&x, n, &cs, &w, &dy, Some(&mut dx), &mut dw, &mut db);
            let f = |x: &[f64], w: &[f64]| -> f64 {
                conv_oracle(x, n, &cs, w, &b).iter().zip(&dy).map(|(a, g)| a * g).sum()
            };
            let dirx = rand_vec(x.len(), 4);
            let xp: Vec<f64> = x.iter().zip(&dirx).map(|(a, d)| a + d).collect();
            let lin = f(&xp, &w) - f(&x, &w);
            let pred: f64 = dx.iter().zip(&dirx).map(|(a, d)| a * d).sum();
            assert!((lin - pred).abs() < 1e-10);
            let dirw = rand_vec(w.len(), 5);
            let wp: Vec<f64> = w.iter().zip(&dirw).map(|(a, d)| a + d).collect();
            let lin = f(&x, &wp) - f(&x, &w);
            let pred: f64 = dw.iter().zip(&dirw).map(|(a, d)| a * d).sum();
            assert!((lin - pred).abs() < 1e-10);
            assert!((db.iter().sum::<f64>() - dy.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_is_uniform() {
        let net = DilatedResNet::zeros(NetConfig::new(16)).unwrap();
        let p = net.forward(&rand_vec(3 * 256, 1)).unwrap();
        assert_eq!(p, [0.25; 4]);
    }

    #[test]
    fn probabilities_sum_to_one_and_are_deterministic() {
        let net = DilatedResNet::init(NetConfig::new(16), 3).unwrap();
        let x = rand_vec(3 * 256, 2);
        let p = net.forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
        let again = DilatedResNet::init(NetConfig::new(16), 3).unwrap().forward(&x).unwrap();
        assert_eq!(p, again);
        assert!(net.forward(&x[1..]).is_err());
    }

    #[test]
    fn parameter_layout() {
        let net = DilatedResNet::zeros(NetConfig::default()).unwrap();
        let names: Vec<_> = net.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names.len(), 2 + 4 + 6 + 4 + 2);
        assert!(names.contains(&"block1.proj.weight"));
        assert!(!names.contains(&"block0.proj.weight"));
        assert_eq!(net.params[0].shape, vec![8, 3, 3, 3]);
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss_and_head_gradient() {
        let mut net = DilatedResNet::zeros(NetConfig::new(16)).unwrap();
        let fc_b = net.fc_b;
        net.params[fc_b].value = vec![0.0, 800.0, 0.0, 0.0];
        let mut g = net.zero_grads();
        let loss = net.backward(&rand_vec(3 * 256, 1), 1, &mut g).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g[net.fc_w].iter().chain(&g[fc_b]).all(|&v| v == 0.0));
    }
}
