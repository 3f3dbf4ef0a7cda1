//! Dense 1D convolution kernels over channel-major feature maps.
//!
//! A convolution is described by a list of taps. Each tap reads the input at
//! a fixed time offset, multiplies by one kernel column scaled by a branch
//! coefficient, and accumulates into the output. A plain dilated convolution
//! of width `K` has `K` taps with coefficient 1; the shared-kernel
//! multi-dilated layer has `K * S` taps, one group per branch, with the
//! branch probability as coefficient. Padding is implicit zeros on both
//! sides, so time length is preserved.

use crate::error::{Error, Result};

/// `channels x len` matrix, each channel's time series contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_vec(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * len {
            return Err(Error::shape(format!(
                "{channels}x{len} feature map needs {} values, got {}",
                channels * len,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            len,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        self.data[c * self.len + t] = v;
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Column (all channels) at time `t`.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, t)).collect()
    }
}

/// Borrowed convolution parameters. `kernel` is `out x in x width`,
/// row-major; `bias` has `out` entries.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams<'a> {
    pub kernel: &'a [f64],
    pub bias: &'a [f64],
    pub out_channels: usize,
    pub in_channels: usize,
    pub width: usize,
}

impl ConvParams<'_> {
    fn check(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        if self.kernel.len() != self.out_channels * self.in_channels * self.width
            || self.bias.len() != self.out_channels
        {
            return Err(Error::shape("kernel or bias size does not match channels"));
        }
        Ok(())
    }

    fn weight(&self, o: usize, i: usize, k: usize) -> f64 {
        self.kernel[(o * self.in_channels + i) * self.width + k]
    }
}

/// One read of the input: kernel column `k`, time offset, coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tap {
    k: usize,
    offset: isize,
    coef: f64,
    branch: usize,
}

fn taps(width: usize, dilations: &[u64], coefs: &[f64]) -> Vec<Tap> {
    let center = (width / 2) as isize;
    let mut out = Vec::with_capacity(width * dilations.len());
    for (branch, (&d, &coef)) in dilations.iter().zip(coefs).enumerate() {
        for k in 0..width {
            let offset = (k as isize - center).saturating_mul(d.min(isize::MAX as u64) as isize);
            out.push(Tap {
                k,
                offset,
                coef,
                branch,
            });
        }
    }
    out
}

/// Taps that read inside a sequence of length `len`, grouped by offset in
/// order of first appearance, plus the padding they need.
fn offset_groups(taps: &[Tap], len: usize) -> (Vec<(isize, Vec<Tap>)>, usize) {
    let mut groups: Vec<(isize, Vec<Tap>)> = Vec::new();
    for tap in taps.iter().filter(|t| t.offset.unsigned_abs() < len) {
        match groups.iter_mut().find(|(off, _)| *off == tap.offset) {
            Some((_, g)) => g.push(*tap),
            None => groups.push((tap.offset, vec![*tap])),
        }
    }
    let pad = groups.iter().map(|(off, _)| off.unsigned_abs()).max().unwrap_or(0);
    (groups, pad)
}

/// Copy of `x` with `pad` zeros on both ends of every channel.
fn padded(x: &FeatureMap, pad: usize) -> Vec<f64> {
    let lp = x.len + 2 * pad;
    let mut out = vec![0.0; x.channels * lp];
    for c in 0..x.channels {
        out[c * lp + pad..c * lp + pad + x.len].copy_from_slice(x.row(c));
    }
    out
}

/// `out x in` matrix `sum_{tap in group} coef * kernel[:, :, tap.k]`.
fn combined_weights(p: &ConvParams<'_>, group: &[Tap]) -> Vec<f64> {
    let mut w = vec![0.0; p.out_channels * p.in_channels];
    for tap in group {
        for o in 0..p.out_channels {
            for i in 0..p.in_channels {
                w[o * p.in_channels + i] += tap.coef * p.weight(o, i, tap.k);
            }
        }
    }
    w
}

/// Strided view of a row-major buffer for [`gemm`].
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    start: usize,
    row_stride: usize,
    col_stride: usize,
}

impl View<'_> {
    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.start + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `C = A B + beta C` with `A: m x k`, `B: k x n`, `C: m x n` row-major
/// with row stride `n`.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.last_index(m, k) < a.data.len());
    assert!(b.last_index(k, n) < b.data.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every element the strided views touch
    // inside their slices, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.start),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.start),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with four interleaved accumulators; fixed summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y = b + sum_s coef_s * conv(x, kernel, dilation_s)`.
///
/// Taps that share an offset are merged into one weight matrix, so a window
/// whose rates coincide costs the same as a single convolution.
pub fn mixed_conv_forward(
    x: &FeatureMap,
    p: &ConvParams<'_>,
    dilations: &[u64],
    coefs: &[f64],
) -> Result<FeatureMap> {
    p.check(x)?;
    if dilations.len() != coefs.len() || dilations.is_empty() {
        return Err(Error::shape("one coefficient per branch required"));
    }
    let len = x.len();
    let mut y = FeatureMap::zeros(p.out_channels, len);
    for o in 0..p.out_channels {
        y.row_mut(o).fill(p.bias[o]);
    }
    let (groups, pad) = offset_groups(&taps(p.width, dilations, coefs), len);
    let xp = padded(x, pad);
    let lp = len + 2 * pad;
    for (offset, group) in &groups {
        let w = combined_weights(p, group);
        gemm(
            p.out_channels,
            p.in_channels,
            len,
            View { data: &w, start: 0, row_stride: p.in_channels, col_stride: 1 },
            View { data: &xp, start: (pad as isize + offset) as usize, row_stride: lp, col_stride: 1 },
            1.0,
            &mut y.data,
        );
    }
    Ok(y)
}

/// Plain convolution with one dilation.
pub fn conv_forward(x: &FeatureMap, p: &ConvParams<'_>, dilation: u64) -> Result<FeatureMap> {
    mixed_conv_forward(x, p, &[dilation], &[1.0])
}

/// Gradients of [`mixed_conv_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    /// Derivative with respect to each branch coefficient.
    pub coefs: Vec<f64>,
}

/// Backward pass given the upstream gradient `g` (same shape as the output).
///
/// Kernel gradient is `sum_s coef_s * C_s` and the coefficient gradient is
/// `<kernel, C_s>`, where `C_s[o,i,k] = sum_t g[o,t] x[i, t + off_{s,k}]`.
pub fn mixed_conv_backward(
    g: &FeatureMap,
    x: &FeatureMap,
    p: &ConvParams<'_>,
    dilations: &[u64],
    coefs: &[f64],
) -> Result<ConvGrads> {
    p.check(x)?;
    if g.channels() != p.out_channels || g.len() != x.len() {
        return Err(Error::shape("upstream gradient does not match output shape"));
    }
    if dilations.len() != coefs.len() || dilations.is_empty() {
        return Err(Error::shape("one coefficient per branch required"));
    }
    let len = x.len();
    let (out, inp) = (p.out_channels, p.in_channels);
    let mut grads = ConvGrads {
        input: FeatureMap::zeros(inp, len),
        kernel: vec![0.0; p.kernel.len()],
        bias: (0..out).map(|o| g.row(o).iter().sum()).collect(),
        coefs: vec![0.0; dilations.len()],
    };
    let (groups, pad) = offset_groups(&taps(p.width, dilations, coefs), len);
    let xp = padded(x, pad);
    let gp = padded(g, pad);
    let lp = len + 2 * pad;
    let mut corr = vec![0.0; out * inp];
    for (offset, group) in &groups {
        let w = combined_weights(p, group);
        // input gradient: gx[i, s] += sum_o w[o, i] g[o, s - offset]
        gemm(
            inp,
            out,
            len,
            View { data: &w, start: 0, row_stride: 1, col_stride: inp },
            View { data: &gp, start: (pad as isize - offset) as usize, row_stride: lp, col_stride: 1 },
            1.0,
            &mut grads.input.data,
        );
        // corr[o, i] = sum_t g[o, t] x[i, t + offset]
        gemm(
            out,
            len,
            inp,
            View { data: &g.data, start: 0, row_stride: len, col_stride: 1 },
            View { data: &xp, start: (pad as isize + offset) as usize, row_stride: 1, col_stride: lp },
            0.0,
            &mut corr,
        );
        for tap in group {
            let mut coef_grad = 0.0;
            for o in 0..out {
                for i in 0..inp {
                    let c = corr[o * inp + i];
                    grads.kernel[(o * inp + i) * p.width + tap.k] += tap.coef * c;
                    coef_grad += p.weight(o, i, tap.k) * c;
                }
            }
            grads.coefs[tap.branch] += coef_grad;
        }
    }
    Ok(grads)
}
