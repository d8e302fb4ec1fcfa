//! `same`-padded, stride-1 2-D convolution (cross-correlation) lowered to
//! GEMM.
//!
//! Feature maps are `channels × height × width`, row-major. Weights are
//! `out_ch × in_ch × kh × kw`, row-major. The input is expanded along the
//! kernel width only; each kernel row then contributes one GEMM whose
//! operand is a row-shifted view of that expansion. Work proceeds in bands
//! of output rows so the expansion stays in cache.

use std::cell::RefCell;
use std::ops::Range;

use super::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    /// `out_ch × in_ch × kh × kw`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    /// Zero-initialized layer. Kernel dimensions must be odd.
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::with_params(
            out_ch,
            in_ch,
            kh,
            kw,
            activation,
            vec![0.0; out_ch * in_ch * kh * kw],
            vec![0.0; out_ch],
        )
    }

    pub fn with_params(
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if out_ch == 0 || in_ch == 0 {
            return Err(Error::Shape("layer needs at least one channel".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} must have odd dimensions for same padding"
            )));
        }
        if weights.len() != out_ch * in_ch * kh * kw || bias.len() != out_ch {
            return Err(Error::Shape(format!(
                "parameter lengths {}/{} do not match a {out_ch}x{in_ch}x{kh}x{kw} layer",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            out_ch,
            in_ch,
            kh,
            kw,
            weights,
            bias,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// A stack of 2-D planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        assert!(c < self.channels && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x]
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Runs `f` on a per-thread buffer of at least `len` values. Contents are
/// unspecified on entry. Calls must not nest.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// `C = A·B + beta·C` for an `m × k` operand A and `k × n` operand B given
/// by element strides; C is `m × n` with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(rsc >= n && c.len() >= (m - 1) * rsc + n);
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "A operand too short");
        assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "B operand too short");
    }
    // SAFETY: the asserts above bound every index the kernel touches, and the
    // three slices are distinct borrows so C does not alias A or B.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            rsc as isize,
            beta != 0.0,
            a.as_ptr(),
            csa as isize,
            rsa as isize,
            b.as_ptr(),
            csb as isize,
            rsb as isize,
            beta,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Column range `x` in `0..w` whose shifted position `x + dx` stays inside.
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

/// Lowers output rows `rows` of `x` (`in_ch × h × w`) along the kernel
/// width only.
///
/// The result has `in_ch·kw` rows of length `(rows.len() + kh − 1)·w`;
/// row `(c, j)` holds channel `c` shifted by kernel column `j`, starting
/// `kh / 2` rows above the band with zeros outside the image. Shifting a
/// row by `i·w` then yields the operand for kernel row `i`.
fn lower_rows(x: &[f64], layer: &ConvLayer, h: usize, w: usize, rows: &Range<usize>, buf: &mut [f64]) {
    let p = h * w;
    let span = rows.len() + layer.kh - 1;
    let len = span * w;
    let (ph, pw) = ((layer.kh / 2) as isize, (layer.kw / 2) as isize);
    for c in 0..layer.in_ch {
        let plane = &x[c * p..(c + 1) * p];
        for j in 0..layer.kw {
            let dx = j as isize - pw;
            let (lo, hi) = valid_range(w, dx);
            let dst = &mut buf[(c * layer.kw + j) * len..(c * layer.kw + j + 1) * len];
            for t in 0..span {
                let out = &mut dst[t * w..(t + 1) * w];
                let y = rows.start as isize + t as isize - ph;
                if y < 0 || y >= h as isize || lo >= hi {
                    out.fill(0.0);
                    continue;
                }
                let src = &plane[y as usize * w..(y as usize + 1) * w];
                out[..lo].fill(0.0);
                out[hi..].fill(0.0);
                let s0 = (lo as isize + dx) as usize;
                out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
            }
        }
    }
}

/// Adjoint of [`lower_rows`]: adds the lowered gradient `buf` onto `dx`.
fn fold_rows(buf: &[f64], layer: &ConvLayer, h: usize, w: usize, rows: &Range<usize>, dx_out: &mut [f64]) {
    let p = h * w;
    let span = rows.len() + layer.kh - 1;
    let len = span * w;
    let (ph, pw) = ((layer.kh / 2) as isize, (layer.kw / 2) as isize);
    for c in 0..layer.in_ch {
        let plane = &mut dx_out[c * p..(c + 1) * p];
        for j in 0..layer.kw {
            let dx = j as isize - pw;
            let (lo, hi) = valid_range(w, dx);
            if lo >= hi {
                continue;
            }
            let src = &buf[(c * layer.kw + j) * len..(c * layer.kw + j + 1) * len];
            let s0 = (lo as isize + dx) as usize;
            for t in 0..span {
                let y = rows.start as isize + t as isize - ph;
                if y < 0 || y >= h as isize {
                    continue;
                }
                let base = y as usize * w + s0;
                for (d, v) in plane[base..base + (hi - lo)]
                    .iter_mut()
                    .zip(&src[t * w + lo..t * w + hi])
                {
                    *d += v;
                }
            }
        }
    }
}

/// Bytes of lowered input processed per band, sized to stay cache resident.
const TILE_BYTES: usize = 512 * 1024;

/// Splits `0..h` into row bands whose lowered inputs fit in `tile_bytes`.
fn row_bands(layer: &ConvLayer, h: usize, w: usize, tile_bytes: usize) -> Vec<Range<usize>> {
    let per_row = layer.in_ch * layer.kw * w * std::mem::size_of::<f64>();
    let band = (tile_bytes / per_row.max(1))
        .saturating_sub(layer.kh - 1)
        .clamp(1, h.max(1));
    (0..h).step_by(band).map(|y0| y0..(y0 + band).min(h)).collect()
}

/// Weights regrouped as `kh` blocks of `out_ch × (in_ch·kw)` matrices, one
/// per kernel row.
fn pack_by_kernel_row(layer: &ConvLayer) -> Vec<f64> {
    let (o_n, c_n, kh, kw) = (layer.out_ch, layer.in_ch, layer.kh, layer.kw);
    let mut packed = vec![0.0; layer.weights.len()];
    for o in 0..o_n {
        for c in 0..c_n {
            for i in 0..kh {
                let src = ((o * c_n + c) * kh + i) * kw;
                let dst = (i * o_n + o) * c_n * kw + c * kw;
                packed[dst..dst + kw].copy_from_slice(&layer.weights[src..src + kw]);
            }
        }
    }
    packed
}

/// Inverse of [`pack_by_kernel_row`], accumulating into `d_w`.
fn unpack_add(layer: &ConvLayer, packed: &[f64], d_w: &mut [f64]) {
    let (o_n, c_n, kh, kw) = (layer.out_ch, layer.in_ch, layer.kh, layer.kw);
    for o in 0..o_n {
        for c in 0..c_n {
            for i in 0..kh {
                let dst = ((o * c_n + c) * kh + i) * kw;
                let src = (i * o_n + o) * c_n * kw + c * kw;
                for (d, v) in d_w[dst..dst + kw].iter_mut().zip(&packed[src..src + kw]) {
                    *d += v;
                }
            }
        }
    }
}

/// Pre-activation response `W ⋆ x + b` of one layer (`out_ch × h × w`).
pub(crate) fn layer_preactivation(layer: &ConvLayer, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    preactivation_banded(layer, x, h, w, TILE_BYTES)
}

fn preactivation_banded(layer: &ConvLayer, x: &[f64], h: usize, w: usize, tile_bytes: usize) -> Vec<f64> {
    let p = h * w;
    debug_assert_eq!(x.len(), layer.in_ch * p);
    let k = layer.in_ch * layer.kw;
    let packed = pack_by_kernel_row(layer);
    let mut pre = vec![0.0; layer.out_ch * p];
    for rows in row_bands(layer, h, w, tile_bytes) {
        let n = rows.len() * w;
        let len = (rows.len() + layer.kh - 1) * w;
        let off = rows.start * w;
        with_scratch(k * len, |buf| {
            lower_rows(x, layer, h, w, &rows, buf);
            for i in 0..layer.kh {
                gemm(
                    layer.out_ch,
                    k,
                    n,
                    &packed[i * layer.out_ch * k..],
                    (k, 1),
                    &buf[i * w..],
                    (len, 1),
                    if i == 0 { 0.0 } else { 1.0 },
                    &mut pre[off..],
                    p,
                );
            }
        });
    }
    for (row, b) in pre.chunks_exact_mut(p).zip(&layer.bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
    pre
}

/// Backpropagates through one layer.
///
/// `d_pre` enters holding the gradient with respect to the pre-activation.
/// Parameter gradients are accumulated into `grads`; when `d_input` is
/// given it receives the gradient with respect to the layer input
/// (overwritten).
pub(crate) fn layer_backward(
    layer: &ConvLayer,
    x: &[f64],
    d_pre: &[f64],
    h: usize,
    w: usize,
    grads: Option<(&mut [f64], &mut [f64])>,
    d_input: Option<&mut [f64]>,
) {
    backward_banded(layer, x, d_pre, h, w, grads, d_input, TILE_BYTES)
}

#[allow(clippy::too_many_arguments)]
fn backward_banded(
    layer: &ConvLayer,
    x: &[f64],
    d_pre: &[f64],
    h: usize,
    w: usize,
    grads: Option<(&mut [f64], &mut [f64])>,
    mut d_input: Option<&mut [f64]>,
    tile_bytes: usize,
) {
    let p = h * w;
    let k = layer.in_ch * layer.kw;
    let o_n = layer.out_ch;
    let packed = d_input.is_some().then(|| pack_by_kernel_row(layer));
    let mut d_packed = grads.is_some().then(|| vec![0.0; layer.weights.len()]);
    if let Some(dx) = d_input.as_deref_mut() {
        dx.fill(0.0);
    }
    for rows in row_bands(layer, h, w, tile_bytes) {
        let n = rows.len() * w;
        let len = (rows.len() + layer.kh - 1) * w;
        let off = rows.start * w;
        with_scratch(k * len, |buf| {
            if let Some(dwp) = d_packed.as_mut() {
                lower_rows(x, layer, h, w, &rows, buf);
                for i in 0..layer.kh {
                    gemm(
                        o_n,
                        n,
                        k,
                        &d_pre[off..],
                        (p, 1),
                        &buf[i * w..],
                        (1, len),
                        1.0,
                        &mut dwp[i * o_n * k..],
                        k,
                    );
                }
            }
            if let (Some(dx), Some(packed)) = (d_input.as_deref_mut(), packed.as_ref()) {
                buf.fill(0.0);
                for i in 0..layer.kh {
                    gemm(
                        k,
                        o_n,
                        n,
                        &packed[i * o_n * k..],
                        (1, k),
                        &d_pre[off..],
                        (p, 1),
                        1.0,
                        &mut buf[i * w..],
                        len,
                    );
                }
                fold_rows(buf, layer, h, w, &rows, dx);
            }
        });
    }
    if let Some((d_w, d_b)) = grads {
        unpack_add(layer, d_packed.as_deref().expect("allocated with grads"), d_w);
        for (db, row) in d_b.iter_mut().zip(d_pre.chunks_exact(p)) {
            *db += row.iter().sum::<f64>();
        }
    }
}

/// Convolution followed by the layer's activation; output spatial size
/// equals the input's.
pub fn conv2d_forward(x: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    if x.channels != layer.in_ch {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, feature map has {}",
            layer.in_ch, x.channels
        )));
    }
    let mut out = layer_preactivation(layer, &x.data, x.height, x.width);
    out.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
    FeatureMap::new(layer.out_ch, x.height, x.width, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    /// Direct nested-loop cross-correlation with zero `same` padding.
    fn naive_conv(x: &FeatureMap, layer: &ConvLayer) -> Vec<f64> {
        let (h, w) = (x.height as isize, x.width as isize);
        let (ph, pw) = ((layer.kh / 2) as isize, (layer.kw / 2) as isize);
        let mut out = Vec::new();
        for o in 0..layer.out_ch {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = layer.bias[o];
                    for c in 0..layer.in_ch {
                        for i in 0..layer.kh as isize {
                            for j in 0..layer.kw as isize {
                                let (sy, sx) = (y + i - ph, xx + j - pw);
                                if sy < 0 || sy >= h || sx < 0 || sx >= w {
                                    continue;
                                }
                                let widx = ((o * layer.in_ch + c) * layer.kh + i as usize)
                                    * layer.kw
                                    + j as usize;
                                acc += layer.weights[widx] * x.get(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.push(layer.activation.apply(acc));
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_doubles() {
        let layer =
            ConvLayer::with_params(1, 1, 1, 1, Activation::Linear, vec![2.0], vec![0.0]).unwrap();
        let x = FeatureMap::new(1, 3, 4, random_vec(12, 1)).unwrap();
        let y = conv2d_forward(&x, &layer).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let layer = ConvLayer::with_params(1, 1, 3, 3, Activation::Linear, w, vec![0.0]).unwrap();
        let x = FeatureMap::new(1, 5, 5, random_vec(25, 2)).unwrap();
        assert_eq!(conv2d_forward(&x, &layer).unwrap().data, x.data);
    }

    #[test]
    fn matches_naive_oracle() {
        let cases = [(1, 1, 3, 3, 5, 5), (3, 2, 3, 5, 6, 4), (4, 3, 9, 9, 12, 7), (2, 5, 5, 5, 9, 14)];
        for (seed, &(out_ch, in_ch, kh, kw, h, w)) in cases.iter().enumerate() {
            let layer = ConvLayer::with_params(
                out_ch,
                in_ch,
                kh,
                kw,
                Activation::Selu,
                random_vec(out_ch * in_ch * kh * kw, seed as u64),
                random_vec(out_ch, 100 + seed as u64),
            )
            .unwrap();
            let x = FeatureMap::new(in_ch, h, w, random_vec(in_ch * h * w, 50 + seed as u64))
                .unwrap();
            let fast = conv2d_forward(&x, &layer).unwrap();
            assert_eq!((fast.channels, fast.height, fast.width), (out_ch, h, w));
            for (a, b) in fast.data.iter().zip(naive_conv(&x, &layer)) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn input_gradient_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> for a linear layer without bias.
        let layer = ConvLayer::with_params(
            3,
            2,
            5,
            3,
            Activation::Linear,
            random_vec(90, 7),
            vec![0.0; 3],
        )
        .unwrap();
        let (h, w) = (7, 6);
        let x = random_vec(2 * h * w, 8);
        let g = random_vec(3 * h * w, 9);
        let y = layer_preactivation(&layer, &x, h, w);
        let mut dx = vec![0.0; x.len()];
        layer_backward(&layer, &x, &g, h, w, None, Some(&mut dx));
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ConvLayer::new(1, 1, 2, 3, Activation::Linear).is_err());
        assert!(ConvLayer::with_params(1, 1, 3, 3, Activation::Linear, vec![0.0; 8], vec![0.0])
            .is_err());
        let layer = ConvLayer::new(2, 3, 3, 3, Activation::Linear).unwrap();
        let x = FeatureMap::new(2, 4, 4, vec![0.0; 32]).unwrap();
        assert!(matches!(conv2d_forward(&x, &layer), Err(Error::Shape(_))));
    }
}
