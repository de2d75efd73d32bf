//! Stride-1 "same" convolution via im2col + GEMM.
//!
//! The transposed convolution and both input gradients are expressed as
//! ordinary convolutions with channel-swapped, spatially flipped kernels,
//! which holds exactly for odd kernels with `kernel / 2` zero padding.

use crate::scalar::Scalar;

/// Geometry of the *input* planes of a convolution on one sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }
}

/// Column-matrix budget per tile, in elements; keeps a tile cache-resident.
const TILE_ELEMS: usize = 1 << 16;
/// Smallest tile width in pixels, so GEMMs stay wide enough to be efficient.
const MIN_TILE_PIXELS: usize = 256;

/// Rows of output per tile for a column matrix of `col_rows` rows.
fn tile_rows(g: ConvGeom, col_rows: usize) -> usize {
    let pixels = (TILE_ELEMS / col_rows.max(1)).max(MIN_TILE_PIXELS);
    (pixels / g.width).clamp(1, g.height)
}

/// Row bands `[y0, y1)` covering the image.
fn tiles(g: ConvGeom, col_rows: usize) -> impl Iterator<Item = (usize, usize)> {
    let step = tile_rows(g, col_rows);
    (0..g.height)
        .step_by(step)
        .map(move |y0| (y0, (y0 + step).min(g.height)))
}

/// Unfolds output rows `y0..y1` of `image` (`channels × height × width`) into
/// a `(channels·kernel²) × ((y1−y0)·width)` column matrix, zero padded.
pub(crate) fn im2col_rows<T: Scalar>(g: ConvGeom, image: &[T], cols: &mut [T], y0: usize, y1: usize) {
    let (h, w, pad) = (g.height as isize, g.width as isize, g.pad());
    let plane = g.plane();
    let span = (y1 - y0) * g.width;
    let mut row = 0;
    for c in 0..g.channels {
        let src = &image[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel as isize {
            for kx in 0..g.kernel as isize {
                let dst = &mut cols[row * span..(row + 1) * span];
                let dx = kx - pad;
                // output columns x with 0 <= x + dx < w
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                for y in y0 as isize..y1 as isize {
                    let sy = y + ky - pad;
                    let o = (y - y0 as isize) * w;
                    let out = &mut dst[o as usize..(o + w) as usize];
                    if sy < 0 || sy >= h || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[(sy * w) as usize..((sy + 1) * w) as usize];
                    out[..x_lo].fill(T::zero());
                    let s0 = (x_lo as isize + dx) as usize;
                    out[x_lo..x_hi].copy_from_slice(&src_row[s0..s0 + (x_hi - x_lo)]);
                    out[x_hi..].fill(T::zero());
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
/// Unfolds the whole image; see [`im2col_rows`].
pub(crate) fn im2col<T: Scalar>(g: ConvGeom, image: &[T], cols: &mut [T]) {
    im2col_rows(g, image, cols, 0, g.height);
}

/// Adjoint of [`im2col_rows`]: accumulates the column matrix of output rows
/// `y0..y1` back into `image`.
pub(crate) fn col2im_rows<T: Scalar>(g: ConvGeom, cols: &[T], image: &mut [T], y0: usize, y1: usize) {
    let (h, w, pad) = (g.height as isize, g.width as isize, g.pad());
    let plane = g.plane();
    let span = (y1 - y0) * g.width;
    let mut row = 0;
    for c in 0..g.channels {
        let dst = &mut image[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel as isize {
            for kx in 0..g.kernel as isize {
                let src = &cols[row * span..(row + 1) * span];
                let dx = kx - pad;
                let x_lo = (-dx).clamp(0, w) as usize;
                let x_hi = (w - dx).clamp(0, w) as usize;
                for y in y0 as isize..y1 as isize {
                    let sy = y + ky - pad;
                    if sy < 0 || sy >= h || x_lo >= x_hi {
                        continue;
                    }
                    let o = ((y - y0 as isize) * w) as usize;
                    let from = &src[o + x_lo..o + x_hi];
                    let d0 = (sy * w) as usize + (x_lo as isize + dx) as usize;
                    for (d, &s) in dst[d0..d0 + (x_hi - x_lo)].iter_mut().zip(from) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// A convolution kernel in either of its two layouts.
#[derive(Clone, Copy)]
pub(crate) enum Kernel<'a, T> {
    /// `[out, in, k, k]`
    Direct(&'a [T]),
    /// `[in, out, k, k]` spatially flipped, i.e. the transposed-convolution layout.
    Flipped(&'a [T]),
}

/// Per-sample convolution with a choice of strategy.
///
/// Gather (im2col then GEMM) keeps the GEMM's `m` at `out_ch`; scatter
/// (GEMM then col2im) puts `out_ch·k²` there, which is the faster shape when
/// the layer narrows. Owns the scratch buffers and the second kernel layout.
pub(crate) struct ConvPlan<'a, T: Clone> {
    g: ConvGeom,
    out_ch: usize,
    scatter: bool,
    weights: std::borrow::Cow<'a, [T]>,
    cols: Vec<T>,
}

impl<'a, T: Scalar> ConvPlan<'a, T> {
    pub fn new(g: ConvGeom, out_ch: usize, kernel: Kernel<'a, T>) -> Self {
        use std::borrow::Cow;
        let scatter = g.channels > out_ch;
        let weights = match (kernel, scatter) {
            (Kernel::Direct(w), false) | (Kernel::Flipped(w), true) => Cow::Borrowed(w),
            (Kernel::Direct(w), true) => Cow::Owned(flip_kernel(w, out_ch, g.channels, g.kernel)),
            (Kernel::Flipped(w), false) => Cow::Owned(flip_kernel(w, g.channels, out_ch, g.kernel)),
        };
        let rows = if scatter {
            out_ch * g.kernel * g.kernel
        } else {
            g.col_rows()
        };
        Self {
            g,
            out_ch,
            scatter,
            weights,
            cols: vec![T::zero(); rows * tile_rows(g, rows) * g.width],
        }
    }

    /// Writes the convolution of one `in_ch × plane` sample into `out`.
    pub fn run(&mut self, input: &[T], out: &mut [T]) {
        let (g, plane, w) = (self.g, self.g.plane(), self.g.width);
        if self.scatter {
            let og = g.with_channels(self.out_ch);
            let kk = og.col_rows();
            out.fill(T::zero());
            for (y0, y1) in tiles(g, kk) {
                let span = (y1 - y0) * w;
                // cols = Fᵀ · input, F the in×(out·k²) flipped kernel
                T::gemm(
                    kk,
                    g.channels,
                    span,
                    &self.weights,
                    (1, kk as isize),
                    &input[y0 * w..],
                    (plane as isize, 1),
                    T::zero(),
                    &mut self.cols[..kk * span],
                    (span as isize, 1),
                );
                col2im_rows(og, &self.cols[..kk * span], out, y0, y1);
            }
        } else {
            let kk = g.col_rows();
            for (y0, y1) in tiles(g, kk) {
                let span = (y1 - y0) * w;
                im2col_rows(g, input, &mut self.cols[..kk * span], y0, y1);
                T::gemm(
                    self.out_ch,
                    kk,
                    span,
                    &self.weights,
                    (kk as isize, 1),
                    &self.cols[..kk * span],
                    (span as isize, 1),
                    T::zero(),
                    &mut out[y0 * w..],
                    (plane as isize, 1),
                );
            }
        }
    }
}

/// `[a, b, k, k]` → `[b, a, k, k]` with both spatial axes reversed.
pub(crate) fn flip_kernel<T: Scalar>(w: &[T], a: usize, b: usize, k: usize) -> Vec<T> {
    let kk = k * k;
    let mut out = vec![T::zero(); w.len()];
    for i in 0..a {
        for j in 0..b {
            let src = &w[(i * b + j) * kk..(i * b + j + 1) * kk];
            let dst = &mut out[(j * a + i) * kk..(j * a + i + 1) * kk];
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
    }
    out
}

/// Adds `bias[c]` to every element of output plane `c`.
pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

/// Accumulates per-channel sums of `grad` into `bias_grad`.
pub(crate) fn bias_grad<T: Scalar>(grad: &[T], bias_grad: &mut [T], plane: usize) {
    for (chunk, b) in grad.chunks_exact(plane).zip(bias_grad) {
        *b += chunk.iter().copied().sum::<T>();
    }
}

/// Gradient of a convolution's kernel over a batch, accumulated in the
/// kernel's *direct* `[out, in, k, k]` layout when `flipped_layout` is false
/// and in the flipped `[in, out, k, k]` layout otherwise.
///
/// Unfolds whichever side has fewer channels.
pub(crate) fn kernel_grad<T: Scalar>(
    g: ConvGeom,
    out_ch: usize,
    batch: usize,
    input: &[T],
    grad_out: &[T],
    flipped_layout: bool,
) -> Vec<T> {
    let (cin, k, plane, w) = (g.channels, g.kernel, g.plane(), g.width);
    let mut grad = vec![T::zero(); cin * out_ch * k * k];
    let scatter = cin > out_ch;
    // scatter: dF = x · im2col(dOut)ᵀ in the flipped layout;
    // gather:  dW = dOut · im2col(x)ᵀ in the direct layout
    let (unfolded, dense, ug, rows) = if scatter {
        (grad_out, input, g.with_channels(out_ch), cin)
    } else {
        (input, grad_out, g, out_ch)
    };
    let kk = ug.col_rows();
    let mut cols = vec![T::zero(); kk * tile_rows(g, kk) * w];
    for s in 0..batch {
        let us = &unfolded[s * ug.channels * plane..(s + 1) * ug.channels * plane];
        let ds = &dense[s * rows * plane..(s + 1) * rows * plane];
        for (y0, y1) in tiles(g, kk) {
            let span = (y1 - y0) * w;
            im2col_rows(ug, us, &mut cols[..kk * span], y0, y1);
            T::gemm(
                rows,
                span,
                kk,
                &ds[y0 * w..],
                (plane as isize, 1),
                &cols[..kk * span],
                (1, span as isize),
                T::one(),
                &mut grad,
                (kk as isize, 1),
            );
        }
    }
    match (scatter, flipped_layout) {
        (true, true) | (false, false) => grad,
        (true, false) => flip_kernel(&grad, cin, out_ch, k),
        (false, true) => flip_kernel(&grad, out_ch, cin, k),
    }
}
