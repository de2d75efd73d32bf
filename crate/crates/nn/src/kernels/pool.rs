use crate::scalar::Scalar;

/// 2×2 stride-2 max pooling over `planes` planes of `height × width`.
/// Writes the pooled values and the flat input index of each window maximum;
/// ties keep the first element in row-major window order.
pub(crate) fn maxpool2_forward<T: Scalar>(
    input: &[T],
    planes: usize,
    height: usize,
    width: usize,
    out: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (height / 2, width / 2);
    for p in 0..planes {
        let base = p * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let i0 = base + 2 * y * width + 2 * x;
                let mut best = i0;
                for cand in [i0 + 1, i0 + width, i0 + width + 1] {
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + y * ow + x;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

/// Nearest-neighbour ×2 upsampling: each value fills its 2×2 block.
pub(crate) fn unpool2_forward<T: Scalar>(input: &[T], planes: usize, height: usize, width: usize, out: &mut [T]) {
    let ow = 2 * width;
    for p in 0..planes {
        let src = &input[p * height * width..(p + 1) * height * width];
        let dst = &mut out[p * 4 * height * width..(p + 1) * 4 * height * width];
        for y in 0..height {
            for x in 0..width {
                let v = src[y * width + x];
                let o = 2 * y * ow + 2 * x;
                dst[o] = v;
                dst[o + 1] = v;
                dst[o + ow] = v;
                dst[o + ow + 1] = v;
            }
        }
    }
}

/// Backward of [`unpool2_forward`]: sums each 2×2 block of `grad_out`.
pub(crate) fn unpool2_backward<T: Scalar>(
    grad_out: &[T],
    planes: usize,
    height: usize,
    width: usize,
    grad_in: &mut [T],
) {
    let ow = 2 * width;
    for p in 0..planes {
        let src = &grad_out[p * 4 * height * width..(p + 1) * 4 * height * width];
        let dst = &mut grad_in[p * height * width..(p + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                let o = 2 * y * ow + 2 * x;
                dst[y * width + x] = src[o] + src[o + 1] + src[o + ow] + src[o + ow + 1];
            }
        }
    }
}
