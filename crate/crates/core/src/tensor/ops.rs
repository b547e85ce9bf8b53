//! Per-sample kernels on `(channels, height, width)` slices.

use super::Element;
use crate::arch::{ConvSpec, PoolMode, PoolSpec, Shape};

/// Output columns `ox` for which `ox * stride + k - pad` lands inside `0..len`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    if len + pad <= k {
        return 0..0;
    }
    let hi = ((len - 1 + pad - k) / stride + 1).min(out_len);
    lo.min(hi)..hi
}

/// Direct (grouped) convolution of one sample. `out` is overwritten.
pub fn conv2d<T: Element>(
    x: &[T],
    in_shape: Shape,
    weight: &[T],
    bias: Option<&[T]>,
    spec: &ConvSpec,
    out_shape: Shape,
    out: &mut [T],
) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let [kh, kw] = spec.kernel;
    let [sy, sx] = spec.stride;
    let [py, px] = spec.padding;
    let cin_g = in_shape.channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    for oc in 0..spec.out_channels {
        let group = oc / cout_g;
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(bias.map_or(T::zero(), |b| b[oc]));
        for icl in 0..cin_g {
            let ic = group * cin_g + icl;
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let rows = valid_range(h, oh, ky, sy, py);
                for kx in 0..kw {
                    let wv = weight[((oc * cin_g + icl) * kh + ky) * kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let cols = valid_range(w, ow, kx, sx, px);
                    for oy in rows.clone() {
                        let iy = oy * sy + ky - py;
                        let row_in = &xin[iy * w..(iy + 1) * w];
                        let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                        for ox in cols.clone() {
                            row_out[ox] = row_out[ox] + wv * row_in[ox * sx + kx - px];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates convolution gradients of one sample into `gx` (if given),
/// `gw` and `gb` (if given).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    x: &[T],
    in_shape: Shape,
    weight: &[T],
    spec: &ConvSpec,
    out_shape: Shape,
    gout: &[T],
    mut gx: Option<&mut [T]>,
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let [kh, kw] = spec.kernel;
    let [sy, sx] = spec.stride;
    let [py, px] = spec.padding;
    let cin_g = in_shape.channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    if let Some(gb) = gb {
        for oc in 0..spec.out_channels {
            gb[oc] = gb[oc] + gout[oc * oh * ow..(oc + 1) * oh * ow].iter().copied().sum();
        }
    }
    for oc in 0..spec.out_channels {
        let group = oc / cout_g;
        let gplane = &gout[oc * oh * ow..(oc + 1) * oh * ow];
        for icl in 0..cin_g {
            let ic = group * cin_g + icl;
            let xin = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let rows = valid_range(h, oh, ky, sy, py);
                for kx in 0..kw {
                    let widx = ((oc * cin_g + icl) * kh + ky) * kw + kx;
                    let wv = weight[widx];
                    let cols = valid_range(w, ow, kx, sx, px);
                    let mut acc = T::zero();
                    for oy in rows.clone() {
                        let iy = oy * sy + ky - py;
                        let row_in = &xin[iy * w..(iy + 1) * w];
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        for ox in cols.clone() {
                            acc = acc + row_in[ox * sx + kx - px] * grow[ox];
                        }
                        if let Some(gx) = gx.as_deref_mut() {
                            let gx_row = &mut gx[ic * h * w + iy * w..ic * h * w + (iy + 1) * w];
                            for ox in cols.clone() {
                                let ix = ox * sx + kx - px;
                                gx_row[ix] = gx_row[ix] + wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] = gw[widx] + acc;
                }
            }
        }
    }
}

pub fn pool<T: Element>(x: &[T], in_shape: Shape, spec: &PoolSpec, out_shape: Shape, out: &mut [T]) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let [wh, ww] = spec.window;
    let [sy, sx] = spec.stride;
    let norm = T::from_f64((wh * ww) as f64);
    for c in 0..in_shape.channels {
        let xin = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = match spec.mode {
                    PoolMode::Max => T::neg_infinity(),
                    PoolMode::Avg => T::zero(),
                };
                for dy in 0..wh {
                    let row = &xin[(oy * sy + dy) * w + ox * sx..];
                    for &v in &row[..ww] {
                        acc = match spec.mode {
                            PoolMode::Max => {
                                if v > acc {
                                    v
                                } else {
                                    acc
                                }
                            }
                            PoolMode::Avg => acc + v,
                        };
                    }
                }
                out[(c * oh + oy) * ow + ox] = match spec.mode {
                    PoolMode::Max => acc,
                    PoolMode::Avg => acc / norm,
                };
            }
        }
    }
}

/// Max pooling routes the gradient to the first maximal element of each
/// window; average pooling spreads it evenly.
pub fn pool_backward<T: Element>(x: &[T], in_shape: Shape, spec: &PoolSpec, out_shape: Shape, gout: &[T], gx: &mut [T]) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let [wh, ww] = spec.window;
    let [sy, sx] = spec.stride;
    let norm = T::from_f64((wh * ww) as f64);
    for c in 0..in_shape.channels {
        let base = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gout[(c * oh + oy) * ow + ox];
                match spec.mode {
                    PoolMode::Max => {
                        let mut best = base + (oy * sy) * w + ox * sx;
                        for dy in 0..wh {
                            for dx in 0..ww {
                                let i = base + (oy * sy + dy) * w + ox * sx + dx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        gx[best] = gx[best] + g;
                    }
                    PoolMode::Avg => {
                        let share = g / norm;
                        for dy in 0..wh {
                            for dx in 0..ww {
                                let i = base + (oy * sy + dy) * w + ox * sx + dx;
                                gx[i] = gx[i] + share;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Smallest gap between the largest and second-largest distinct value over
/// all max-pool windows. Exact ties are skipped.
pub fn pool_margin<T: Element>(x: &[T], in_shape: Shape, spec: &PoolSpec, out_shape: Shape) -> f64 {
    if spec.mode != PoolMode::Max {
        return f64::INFINITY;
    }
    let (h, w) = (in_shape.height, in_shape.width);
    let [wh, ww] = spec.window;
    let [sy, sx] = spec.stride;
    let mut margin = f64::INFINITY;
    for c in 0..in_shape.channels {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let mut vals: Vec<f64> = Vec::with_capacity(wh * ww);
                for dy in 0..wh {
                    for dx in 0..ww {
                        vals.push(x[c * h * w + (oy * sy + dy) * w + ox * sx + dx].as_f64());
                    }
                }
                vals.sort_by(|a, b| b.total_cmp(a));
                if let Some(second) = vals.iter().find(|&&v| v < vals[0]) {
                    margin = margin.min(vals[0] - second);
                }
            }
        }
    }
    margin
}

/// `out[o] = sum_i weight[o, i] * x[i] (+ bias[o])`.
pub fn dense<T: Element>(x: &[T], weight: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &weight[o * n_in..(o + 1) * n_in];
        let mut acc = bias.map_or(T::zero(), |b| b[o]);
        for (&wv, &xv) in row.iter().zip(x) {
            acc = acc + wv * xv;
        }
        *y = acc;
    }
}

pub fn dense_backward<T: Element>(
    x: &[T],
    weight: &[T],
    gout: &[T],
    gx: Option<&mut [T]>,
    gw: &mut [T],
    gb: Option<&mut [T]>,
) {
    let n_in = x.len();
    for (o, &g) in gout.iter().enumerate() {
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for (gwv, &xv) in grow.iter_mut().zip(x) {
            *gwv = *gwv + g * xv;
        }
    }
    if let Some(gb) = gb {
        for (b, &g) in gb.iter_mut().zip(gout) {
            *b = *b + g;
        }
    }
    if let Some(gx) = gx {
        for (o, &g) in gout.iter().enumerate() {
            let row = &weight[o * n_in..(o + 1) * n_in];
            for (gxv, &wv) in gx.iter_mut().zip(row) {
                *gxv = *gxv + g * wv;
            }
        }
    }
}

/// Softmax cross-entropy of one sample; writes `softmax - onehot` into
/// `grad` and returns the loss.
pub fn softmax_cross_entropy<T: Element>(logits: &[T], label: usize, grad: &mut [T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - max).exp();
        sum = sum + *g;
    }
    for g in grad.iter_mut() {
        *g = *g / sum;
    }
    grad[label] = grad[label] - T::one();
    sum.ln() + max - logits[label]
}

pub fn argmax<T: Element>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_edges() {
        // 3x3 same conv on width 5: kx=0 needs ix = ox - 1 >= 0
        assert_eq!(valid_range(5, 5, 0, 1, 1), 1..5);
        assert_eq!(valid_range(5, 5, 1, 1, 1), 0..5);
        assert_eq!(valid_range(5, 5, 2, 1, 1), 0..4);
        // stride 2, pad 1, width 4 -> out 2
        assert_eq!(valid_range(4, 2, 0, 2, 1), 1..2);
        assert_eq!(valid_range(4, 2, 2, 2, 1), 0..2);
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let logits = [0.3f64; 7];
        let mut g = [0.0; 7];
        let loss = softmax_cross_entropy(&logits, 2, &mut g);
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let in_shape = Shape::new(2, 5, 4);
        let spec = ConvSpec { out_channels: 3, kernel: [3, 2], stride: [2, 1], padding: [1, 0], groups: 1, bias: true, fusion: false };
        let out_shape = spec.output_shape(in_shape).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let wt: Vec<f64> = (0..36).map(|i| (i as f64 * 0.11).cos()).collect();
        let b = [0.1, -0.2, 0.3];
        let mut out = vec![0.0; out_shape.elements()];
        conv2d(&x, in_shape, &wt, Some(&b), &spec, out_shape, &mut out);
        for oc in 0..3 {
            for oy in 0..out_shape.height {
                for ox in 0..out_shape.width {
                    let mut acc = b[oc];
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..2 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox + kx) as isize;
                                if iy < 0 || iy >= 5 || ix >= 4 {
                                    continue;
                                }
                                acc += wt[((oc * 2 + ic) * 3 + ky) * 2 + kx] * x[ic * 20 + iy as usize * 4 + ix as usize];
                            }
                        }
                    }
                    let got = out[(oc * out_shape.height + oy) * out_shape.width + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}
