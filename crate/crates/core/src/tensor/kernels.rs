//! Raw slice kernels behind the graph operations.
//!
//! All buffers are row-major `C × H × W` planes. Forward kernels allocate
//! their output; backward kernels accumulate into caller-provided buffers.

use std::ops::Range;

/// Output extent of a convolution along one axis, or `None` when the kernel
/// does not fit.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        (height, width): (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Option<Self> {
        let out_height = conv_output_extent(height, kernel, stride, padding)?;
        let out_width = conv_output_extent(width, kernel, stride, padding)?;
        Some(ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            height,
            width,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }
}

/// Output positions `o` in `0..out_len` for which `o*stride + offset - padding`
/// lands inside `0..in_len`.
fn valid_outputs(
    out_len: usize,
    in_len: usize,
    offset: usize,
    stride: usize,
    padding: usize,
) -> Range<usize> {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    let reach = in_len + padding;
    if reach <= offset {
        return 0..0;
    }
    let hi = ((reach - 1 - offset) / stride + 1).min(out_len);
    lo.min(hi)..hi
}

pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (h, w, oh, ow) = (g.height, g.width, g.out_height, g.out_width);
    let (s, p) = (g.stride, g.padding);
    let mut out = vec![0.0; g.out_channels * oh * ow];
    for oc in 0..g.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(bias[oc]);
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..g.kernel {
                let rows = valid_outputs(oh, h, ky, s, p);
                for kx in 0..g.kernel {
                    let wv = weight[g.weight_index(oc, ic, ky, kx)];
                    let cols = valid_outputs(ow, w, kx, s, p);
                    if cols.is_empty() {
                        continue;
                    }
                    for oy in rows.clone() {
                        let iy = oy * s + ky - p;
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let start = cols.start + kx - p;
                            let src = &in_row[start..start + cols.len()];
                            for (o, &x) in out_row[cols.clone()].iter_mut().zip(src) {
                                *o += wv * x;
                            }
                        } else {
                            for ox in cols.clone() {
                                out_row[ox] += wv * in_row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates `d(out)/d(input)` into `grad_input`.
pub fn conv2d_backward_input(
    g: &ConvGeometry,
    grad_out: &[f64],
    weight: &[f64],
    grad_input: &mut [f64],
) {
    let (h, w, oh, ow) = (g.height, g.width, g.out_height, g.out_width);
    let (s, p) = (g.stride, g.padding);
    for oc in 0..g.out_channels {
        let gplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..g.in_channels {
            let in_plane = &mut grad_input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..g.kernel {
                let rows = valid_outputs(oh, h, ky, s, p);
                for kx in 0..g.kernel {
                    let wv = weight[g.weight_index(oc, ic, ky, kx)];
                    let cols = valid_outputs(ow, w, kx, s, p);
                    if cols.is_empty() {
                        continue;
                    }
                    for oy in rows.clone() {
                        let iy = oy * s + ky - p;
                        let g_row = &gplane[oy * ow..(oy + 1) * ow];
                        let in_row = &mut in_plane[iy * w..(iy + 1) * w];
                        if s == 1 {
                            let start = cols.start + kx - p;
                            let dst = &mut in_row[start..start + cols.len()];
                            for (d, &gv) in dst.iter_mut().zip(&g_row[cols.clone()]) {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in cols.clone() {
                                in_row[ox * s + kx - p] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `d(out)/d(weight)` and `d(out)/d(bias)`.
pub fn conv2d_backward_params(
    g: &ConvGeometry,
    grad_out: &[f64],
    input: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let (h, w, oh, ow) = (g.height, g.width, g.out_height, g.out_width);
    let (s, p) = (g.stride, g.padding);
    for oc in 0..g.out_channels {
        let gplane = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        grad_bias[oc] += gplane.iter().sum::<f64>();
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..g.kernel {
                let rows = valid_outputs(oh, h, ky, s, p);
                for kx in 0..g.kernel {
                    let cols = valid_outputs(ow, w, kx, s, p);
                    let mut acc = 0.0;
                    for oy in rows.clone() {
                        let iy = oy * s + ky - p;
                        let g_row = &gplane[oy * ow..(oy + 1) * ow];
                        let in_row = &in_plane[iy * w..(iy + 1) * w];
                        for ox in cols.clone() {
                            acc += g_row[ox] * in_row[ox * s + kx - p];
                        }
                    }
                    grad_weight[g.weight_index(oc, ic, ky, kx)] += acc;
                }
            }
        }
    }
}

pub fn avg_pool_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    window: usize,
) -> Vec<f64> {
    let (oh, ow) = (h / window, w / window);
    let scale = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..window {
                    let row = (ch * h + oy * window + dy) * w + ox * window;
                    acc += input[row..row + window].iter().sum::<f64>();
                }
                out[(ch * oh + oy) * ow + ox] = acc * scale;
            }
        }
    }
    out
}

pub fn avg_pool_backward(
    grad_out: &[f64],
    (c, h, w): (usize, usize, usize),
    window: usize,
    grad_input: &mut [f64],
) {
    let (oh, ow) = (h / window, w / window);
    let scale = 1.0 / (window * window) as f64;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = grad_out[(ch * oh + oy) * ow + ox] * scale;
                for dy in 0..window {
                    let row = (ch * h + oy * window + dy) * w + ox * window;
                    for d in &mut grad_input[row..row + window] {
                        *d += gv;
                    }
                }
            }
        }
    }
}

/// Max pooling; also returns the flat input index chosen for each output
/// (first maximum on ties).
pub fn max_pool_forward(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    window: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / window, w / window);
    let mut out = vec![0.0; c * oh * ow];
    let mut argmax = vec![0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * window + dy) * w + ox * window + dx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

/// `G[i][j] = Σ_n F[i,n]·F[j,n] / (C·H·W)`, returned as a `C × C` buffer.
pub fn gram_forward(features: &[f64], channels: usize, spatial: usize) -> Vec<f64> {
    let norm = 1.0 / (channels * spatial) as f64;
    let mut out = vec![0.0; channels * channels];
    for i in 0..channels {
        let fi = &features[i * spatial..(i + 1) * spatial];
        for j in i..channels {
            let fj = &features[j * spatial..(j + 1) * spatial];
            let v = fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() * norm;
            out[i * channels + j] = v;
            out[j * channels + i] = v;
        }
    }
    out
}

pub fn gram_backward(
    grad_out: &[f64],
    features: &[f64],
    channels: usize,
    spatial: usize,
    grad_input: &mut [f64],
) {
    let norm = 1.0 / (channels * spatial) as f64;
    for i in 0..channels {
        let gi = &mut grad_input[i * spatial..(i + 1) * spatial];
        for j in 0..channels {
            let coeff = (grad_out[i * channels + j] + grad_out[j * channels + i]) * norm;
            if coeff == 0.0 {
                continue;
            }
            let fj = &features[j * spatial..(j + 1) * spatial];
            for (d, &f) in gi.iter_mut().zip(fj) {
                *d += coeff * f;
            }
        }
    }
}

/// Anisotropic squared total variation of a `C × H × W` buffer.
pub fn tv_forward(input: &[f64], (c, h, w): (usize, usize, usize)) -> f64 {
    let mut acc = 0.0;
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = plane[y * w + x];
                if x + 1 < w {
                    let d = plane[y * w + x + 1] - v;
                    acc += d * d;
                }
                if y + 1 < h {
                    let d = plane[(y + 1) * w + x] - v;
                    acc += d * d;
                }
            }
        }
    }
    acc
}

pub fn tv_backward(
    grad_out: f64,
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    grad_input: &mut [f64],
) {
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let i = base + y * w + x;
                if x + 1 < w {
                    let d = 2.0 * grad_out * (input[i + 1] - input[i]);
                    grad_input[i + 1] += d;
                    grad_input[i] -= d;
                }
                if y + 1 < h {
                    let d = 2.0 * grad_out * (input[i + w] - input[i]);
                    grad_input[i + w] += d;
                    grad_input[i] -= d;
                }
            }
        }
    }
}
