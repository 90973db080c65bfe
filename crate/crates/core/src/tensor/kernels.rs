//! Raw forward/adjoint kernels shared by the tape ops.
//!
//! `conv_gather` is the plain cross-correlation; `conv_scatter` is its exact
//! adjoint (used both as conv backward-input and as transposed-conv forward);
//! `conv_weight_grad` accumulates the weight cotangent. Padding bounds are
//! hoisted out of the pixel loops, so the inner loops are branch-free and
//! the stride-1 case vectorizes. All loops are single-threaded with a fixed
//! summation order, so results are bitwise reproducible.

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    /// Output extent of a strided dilated correlation along one axis.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * padding;
        if span > padded {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    /// Range of output positions whose source index `pos*stride + tap - padding`
    /// lands inside `[0, extent_in)`, clipped to `[0, extent_out)`.
    fn valid_range(&self, extent_in: usize, extent_out: usize, tap: usize) -> (usize, usize) {
        let start = if tap >= self.padding {
            0
        } else {
            (self.padding - tap).div_ceil(self.stride)
        };
        let limit = extent_in + self.padding;
        if limit <= tap {
            return (0, 0);
        }
        let end = ((limit - tap).div_ceil(self.stride)).min(extent_out);
        (start.min(end), end)
    }
}

/// out[n,co,y,x] = sum_{ci,i,j} src[n,ci, y*s-p+i*d, x*s-p+j*d] * w[co,ci,i,j]
pub(crate) fn conv_gather(src: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.h_out * g.w_out];
    let in_plane = g.h_in * g.w_in;
    let out_plane = g.h_out * g.w_out;
    let k_plane = g.kh * g.kw;
    for n in 0..g.batch {
        let src_n = &src[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        let out_n = &mut out[n * g.c_out * out_plane..(n + 1) * g.c_out * out_plane];
        for co in 0..g.c_out {
            let out_c = &mut out_n[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.c_in {
                let src_c = &src_n[ci * in_plane..(ci + 1) * in_plane];
                let w_base = (co * g.c_in + ci) * k_plane;
                for i in 0..g.kh {
                    let (y0, y1) = g.valid_range(g.h_in, g.h_out, i * g.dilation);
                    for j in 0..g.kw {
                        let w = weight[w_base + i * g.kw + j];
                        let (x0, x1) = g.valid_range(g.w_in, g.w_out, j * g.dilation);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = y * g.stride + i * g.dilation - g.padding;
                            let sx0 = x0 * g.stride + j * g.dilation - g.padding;
                            let src_row = &src_c[sy * g.w_in..(sy + 1) * g.w_in];
                            let out_row = &mut out_c[y * g.w_out + x0..y * g.w_out + x1];
                            if g.stride == 1 {
                                let src_win = &src_row[sx0..sx0 + (x1 - x0)];
                                for (o, &v) in out_row.iter_mut().zip(src_win) {
                                    *o += w * v;
                                }
                            } else {
                                for (k, o) in out_row.iter_mut().enumerate() {
                                    *o += w * src_row[sx0 + k * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `conv_gather`: scatters src[n,co,y,x] back through the taps.
///
/// dst[n,ci, y*s-p+i*d, x*s-p+j*d] += src[n,co,y,x] * w[co,ci,i,j]
pub(crate) fn conv_scatter(src: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dst = vec![0.0; g.batch * g.c_in * g.h_in * g.w_in];
    let in_plane = g.h_in * g.w_in;
    let out_plane = g.h_out * g.w_out;
    let k_plane = g.kh * g.kw;
    for n in 0..g.batch {
        let src_n = &src[n * g.c_out * out_plane..(n + 1) * g.c_out * out_plane];
        let dst_n = &mut dst[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        for co in 0..g.c_out {
            let src_c = &src_n[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.c_in {
                let dst_c = &mut dst_n[ci * in_plane..(ci + 1) * in_plane];
                let w_base = (co * g.c_in + ci) * k_plane;
                for i in 0..g.kh {
                    let (y0, y1) = g.valid_range(g.h_in, g.h_out, i * g.dilation);
                    for j in 0..g.kw {
                        let w = weight[w_base + i * g.kw + j];
                        let (x0, x1) = g.valid_range(g.w_in, g.w_out, j * g.dilation);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = y * g.stride + i * g.dilation - g.padding;
                            let sx0 = x0 * g.stride + j * g.dilation - g.padding;
                            let dst_row = &mut dst_c[sy * g.w_in..(sy + 1) * g.w_in];
                            let src_row = &src_c[y * g.w_out + x0..y * g.w_out + x1];
                            if g.stride == 1 {
                                let dst_win = &mut dst_row[sx0..sx0 + (x1 - x0)];
                                for (d, &v) in dst_win.iter_mut().zip(src_row) {
                                    *d += w * v;
                                }
                            } else {
                                for (k, &v) in src_row.iter().enumerate() {
                                    dst_row[sx0 + k * g.stride] += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dst
}

/// dw[co,ci,i,j] = sum_{n,y,x} input[n,ci, y*s-p+i*d, x*s-p+j*d] * dout[n,co,y,x]
pub(crate) fn conv_weight_grad(input: &[f64], dout: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dw = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    let in_plane = g.h_in * g.w_in;
    let out_plane = g.h_out * g.w_out;
    let k_plane = g.kh * g.kw;
    for n in 0..g.batch {
        let in_n = &input[n * g.c_in * in_plane..(n + 1) * g.c_in * in_plane];
        let dout_n = &dout[n * g.c_out * out_plane..(n + 1) * g.c_out * out_plane];
        for co in 0..g.c_out {
            let dout_c = &dout_n[co * out_plane..(co + 1) * out_plane];
            for ci in 0..g.c_in {
                let in_c = &in_n[ci * in_plane..(ci + 1) * in_plane];
                let w_base = (co * g.c_in + ci) * k_plane;
                for i in 0..g.kh {
                    let (y0, y1) = g.valid_range(g.h_in, g.h_out, i * g.dilation);
                    for j in 0..g.kw {
                        let (x0, x1) = g.valid_range(g.w_in, g.w_out, j * g.dilation);
                        if x0 >= x1 {
                            continue;
                        }
                        // Four independent accumulators let the row dot
                        // products vectorize; the lane order is fixed, so
                        // results stay bitwise reproducible.
                        let mut acc = [0.0f64; 4];
                        for y in y0..y1 {
                            let sy = y * g.stride + i * g.dilation - g.padding;
                            let sx0 = x0 * g.stride + j * g.dilation - g.padding;
                            let in_row = &in_c[sy * g.w_in..(sy + 1) * g.w_in];
                            let dout_row = &dout_c[y * g.w_out + x0..y * g.w_out + x1];
                            if g.stride == 1 {
                                let in_win = &in_row[sx0..sx0 + (x1 - x0)];
                                let mut chunks_a = in_win.chunks_exact(4);
                                let mut chunks_b = dout_row.chunks_exact(4);
                                for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                                    for l in 0..4 {
                                        acc[l] += ca[l] * cb[l];
                                    }
                                }
                                for (l, (&a, &b)) in
                                    chunks_a.remainder().iter().zip(chunks_b.remainder()).enumerate()
                                {
                                    acc[l] += a * b;
                                }
                            } else {
                                for (k, &b) in dout_row.iter().enumerate() {
                                    acc[k % 4] += in_row[sx0 + k * g.stride] * b;
                                }
                            }
                        }
                        dw[w_base + i * g.kw + j] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
                    }
                }
            }
        }
    }
    dw
}

/// 2x2 max pooling; returns pooled values and flat argmax indices
/// (first occurrence in row-major scan on ties).
pub(crate) fn maxpool2(src: &[f64], batch: usize, channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let ho = h / 2;
    let wo = w / 2;
    let mut out = vec![0.0; batch * channels * ho * wo];
    let mut arg = vec![0usize; out.len()];
    for nc in 0..batch * channels {
        let plane = &src[nc * h * w..(nc + 1) * h * w];
        let base = nc * ho * wo;
        for y in 0..ho {
            for x in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (2 * y + dy) * w + (2 * x + dx);
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[base + y * wo + x] = best;
                arg[base + y * wo + x] = nc * h * w + best_idx;
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbour upsampling by integer factor `r`.
pub(crate) fn upsample_nearest(src: &[f64], batch: usize, channels: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * channels * h * r * w * r];
    let wo = w * r;
    for nc in 0..batch * channels {
        let plane = &src[nc * h * w..(nc + 1) * h * w];
        let out_plane = &mut out[nc * h * r * wo..(nc + 1) * h * r * wo];
        for y in 0..h * r {
            let src_row = &plane[(y / r) * w..(y / r + 1) * w];
            let out_row = &mut out_plane[y * wo..(y + 1) * wo];
            for x in 0..wo {
                out_row[x] = src_row[x / r];
            }
        }
    }
    out
}

/// Periodic pixel shuffle: `[N, C*r^2, H, W] -> [N, C, rH, rW]` with
/// out(n, c, h, w) = in(n, C*r*(h mod r) + C*(w mod r) + c, h/r, w/r).
///
/// Returns the output-index -> input-index permutation for one sample so the
/// backward pass (and the inverse) is a table lookup.
pub(crate) fn pixel_shuffle_perm(c_out: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let ho = h * r;
    let wo = w * r;
    let mut perm = vec![0usize; c_out * ho * wo];
    for c in 0..c_out {
        for y in 0..ho {
            for x in 0..wo {
                let ci = c_out * r * (y % r) + c_out * (x % r) + c;
                let out_idx = c * ho * wo + y * wo + x;
                perm[out_idx] = ci * h * w + (y / r) * w + (x / r);
            }
        }
    }
    perm
}
