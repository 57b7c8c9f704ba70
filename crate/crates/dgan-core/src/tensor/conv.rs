//! 2-D convolution (cross-correlation) and patch extraction over `[C,H,W]`
//! feature maps.

use std::sync::Arc;

use super::{check_finite, BackwardFn, Tape, Tensor};
use crate::error::{Error, Result};

/// Output index range `lo..hi` such that `out*stride + offset` stays inside
/// `[0, size_in)`.
fn tap_range(size_in: usize, size_out: usize, stride: usize, offset: i64) -> (usize, usize) {
    let lo = if offset >= 0 { 0 } else { ((-offset) as usize).div_ceil(stride) };
    let top = size_in as i64 - 1 - offset;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(size_out);
    (lo.min(hi), hi)
}

fn conv_out_dim(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = size as i64 + 2 * pad as i64 - k as i64;
    if span < 0 || span as usize % stride != 0 {
        return Err(Error::shape(
            op,
            format!("input {size} with kernel {k}, stride {stride}, pad {pad} does not tile"),
        ));
    }
    Ok(span as usize / stride + 1)
}

impl Tape {
    /// Cross-correlation of `input` `[C,H,W]` with `kernels` `[F,C,kh,kw]`
    /// plus optional per-filter `bias` `[F]`. Kernel sides must be odd and
    /// the padded extent must tile exactly by `stride`.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor> {
        let [c_in, h, w] = match input.shape[..] {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be [C,H,W], got {:?}", input.shape),
                ))
            }
        };
        let [f_out, ck, kh, kw] = match kernels.shape[..] {
            [f, c, kh, kw] => [f, c, kh, kw],
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernels must be [F,C,kh,kw], got {:?}", kernels.shape),
                ))
            }
        };
        if ck != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel channels {ck} != input channels {c_in}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel {kh}x{kw} must be odd-sided")));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be >= 1".to_string()));
        }
        if let Some(b) = bias {
            if b.shape[..] != [f_out] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias must be [{f_out}], got {:?}", b.shape),
                ));
            }
        }
        let oh = conv_out_dim("conv2d", h, kh, stride, pad)?;
        let ow = conv_out_dim("conv2d", w, kw, stride, pad)?;

        let ind = Arc::clone(&input.data);
        let kd = Arc::clone(&kernels.data);
        let mut out = vec![0.0; f_out * oh * ow];
        if let Some(b) = bias {
            for f in 0..f_out {
                out[f * oh * ow..(f + 1) * oh * ow].fill(b.data[f]);
            }
        }
        for f in 0..f_out {
            for c in 0..c_in {
                for i in 0..kh {
                    let off_h = i as i64 - pad as i64;
                    let (row_lo, row_hi) = tap_range(h, oh, stride, off_h);
                    for j in 0..kw {
                        let off_w = j as i64 - pad as i64;
                        let (col_lo, col_hi) = tap_range(w, ow, stride, off_w);
                        let kv = kd[((f * c_in + c) * kh + i) * kw + j];
                        if kv == 0.0 {
                            continue;
                        }
                        for r in row_lo..row_hi {
                            let ih = (r as i64 * stride as i64 + off_h) as usize;
                            let in_row = c * h * w + ih * w;
                            let out_row = f * oh * ow + r * ow;
                            for q in col_lo..col_hi {
                                let iw = (q as i64 * stride as i64 + off_w) as usize;
                                out[out_row + q] += kv * ind[in_row + iw];
                            }
                        }
                    }
                }
            }
        }
        check_finite("conv2d", &out)?;

        let inputs = vec![input.node, kernels.node, bias.and_then(|b| b.node)];
        let input_tracked = input.node.is_some();
        let kernels_tracked = kernels.node.is_some();
        let bias_tracked = bias.map(|b| b.node.is_some()).unwrap_or(false);
        let backward = move || -> BackwardFn {
            Box::new(move |g| {
                let d_input = input_tracked.then(|| {
                    let mut di = vec![0.0; c_in * h * w];
                    for f in 0..f_out {
                        for c in 0..c_in {
                            for i in 0..kh {
                                let off_h = i as i64 - pad as i64;
                                let (row_lo, row_hi) = tap_range(h, oh, stride, off_h);
                                for j in 0..kw {
                                    let off_w = j as i64 - pad as i64;
                                    let (col_lo, col_hi) = tap_range(w, ow, stride, off_w);
                                    let kv = kd[((f * c_in + c) * kh + i) * kw + j];
                                    if kv == 0.0 {
                                        continue;
                                    }
                                    for r in row_lo..row_hi {
                                        let ih = (r as i64 * stride as i64 + off_h) as usize;
                                        let in_row = c * h * w + ih * w;
                                        let out_row = f * oh * ow + r * ow;
                                        for q in col_lo..col_hi {
                                            let iw =
                                                (q as i64 * stride as i64 + off_w) as usize;
                                            di[in_row + iw] += kv * g[out_row + q];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    di
                });
                let d_kernels = kernels_tracked.then(|| {
                    let mut dk = vec![0.0; f_out * c_in * kh * kw];
                    for f in 0..f_out {
                        for c in 0..c_in {
                            for i in 0..kh {
                                let off_h = i as i64 - pad as i64;
                                let (row_lo, row_hi) = tap_range(h, oh, stride, off_h);
                                for j in 0..kw {
                                    let off_w = j as i64 - pad as i64;
                                    let (col_lo, col_hi) = tap_range(w, ow, stride, off_w);
                                    let mut s = 0.0;
                                    for r in row_lo..row_hi {
                                        let ih = (r as i64 * stride as i64 + off_h) as usize;
                                        let in_row = c * h * w + ih * w;
                                        let out_row = f * oh * ow + r * ow;
                                        for q in col_lo..col_hi {
                                            let iw =
                                                (q as i64 * stride as i64 + off_w) as usize;
                                            s += ind[in_row + iw] * g[out_row + q];
                                        }
                                    }
                                    dk[((f * c_in + c) * kh + i) * kw + j] = s;
                                }
                            }
                        }
                    }
                    dk
                });
                let d_bias = bias_tracked.then(|| {
                    (0..f_out)
                        .map(|f| g[f * oh * ow..(f + 1) * oh * ow].iter().sum())
                        .collect()
                });
                vec![d_input, d_kernels, d_bias]
            })
        };
        Ok(self.emit(vec![f_out, oh, ow], out, inputs, backward))
    }

    /// `k`-by-`k` window of `input` `[C,H,W]` centered at pixel
    /// `(px, py)` = (column, row); out-of-bounds entries are zero. `k` odd.
    pub fn extract_patch(
        &mut self,
        input: &Tensor,
        px: i64,
        py: i64,
        k: usize,
    ) -> Result<Tensor> {
        let [c_in, h, w] = match input.shape[..] {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::shape(
                    "extract_patch",
                    format!("input must be [C,H,W], got {:?}", input.shape),
                ))
            }
        };
        if k % 2 == 0 {
            return Err(Error::shape("extract_patch", format!("k = {k} must be odd")));
        }
        let half = (k / 2) as i64;
        let mut out = vec![0.0; c_in * k * k];
        for c in 0..c_in {
            for r in 0..k {
                let ih = py - half + r as i64;
                if ih < 0 || ih >= h as i64 {
                    continue;
                }
                for q in 0..k {
                    let iw = px - half + q as i64;
                    if iw < 0 || iw >= w as i64 {
                        continue;
                    }
                    out[(c * k + r) * k + q] =
                        input.data[c * h * w + ih as usize * w + iw as usize];
                }
            }
        }
        let inputs = vec![input.node];
        Ok(self.emit(vec![c_in, k, k], out, inputs, move || {
            Box::new(move |g| {
                let mut di = vec![0.0; c_in * h * w];
                for c in 0..c_in {
                    for r in 0..k {
                        let ih = py - half + r as i64;
                        if ih < 0 || ih >= h as i64 {
                            continue;
                        }
                        for q in 0..k {
                            let iw = px - half + q as i64;
                            if iw < 0 || iw >= w as i64 {
                                continue;
                            }
                            di[c * h * w + ih as usize * w + iw as usize] +=
                                g[(c * k + r) * k + q];
                        }
                    }
                }
                vec![Some(di)]
            })
        }))
    }
}
