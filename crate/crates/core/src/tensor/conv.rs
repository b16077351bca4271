//! Direct 2-D cross-correlation with zero padding.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, kernel: &Tensor, padding: usize, depthwise: bool) -> Result<Self> {
        let (c_in, h, w) = x.dims3()?;
        let [c_out, kc, kh, kw] = kernel.shape()[..] else {
            return Err(Error::shape(format!(
                "conv kernel must be rank 4, got {:?}",
                kernel.shape()
            )));
        };
        if kh != kw {
            return Err(Error::param(format!("conv kernel must be square, got {kh}×{kw}")));
        }
        if kh % 2 == 0 {
            return Err(Error::param(format!("conv kernel size must be odd, got {kh}")));
        }
        if depthwise {
            if kc != 1 || c_out != c_in {
                return Err(Error::shape(format!(
                    "depthwise kernel {:?} does not fit {c_in} channels",
                    kernel.shape()
                )));
            }
        } else if kc != c_in {
            return Err(Error::shape(format!(
                "conv kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        let h_pad = h + 2 * padding;
        let w_pad = w + 2 * padding;
        if h_pad < kh || w_pad < kh {
            return Err(Error::shape(format!(
                "conv output would be empty: {h}×{w} input, kernel {kh}, padding {padding}"
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            pad: padding,
            h_out: h_pad - kh + 1,
            w_out: w_pad - kh + 1,
        })
    }

    /// Input coordinate for output row/col `o` and kernel tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, pad: usize, size: usize) -> Option<usize> {
        (o + t).checked_sub(pad).filter(|&i| i < size)
    }
}

/// `out[o][y][x] = Σ_c Σ_dy Σ_dx kernel[o][c][dy][dx] · x[c][y+dy−p][x+dx−p]`.
pub fn conv2d(x: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, kernel, padding, false)?;
    let mut out = vec![0.0; g.c_out * g.h_out * g.w_out];
    let xd = x.data();
    let kd = kernel.data();
    for o in 0..g.c_out {
        let dst = &mut out[o * g.h_out * g.w_out..(o + 1) * g.h_out * g.w_out];
        for c in 0..g.c_in {
            let plane = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
            let taps = &kd[(o * g.c_in + c) * g.k * g.k..(o * g.c_in + c + 1) * g.k * g.k];
            accumulate_plane(dst, plane, taps, &g);
        }
    }
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out)
}

/// Per-channel convolution with a `C×1×k×k` kernel.
pub fn depthwise_conv2d(x: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, kernel, padding, true)?;
    let mut out = vec![0.0; g.c_out * g.h_out * g.w_out];
    let xd = x.data();
    let kd = kernel.data();
    for c in 0..g.c_in {
        let dst = &mut out[c * g.h_out * g.w_out..(c + 1) * g.h_out * g.w_out];
        let plane = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
        let taps = &kd[c * g.k * g.k..(c + 1) * g.k * g.k];
        accumulate_plane(dst, plane, taps, &g);
    }
    Tensor::new(&[g.c_out, g.h_out, g.w_out], out)
}

fn accumulate_plane(dst: &mut [f64], plane: &[f64], taps: &[f64], g: &ConvGeom) {
    for y in 0..g.h_out {
        for dy in 0..g.k {
            let Some(sy) = ConvGeom::src(y, dy, g.pad, g.h) else {
                continue;
            };
            for xo in 0..g.w_out {
                let mut acc = 0.0;
                for dx in 0..g.k {
                    if let Some(sx) = ConvGeom::src(xo, dx, g.pad, g.w) {
                        acc += taps[dy * g.k + dx] * plane[sy * g.w + sx];
                    }
                }
                dst[y * g.w_out + xo] += acc;
            }
        }
    }
}

/// Gradients of `conv2d` (or `depthwise_conv2d`) with respect to its input
/// and kernel, given the upstream gradient of the output.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    kernel: &Tensor,
    padding: usize,
    upstream: &Tensor,
    depthwise: bool,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::new(x, kernel, padding, depthwise)?;
    let xd = x.data();
    let kd = kernel.data();
    let ud = upstream.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gk = vec![0.0; kd.len()];
    let kk = g.k * g.k;
    for o in 0..g.c_out {
        let channels: Box<dyn Iterator<Item = usize>> = if depthwise {
            Box::new(std::iter::once(o))
        } else {
            Box::new(0..g.c_in)
        };
        for c in channels {
            let kbase = if depthwise { o * kk } else { (o * g.c_in + c) * kk };
            for y in 0..g.h_out {
                for xo in 0..g.w_out {
                    let u = ud[(o * g.h_out + y) * g.w_out + xo];
                    if u == 0.0 {
                        continue;
                    }
                    for dy in 0..g.k {
                        let Some(sy) = ConvGeom::src(y, dy, g.pad, g.h) else {
                            continue;
                        };
                        for dx in 0..g.k {
                            let Some(sx) = ConvGeom::src(xo, dx, g.pad, g.w) else {
                                continue;
                            };
                            let xi = (c * g.h + sy) * g.w + sx;
                            let ki = kbase + dy * g.k + dx;
                            gx[xi] += u * kd[ki];
                            gk[ki] += u * xd[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), gx)?,
        Tensor::new(kernel.shape(), gk)?,
    ))
}
