//! Orthonormal 2-D DCT-II and its inverse, applied separably as
//! `C_H · X · C_Wᵀ` on every trailing `H×W` plane.

use super::Tensor;
use crate::error::{Error, Result};

/// Orthonormal DCT-II basis: `C[k][i] = a_k cos(π (2i+1) k / 2n)`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let a0 = (1.0 / n as f64).sqrt();
    let ak = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let a = if k == 0 { a0 } else { ak };
        for i in 0..n {
            m[k * n + i] =
                a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

fn planes(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] | [_, h, w] if *h >= 1 && *w >= 1 => Ok((*h, *w)),
        s => Err(Error::shape(format!(
            "DCT expects an H×W or C×H×W tensor, got {s:?}"
        ))),
    }
}

/// `out = L · X · Rᵀ` per plane, with `transpose` selecting `Lᵀ · X · R`.
fn separable(x: &Tensor, left: &[f64], right: &[f64], transpose: bool) -> Result<Tensor> {
    let (h, w) = planes(x)?;
    let mut out = vec![0.0; x.len()];
    let mut tmp = vec![0.0; h * w];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        // tmp = L · X (or Lᵀ · X)
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h {
            for p in 0..h {
                let l = if transpose { left[p * h + r] } else { left[r * h + p] };
                for c in 0..w {
                    tmp[r * w + c] += l * src[p * w + c];
                }
            }
        }
        // dst = tmp · Rᵀ (or tmp · R)
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for p in 0..w {
                    let rv = if transpose { right[p * w + c] } else { right[c * w + p] };
                    acc += tmp[r * w + p] * rv;
                }
                dst[r * w + c] = acc;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Forward orthonormal 2-D DCT-II of every trailing `H×W` plane.
pub fn dct2(x: &Tensor) -> Result<Tensor> {
    let (h, w) = planes(x)?;
    separable(x, &dct_matrix(h), &dct_matrix(w), false)
}

/// Inverse of [`dct2`] (the orthonormal DCT-III).
pub fn idct2(x: &Tensor) -> Result<Tensor> {
    let (h, w) = planes(x)?;
    separable(x, &dct_matrix(h), &dct_matrix(w), true)
}
