//! The two comparison fusion paradigms: vanilla direct RGB–IR spatial
//! cross-attention over the full `HW × HW` field, and FiLM-style
//! conditional prompt modulation of its response by text-derived
//! channel gains.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv2d, MatmulHook, NoHook, Tensor};

#[derive(Debug, Clone)]
pub struct BaselineParams {
    /// `d_k × C_ir × 1 × 1` queries from the IR stream.
    pub w_q: Tensor,
    /// `d_k × C_rgb × 1 × 1` keys from the RGB stream.
    pub w_k: Tensor,
    /// `C_ir × C_rgb × 1 × 1` values from the RGB stream.
    pub w_v: Tensor,
    /// Prompt MLP `d_t → d_t/2`, row-vector convention.
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    /// Prompt MLP `d_t/2 → 2·C_ir`; first half is γ_p, second half β_p.
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

impl BaselineParams {
    pub fn init(c_rgb: usize, c_ir: usize, d_k: usize, d_t: usize, rng: &mut Rng) -> Result<Self> {
        if c_rgb == 0 || c_ir == 0 || d_k == 0 {
            return Err(Error::param("baseline channel widths must be ≥ 1"));
        }
        if d_t < 2 {
            return Err(Error::param(format!("prompt MLP needs d_t ≥ 2, got {d_t}")));
        }
        let hidden = d_t / 2;
        let s = |n: usize| 1.0 / (n as f64).sqrt();
        Ok(Self {
            w_q: Tensor::randn(&[d_k, c_ir, 1, 1], s(c_ir), rng),
            w_k: Tensor::randn(&[d_k, c_rgb, 1, 1], s(c_rgb), rng),
            w_v: Tensor::randn(&[c_ir, c_rgb, 1, 1], s(c_rgb), rng),
            mlp_w1: Tensor::randn(&[d_t, hidden], s(d_t), rng),
            mlp_b1: Tensor::zeros(&[hidden]),
            mlp_w2: Tensor::randn(&[hidden, 2 * c_ir], s(hidden), rng),
            mlp_b2: Tensor::zeros(&[2 * c_ir]),
        })
    }

    /// Zero every prompt MLP weight and bias.
    pub fn zero_prompt(&mut self) {
        for t in [&mut self.mlp_w1, &mut self.mlp_b1, &mut self.mlp_w2, &mut self.mlp_b2] {
            *t = Tensor::zeros(t.shape());
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirectFusion {
    /// `HW × HW`; entry `(i, j)` scores IR query `i` against RGB key `j`.
    pub attention: Tensor,
    /// `C_ir × H × W`.
    pub response: Tensor,
}

pub fn vanilla_direct_fuse(x_rgb: &Tensor, x_ir: &Tensor, params: &BaselineParams) -> Result<DirectFusion> {
    vanilla_direct_fuse_counted(x_rgb, x_ir, params, &mut NoHook)
}

/// As [`vanilla_direct_fuse`], reporting the score and aggregation
/// matmuls to `hook`.
pub fn vanilla_direct_fuse_counted(
    x_rgb: &Tensor,
    x_ir: &Tensor,
    params: &BaselineParams,
    hook: &mut dyn MatmulHook,
) -> Result<DirectFusion> {
    let (_, h, w) = x_rgb.dims3()?;
    let (_, hi, wi) = x_ir.dims3()?;
    if (h, w) != (hi, wi) {
        return Err(Error::shape(format!(
            "RGB field is {h}×{w} but IR field is {hi}×{wi}"
        )));
    }
    let n = h * w;
    let q = conv2d(x_ir, &params.w_q, 0)?;
    let k = conv2d(x_rgb, &params.w_k, 0)?;
    let v = conv2d(x_rgb, &params.w_v, 0)?;
    let (d_k, _, _) = q.dims3()?;
    let (d_kk, _, _) = k.dims3()?;
    if d_k != d_kk {
        return Err(Error::shape(format!("query width {d_k} vs key width {d_kk}")));
    }
    let (c_v, _, _) = v.dims3()?;
    let q_t = q.reshape(&[d_k, n])?.transpose()?;
    let attention = q_t
        .matmul_with(&k.reshape(&[d_k, n])?, hook)?
        .scale(1.0 / (d_k as f64).sqrt())
        .sigmoid();
    let response = v
        .reshape(&[c_v, n])?
        .matmul_with(&attention.transpose()?, hook)?
        .reshape(&[c_v, h, w])?;
    Ok(DirectFusion { attention, response })
}

/// `[γ_p, β_p] = MLP(mean_rows(T))`.
pub fn prompt_modulation(text: &Tensor, params: &BaselineParams) -> Result<(Tensor, Tensor)> {
    let (_, d_t) = text.dims2()?;
    if params.mlp_w1.shape().first() != Some(&d_t) {
        return Err(Error::shape(format!(
            "text width {d_t} does not match prompt MLP input {:?}",
            params.mlp_w1.shape()
        )));
    }
    let pooled = text.mean_rows()?.reshape(&[1, d_t])?;
    let hidden = pooled.matmul(&params.mlp_w1)?;
    let hidden = hidden.add(&params.mlp_b1.reshape(hidden.shape())?)?.gelu();
    let out = hidden.matmul(&params.mlp_w2)?;
    let out = out.add(&params.mlp_b2.reshape(out.shape())?)?;
    let c = out.len() / 2;
    let gamma = Tensor::new(&[c], out.data()[..c].to_vec())?;
    let beta = Tensor::new(&[c], out.data()[c..].to_vec())?;
    Ok((gamma, beta))
}

/// `F_mod = (1 + γ_p) ⊙ R + β_p`, channel-wise.
pub fn conditional_prompt_fuse(response: &Tensor, text: &Tensor, params: &BaselineParams) -> Result<Tensor> {
    let (c, h, w) = response.dims3()?;
    let (gamma, beta) = prompt_modulation(text, params)?;
    if gamma.len() != c {
        return Err(Error::shape(format!(
            "prompt MLP emits {} channel gains for a {c}-channel response",
            gamma.len()
        )));
    }
    let hw = h * w;
    let mut out = response.clone();
    for (ch, plane) in out.data_mut().chunks_mut(hw.max(1)).enumerate().take(c) {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for v in plane {
            *v = (1.0 + g) * *v + b;
        }
    }
    Ok(out)
}
