//! Text-bridged RGB–IR fusion.
//!
//! Category text embeddings act as shared queries against each modality.
//! The two sigmoid response maps are split into consensus support
//! (`A_ir ⊙ A_rgb`) and discrepancy support (`A_ir ⊙ (1 − A_rgb)`), which
//! then recalibrate the IR features multiplicatively. The recalibrated IR
//! prior is aligned to the RGB channel space, gates the RGB features through
//! a spatial attention map, and is fused with them by a 3×3 convolution.
//!
//! Every stage is written once against the [`Tape`]; the plain-tensor
//! functions evaluate the same graph with constant leaves.

use serde::{Deserialize, Serialize};

use crate::autodiff::{gradcheck, tape_objective, GradCheckReport, Tape, Var, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How the `M_cat × HW` support maps collapse to one spatial map before
/// they modulate the IR channels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryReduce {
    #[default]
    Max,
    Mean,
}

impl CategoryReduce {
    pub fn apply(self, maps: &Tensor) -> Result<Tensor> {
        match self {
            CategoryReduce::Max => Ok(maps.max_rows()?.0),
            CategoryReduce::Mean => maps.mean_rows(),
        }
    }

    fn graph(self, tape: &mut Tape, maps: Var) -> Result<Var> {
        match self {
            CategoryReduce::Max => tape.max_rows(maps),
            CategoryReduce::Mean => tape.mean_rows(maps),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextEmbeddings {
    embeddings: Tensor,
    names: Vec<String>,
}

impl TextEmbeddings {
    pub fn new(embeddings: Tensor, names: Vec<String>) -> Result<Self> {
        let (m, _) = embeddings.dims2()?;
        if m == 0 {
            return Err(Error::param("at least one category embedding is required"));
        }
        if names.len() != m {
            return Err(Error::shape(format!("{} names for {m} embeddings", names.len())));
        }
        if !embeddings.is_finite() {
            return Err(Error::param("text embeddings contain non-finite values"));
        }
        Ok(Self { embeddings, names })
    }

    /// Fixed random unit-variance embeddings named `class0`, `class1`, ...
    pub fn random(categories: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let names = (0..categories).map(|i| format!("class{i}")).collect();
        Self::new(Tensor::randn(&[categories, dim], 1.0, rng), names)
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn categories(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }
}

/// Channel and projection sizes of one fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub c_rgb: usize,
    pub c_ir: usize,
    pub d_t: usize,
    pub d_k: usize,
}

/// Learnable weights of the fusion block.
#[derive(Debug, Clone)]
pub struct FusionParams {
    /// `d_t × d_k` text query projection.
    pub w_q: Tensor,
    /// `d_k × C_rgb × 1 × 1` RGB key projection.
    pub w_k_rgb: Tensor,
    /// `d_k × C_ir × 1 × 1` IR key projection.
    pub w_k_ir: Tensor,
    /// Gain on discrepancy support.
    pub alpha: f64,
    /// Gain on consensus support.
    pub beta: f64,
    /// `C_rgb × C_ir × 1 × 1` channel alignment.
    pub psi: Tensor,
    /// `1 × C_rgb × 1 × 1` attention logits.
    pub phi: Tensor,
    /// `C_rgb × 2·C_rgb × 3 × 3` fusion convolution.
    pub fuse_kernel: Tensor,
    pub reduce: CategoryReduce,
}

pub const ALPHA_INIT: f64 = 0.5;
pub const BETA_INIT: f64 = 0.5;

impl FusionParams {
    /// Gaussian weights scaled by `1/√fan_in`, `α = β = 0.5`.
    pub fn init(dims: FusionDims, rng: &mut Rng) -> Result<Self> {
        let FusionDims { c_rgb, c_ir, d_t, d_k } = dims;
        if [c_rgb, c_ir, d_t, d_k].contains(&0) {
            return Err(Error::param(format!("all fusion dimensions must be ≥ 1: {dims:?}")));
        }
        let std = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            w_q: Tensor::randn(&[d_t, d_k], std(d_t), rng),
            w_k_rgb: Tensor::randn(&[d_k, c_rgb, 1, 1], std(c_rgb), rng),
            w_k_ir: Tensor::randn(&[d_k, c_ir, 1, 1], std(c_ir), rng),
            alpha: ALPHA_INIT,
            beta: BETA_INIT,
            psi: Tensor::randn(&[c_rgb, c_ir, 1, 1], std(c_ir), rng),
            phi: Tensor::randn(&[1, c_rgb, 1, 1], std(c_rgb), rng),
            fuse_kernel: Tensor::randn(&[c_rgb, 2 * c_rgb, 3, 3], std(18 * c_rgb), rng),
            reduce: CategoryReduce::Max,
        })
    }

    pub fn d_k(&self) -> usize {
        self.w_q.shape().get(1).copied().unwrap_or(0)
    }

    /// Place every learnable tensor on `tape` as a named parameter.
    pub fn record(&self, tape: &mut Tape) -> FusionVars {
        FusionVars {
            w_q: tape.param("w_q", self.w_q.clone()),
            w_k_rgb: tape.param("w_k_rgb", self.w_k_rgb.clone()),
            w_k_ir: tape.param("w_k_ir", self.w_k_ir.clone()),
            alpha: tape.param("alpha", Tensor::scalar(self.alpha)),
            beta: tape.param("beta", Tensor::scalar(self.beta)),
            psi: tape.param("psi", self.psi.clone()),
            phi: tape.param("phi", self.phi.clone()),
            fuse_kernel: tape.param("fuse_kernel", self.fuse_kernel.clone()),
            reduce: self.reduce,
        }
    }
}

/// [`FusionParams`] as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub w_q: Var,
    pub w_k_rgb: Var,
    pub w_k_ir: Var,
    pub alpha: Var,
    pub beta: Var,
    pub psi: Var,
    pub phi: Var,
    pub fuse_kernel: Var,
    pub reduce: CategoryReduce,
}

/// Response maps and their consensus / discrepancy split, all `M_cat × HW`.
#[derive(Debug, Clone)]
pub struct SupportMaps {
    pub a_rgb: Tensor,
    pub a_ir: Tensor,
    pub m_cons: Tensor,
    pub m_dis: Tensor,
}

#[derive(Debug, Clone)]
pub struct FusedFeatures {
    pub x_tilde_ir: Tensor,
    pub x_tilde_ir_align: Tensor,
    /// `1 × H × W` gate in (0, 1).
    pub w_att: Tensor,
    pub x_hat_rgb: Tensor,
    pub f_fuse: Tensor,
}

/// Tape nodes produced by [`guide_and_fuse_graph`].
#[derive(Debug, Clone, Copy)]
pub struct GuideVars {
    pub x_tilde_ir_align: Var,
    pub w_att: Var,
    pub x_hat_rgb: Var,
    pub f_fuse: Var,
}

/// Tape nodes produced by [`fuse_forward_graph`].
#[derive(Debug, Clone, Copy)]
pub struct FusionGraph {
    pub a_rgb: Var,
    pub a_ir: Var,
    pub m_cons: Var,
    pub m_dis: Var,
    pub x_tilde_ir: Var,
    pub guide: GuideVars,
}

/// `σ(Q Kᵀ / √d_k)` with `Q = T W_q` and `K` the 1×1 projection of `x`.
pub fn semantic_response_graph(
    tape: &mut Tape,
    x: Var,
    text: Var,
    w_q: Var,
    w_k: Var,
) -> Result<Var> {
    let d_k = tape.value(w_q).dims2()?.1;
    let k_out = tape.value(w_k).shape()[0];
    if k_out != d_k {
        return Err(Error::shape(format!(
            "key projection has {k_out} outputs, query projection has d_k = {d_k}"
        )));
    }
    let (_, h, w) = tape.value(x).dims3()?;
    let q = tape.matmul(text, w_q)?;
    let keys = tape.conv2d(x, w_k, 0)?;
    // d_k × HW, i.e. Kᵀ for K of shape HW × d_k.
    let keys_t = tape.reshape(keys, &[d_k, h * w])?;
    let logits = tape.matmul(q, keys_t)?;
    let scaled = tape.scale(logits, 1.0 / (d_k as f64).sqrt());
    Ok(tape.sigmoid(scaled))
}

pub fn semantic_response(x: &Tensor, text: &Tensor, w_q: &Tensor, w_k: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = [x, text, w_q, w_k].map(|t| tape.constant(t.clone()));
    let a = semantic_response_graph(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    Ok(tape.value(a).clone())
}

/// `(M_cons, M_dis) = (A_ir ⊙ A_rgb, A_ir ⊙ (1 − A_rgb))`.
pub fn bi_support_graph(tape: &mut Tape, a_ir: Var, a_rgb: Var) -> Result<(Var, Var)> {
    let cons = tape.mul(a_ir, a_rgb)?;
    let complement = tape.one_minus(a_rgb);
    let dis = tape.mul(a_ir, complement)?;
    Ok((cons, dis))
}

pub fn bi_support(a_ir: &Tensor, a_rgb: &Tensor) -> Result<SupportMaps> {
    let mut tape = Tape::new();
    let ir = tape.constant(a_ir.clone());
    let rgb = tape.constant(a_rgb.clone());
    let (cons, dis) = bi_support_graph(&mut tape, ir, rgb)?;
    Ok(SupportMaps {
        a_rgb: a_rgb.clone(),
        a_ir: a_ir.clone(),
        m_cons: tape.value(cons).clone(),
        m_dis: tape.value(dis).clone(),
    })
}

/// `X_ir ⊙ (1 + β m_cons) ⊙ (1 + α m_dis)` with the support maps reduced
/// over categories and broadcast over channels.
pub fn recalibrate_graph(
    tape: &mut Tape,
    x_ir: Var,
    m_cons: Var,
    m_dis: Var,
    alpha: Var,
    beta: Var,
    reduce: CategoryReduce,
) -> Result<Var> {
    let (_, h, w) = tape.value(x_ir).dims3()?;
    for m in [m_cons, m_dis] {
        let (_, hw) = tape.value(m).dims2()?;
        if hw != h * w {
            return Err(Error::shape(format!(
                "support map covers {hw} positions, IR features have {h}×{w}"
            )));
        }
    }
    let gain = |tape: &mut Tape, map: Var, coef: Var| -> Result<Var> {
        let reduced = reduce.graph(tape, map)?;
        let weighted = tape.mul_scalar(reduced, coef)?;
        let shifted = tape.add_const(weighted, 1.0);
        tape.reshape(shifted, &[h, w])
    };
    let cons_gain = gain(tape, m_cons, beta)?;
    let dis_gain = gain(tape, m_dis, alpha)?;
    let partial = tape.mul_spatial(x_ir, cons_gain)?;
    tape.mul_spatial(partial, dis_gain)
}

pub fn recalibrate(
    x_ir: &Tensor,
    maps: &SupportMaps,
    alpha: f64,
    beta: f64,
    reduce: CategoryReduce,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(x_ir.clone());
    let cons = tape.constant(maps.m_cons.clone());
    let dis = tape.constant(maps.m_dis.clone());
    let a = tape.scalar(alpha);
    let b = tape.scalar(beta);
    let out = recalibrate_graph(&mut tape, x, cons, dis, a, b, reduce)?;
    Ok(tape.value(out).clone())
}

/// Align the recalibrated IR prior to RGB channels, gate RGB with a
/// sigmoid spatial map and fuse both with a padded 3×3 convolution.
pub fn guide_and_fuse_graph(
    tape: &mut Tape,
    x_rgb: Var,
    x_tilde_ir: Var,
    psi: Var,
    phi: Var,
    fuse_kernel: Var,
) -> Result<GuideVars> {
    let (_, h, w) = tape.value(x_rgb).dims3()?;
    let (_, hi, wi) = tape.value(x_tilde_ir).dims3()?;
    if (h, w) != (hi, wi) {
        return Err(Error::shape(format!(
            "RGB features are {h}×{w}, IR features are {hi}×{wi}"
        )));
    }
    let align = tape.conv2d(x_tilde_ir, psi, 0)?;
    let logits = tape.conv2d(align, phi, 0)?;
    let w_att = tape.sigmoid(logits);
    let gate = tape.reshape(w_att, &[h, w])?;
    let x_hat = tape.mul_spatial(x_rgb, gate)?;
    let stacked = tape.concat_channels(&[x_hat, align])?;
    let f_fuse = tape.conv2d(stacked, fuse_kernel, 1)?;
    Ok(GuideVars {
        x_tilde_ir_align: align,
        w_att,
        x_hat_rgb: x_hat,
        f_fuse,
    })
}

pub fn guide_and_fuse(
    x_rgb: &Tensor,
    x_tilde_ir: &Tensor,
    params: &FusionParams,
) -> Result<FusedFeatures> {
    let mut tape = Tape::new();
    let rgb = tape.constant(x_rgb.clone());
    let ir = tape.constant(x_tilde_ir.clone());
    let psi = tape.constant(params.psi.clone());
    let phi = tape.constant(params.phi.clone());
    let fuse = tape.constant(params.fuse_kernel.clone());
    let g = guide_and_fuse_graph(&mut tape, rgb, ir, psi, phi, fuse)?;
    Ok(FusedFeatures {
        x_tilde_ir: x_tilde_ir.clone(),
        x_tilde_ir_align: tape.value(g.x_tilde_ir_align).clone(),
        w_att: tape.value(g.w_att).clone(),
        x_hat_rgb: tape.value(g.x_hat_rgb).clone(),
        f_fuse: tape.value(g.f_fuse).clone(),
    })
}

/// Full block: responses, bi-support, recalibration, guidance and fusion.
pub fn fuse_forward_graph(
    tape: &mut Tape,
    x_rgb: Var,
    x_ir: Var,
    text: Var,
    p: &FusionVars,
) -> Result<FusionGraph> {
    let a_rgb = semantic_response_graph(tape, x_rgb, text, p.w_q, p.w_k_rgb)?;
    let a_ir = semantic_response_graph(tape, x_ir, text, p.w_q, p.w_k_ir)?;
    let (m_cons, m_dis) = bi_support_graph(tape, a_ir, a_rgb)?;
    let x_tilde_ir = recalibrate_graph(tape, x_ir, m_cons, m_dis, p.alpha, p.beta, p.reduce)?;
    let guide = guide_and_fuse_graph(tape, x_rgb, x_tilde_ir, p.psi, p.phi, p.fuse_kernel)?;
    Ok(FusionGraph {
        a_rgb,
        a_ir,
        m_cons,
        m_dis,
        x_tilde_ir,
        guide,
    })
}

/// Support maps together with the fused features of one forward pass.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub maps: SupportMaps,
    pub fused: FusedFeatures,
}

pub fn fuse_forward_traced(
    x_rgb: &Tensor,
    x_ir: &Tensor,
    text: &TextEmbeddings,
    params: &FusionParams,
) -> Result<FusionTrace> {
    let mut tape = Tape::new();
    let rgb = tape.constant(x_rgb.clone());
    let ir = tape.constant(x_ir.clone());
    let t = tape.constant(text.embeddings().clone());
    let vars = params.record(&mut tape);
    let g = fuse_forward_graph(&mut tape, rgb, ir, t, &vars)?;
    let v = |var: Var| tape.value(var).clone();
    Ok(FusionTrace {
        maps: SupportMaps {
            a_rgb: v(g.a_rgb),
            a_ir: v(g.a_ir),
            m_cons: v(g.m_cons),
            m_dis: v(g.m_dis),
        },
        fused: FusedFeatures {
            x_tilde_ir: v(g.x_tilde_ir),
            x_tilde_ir_align: v(g.guide.x_tilde_ir_align),
            w_att: v(g.guide.w_att),
            x_hat_rgb: v(g.guide.x_hat_rgb),
            f_fuse: v(g.guide.f_fuse),
        },
    })
}

pub fn fuse_forward(
    x_rgb: &Tensor,
    x_ir: &Tensor,
    text: &TextEmbeddings,
    params: &FusionParams,
) -> Result<FusedFeatures> {
    Ok(fuse_forward_traced(x_rgb, x_ir, text, params)?.fused)
}

/// Random problem used by the gradient suite and the CLI.
#[derive(Debug, Clone)]
pub struct FusionProblem {
    pub x_rgb: Tensor,
    pub x_ir: Tensor,
    pub text: TextEmbeddings,
    pub params: FusionParams,
}

impl FusionProblem {
    pub fn random(
        dims: FusionDims,
        categories: usize,
        height: usize,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let params = FusionParams::init(dims, rng)?;
        let text = TextEmbeddings::random(categories, dims.d_t, rng)?;
        Ok(Self {
            x_rgb: Tensor::randn(&[dims.c_rgb, height, width], 1.0, rng),
            x_ir: Tensor::randn(&[dims.c_ir, height, width], 1.0, rng),
            text,
            params,
        })
    }
}

/// Finite-difference check of `∂ Σ F_fuse` with respect to every learnable
/// tensor of the block.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed);
    let dims = FusionDims {
        c_rgb: 3,
        c_ir: 2,
        d_t: 4,
        d_k: 3,
    };
    let prob = FusionProblem::random(dims, 2, 4, 4, &mut rng)?;
    let p = &prob.params;
    let params: Vec<(String, Tensor)> = vec![
        ("alpha".into(), Tensor::scalar(p.alpha)),
        ("beta".into(), Tensor::scalar(p.beta)),
        ("w_q".into(), p.w_q.clone()),
        ("w_k_rgb".into(), p.w_k_rgb.clone()),
        ("w_k_ir".into(), p.w_k_ir.clone()),
        ("psi".into(), p.psi.clone()),
        ("phi".into(), p.phi.clone()),
        ("fuse_kernel".into(), p.fuse_kernel.clone()),
    ];
    let names = params.iter().map(|(n, _)| n.clone()).collect();
    let reduce = p.reduce;
    let f = tape_objective(names, |tape, v| {
        let rgb = tape.constant(prob.x_rgb.clone());
        let ir = tape.constant(prob.x_ir.clone());
        let t = tape.constant(prob.text.embeddings().clone());
        let vars = FusionVars {
            alpha: v[0],
            beta: v[1],
            w_q: v[2],
            w_k_rgb: v[3],
            w_k_ir: v[4],
            psi: v[5],
            phi: v[6],
            fuse_kernel: v[7],
            reduce,
        };
        let g = fuse_forward_graph(tape, rgb, ir, t, &vars)?;
        Ok(tape.sum(g.guide.f_fuse))
    });
    gradcheck(&params, DEFAULT_STEP, &f)
}
