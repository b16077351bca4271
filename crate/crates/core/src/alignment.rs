//! Bidirectional vision–text alignment and the region–text matching head.
//!
//! Text-to-vision: category queries attend over the fused feature field
//! with a spatial softmax and read out a context vector per category.
//! Vision-to-text: per-scale pooled descriptors form a visual token matrix
//! that updates the text embeddings through residual cross-attention.
//! Classification matches projected region features against the updated
//! text by cosine similarity, trained with a temperature-scaled contrastive
//! loss.

use crate::autodiff::{gradcheck, tape_objective, GradCheckReport, Tape, Var, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{conv2d, Tensor};

/// Shared embedding width of the matching head.
pub const D_EMBED: usize = 512;
/// Initial contrastive temperature.
pub const TAU_INIT: f64 = 0.07;

#[derive(Debug, Clone)]
pub struct AlignmentParams {
    /// `d_t × d` text queries for text→vision attention.
    pub w_qt: Tensor,
    /// `d × C × 1 × 1` visual keys.
    pub w_kv: Tensor,
    /// `C × C × 1 × 1` visual values.
    pub w_vv: Tensor,
    /// `d_t × d` text queries for the text update.
    pub w_qu: Tensor,
    /// `C × d` keys from the visual token.
    pub w_ku: Tensor,
    /// `C × d_t` values from the visual token.
    pub w_vu: Tensor,
    /// Optional per-scale `C_i × C` projections applied after pooling.
    pub scale_proj: Vec<Tensor>,
}

impl AlignmentParams {
    pub fn init(d_t: usize, channels: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        if d_t == 0 || channels == 0 || d == 0 {
            return Err(Error::param("alignment dimensions must be ≥ 1"));
        }
        let s = |n: usize| 1.0 / (n as f64).sqrt();
        Ok(Self {
            w_qt: Tensor::randn(&[d_t, d], s(d_t), rng),
            w_kv: Tensor::randn(&[d, channels, 1, 1], s(channels), rng),
            w_vv: Tensor::randn(&[channels, channels, 1, 1], s(channels), rng),
            w_qu: Tensor::randn(&[d_t, d], s(d_t), rng),
            w_ku: Tensor::randn(&[channels, d], s(channels), rng),
            w_vu: Tensor::randn(&[channels, d_t], s(channels), rng),
            scale_proj: Vec::new(),
        })
    }

    /// Shared attention width `d`.
    pub fn d(&self) -> usize {
        self.w_qt.shape().get(1).copied().unwrap_or(0)
    }
}

/// Output of text→vision attention.
#[derive(Debug, Clone)]
pub struct TextToVision {
    /// `N_c × HW`, rows sum to one.
    pub attention: Tensor,
    /// `N_c × C` attended visual evidence per category.
    pub context: Tensor,
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what} has width {got}, expected {want}")));
    }
    Ok(())
}

pub fn text_to_vision_attend(
    text: &Tensor,
    f_fuse: &Tensor,
    params: &AlignmentParams,
) -> Result<TextToVision> {
    let (_, d_t) = text.dims2()?;
    let (c, h, w) = f_fuse.dims3()?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::shape("visual field is empty"));
    }
    let d = params.d();
    check_width("text", d_t, params.w_qt.shape()[0])?;
    check_width("key projection", params.w_kv.shape()[0], d)?;
    let q = text.matmul(&params.w_qt)?;
    let keys_t = conv2d(f_fuse, &params.w_kv, 0)?.reshape(&[d, hw])?;
    let values = conv2d(f_fuse, &params.w_vv, 0)?;
    let (cv, _, _) = values.dims3()?;
    check_width("value projection", cv, c)?;
    let attention = q
        .matmul(&keys_t)?
        .scale(1.0 / (d as f64).sqrt())
        .softmax_rows()?;
    let context = attention.matmul(&values.reshape(&[cv, hw])?.transpose()?)?;
    Ok(TextToVision { attention, context })
}

/// `L × C` matrix of per-scale channel means.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualToken {
    pub u: Tensor,
}

pub fn build_visual_token(pyramid: &[Tensor]) -> Result<VisualToken> {
    let first = pyramid
        .first()
        .ok_or_else(|| Error::param("visual token needs at least one pyramid level"))?;
    let (c, _, _) = first.dims3()?;
    let mut rows = Vec::with_capacity(pyramid.len() * c);
    for (i, level) in pyramid.iter().enumerate() {
        let pooled = level.global_avg_pool()?;
        if pooled.len() != c {
            return Err(Error::shape(format!(
                "pyramid level {i} has {} channels, level 0 has {c}; project first",
                pooled.len()
            )));
        }
        rows.extend_from_slice(pooled.data());
    }
    Ok(VisualToken {
        u: Tensor::new(&[pyramid.len(), c], rows)?,
    })
}

/// Pool each level, then map its `C_i` channels to the common width with
/// the matching `C_i × C` projection. Pooling commutes with a 1×1
/// projection, so this equals projecting first and pooling after.
pub fn build_visual_token_projected(pyramid: &[Tensor], projections: &[Tensor]) -> Result<VisualToken> {
    if pyramid.is_empty() {
        return Err(Error::param("visual token needs at least one pyramid level"));
    }
    if projections.len() != pyramid.len() {
        return Err(Error::shape(format!(
            "{} projections for {} pyramid levels",
            projections.len(),
            pyramid.len()
        )));
    }
    let mut rows = Vec::new();
    let mut width = None;
    for (level, proj) in pyramid.iter().zip(projections) {
        let pooled = level.global_avg_pool()?;
        let n = pooled.len();
        let row = pooled.reshape(&[1, n])?.matmul(proj)?;
        let c = row.len();
        if *width.get_or_insert(c) != c {
            return Err(Error::shape("per-scale projections disagree on output width"));
        }
        rows.extend_from_slice(row.data());
    }
    Ok(VisualToken {
        u: Tensor::new(&[pyramid.len(), width.unwrap_or(0)], rows)?,
    })
}

/// `T̃ = T + softmax(Q Kᵀ / √d) V` with queries from `T` and keys/values
/// from the visual token.
pub fn update_text(text: &Tensor, token: &VisualToken, params: &AlignmentParams) -> Result<Tensor> {
    let (_, d_t) = text.dims2()?;
    let (_, c) = token.u.dims2()?;
    check_width("text", d_t, params.w_qu.shape()[0])?;
    check_width("visual token", c, params.w_ku.shape()[0])?;
    check_width("value projection output", params.w_vu.shape()[1], d_t)?;
    let q = text.matmul(&params.w_qu)?;
    let k = token.u.matmul(&params.w_ku)?;
    check_width("key projection", k.shape()[1], q.shape()[1])?;
    let v = token.u.matmul(&params.w_vu)?;
    let d = q.shape()[1] as f64;
    let attn = q.matmul(&k.transpose()?)?.scale(1.0 / d.sqrt()).softmax_rows()?;
    text.add(&attn.matmul(&v)?)
}

/// Projections into the shared embedding space plus the temperature.
#[derive(Debug, Clone)]
pub struct MatchingHead {
    /// `d_r × d_embed`.
    pub proj_v: Tensor,
    /// `d_t × d_embed`.
    pub proj_t: Tensor,
    pub tau: f64,
}

impl MatchingHead {
    pub fn init(d_r: usize, d_t: usize, d_embed: usize, rng: &mut Rng) -> Result<Self> {
        if d_r == 0 || d_t == 0 || d_embed == 0 {
            return Err(Error::param("matching head dimensions must be ≥ 1"));
        }
        Ok(Self {
            proj_v: Tensor::randn(&[d_r, d_embed], 1.0 / (d_r as f64).sqrt(), rng),
            proj_t: Tensor::randn(&[d_t, d_embed], 1.0 / (d_t as f64).sqrt(), rng),
            tau: TAU_INIT,
        })
    }
}

fn normalize_named(tape: &mut Tape, x: Var, what: &str) -> Result<Var> {
    let (_, c) = tape.value(x).dims2()?;
    for (i, row) in tape.value(x).data().chunks(c).enumerate() {
        if row.iter().all(|&v| v == 0.0) {
            return Err(Error::Degenerate(format!("{what} {i} projects to the zero vector")));
        }
    }
    tape.row_normalize(x)
}

/// Cosine similarities `s_ij` between projected regions and texts.
pub fn similarity_graph(
    tape: &mut Tape,
    regions: Var,
    text: Var,
    proj_v: Var,
    proj_t: Var,
) -> Result<Var> {
    let zv = tape.matmul(regions, proj_v)?;
    let zt = tape.matmul(text, proj_t)?;
    let zv = normalize_named(tape, zv, "region")?;
    let zt = normalize_named(tape, zt, "text")?;
    let zt_t = tape.transpose(zt)?;
    tape.matmul(zv, zt_t)
}

pub fn region_text_similarity(regions: &Tensor, text: &Tensor, head: &MatchingHead) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = [regions, text, &head.proj_v, &head.proj_t].map(|t| tape.constant(t.clone()));
    let s = similarity_graph(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    Ok(tape.value(s).clone())
}

fn validate_pairs(s: &Tensor, pairs: &[(usize, usize)], tau: f64) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::param("matched pair set is empty"));
    }
    if !(tau > 0.0) {
        return Err(Error::param(format!("temperature must be positive, got {tau}")));
    }
    let (r, c) = s.dims2()?;
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= r || j >= c) {
        return Err(Error::param(format!("pair ({i}, {j}) outside {r} regions × {c} classes")));
    }
    Ok(())
}

/// `−mean_{(i,j)∈P} log softmax_k(s_ik / τ)_j`.
pub fn matching_loss_graph(
    tape: &mut Tape,
    s: Var,
    pairs: &[(usize, usize)],
    tau: Var,
) -> Result<Var> {
    validate_pairs(tape.value(s), pairs, tape.value(tau).item()?)?;
    let scaled = tape.div_scalar(s, tau)?;
    let log_p = tape.log_softmax_rows(scaled)?;
    let picked = tape.gather(log_p, pairs)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}

pub fn matching_loss(s: &Tensor, pairs: &[(usize, usize)], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let t = tape.scalar(tau);
    let l = matching_loss_graph(&mut tape, sv, pairs, t)?;
    tape.value(l).item()
}

const SUITE_EMBED: usize = 32;

/// Finite-difference check of the matching loss with respect to both
/// projections and the temperature, over 3 regions × 2 classes.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed);
    let (d_r, d_t) = (6, 5);
    let regions = Tensor::randn(&[3, d_r], 1.0, &mut rng);
    let text = Tensor::randn(&[2, d_t], 1.0, &mut rng);
    let head = MatchingHead::init(d_r, d_t, SUITE_EMBED, &mut rng)?;
    let pairs = vec![(0, 0), (1, 1), (2, 0)];
    let named = vec![
        ("proj_v".to_string(), head.proj_v.clone()),
        ("proj_t".to_string(), head.proj_t.clone()),
        ("tau".to_string(), Tensor::scalar(head.tau)),
    ];
    let names = named.iter().map(|(n, _)| n.clone()).collect();
    let f = tape_objective(names, |tape, v| {
        let r = tape.constant(regions.clone());
        let t = tape.constant(text.clone());
        let s = similarity_graph(tape, r, t, v[0], v[1])?;
        matching_loss_graph(tape, s, &pairs, v[2])
    });
    gradcheck(&named, DEFAULT_STEP, &f)
}
