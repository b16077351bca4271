//! Dual-branch frequency-aware IR block.
//!
//! Shallow IR features are split per channel in the orthonormal DCT domain
//! by a learnable sigmoid mask shared across channels. Each part is encoded
//! by its own ghost encoder, the two encodings are summed and the result is
//! channel-gated by a squeeze-and-excitation unit.

use crate::autodiff::{gradcheck, tape_objective, GradCheckReport, Tape, Var, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fraction of DCT coefficients initialised as low frequency.
pub const LOW_FREQ_INIT_RATIO: f64 = 0.25;
/// Initial mask logit magnitude; `σ(2) ≈ 0.88`, `σ(−2) ≈ 0.12`.
pub const MASK_INIT_LOGIT: f64 = 2.0;
/// Channel expansion ratio of the ghost encoders.
pub const GHOST_RATIO: usize = 2;
/// Squeeze-and-excitation bottleneck ratio.
pub const SE_REDUCTION: usize = 4;

/// Learnable `H×W` frequency mask stored as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask {
    pub logits: Tensor,
}

impl FreqMask {
    pub fn new(logits: Tensor) -> Result<Self> {
        logits.dims2()?;
        Ok(Self { logits })
    }

    pub fn constant(height: usize, width: usize, logit: f64) -> Self {
        Self {
            logits: Tensor::full(&[height, width], logit),
        }
    }

    /// Soft low-pass prior: the `ratio` share of coefficients closest to DC
    /// (by normalised radius `√((u/H)² + (v/W)²)`, ties broken by row then
    /// column) start at `+MASK_INIT_LOGIT`, the rest at `−MASK_INIT_LOGIT`.
    pub fn low_pass(height: usize, width: usize, ratio: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("mask needs a non-empty grid"));
        }
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::param(format!("low-frequency ratio {ratio} outside [0, 1]")));
        }
        let n = height * width;
        let radius = |i: usize| {
            let (u, v) = ((i / width) as f64, (i % width) as f64);
            ((u / height as f64).powi(2) + (v / width as f64).powi(2)).sqrt()
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| radius(a).total_cmp(&radius(b)).then(a.cmp(&b)));
        let keep = ((ratio * n as f64).round() as usize).clamp(1, n);
        let mut logits = Tensor::full(&[height, width], -MASK_INIT_LOGIT);
        for &i in &order[..keep] {
            logits.data_mut()[i] = MASK_INIT_LOGIT;
        }
        Ok(Self { logits })
    }

    pub fn mask(&self) -> Tensor {
        self.logits.sigmoid()
    }
}

/// Pointwise projection to `C/2` channels followed by a depthwise 3×3
/// "cheap" expansion of that half, concatenated back to `C` channels.
#[derive(Debug, Clone)]
pub struct GhostEncoder {
    /// `C/2 × C × 1 × 1`.
    pub primary: Tensor,
    /// `C/2 × 1 × 3 × 3`.
    pub cheap: Tensor,
}

impl GhostEncoder {
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(GHOST_RATIO) {
            return Err(Error::param(format!(
                "ghost encoder needs a channel count divisible by {GHOST_RATIO}, got {channels}"
            )));
        }
        let half = channels / GHOST_RATIO;
        Ok(Self {
            primary: Tensor::randn(&[half, channels, 1, 1], 1.0 / (channels as f64).sqrt(), rng),
            cheap: Tensor::randn(&[half, 1, 3, 3], 1.0 / 3.0, rng),
        })
    }

    pub fn zeros(channels: usize) -> Self {
        let half = channels / GHOST_RATIO;
        Self {
            primary: Tensor::zeros(&[half, channels, 1, 1]),
            cheap: Tensor::zeros(&[half, 1, 3, 3]),
        }
    }
}

/// Bottleneck weights of the channel gate; `squeeze` is `C/4 × C` and
/// `excite` is `C × C/4`.
#[derive(Debug, Clone)]
pub struct SeWeights {
    pub squeeze: Tensor,
    pub excite: Tensor,
}

impl SeWeights {
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        check_se_channels(channels)?;
        let r = channels / SE_REDUCTION;
        Ok(Self {
            squeeze: Tensor::randn(&[r, channels], 1.0 / (channels as f64).sqrt(), rng),
            excite: Tensor::randn(&[channels, r], 1.0 / (r as f64).sqrt(), rng),
        })
    }

    pub fn zeros(channels: usize) -> Self {
        let r = channels / SE_REDUCTION;
        Self {
            squeeze: Tensor::zeros(&[r, channels]),
            excite: Tensor::zeros(&[channels, r]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BranchParams {
    pub low: GhostEncoder,
    pub high: GhostEncoder,
    pub se: SeWeights,
}

impl BranchParams {
    pub fn init(channels: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            low: GhostEncoder::init(channels, rng)?,
            high: GhostEncoder::init(channels, rng)?,
            se: SeWeights::init(channels, rng)?,
        })
    }
}

fn check_se_channels(c: usize) -> Result<()> {
    if c == 0 || !c.is_multiple_of(SE_REDUCTION) {
        return Err(Error::param(format!(
            "squeeze-excitation needs channels divisible by {SE_REDUCTION}, got {c}"
        )));
    }
    Ok(())
}

/// `(X_L, X_H) = (D⁻¹(M ⊙ D X), D⁻¹((1 − M) ⊙ D X))` per channel.
pub fn freq_decompose_graph(tape: &mut Tape, x: Var, logits: Var) -> Result<(Var, Var)> {
    let (_, h, w) = tape.value(x).dims3()?;
    let mask_shape = tape.value(logits).shape().to_vec();
    if mask_shape != [h, w] {
        return Err(Error::shape(format!(
            "mask is {mask_shape:?}, features are {h}×{w} per channel"
        )));
    }
    let spectrum = tape.dct2(x)?;
    let mask = tape.sigmoid(logits);
    let inverse = tape.one_minus(mask);
    let low = tape.mul_spatial(spectrum, mask)?;
    let high = tape.mul_spatial(spectrum, inverse)?;
    Ok((tape.idct2(low)?, tape.idct2(high)?))
}

pub fn freq_decompose(x: &Tensor, mask: &FreqMask) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let lv = tape.constant(mask.logits.clone());
    let (lo, hi) = freq_decompose_graph(&mut tape, xv, lv)?;
    Ok((tape.value(lo).clone(), tape.value(hi).clone()))
}

/// Tape handles of one ghost encoder.
#[derive(Debug, Clone, Copy)]
pub struct GhostVars {
    pub primary: Var,
    pub cheap: Var,
}

pub fn ghost_graph(tape: &mut Tape, x: Var, enc: GhostVars) -> Result<Var> {
    let (c, _, _) = tape.value(x).dims3()?;
    let in_c = tape.value(enc.primary).shape().get(1).copied();
    if in_c != Some(c) {
        return Err(Error::shape(format!(
            "ghost encoder expects {in_c:?} channels, input has {c}"
        )));
    }
    let base = tape.conv2d(x, enc.primary, 0)?;
    let cheap = tape.depthwise_conv2d(base, enc.cheap, 1)?;
    tape.concat_channels(&[base, cheap])
}

/// `φ_L(X_L) + φ_H(X_H)`.
pub fn branch_encode_graph(
    tape: &mut Tape,
    x_low: Var,
    x_high: Var,
    low: GhostVars,
    high: GhostVars,
) -> Result<Var> {
    let a = ghost_graph(tape, x_low, low)?;
    let b = ghost_graph(tape, x_high, high)?;
    tape.add(a, b)
}

pub fn branch_encode_recombine(x_low: &Tensor, x_high: &Tensor, params: &BranchParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let lo = tape.constant(x_low.clone());
    let hi = tape.constant(x_high.clone());
    let low = GhostVars {
        primary: tape.constant(params.low.primary.clone()),
        cheap: tape.constant(params.low.cheap.clone()),
    };
    let high = GhostVars {
        primary: tape.constant(params.high.primary.clone()),
        cheap: tape.constant(params.high.cheap.clone()),
    };
    let out = branch_encode_graph(&mut tape, lo, hi, low, high)?;
    Ok(tape.value(out).clone())
}

/// `X ⊙ σ(W₂ relu(W₁ pool(X)))` broadcast over space.
pub fn se_graph(tape: &mut Tape, x: Var, squeeze: Var, excite: Var) -> Result<Var> {
    let (c, _, _) = tape.value(x).dims3()?;
    check_se_channels(c)?;
    let r = c / SE_REDUCTION;
    if tape.value(squeeze).shape() != [r, c] || tape.value(excite).shape() != [c, r] {
        return Err(Error::shape(format!(
            "SE weights {:?}/{:?} do not fit {c} channels",
            tape.value(squeeze).shape(),
            tape.value(excite).shape()
        )));
    }
    let pooled = tape.global_avg_pool(x)?;
    let col = tape.reshape(pooled, &[c, 1])?;
    let hidden = tape.matmul(squeeze, col)?;
    let hidden = tape.relu(hidden);
    let logits = tape.matmul(excite, hidden)?;
    let gate = tape.sigmoid(logits);
    let gate = tape.reshape(gate, &[c])?;
    tape.mul_channel(x, gate)
}

pub fn se_recalibrate(x: &Tensor, se: &SeWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let s = tape.constant(se.squeeze.clone());
    let e = tape.constant(se.excite.clone());
    let out = se_graph(&mut tape, xv, s, e)?;
    Ok(tape.value(out).clone())
}

/// Tape handles of the whole block.
#[derive(Debug, Clone, Copy)]
pub struct FreqVars {
    pub logits: Var,
    pub low: GhostVars,
    pub high: GhostVars,
    pub squeeze: Var,
    pub excite: Var,
}

impl FreqVars {
    pub fn record(tape: &mut Tape, mask: &FreqMask, p: &BranchParams) -> Self {
        Self {
            logits: tape.param("mask_logits", mask.logits.clone()),
            low: GhostVars {
                primary: tape.param("low_primary", p.low.primary.clone()),
                cheap: tape.param("low_cheap", p.low.cheap.clone()),
            },
            high: GhostVars {
                primary: tape.param("high_primary", p.high.primary.clone()),
                cheap: tape.param("high_cheap", p.high.cheap.clone()),
            },
            squeeze: tape.param("se_squeeze", p.se.squeeze.clone()),
            excite: tape.param("se_excite", p.se.excite.clone()),
        }
    }
}

/// Decompose, encode both branches, recombine and channel-gate.
pub fn freq_block_graph(tape: &mut Tape, x: Var, v: &FreqVars) -> Result<Var> {
    let (lo, hi) = freq_decompose_graph(tape, x, v.logits)?;
    let merged = branch_encode_graph(tape, lo, hi, v.low, v.high)?;
    se_graph(tape, merged, v.squeeze, v.excite)
}

pub fn freq_block(x: &Tensor, mask: &FreqMask, params: &BranchParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = FreqVars::record(&mut tape, mask, params);
    let out = freq_block_graph(&mut tape, xv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Finite-difference checks for the mask (through `‖X_L‖²`) and for every
/// block weight (through the sum of the block output).
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed);
    let (c, h, w) = (4, 6, 6);
    let x = Tensor::randn(&[c, h, w], 1.0, &mut rng);
    let mask = FreqMask::new(Tensor::randn(&[h, w], 1.0, &mut rng))?;
    let params = BranchParams::init(c, &mut rng)?;

    let energy = tape_objective(vec!["mask_logits_energy".into()], |tape, v| {
        let xv = tape.constant(x.clone());
        let (lo, _) = freq_decompose_graph(tape, xv, v[0])?;
        let sq = tape.mul(lo, lo)?;
        Ok(tape.sum(sq))
    });
    let mut reports = gradcheck(
        &[("mask_logits_energy".into(), mask.logits.clone())],
        DEFAULT_STEP,
        &energy,
    )?;

    let named: Vec<(String, Tensor)> = vec![
        ("mask_logits".into(), mask.logits.clone()),
        ("low_primary".into(), params.low.primary.clone()),
        ("low_cheap".into(), params.low.cheap.clone()),
        ("high_primary".into(), params.high.primary.clone()),
        ("high_cheap".into(), params.high.cheap.clone()),
        ("se_squeeze".into(), params.se.squeeze.clone()),
        ("se_excite".into(), params.se.excite.clone()),
    ];
    let names = named.iter().map(|(n, _)| n.clone()).collect();
    let block = tape_objective(names, |tape, v| {
        let xv = tape.constant(x.clone());
        let vars = FreqVars {
            logits: v[0],
            low: GhostVars {
                primary: v[1],
                cheap: v[2],
            },
            high: GhostVars {
                primary: v[3],
                cheap: v[4],
            },
            squeeze: v[5],
            excite: v[6],
        };
        let out = freq_block_graph(tape, xv, &vars)?;
        Ok(tape.sum(out))
    });
    reports.extend(gradcheck(&named, DEFAULT_STEP, &block)?);
    Ok(reports)
}
