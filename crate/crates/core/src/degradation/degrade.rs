use serde::{Deserialize, Serialize};

use super::image::{quantize, Image8};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One row of the composite RGB degradation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationLevel {
    pub level: u8,
    /// Brightness factor.
    pub gamma: f64,
    /// Odd Gaussian blur kernel size in pixels.
    pub kernel: usize,
    /// Additive noise std in 8-bit intensity units.
    pub sigma_noise: f64,
}

const fn row(level: u8, gamma: f64, kernel: usize, sigma_noise: f64) -> DegradationLevel {
    DegradationLevel { level, gamma, kernel, sigma_noise }
}

/// Levels 0 through +10. Level 0 leaves the image untouched.
pub const STANDARD_LEVELS: [DegradationLevel; 11] = [
    row(0, 1.0, 1, 0.0),
    row(1, 0.70, 5, 8.0),
    row(2, 0.55, 9, 15.0),
    row(3, 0.40, 15, 22.0),
    row(4, 0.28, 21, 32.0),
    row(5, 0.18, 29, 42.0),
    row(6, 0.12, 37, 55.0),
    row(7, 0.07, 45, 65.0),
    row(8, 0.04, 55, 80.0),
    row(9, 0.02, 65, 95.0),
    row(10, 0.01, 81, 110.0),
];

impl DegradationLevel {
    pub fn standard(level: u8) -> Result<Self> {
        STANDARD_LEVELS
            .get(level as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("degradation level {level} outside 0..=10")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.level > 10 {
            return Err(Error::Config(format!("degradation level {} outside 0..=10", self.level)));
        }
        check_kernel(self.kernel)?;
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("brightness factor {} must be ≥ 0", self.gamma)));
        }
        if !(self.sigma_noise.is_finite() && self.sigma_noise >= 0.0) {
            return Err(Error::Config(format!("noise std {} must be ≥ 0", self.sigma_noise)));
        }
        Ok(())
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("blur kernel size must be odd and ≥ 1, got {k}")));
    }
    Ok(())
}

/// Standard deviation tied to kernel size: `0.3·((k−1)/2 − 1) + 0.8`.
pub fn blur_sigma(k: usize) -> f64 {
    0.3 * ((k as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps of length `k`.
pub fn gaussian_kernel(k: usize) -> Result<Vec<f64>> {
    check_kernel(k)?;
    let sigma = blur_sigma(k);
    let half = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Mirror an out-of-range index without repeating the edge sample
/// (`dcb|abcd|cba`), periodically for offsets wider than the image.
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn blur_planes(img: &Image8, taps: &[f64]) -> Vec<f64> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; c * h * w];
    let mut rows = vec![0.0; h * w];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &g)| g * plane[y * w + reflect101(x as isize + t as isize - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[(ch * h + y) * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, &g)| g * rows[reflect101(y as isize + t as isize - r, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Separable Gaussian blur with reflect-101 borders. `k = 1` is the identity.
pub fn gaussian_blur(img: &Image8, k: usize) -> Result<Image8> {
    let taps = gaussian_kernel(k)?;
    if k == 1 {
        return Ok(img.clone());
    }
    let data = blur_planes(img, &taps).into_iter().map(quantize).collect();
    Image8::new(img.channels(), img.height(), img.width(), data)
}

/// Brightness, then blur, then additive noise, rounding and clamping to
/// 8 bits after each stage. Level 0 returns an exact copy.
pub fn degrade(img: &Image8, level: &DegradationLevel, rng: &mut Rng) -> Result<Image8> {
    degrade_with(img, level, Some(rng))
}

/// As [`degrade`]; `None` skips the noise stage.
pub fn degrade_with(img: &Image8, level: &DegradationLevel, rng: Option<&mut Rng>) -> Result<Image8> {
    level.validate()?;
    if level.level == 0 {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = quantize(*v as f64 * level.gamma);
    }
    out = gaussian_blur(&out, level.kernel)?;
    if let Some(rng) = rng {
        if level.sigma_noise > 0.0 {
            for v in out.data_mut() {
                *v = quantize(*v as f64 + level.sigma_noise * rng.gaussian());
            }
        }
    }
    Ok(out)
}
