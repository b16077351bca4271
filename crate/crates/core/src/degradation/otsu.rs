use serde::{Deserialize, Serialize};

use super::image::Image8;
use crate::error::{Error, Result};

/// Axis-aligned box `[x1, y1, x2, y2)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxAnnotation {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoxAnnotation {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::param("box coordinates must be finite"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::param(format!("box [{x1}, {y1}, {x2}, {y2}] has no area")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Pixel ranges covered after clamping to a `width × height` image,
    /// as half-open `(x0..x1, y0..y1)`.
    pub fn pixel_span(&self, width: usize, height: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let clamp = |v: f64, hi: usize| v.clamp(0.0, hi as f64) as usize;
        let xs = clamp(self.x1.floor(), width)..clamp(self.x2.ceil(), width);
        let ys = clamp(self.y1.floor(), height)..clamp(self.y2.ceil(), height);
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::param(format!("box {:?} lies outside the {width}×{height} image", self.to_array())));
        }
        Ok((xs, ys))
    }

    /// Feature cells `floor(x1/s) ..= ceil(x2/s) − 1` on a `width × height`
    /// grid, clamped, as half-open ranges.
    pub fn cell_span(
        &self,
        stride: usize,
        width: usize,
        height: usize,
    ) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        if stride == 0 {
            return Err(Error::param("stride must be ≥ 1"));
        }
        let s = stride as f64;
        let lo = |v: f64, n: usize| (v / s).floor().clamp(0.0, n as f64) as usize;
        let hi = |v: f64, n: usize| (v / s).ceil().clamp(0.0, n as f64) as usize;
        let xs = lo(self.x1, width)..hi(self.x2, width);
        let ys = lo(self.y1, height)..hi(self.y2, height);
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::param(format!(
                "box {:?} projects to zero cells on the {width}×{height} grid at stride {stride}",
                self.to_array()
            )));
        }
        Ok((xs, ys))
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BoxAnnotation {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxAnnotation> for [f64; 4] {
    fn from(b: BoxAnnotation) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancyResult {
    /// Foreground fraction of the box.
    pub r: f64,
    /// Pixels strictly above this value are foreground.
    pub threshold: u8,
    /// The crop held a single intensity; `r` is reported as 0.
    pub degenerate: bool,
    pub foreground: usize,
    pub area: usize,
}

/// Threshold maximizing between-class variance of a 256-bin histogram.
/// Ties resolve to the lowest threshold. `None` if only one bin is occupied.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let sum: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut s0) = (0u64, 0.0);
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        w0 += hist[t];
        s0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let (a, b) = (w0 as f64, w1 as f64);
        let diff = s0 / a - (sum - s0) / b;
        let var = a * b * diff * diff;
        if best.is_none_or(|(_, v)| var > v) {
            best = Some((t as u8, var));
        }
    }
    best.map(|(t, _)| t)
}

/// Otsu foreground occupancy of `box` on a single-channel image.
pub fn otsu_occupancy(ir: &Image8, bbox: &BoxAnnotation) -> Result<OccupancyResult> {
    if ir.channels() != 1 {
        return Err(Error::shape(format!("occupancy needs one channel, image has {}", ir.channels())));
    }
    let (xs, ys) = bbox.pixel_span(ir.width(), ir.height())?;
    let mut hist = [0u64; 256];
    for y in ys.clone() {
        for x in xs.clone() {
            hist[ir.get(0, y, x) as usize] += 1;
        }
    }
    let area = xs.len() * ys.len();
    match otsu_threshold(&hist) {
        None => {
            let only = hist.iter().position(|&h| h > 0).unwrap_or(0) as u8;
            Ok(OccupancyResult { r: 0.0, threshold: only, degenerate: true, foreground: 0, area })
        }
        Some(t) => {
            let foreground: u64 = hist[t as usize + 1..].iter().sum();
            Ok(OccupancyResult {
                r: foreground as f64 / area as f64,
                threshold: t,
                degenerate: false,
                foreground: foreground as usize,
                area,
            })
        }
    }
}
