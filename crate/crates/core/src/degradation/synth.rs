use serde::{Deserialize, Serialize};

use super::image::Image8;
use super::otsu::BoxAnnotation;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameters of a synthetic annotated RGB–IR scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// IR intensity of object pixels.
    pub hot: u8,
    /// IR background intensity.
    pub cold: u8,
    /// Fraction of each box's columns that are hot, centred.
    pub fill: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            objects: 3,
            min_size: 12,
            max_size: 32,
            hot: 255,
            cold: 0,
            fill: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene must be at least 1×1".into()));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "object size range {}..={} is empty",
                self.min_size, self.max_size
            )));
        }
        if self.objects > 0 && (self.max_size > self.width || self.max_size > self.height) {
            return Err(Error::Config(format!(
                "objects up to {} px do not fit a {}×{} canvas",
                self.max_size, self.width, self.height
            )));
        }
        if !(self.fill > 0.0 && self.fill <= 1.0) {
            return Err(Error::Config(format!("fill fraction {} outside (0, 1]", self.fill)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: Image8,
    pub ir: Image8,
    pub boxes: Vec<BoxAnnotation>,
}

/// Render `spec.objects` rectangles: hot cores on a cold IR background,
/// and matching coloured, checker-textured patches on a noisy RGB
/// background.
pub fn synth_scene(rng: &mut Rng, spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut ir = Image8::filled(1, h, w, spec.cold)?;
    let mut rgb = Image8::filled(3, h, w, 0)?;
    for v in rgb.data_mut() {
        *v = 70 + rng.range_inclusive(0, 40) as u8;
    }
    let mut boxes = Vec::with_capacity(spec.objects);
    for _ in 0..spec.objects {
        let bw = rng.range_inclusive(spec.min_size, spec.max_size);
        let bh = rng.range_inclusive(spec.min_size, spec.max_size);
        let x0 = rng.range_inclusive(0, w - bw);
        let y0 = rng.range_inclusive(0, h - bh);
        let colour = [
            rng.range_inclusive(120, 255) as u8,
            rng.range_inclusive(120, 255) as u8,
            rng.range_inclusive(120, 255) as u8,
        ];
        let hot_cols = ((spec.fill * bw as f64).round() as usize).clamp(1, bw);
        let left = x0 + (bw - hot_cols) / 2;
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                if (left..left + hot_cols).contains(&x) {
                    ir.set(0, y, x, spec.hot);
                }
                let shade = if (x / 2 + y / 2) % 2 == 0 { 0 } else { 30 };
                for (c, &base) in colour.iter().enumerate() {
                    rgb.set(c, y, x, base.saturating_sub(shade));
                }
            }
        }
        boxes.push(BoxAnnotation::new(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64)?);
    }
    Ok(Scene { rgb, ir, boxes })
}

/// Average-pool each channel over `stride × stride` cells and scale to
/// `[0, 1]`. Trailing pixels that do not fill a whole cell are dropped.
pub fn pooled_features(img: &Image8, stride: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::param("stride must be ≥ 1"));
    }
    let (hc, wc) = (img.height() / stride, img.width() / stride);
    if hc == 0 || wc == 0 {
        return Err(Error::shape(format!(
            "{}×{} image is smaller than one {stride}-pixel cell",
            img.height(),
            img.width()
        )));
    }
    let norm = 1.0 / (255.0 * (stride * stride) as f64);
    let c = img.channels();
    let mut out = vec![0.0; c * hc * wc];
    for ch in 0..c {
        for y in 0..hc * stride {
            for x in 0..wc * stride {
                out[(ch * hc + y / stride) * wc + x / stride] += img.get(ch, y, x) as f64 * norm;
            }
        }
    }
    Tensor::new(&[c, hc, wc], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::otsu_occupancy;

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::default();
        let a = synth_scene(&mut Rng::new(3), &spec).unwrap();
        let b = synth_scene(&mut Rng::new(3), &spec).unwrap();
        let c = synth_scene(&mut Rng::new(4), &spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_solid_rectangle() {
        let spec = SceneSpec {
            width: 40,
            height: 40,
            objects: 1,
            min_size: 20,
            max_size: 20,
            ..SceneSpec::default()
        };
        let s = synth_scene(&mut Rng::new(1), &spec).unwrap();
        let b = s.boxes[0];
        assert_eq!((b.x2 - b.x1, b.y2 - b.y1), (20.0, 20.0));
        let hot = s.ir.data().iter().filter(|&&v| v == 255).count();
        assert_eq!(hot, 400);
        // every box pixel is hot, so the crop is flat
        let r = otsu_occupancy(&s.ir, &b).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.threshold, 255);
    }

    #[test]
    fn fill_fraction_recovered() {
        for p in [0.1, 0.4, 0.9] {
            let spec = SceneSpec {
                width: 64,
                height: 64,
                objects: 1,
                min_size: 30,
                max_size: 30,
                fill: p,
                ..SceneSpec::default()
            };
            let s = synth_scene(&mut Rng::new(2), &spec).unwrap();
            let r = otsu_occupancy(&s.ir, &s.boxes[0]).unwrap();
            assert!((r.r - p).abs() <= 0.02, "p={p} r={}", r.r);
        }
    }

    #[test]
    fn empty_and_invalid() {
        let spec = SceneSpec { objects: 0, ..SceneSpec::default() };
        let s = synth_scene(&mut Rng::new(0), &spec).unwrap();
        assert!(s.boxes.is_empty());
        assert!(s.ir.data().iter().all(|&v| v == 0));
        let big = SceneSpec { width: 16, ..SceneSpec::default() };
        assert!(matches!(synth_scene(&mut Rng::new(0), &big), Err(Error::Config(_))));
        let bad_fill = SceneSpec { fill: 0.0, ..SceneSpec::default() };
        assert!(synth_scene(&mut Rng::new(0), &bad_fill).is_err());
    }

    #[test]
    fn pooling() {
        let mut img = Image8::filled(1, 16, 17, 0).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                img.set(0, y, x, 255);
            }
        }
        let f = pooled_features(&img, 8).unwrap();
        assert_eq!(f.shape(), &[1, 2, 2]);
        assert!((f.data()[0] - 1.0).abs() < 1e-12);
        assert_eq!(&f.data()[1..], &[0.0, 0.0, 0.0]);
        assert!(pooled_features(&Image8::filled(1, 4, 4, 0).unwrap(), 8).is_err());
    }
}
