use serde::{Deserialize, Serialize};

use super::otsu::BoxAnnotation;
use crate::bridge::{CategoryReduce, SupportMaps};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature stride between image pixels and support-map cells.
pub const STRIDE: usize = 8;
/// Stabilizer in every min-max normalization.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmrpConfig {
    pub stride: usize,
    pub eps: f64,
    pub reduce: CategoryReduce,
}

impl Default for NmrpConfig {
    fn default() -> Self {
        Self { stride: STRIDE, eps: EPS, reduce: CategoryReduce::Max }
    }
}

/// Support maps and IR features observed at one degradation level.
#[derive(Debug, Clone)]
pub struct LevelObservation {
    pub level: u8,
    /// `M_cat × HW` consensus support.
    pub m_cons: Tensor,
    /// `M_cat × HW` discrepancy support.
    pub m_dis: Tensor,
    /// `C × H × W` IR features.
    pub x_ir: Tensor,
}

impl LevelObservation {
    pub fn from_maps(level: u8, maps: &SupportMaps, x_ir: &Tensor) -> Self {
        Self {
            level,
            m_cons: maps.m_cons.clone(),
            m_dis: maps.m_dis.clone(),
            x_ir: x_ir.clone(),
        }
    }

    fn grid(&self) -> Result<(usize, usize)> {
        let (_, h, w) = self.x_ir.dims3()?;
        for (name, m) in [("consensus", &self.m_cons), ("discrepancy", &self.m_dis)] {
            let (_, n) = m.dims2()?;
            if n != h * w {
                return Err(Error::shape(format!(
                    "{name} support has {n} cells, IR features are {h}×{w}"
                )));
            }
        }
        Ok((h, w))
    }
}

/// `(M − min) / (max − min + ε)`.
pub fn min_max(values: &[f64], eps: f64) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| (v - lo) / (hi - lo + eps)).collect()
}

fn channel_mean(x: &Tensor) -> Result<Vec<f64>> {
    let (c, h, w) = x.dims3()?;
    let n = h * w;
    let mut out = vec![0.0; n];
    for plane in x.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / c as f64).collect())
}

/// Support-weighted IR responses before cross-level normalization.
#[derive(Debug, Clone)]
pub struct RawResponses {
    pub cons: Vec<f64>,
    pub dis: Vec<f64>,
}

pub fn raw_responses(obs: &LevelObservation, cfg: &NmrpConfig) -> Result<RawResponses> {
    obs.grid()?;
    let x = channel_mean(&obs.x_ir)?;
    let weight = |m: &Tensor| -> Result<Vec<f64>> {
        let reduced = cfg.reduce.apply(m)?;
        Ok(min_max(reduced.data(), cfg.eps).iter().zip(&x).map(|(m, x)| m * x).collect())
    };
    Ok(RawResponses {
        cons: weight(&obs.m_cons)?,
        dis: weight(&obs.m_dis)?,
    })
}

/// Largest deviation of `x̄⊙M_cons + x̄⊙M_dis` from `x̄⊙A_ir`, taken per
/// category before any reduction or normalization.
pub fn raw_identity_residual(maps: &SupportMaps, x_ir: &Tensor) -> Result<f64> {
    let x = channel_mean(x_ir)?;
    let (m, n) = maps.a_ir.dims2()?;
    if n != x.len() {
        return Err(Error::shape("support maps and IR features disagree on cell count"));
    }
    let mut worst: f64 = 0.0;
    for i in 0..m * n {
        let xp = x[i % n];
        let lhs = xp * maps.m_cons.data()[i] + xp * maps.m_dis.data()[i];
        worst = worst.max((lhs - xp * maps.a_ir.data()[i]).abs());
    }
    Ok(worst)
}

/// Per-level responses of one image, globally normalized across levels
/// for each support type.
struct Normalized {
    h: usize,
    w: usize,
    levels: Vec<u8>,
    cons: Vec<Vec<f64>>,
    dis: Vec<Vec<f64>>,
}

fn normalize_across_levels(levels: &[LevelObservation], cfg: &NmrpConfig) -> Result<Normalized> {
    let first = levels
        .first()
        .ok_or_else(|| Error::param("at least one degradation level is required"))?;
    let (h, w) = first.grid()?;
    let mut cons = Vec::with_capacity(levels.len());
    let mut dis = Vec::with_capacity(levels.len());
    for obs in levels {
        if obs.grid()? != (h, w) {
            return Err(Error::shape(format!("level {} has a different feature grid", obs.level)));
        }
        let raw = raw_responses(obs, cfg)?;
        cons.push(raw.cons);
        dis.push(raw.dis);
    }
    let global = |family: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let flat: Vec<f64> = family.concat();
        min_max(&flat, cfg.eps).chunks(h * w).map(<[f64]>::to_vec).collect()
    };
    Ok(Normalized {
        h,
        w,
        levels: levels.iter().map(|l| l.level).collect(),
        cons: global(cons),
        dis: global(dis),
    })
}

/// Mean normalized responses inside one box at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceResponse {
    pub box_index: usize,
    pub level: u8,
    pub cons: f64,
    pub dis: f64,
}

pub fn instance_response(
    levels: &[LevelObservation],
    boxes: &[BoxAnnotation],
    cfg: &NmrpConfig,
) -> Result<Vec<InstanceResponse>> {
    let norm = normalize_across_levels(levels, cfg)?;
    let mut out = Vec::with_capacity(boxes.len() * levels.len());
    for (b, bbox) in boxes.iter().enumerate() {
        let (xs, ys) = bbox.cell_span(cfg.stride, norm.w, norm.h)?;
        let cells = (xs.len() * ys.len()) as f64;
        let mean = |map: &[f64]| {
            ys.clone()
                .flat_map(|y| xs.clone().map(move |x| y * norm.w + x))
                .map(|p| map[p])
                .sum::<f64>()
                / cells
        };
        for (l, &level) in norm.levels.iter().enumerate() {
            out.push(InstanceResponse {
                box_index: b,
                level,
                cons: mean(&norm.cons[l]),
                dis: mean(&norm.dis[l]),
            });
        }
    }
    Ok(out)
}

/// Union of the boxes' projected cells on an `h × w` grid.
pub fn gt_mask(boxes: &[BoxAnnotation], stride: usize, h: usize, w: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; h * w];
    for b in boxes {
        let (xs, ys) = b.cell_span(stride, w, h)?;
        for y in ys {
            for x in xs.clone() {
                mask[y * w + x] = true;
            }
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Cons,
    Dis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Region {
    #[serde(rename = "GT")]
    Gt,
    #[serde(rename = "BG")]
    Bg,
}

impl Support {
    pub fn as_str(self) -> &'static str {
        match self {
            Support::Cons => "cons",
            Support::Dis => "dis",
        }
    }
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Gt => "GT",
            Region::Bg => "BG",
        }
    }
}

/// One image: its per-level observations and its annotations.
#[derive(Debug, Clone)]
pub struct ImageObservation {
    pub levels: Vec<LevelObservation>,
    pub boxes: Vec<BoxAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmrpRow {
    pub level: u8,
    pub support: Support,
    pub region: Region,
    pub nmrp: f64,
    /// Images that contributed to this average.
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmrpReport {
    pub stride: usize,
    pub rows: Vec<NmrpRow>,
    /// Images with no boxes; they contribute to background rows only.
    pub no_boxes: Vec<usize>,
    /// Images whose boxes cover the whole grid; they contribute to GT rows only.
    pub no_background: Vec<usize>,
}

impl NmrpReport {
    pub fn get(&self, level: u8, support: Support, region: Region) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.level == level && r.support == support && r.region == region)
            .map(|r| r.nmrp)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,support,region,nmrp\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.12}\n",
                r.level,
                r.support.as_str(),
                r.region.as_str(),
                r.nmrp
            ));
        }
        out
    }
}

/// Per-level GT and background NMRP averaged over images.
pub fn population_nmrp(images: &[ImageObservation], cfg: &NmrpConfig) -> Result<NmrpReport> {
    let first = images.first().ok_or_else(|| Error::param("population needs at least one image"))?;
    let level_set: Vec<u8> = first.levels.iter().map(|l| l.level).collect();
    let keys: Vec<(Support, Region)> = [Support::Cons, Support::Dis]
        .into_iter()
        .flat_map(|s| [(s, Region::Gt), (s, Region::Bg)])
        .collect();
    // sums[level][key] = (total, images)
    let mut sums = vec![vec![(0.0, 0usize); keys.len()]; level_set.len()];
    let mut no_boxes = Vec::new();
    let mut no_background = Vec::new();

    for (i, img) in images.iter().enumerate() {
        let levels: Vec<u8> = img.levels.iter().map(|l| l.level).collect();
        if levels != level_set {
            return Err(Error::param(format!(
                "image {i} has levels {levels:?}, image 0 has {level_set:?}"
            )));
        }
        let norm = normalize_across_levels(&img.levels, cfg)?;
        let mask = gt_mask(&img.boxes, cfg.stride, norm.h, norm.w)?;
        let gt = mask.iter().filter(|&&m| m).count();
        let bg = mask.len() - gt;
        if gt == 0 {
            no_boxes.push(i);
        }
        if bg == 0 {
            no_background.push(i);
        }
        for l in 0..level_set.len() {
            for (k, &(support, region)) in keys.iter().enumerate() {
                let map = match support {
                    Support::Cons => &norm.cons[l],
                    Support::Dis => &norm.dis[l],
                };
                let (want, count) = match region {
                    Region::Gt => (true, gt),
                    Region::Bg => (false, bg),
                };
                if count == 0 {
                    continue;
                }
                let total: f64 = map.iter().zip(&mask).filter(|(_, &m)| m == want).map(|(v, _)| v).sum();
                sums[l][k].0 += total / count as f64;
                sums[l][k].1 += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for (l, &level) in level_set.iter().enumerate() {
        for (k, &(support, region)) in keys.iter().enumerate() {
            let (total, n) = sums[l][k];
            if n > 0 {
                rows.push(NmrpRow { level, support, region, nmrp: total / n as f64, images: n });
            }
        }
    }
    Ok(NmrpReport { stride: cfg.stride, rows, no_boxes, no_background })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_obs(level: u8, m: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> LevelObservation {
        let a_ir = Tensor::rand_uniform(&[m, h * w], 0.0, 1.0, rng);
        let a_rgb = Tensor::rand_uniform(&[m, h * w], 0.0, 1.0, rng);
        let maps = crate::bridge::bi_support(&a_ir, &a_rgb).unwrap();
        LevelObservation::from_maps(level, &maps, &Tensor::randn(&[c, h, w], 1.0, rng))
    }

    // Straight nested-loop re-implementation, sharing nothing with the
    // code above beyond the input layout.
    fn oracle_norm(levels: &[LevelObservation]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut fam = [Vec::new(), Vec::new()];
        for obs in levels {
            let c = obs.x_ir.shape()[0];
            let (m, n) = (obs.m_cons.shape()[0], obs.m_cons.shape()[1]);
            for (f, maps) in [&obs.m_cons, &obs.m_dis].into_iter().enumerate() {
                let mut red = vec![f64::NEG_INFINITY; n];
                for k in 0..m {
                    for p in 0..n {
                        red[p] = red[p].max(maps.data()[k * n + p]);
                    }
                }
                let lo = red.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = red.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut feat = vec![0.0; n];
                for p in 0..n {
                    let mut x = 0.0;
                    for ch in 0..c {
                        x += obs.x_ir.data()[ch * n + p];
                    }
                    feat[p] = x / c as f64 * ((red[p] - lo) / (hi - lo + 1e-6));
                }
                fam[f].push(feat);
            }
        }
        let norm = |f: &Vec<Vec<f64>>| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for l in f {
                for &v in l {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            f.iter().map(|l| l.iter().map(|v| (v - lo) / (hi - lo + 1e-6)).collect()).collect()
        };
        (norm(&fam[0]), norm(&fam[1]))
    }

    fn in_box(b: &BoxAnnotation, x: usize, y: usize) -> bool {
        let s = 8.0;
        let (x0, x1) = ((b.x1 / s).floor(), (b.x2 / s).ceil() - 1.0);
        let (y0, y1) = ((b.y1 / s).floor(), (b.y2 / s).ceil() - 1.0);
        (x as f64) >= x0 && (x as f64) <= x1 && (y as f64) >= y0 && (y as f64) <= y1
    }

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxAnnotation {
        BoxAnnotation::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn constant_inputs_give_zero() {
        let obs = LevelObservation {
            level: 0,
            m_cons: Tensor::full(&[2, 16], 0.3),
            m_dis: Tensor::full(&[2, 16], 0.6),
            x_ir: Tensor::full(&[3, 4, 4], 2.0),
        };
        let got = instance_response(&[obs], &[bx(0.0, 0.0, 16.0, 16.0)], &NmrpConfig::default()).unwrap();
        assert_eq!((got[0].cons, got[0].dis), (0.0, 0.0));
    }

    #[test]
    fn full_field_box_is_global_mean() {
        let mut rng = Rng::new(1);
        let levels: Vec<_> = (0..2).map(|l| random_obs(l, 2, 3, 4, 4, &mut rng)).collect();
        let got = instance_response(&levels, &[bx(0.0, 0.0, 32.0, 32.0)], &NmrpConfig::default()).unwrap();
        let (cons, dis) = oracle_norm(&levels);
        for (l, r) in got.iter().enumerate() {
            assert!((r.cons - cons[l].iter().sum::<f64>() / 16.0).abs() < 1e-12);
            assert!((r.dis - dis[l].iter().sum::<f64>() / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_matches_brute_force() {
        let mut rng = Rng::new(2);
        let levels: Vec<_> = (0..2).map(|l| random_obs(l * 3, 3, 2, 4, 4, &mut rng)).collect();
        let boxes = [bx(3.0, 5.0, 17.0, 20.0), bx(20.0, 0.0, 31.0, 9.0)];
        let got = instance_response(&levels, &boxes, &NmrpConfig::default()).unwrap();
        let (cons, dis) = oracle_norm(&levels);
        for r in &got {
            let l = levels.iter().position(|o| o.level == r.level).unwrap();
            let (mut sc, mut sd, mut n) = (0.0, 0.0, 0.0);
            for y in 0..4 {
                for x in 0..4 {
                    if in_box(&boxes[r.box_index], x, y) {
                        sc += cons[l][y * 4 + x];
                        sd += dis[l][y * 4 + x];
                        n += 1.0;
                    }
                }
            }
            assert!((r.cons - sc / n).abs() < 1e-12);
            assert!((r.dis - sd / n).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.cons) && (0.0..=1.0).contains(&r.dis));
        }
    }

    #[test]
    fn box_outside_grid_rejected() {
        let mut rng = Rng::new(3);
        let levels = vec![random_obs(0, 1, 1, 2, 2, &mut rng)];
        let r = instance_response(&levels, &[bx(40.0, 40.0, 48.0, 48.0)], &NmrpConfig::default());
        assert!(matches!(r, Err(Error::Param(_))));
        assert!(matches!(instance_response(&[], &[], &NmrpConfig::default()), Err(Error::Param(_))));
    }

    #[test]
    fn raw_identity() {
        let mut rng = Rng::new(4);
        let a_ir = Tensor::rand_uniform(&[3, 16], 0.0, 1.0, &mut rng);
        let a_rgb = Tensor::rand_uniform(&[3, 16], 0.0, 1.0, &mut rng);
        let maps = crate::bridge::bi_support(&a_ir, &a_rgb).unwrap();
        let x = Tensor::randn(&[4, 4, 4], 3.0, &mut rng);
        assert!(raw_identity_residual(&maps, &x).unwrap() < 1e-12);
    }

    fn population_oracle(images: &[ImageObservation]) -> Vec<(u8, &'static str, &'static str, f64)> {
        let levels: Vec<u8> = images[0].levels.iter().map(|l| l.level).collect();
        let mut out = Vec::new();
        let per_image: Vec<_> = images.iter().map(|im| oracle_norm(&im.levels)).collect();
        for (l, &level) in levels.iter().enumerate() {
            for (f, support) in ["cons", "dis"].into_iter().enumerate() {
                for region in ["GT", "BG"] {
                    let (mut total, mut count) = (0.0, 0);
                    for (im, (cons, dis)) in images.iter().zip(&per_image) {
                        let map = if f == 0 { &cons[l] } else { &dis[l] };
                        let (mut s, mut n) = (0.0, 0.0);
                        for y in 0..4 {
                            for x in 0..4 {
                                let inside = im.boxes.iter().any(|b| in_box(b, x, y));
                                if inside == (region == "GT") {
                                    s += map[y * 4 + x];
                                    n += 1.0;
                                }
                            }
                        }
                        if n > 0.0 {
                            total += s / n;
                            count += 1;
                        }
                    }
                    if count > 0 {
                        out.push((level, support, region, total / count as f64));
                    }
                }
            }
        }
        out
    }

    fn population(seed: u64) -> Vec<ImageObservation> {
        let mut rng = Rng::new(seed);
        let boxes = [
            vec![bx(0.0, 0.0, 12.0, 12.0)],
            vec![bx(8.0, 8.0, 20.0, 30.0), bx(25.0, 1.0, 32.0, 6.0)],
            vec![],
        ];
        boxes
            .into_iter()
            .map(|b| ImageObservation {
                levels: [0, 2, 5, 9].iter().map(|&l| random_obs(l, 2, 3, 4, 4, &mut rng)).collect(),
                boxes: b,
            })
            .collect()
    }

    #[test]
    fn population_matches_brute_force() {
        let images = population(5);
        let report = population_nmrp(&images, &NmrpConfig::default()).unwrap();
        let want = population_oracle(&images);
        assert_eq!(report.rows.len(), want.len());
        for (row, (level, support, region, v)) in report.rows.iter().zip(want) {
            assert_eq!((row.level, row.support.as_str(), row.region.as_str()), (level, support, region));
            assert!((row.nmrp - v).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&row.nmrp));
        }
        assert_eq!(report.no_boxes, vec![2]);
        assert_eq!(report.get(0, Support::Cons, Region::Gt).map(|_| ()), Some(()));
    }

    #[test]
    fn single_image_reduces_to_instance() {
        let mut rng = Rng::new(6);
        let levels = vec![random_obs(1, 2, 2, 4, 4, &mut rng)];
        let b = bx(4.0, 4.0, 20.0, 12.0);
        let inst = instance_response(&levels, &[b], &NmrpConfig::default()).unwrap();
        let pop = population_nmrp(
            &[ImageObservation { levels, boxes: vec![b] }],
            &NmrpConfig::default(),
        )
        .unwrap();
        assert_eq!(pop.get(1, Support::Cons, Region::Gt), Some(inst[0].cons));
        assert_eq!(pop.get(1, Support::Dis, Region::Gt), Some(inst[0].dis));
    }

    #[test]
    fn duplicated_images_are_idempotent() {
        let one = population(7).remove(1);
        let single = population_nmrp(std::slice::from_ref(&one), &NmrpConfig::default()).unwrap();
        let double = population_nmrp(&[one.clone(), one], &NmrpConfig::default()).unwrap();
        for (a, b) in single.rows.iter().zip(&double.rows) {
            assert!((a.nmrp - b.nmrp).abs() < 1e-15);
        }
    }

    #[test]
    fn no_boxes_is_background_only() {
        let mut images = population(8);
        images.truncate(1);
        images[0].boxes.clear();
        let r = population_nmrp(&images, &NmrpConfig::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.region == Region::Bg));
        assert_eq!(r.no_boxes, vec![0]);
    }

    #[test]
    fn mismatched_levels_rejected() {
        let mut images = population(9);
        images[1].levels.pop();
        assert!(matches!(population_nmrp(&images, &NmrpConfig::default()), Err(Error::Param(_))));
        assert!(matches!(population_nmrp(&[], &NmrpConfig::default()), Err(Error::Param(_))));
    }

    #[test]
    fn csv_layout() {
        let images = population(10);
        let csv = population_nmrp(&images, &NmrpConfig::default()).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("level,support,region,nmrp"));
        assert!(lines.next().unwrap().starts_with("0,cons,GT,0."));
    }
}
