//! Matmul cost model for direct versus text-bridged RGB–IR interaction.
//!
//! A product of an `a × b` and a `b × c` matrix costs `2abc` operations.
//! Direct fusion scores every visual token against every other token
//! (`4N²C`); the bridge routes both modalities through `M_cat` category
//! tokens (`4NMC`), so the saving is the ratio `M_cat / N`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{MatmulHook, Tensor};

fn checked(terms: &[u64], what: &str) -> Result<u64> {
    let mut acc: u64 = 1;
    for &t in terms {
        acc = acc
            .checked_mul(t)
            .ok_or_else(|| Error::Overflow(format!("{what} exceeds 64-bit range")))?;
    }
    if acc > i64::MAX as u64 {
        return Err(Error::Overflow(format!("{what} = {acc} exceeds 63-bit range")));
    }
    Ok(acc)
}

fn positive(name: &str, v: u64) -> Result<()> {
    if v == 0 {
        return Err(Error::param(format!("{name} must be ≥ 1")));
    }
    Ok(())
}

/// `4·N²·C`.
pub fn flops_direct(n: u64, c: u64) -> Result<u64> {
    positive("N", n)?;
    positive("C", c)?;
    checked(&[4, n, n, c], "direct FLOPs")
}

/// `4·N·M_cat·C`.
pub fn flops_bridge(n: u64, m_cat: u64, c: u64) -> Result<u64> {
    positive("N", n)?;
    positive("M_cat", m_cat)?;
    positive("C", c)?;
    checked(&[4, n, m_cat, c], "bridge FLOPs")
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::param("ratio denominator is zero"));
        }
        let g = gcd(num, den).max(1);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsModel {
    pub n: u64,
    pub m_cat: u64,
    pub c: u64,
    pub flops_dir: u64,
    pub flops_bridge: u64,
}

impl FlopsModel {
    pub fn new(n: u64, m_cat: u64, c: u64) -> Result<Self> {
        Ok(Self {
            n,
            m_cat,
            c,
            flops_dir: flops_direct(n, c)?,
            flops_bridge: flops_bridge(n, m_cat, c)?,
        })
    }

    /// `M_cat / N` in lowest terms.
    pub fn ratio(&self) -> Ratio {
        Ratio::new(self.m_cat, self.n).expect("N validated at construction")
    }

    /// `ratio · flops_dir == flops_bridge`, checked without rounding.
    pub fn ratio_is_exact(&self) -> bool {
        let r = self.ratio();
        self.flops_dir as u128 * r.num as u128 == self.flops_bridge as u128 * r.den as u128
    }
}

/// Accumulates `2mkn` per observed matmul.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct OpCounter {
    flops: u64,
    calls: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

impl MatmulHook for OpCounter {
    fn on_matmul(&mut self, m: usize, k: usize, n: usize) {
        let cost = 2u64
            .saturating_mul(m as u64)
            .saturating_mul(k as u64)
            .saturating_mul(n as u64);
        self.flops = self.flops.saturating_add(cost);
        self.calls += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measured {
    pub counted_dir: u64,
    pub counted_bridge: u64,
}

impl Measured {
    pub fn ratio(&self) -> Result<Ratio> {
        Ratio::new(self.counted_bridge, self.counted_dir)
    }
}

fn filler(rows: usize, cols: usize, phase: f64) -> Tensor {
    Tensor::from_fn(&[rows, cols], |i| ((i as f64) * 0.618 + phase).sin())
}

/// Execute the dominant matmuls of both paradigms under `counter`.
///
/// Direct: `A = X_ir X_rgbᵀ` (`N × N`) then `A X_rgb`.
/// Bridge: `A_ir→t = X_ir Tᵀ` (`N × M`) and `A_t→rgb = T X_rgbᵀ` (`M × N`).
pub fn measured_bridge_vs_direct(model: &FlopsModel, counter: Option<&mut OpCounter>) -> Result<Measured> {
    let counter = counter.ok_or_else(|| Error::Contract("no operation counter installed".into()))?;
    let size = |v: u64| usize::try_from(v).map_err(|_| Error::Overflow(format!("{v} exceeds usize")));
    let (n, m, c) = (size(model.n)?, size(model.m_cat)?, size(model.c)?);
    let x_ir = filler(n, c, 0.1);
    let x_rgb = filler(n, c, 0.7);
    let text = filler(m, c, 1.3);
    let x_rgb_t = x_rgb.transpose()?;

    counter.reset();
    let a = x_ir.matmul_with(&x_rgb_t, counter)?;
    a.matmul_with(&x_rgb, counter)?;
    let counted_dir = counter.flops();

    counter.reset();
    x_ir.matmul_with(&text.transpose()?, counter)?;
    text.matmul_with(&x_rgb_t, counter)?;
    let counted_bridge = counter.flops();

    Ok(Measured { counted_dir, counted_bridge })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FlopsReport {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "M_cat")]
    pub m_cat: u64,
    #[serde(rename = "C")]
    pub c: u64,
    pub analytic_dir: u64,
    pub analytic_bridge: u64,
    pub counted_dir: Option<u64>,
    pub counted_bridge: Option<u64>,
    pub ratio: f64,
}

impl FlopsReport {
    pub fn new(model: &FlopsModel, measured: Option<Measured>) -> Self {
        Self {
            n: model.n,
            m_cat: model.m_cat,
            c: model.c,
            analytic_dir: model.flops_dir,
            analytic_bridge: model.flops_bridge,
            counted_dir: measured.map(|m| m.counted_dir),
            counted_bridge: measured.map(|m| m.counted_bridge),
            ratio: model.ratio().as_f64(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_scale_point() {
        let m = FlopsModel::new(6400, 4, 256).unwrap();
        assert_eq!(m.flops_dir, 41_943_040_000);
        assert_eq!(m.flops_bridge, 26_214_400);
        assert_eq!(m.ratio(), Ratio { num: 1, den: 1600 });
        assert_eq!(m.ratio().as_f64(), 0.000625);
        assert!(m.ratio_is_exact());
    }

    #[test]
    fn hand_arithmetic() {
        let m = FlopsModel::new(2, 1, 1).unwrap();
        assert_eq!((m.flops_dir, m.flops_bridge), (16, 8));
        assert_eq!(m.ratio().as_f64(), 0.5);
        let eq = FlopsModel::new(12, 12, 3).unwrap();
        assert_eq!(eq.flops_dir, eq.flops_bridge);
    }

    #[test]
    fn invalid_and_overflow() {
        assert!(matches!(flops_direct(0, 4), Err(Error::Param(_))));
        assert!(matches!(flops_bridge(4, 0, 4), Err(Error::Param(_))));
        assert!(matches!(flops_direct(1 << 31, 1 << 4), Err(Error::Overflow(_))));
        assert!(matches!(flops_direct(1 << 40, 1 << 40), Err(Error::Overflow(_))));
        // 4·2^30·2^30·2 = 2^63, one past i64::MAX
        assert!(matches!(flops_direct(1 << 30, 2), Err(Error::Overflow(_))));
        assert!(flops_direct(1 << 30, 1).is_ok());
    }

    #[test]
    fn instrumented_counts() {
        let m = FlopsModel::new(16, 2, 8).unwrap();
        let mut counter = OpCounter::new();
        let got = measured_bridge_vs_direct(&m, Some(&mut counter)).unwrap();
        assert_eq!(got, Measured { counted_dir: 8192, counted_bridge: 1024 });
        assert_eq!(got.ratio().unwrap(), Ratio { num: 1, den: 8 });
        assert_eq!(counter.calls(), 2);
    }

    #[test]
    fn sweep_ratio() {
        let mut counter = OpCounter::new();
        for n in [16u64, 64, 256] {
            let m = FlopsModel::new(n, 4, 8).unwrap();
            let got = measured_bridge_vs_direct(&m, Some(&mut counter)).unwrap();
            assert_eq!(got.counted_dir, m.flops_dir);
            assert_eq!(got.counted_bridge, m.flops_bridge);
            assert_eq!(got.ratio().unwrap(), Ratio::new(4, n).unwrap());
        }
        let same = FlopsModel::new(8, 8, 2).unwrap();
        let got = measured_bridge_vs_direct(&same, Some(&mut counter)).unwrap();
        assert_eq!(got.counted_dir, got.counted_bridge);
    }

    #[test]
    fn missing_counter() {
        let m = FlopsModel::new(4, 1, 1).unwrap();
        assert!(matches!(measured_bridge_vs_direct(&m, None), Err(Error::Contract(_))));
    }

    #[test]
    fn counter_reset_and_monotone() {
        let mut c = OpCounter::new();
        c.on_matmul(2, 3, 4);
        let first = c.flops();
        c.on_matmul(1, 1, 1);
        assert!(c.flops() >= first);
        assert_eq!(c.flops(), 48 + 2);
        c.reset();
        assert_eq!((c.flops(), c.calls()), (0, 0));
    }

    #[test]
    fn report_keys() {
        let m = FlopsModel::new(16, 2, 8).unwrap();
        let r = FlopsReport::new(&m, Some(Measured { counted_dir: 8192, counted_bridge: 1024 }));
        let v = serde_json::to_value(&r).unwrap();
        for k in ["N", "M_cat", "C", "analytic_dir", "analytic_bridge", "counted_dir", "counted_bridge", "ratio"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["ratio"], 0.125);
    }
}
