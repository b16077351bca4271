use std::path::Path;

use serde::{Deserialize, Serialize};

use semabridge::bridge::FusionDims;
use semabridge::degradation::{DegradationLevel, NmrpConfig, SceneSpec, STANDARD_LEVELS};
use semabridge::{Error, Result};

/// Tensor sizes shared by the model-facing subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shapes {
    pub c_rgb: usize,
    pub c_ir: usize,
    pub height: usize,
    pub width: usize,
    pub m_cat: usize,
    pub d_t: usize,
    pub d_k: usize,
    pub d_embed: usize,
}

impl Default for Shapes {
    fn default() -> Self {
        Self {
            c_rgb: 8,
            c_ir: 8,
            height: 8,
            width: 8,
            m_cat: 4,
            d_t: 16,
            d_k: 8,
            d_embed: 512,
        }
    }
}

impl Shapes {
    pub fn fusion_dims(&self) -> FusionDims {
        FusionDims {
            c_rgb: self.c_rgb,
            c_ir: self.c_ir,
            d_t: self.d_t,
            d_k: self.d_k,
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("c_rgb", self.c_rgb),
            ("c_ir", self.c_ir),
            ("height", self.height),
            ("width", self.width),
            ("m_cat", self.m_cat),
            ("d_t", self.d_t),
            ("d_k", self.d_k),
            ("d_embed", self.d_embed),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("shape parameter {name} must be ≥ 1"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub shapes: Shapes,
    /// Degradation schedule, indexed by level number.
    pub levels: Vec<DegradationLevel>,
    /// Levels measured by `nmrp`.
    pub nmrp_levels: Vec<u8>,
    pub nmrp_images: usize,
    pub nmrp: NmrpConfig,
    pub scene: SceneSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            shapes: Shapes::default(),
            levels: STANDARD_LEVELS.to_vec(),
            nmrp_levels: vec![0, 3, 6, 9],
            nmrp_images: 3,
            nmrp: NmrpConfig::default(),
            scene: SceneSpec {
                fill: 0.4,
                hot: 220,
                cold: 40,
                ..SceneSpec::default()
            },
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes.validate()?;
        for (i, l) in self.levels.iter().enumerate() {
            l.validate()?;
            if self.levels[..i].iter().any(|o| o.level == l.level) {
                return Err(Error::Config(format!("degradation level {} listed twice", l.level)));
            }
        }
        for &l in &self.nmrp_levels {
            self.level(l)?;
        }
        if self.nmrp_levels.is_empty() {
            return Err(Error::Config("nmrp_levels is empty".into()));
        }
        if self.nmrp.stride == 0 || !(self.nmrp.eps > 0.0) {
            return Err(Error::Config("nmrp stride and eps must be positive".into()));
        }
        self.scene.validate()
    }

    pub fn level(&self, level: u8) -> Result<DegradationLevel> {
        self.levels
            .iter()
            .find(|l| l.level == level)
            .copied()
            .ok_or_else(|| Error::Config(format!("degradation level {level} is not configured")))
    }
}
