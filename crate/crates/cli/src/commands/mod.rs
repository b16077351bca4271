mod baseline;
mod degrade;
mod flops;
mod fuse;
mod gradcheck;
mod nmrp;
mod occupancy;
mod synth;

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use semabridge::{Error, Result, Tensor};

use crate::cli::{Cli, Command};
use crate::config::RunConfig;

/// Result of a subcommand: the stdout document and whether the run met
/// its own pass criteria.
pub struct Outcome {
    pub json: String,
    pub ok: bool,
}

impl Outcome {
    fn pass(value: impl Serialize) -> Result<Self> {
        Self::with_status(value, true)
    }

    fn with_status(value: impl Serialize, ok: bool) -> Result<Self> {
        let json = serde_json::to_string_pretty(&value).map_err(|e| Error::Eval(e.to_string()))?;
        Ok(Self { json, ok })
    }
}

/// Config file, then command-line overrides, then validation.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Fuse(a) => a.shapes.apply(&mut cfg.shapes),
        Command::Baseline(a) => a.shapes.apply(&mut cfg.shapes),
        Command::Nmrp(a) => {
            a.shapes.apply(&mut cfg.shapes);
            if let Some(n) = a.images {
                cfg.nmrp_images = n;
            }
            if let Some(levels) = &a.levels {
                cfg.nmrp_levels = levels.clone();
            }
        }
        Command::Occupancy(a) => {
            if let Some(f) = a.fill {
                cfg.scene.fill = f;
            }
        }
        Command::Synth(a) => {
            let s = &mut cfg.scene;
            s.width = a.width.unwrap_or(s.width);
            s.height = a.height.unwrap_or(s.height);
            s.objects = a.objects.unwrap_or(s.objects);
            s.fill = a.fill.unwrap_or(s.fill);
        }
        Command::Degrade(_) | Command::Flops(_) | Command::Gradcheck(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Fuse(a) => fuse::run(&cfg, a, out),
        Command::Baseline(a) => baseline::run(&cfg, a, out),
        Command::Degrade(a) => degrade::run(&cfg, a, out),
        Command::Nmrp(_) => nmrp::run(&cfg, out),
        Command::Occupancy(a) => occupancy::run(&cfg, a, out),
        Command::Flops(a) => flops::run(&cfg, a),
        Command::Gradcheck(a) => gradcheck::run(&cfg, a, out),
        Command::Synth(_) => synth::run(&cfg, out),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize)]
pub(crate) struct TensorStats {
    shape: Vec<usize>,
    mean: f64,
    min: f64,
    max: f64,
    l2: f64,
}

impl TensorStats {
    pub(crate) fn of(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            mean: t.mean(),
            min: t.min(),
            max: t.max(),
            l2: t.sum_squares().sqrt(),
        }
    }
}

pub(crate) fn path_value(p: Option<&Path>) -> Value {
    p.map_or(Value::Null, |p| Value::String(p.display().to_string()))
}
