use std::path::Path;

use serde_json::json;

use semabridge::degradation::{degrade_with, Image8};
use semabridge::{Error, Result, Rng};

use super::{write_file, Outcome};
use crate::cli::DegradeArgs;
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, args: &DegradeArgs, out: Option<&Path>) -> Result<Outcome> {
    let output = args
        .output
        .as_deref()
        .or(out)
        .ok_or_else(|| Error::Config("degrade needs an output path".into()))?;
    let level = cfg.level(args.level)?;
    let bytes = std::fs::read(&args.input).map_err(|source| Error::Io {
        path: args.input.clone(),
        source,
    })?;
    let img = Image8::decode_pnm(&bytes)?;
    let mut rng = Rng::with_stream(cfg.seed, level.level as u64);
    let degraded = degrade_with(&img, &level, (!args.no_noise).then_some(&mut rng))?;
    if level.level == 0 {
        // untouched: keep the caller's exact bytes, header included
        write_file(output, &bytes)?;
    } else {
        write_file(output, &degraded.encode_pnm()?)?;
    }
    Outcome::pass(json!({
        "command": "degrade",
        "seed": cfg.seed,
        "level": level,
        "noise": !args.no_noise,
        "mean_in": img.mean(),
        "mean_out": degraded.mean(),
        "output": output.display().to_string(),
    }))
}
