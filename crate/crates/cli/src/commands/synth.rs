use std::path::Path;

use serde_json::json;

use semabridge::degradation::synth_scene;
use semabridge::{Error, Result, Rng};

use super::{write_file, Outcome};
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome> {
    let scene = synth_scene(&mut Rng::new(cfg.seed), &cfg.scene)?;
    let mut files = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let boxes = serde_json::to_string(&scene.boxes).map_err(|e| Error::Eval(e.to_string()))?;
        for (name, bytes) in [
            ("rgb.ppm", scene.rgb.encode_pnm()?),
            ("ir.pgm", scene.ir.encode_pnm()?),
            ("boxes.json", boxes.into_bytes()),
        ] {
            let path = dir.join(name);
            write_file(&path, &bytes)?;
            files.push(path.display().to_string());
        }
    }
    Outcome::pass(json!({
        "command": "synth",
        "seed": cfg.seed,
        "scene": cfg.scene,
        "boxes": scene.boxes,
        "ir_mean": scene.ir.mean(),
        "rgb_mean": scene.rgb.mean(),
        "files": files,
    }))
}
