use std::path::Path;

use serde::Serialize;
use serde_json::json;

use semabridge::degradation::{otsu_occupancy, synth_scene, BoxAnnotation, Image8, OccupancyResult};
use semabridge::{Error, Result, Rng};

use super::{path_value, write_file, Outcome};
use crate::cli::OccupancyArgs;
use crate::config::RunConfig;

#[derive(Serialize)]
struct BoxOccupancy {
    bbox: BoxAnnotation,
    #[serde(flatten)]
    result: OccupancyResult,
}

pub fn run(cfg: &RunConfig, args: &OccupancyArgs, out: Option<&Path>) -> Result<Outcome> {
    let (ir, boxes, source) = match (&args.ir, &args.boxes) {
        (Some(ir), Some(boxes)) => {
            let img = Image8::read_pnm(ir)?;
            let text = std::fs::read_to_string(boxes).map_err(|source| Error::Io {
                path: boxes.clone(),
                source,
            })?;
            let parsed: Vec<BoxAnnotation> = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", boxes.display())))?;
            (img, parsed, "file")
        }
        _ => {
            let scene = synth_scene(&mut Rng::new(cfg.seed), &cfg.scene)?;
            (scene.ir, scene.boxes, "synthetic")
        }
    };
    let results = boxes
        .iter()
        .map(|b| Ok(BoxOccupancy { bbox: *b, result: otsu_occupancy(&ir, b)? }))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = out {
        let mut csv = String::from("box,x1,y1,x2,y2,r,threshold,degenerate\n");
        for (i, r) in results.iter().enumerate() {
            let [x1, y1, x2, y2] = r.bbox.to_array();
            csv.push_str(&format!(
                "{i},{x1},{y1},{x2},{y2},{:.6},{},{}\n",
                r.result.r, r.result.threshold, r.result.degenerate
            ));
        }
        write_file(path, csv.as_bytes())?;
    }
    let valid: Vec<f64> = results.iter().filter(|r| !r.result.degenerate).map(|r| r.result.r).collect();
    let mean_r = if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    };
    Outcome::pass(json!({
        "command": "occupancy",
        "seed": cfg.seed,
        "source": source,
        "boxes": results,
        "degenerate": results.len() - valid.len(),
        "mean_r": mean_r,
        "output": path_value(out),
    }))
}
