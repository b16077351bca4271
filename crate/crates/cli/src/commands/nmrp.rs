use std::path::Path;

use serde_json::json;

use semabridge::bridge::{fuse_forward_traced, FusionParams, TextEmbeddings};
use semabridge::degradation::{
    degrade, instance_response, pooled_features, population_nmrp, synth_scene, ImageObservation,
    LevelObservation,
};
use semabridge::tensor::conv2d;
use semabridge::{Result, Rng, Tensor};

use super::{path_value, write_file, Outcome};
use crate::config::RunConfig;

// Random streams: stream 0 drives the model weights; image `i` draws its
// scene from stream `(i+1) << 8` and the noise of level `l` from
// `((i+1) << 8) | (l+1)`, so every (image, level) pair is reproducible on
// its own.
fn scene_stream(image: usize) -> u64 {
    ((image as u64) + 1) << 8
}

pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<Outcome> {
    let s = cfg.shapes;
    let mut rng = Rng::new(cfg.seed);
    let params = FusionParams::init(s.fusion_dims(), &mut rng)?;
    let text = TextEmbeddings::random(s.m_cat, s.d_t, &mut rng)?;
    let proj_rgb = Tensor::randn(&[s.c_rgb, 3, 1, 1], 1.0 / 3f64.sqrt(), &mut rng);
    let proj_ir = Tensor::randn(&[s.c_ir, 1, 1, 1], 1.0, &mut rng);

    let mut images = Vec::with_capacity(cfg.nmrp_images);
    for i in 0..cfg.nmrp_images {
        let stream = scene_stream(i);
        let scene = synth_scene(&mut Rng::with_stream(cfg.seed, stream), &cfg.scene)?;
        let x_ir = conv2d(&pooled_features(&scene.ir, cfg.nmrp.stride)?, &proj_ir, 0)?;
        let mut levels = Vec::with_capacity(cfg.nmrp_levels.len());
        for &l in &cfg.nmrp_levels {
            let level = cfg.level(l)?;
            let mut noise = Rng::with_stream(cfg.seed, stream | (l as u64 + 1));
            let rgb = degrade(&scene.rgb, &level, &mut noise)?;
            let x_rgb = conv2d(&pooled_features(&rgb, cfg.nmrp.stride)?, &proj_rgb, 0)?;
            let trace = fuse_forward_traced(&x_rgb, &x_ir, &text, &params)?;
            levels.push(LevelObservation::from_maps(l, &trace.maps, &x_ir));
        }
        images.push(ImageObservation { levels, boxes: scene.boxes });
    }

    let report = population_nmrp(&images, &cfg.nmrp)?;
    let instance = match images.first() {
        Some(first) => instance_response(&first.levels, &first.boxes, &cfg.nmrp)?,
        None => Vec::new(),
    };
    if let Some(path) = out {
        write_file(path, report.to_csv().as_bytes())?;
    }
    Outcome::pass(json!({
        "command": "nmrp",
        "seed": cfg.seed,
        "images": cfg.nmrp_images,
        "levels": cfg.nmrp_levels,
        "report": report,
        "instance_first_image": instance,
        "output": path_value(out),
    }))
}
