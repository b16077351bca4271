use std::path::Path;

use serde_json::json;

use semabridge::alignment::{
    build_visual_token, matching_loss, region_text_similarity, text_to_vision_attend, update_text,
    AlignmentParams, MatchingHead,
};
use semabridge::bridge::{fuse_forward_traced, FusionParams, FusionProblem, TextEmbeddings};
use semabridge::tensor::io;
use semabridge::{Error, Result, Rng};

use super::{path_value, write_file, Outcome, TensorStats};
use crate::cli::FuseArgs;
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, args: &FuseArgs, out: Option<&Path>) -> Result<Outcome> {
    let mut rng = Rng::new(cfg.seed);
    let s = cfg.shapes;
    let problem = match (&args.rgb, &args.ir, &args.text) {
        (Some(rgb), Some(ir), Some(text)) => {
            let x_rgb = io::read_file(rgb)?;
            let x_ir = io::read_file(ir)?;
            let text = io::read_file(text)?;
            let (c_rgb, _, _) = x_rgb.dims3()?;
            let (c_ir, _, _) = x_ir.dims3()?;
            let (m, d_t) = text.dims2()?;
            let mut dims = s.fusion_dims();
            dims.c_rgb = c_rgb;
            dims.c_ir = c_ir;
            dims.d_t = d_t;
            let names = (0..m).map(|i| format!("class{i}")).collect();
            FusionProblem {
                params: FusionParams::init(dims, &mut rng)?,
                text: TextEmbeddings::new(text, names)?,
                x_rgb,
                x_ir,
            }
        }
        (None, None, None) => FusionProblem::random(s.fusion_dims(), s.m_cat, s.height, s.width, &mut rng)?,
        _ => return Err(Error::Config("--rgb, --ir and --text must be given together".into())),
    };
    let trace = fuse_forward_traced(&problem.x_rgb, &problem.x_ir, &problem.text, &problem.params)?;
    let maps = &trace.maps;
    let identity = maps.m_cons.add(&maps.m_dis)?.max_abs_diff(&maps.a_ir)?;
    let f_fuse = &trace.fused.f_fuse;
    if let Some(path) = out {
        write_file(path, &io::encode(f_fuse))?;
    }

    // Alignment on the fused field: categories read out their context,
    // text is updated from the pooled field, and contexts are matched
    // back to their own category.
    let text = problem.text.embeddings();
    let (c, _, _) = f_fuse.dims3()?;
    let (m, d_t) = text.dims2()?;
    let align = AlignmentParams::init(d_t, c, s.d_k, &mut rng)?;
    let head = MatchingHead::init(c, d_t, s.d_embed, &mut rng)?;
    let t2v = text_to_vision_attend(text, f_fuse, &align)?;
    let updated = update_text(text, &build_visual_token(std::slice::from_ref(f_fuse))?, &align)?;
    let sim = region_text_similarity(&t2v.context, &updated, &head)?;
    let pairs: Vec<(usize, usize)> = (0..m).map(|i| (i, i)).collect();
    let loss = matching_loss(&sim, &pairs, head.tau)?;
    Outcome::pass(json!({
        "command": "fuse",
        "seed": cfg.seed,
        "categories": problem.text.categories(),
        "alpha": problem.params.alpha,
        "beta": problem.params.beta,
        "support": {
            "a_ir_mean": maps.a_ir.mean(),
            "a_rgb_mean": maps.a_rgb.mean(),
            "m_cons_mean": maps.m_cons.mean(),
            "m_dis_mean": maps.m_dis.mean(),
            "identity_residual": identity,
        },
        "x_tilde_ir": TensorStats::of(&trace.fused.x_tilde_ir),
        "w_att": TensorStats::of(&trace.fused.w_att),
        "f_fuse": TensorStats::of(f_fuse),
        "alignment": {
            "d_embed": s.d_embed,
            "tau": head.tau,
            "context": TensorStats::of(&t2v.context),
            "text_update_l2": updated.sub(text)?.sum_squares().sqrt(),
            "similarity": TensorStats::of(&sim),
            "matching_loss": loss,
        },
        "output": path_value(out),
    }))
}
