use std::path::Path;

use serde_json::json;

use semabridge::baselines::{conditional_prompt_fuse, vanilla_direct_fuse_counted, BaselineParams};
use semabridge::complexity::OpCounter;
use semabridge::tensor::io;
use semabridge::{Result, Rng, Tensor};

use super::{path_value, write_file, Outcome, TensorStats};
use crate::cli::BaselineArgs;
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, args: &BaselineArgs, out: Option<&Path>) -> Result<Outcome> {
    let s = cfg.shapes;
    let mut rng = Rng::new(cfg.seed);
    let mut params = BaselineParams::init(s.c_rgb, s.c_ir, s.d_k, s.d_t, &mut rng)?;
    if args.zero_prompt {
        params.zero_prompt();
    }
    let x_rgb = Tensor::randn(&[s.c_rgb, s.height, s.width], 1.0, &mut rng);
    let x_ir = Tensor::randn(&[s.c_ir, s.height, s.width], 1.0, &mut rng);
    let text = Tensor::randn(&[s.m_cat, s.d_t], 1.0, &mut rng);

    let mut counter = OpCounter::new();
    let direct = vanilla_direct_fuse_counted(&x_rgb, &x_ir, &params, &mut counter)?;
    let modulated = conditional_prompt_fuse(&direct.response, &text, &params)?;
    if let Some(path) = out {
        write_file(path, &io::encode(&modulated))?;
    }
    let n = (s.height * s.width) as u64;
    Outcome::pass(json!({
        "command": "baseline",
        "seed": cfg.seed,
        "zero_prompt": args.zero_prompt,
        "attention_entries": direct.attention.len(),
        "counted_flops": counter.flops(),
        "expected_flops": 2 * n * n * (s.d_k as u64 + s.c_ir as u64),
        "response": TensorStats::of(&direct.response),
        "modulated": TensorStats::of(&modulated),
        "film_identity": modulated == direct.response,
        "output": path_value(out),
    }))
}
