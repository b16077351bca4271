use semabridge::complexity::{measured_bridge_vs_direct, FlopsModel, FlopsReport, OpCounter};
use semabridge::Result;

use super::Outcome;
use crate::cli::FlopsArgs;
use crate::config::RunConfig;

/// Above this many multiply-adds the direct path is not executed.
const MEASURE_LIMIT: u64 = 1 << 28;

pub fn run(cfg: &RunConfig, args: &FlopsArgs) -> Result<Outcome> {
    let s = cfg.shapes;
    let n = args.n.unwrap_or((s.height * s.width) as u64);
    let m = args.mcat.unwrap_or(s.m_cat as u64);
    let c = args.c.unwrap_or(s.c_ir as u64);
    let model = FlopsModel::new(n, m, c)?;
    let measured = if args.no_measure || model.flops_dir / 4 > MEASURE_LIMIT {
        None
    } else {
        let mut counter = OpCounter::new();
        Some(measured_bridge_vs_direct(&model, Some(&mut counter))?)
    };
    Outcome::pass(FlopsReport::new(&model, measured))
}
