use std::path::Path;

use serde_json::json;

use semabridge::autodiff::reports_to_csv;
use semabridge::{alignment, bridge, freq, Result};

use super::{path_value, write_file, Outcome};
use crate::cli::{GradcheckArgs, Module};
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig, args: &GradcheckArgs, out: Option<&Path>) -> Result<Outcome> {
    let reports = match args.module {
        Module::BridgeFusion => bridge::gradcheck_suite(cfg.seed)?,
        Module::FreqBackbone => freq::gradcheck_suite(cfg.seed)?,
        Module::AlignmentHead => alignment::gradcheck_suite(cfg.seed)?,
    };
    if let Some(path) = out {
        write_file(path, reports_to_csv(&reports).as_bytes())?;
    }
    let pass = reports.iter().all(|r| r.pass);
    Outcome::with_status(
        json!({
            "command": "gradcheck",
            "module": args.module.name(),
            "seed": cfg.seed,
            "pass": pass,
            "reports": reports,
            "output": path_value(out),
        }),
        pass,
    )
}
