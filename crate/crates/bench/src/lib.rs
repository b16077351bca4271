//! Fixtures shared by the benchmarks.

use semabridge::baselines::BaselineParams;
use semabridge::bridge::{FusionDims, FusionProblem};
use semabridge::Rng;

pub const CHANNELS: usize = 16;
pub const CATEGORIES: usize = 4;
pub const TEXT_DIM: usize = 16;

/// A random bridged-fusion problem on a `side × side` grid.
pub fn fusion_problem(side: usize, seed: u64) -> FusionProblem {
    let dims = FusionDims { c_rgb: CHANNELS, c_ir: CHANNELS, d_t: TEXT_DIM, d_k: CHANNELS };
    FusionProblem::random(dims, CATEGORIES, side, side, &mut Rng::new(seed)).expect("valid fixture shape")
}

pub fn baseline_params(seed: u64) -> BaselineParams {
    BaselineParams::init(CHANNELS, CHANNELS, CHANNELS, TEXT_DIM, &mut Rng::new(seed)).expect("valid fixture shape")
}
