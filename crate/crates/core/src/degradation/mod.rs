//! Measurement harness for support behaviour under RGB degradation.
//!
//! * [`degrade`] applies the composite brightness / blur / noise schedule
//!   in the 8-bit domain.
//! * [`instance_response`] and [`population_nmrp`] turn support maps and IR
//!   features into normalized mean responses inside and outside annotated
//!   boxes.
//! * [`otsu_occupancy`] estimates how much of a box is actually foreground.
//! * [`synth_scene`] renders annotated RGB–IR pairs with known ground truth.

mod degrade;
mod image;
mod nmrp;
mod otsu;
mod synth;

pub use degrade::{
    blur_sigma, degrade, degrade_with, gaussian_blur, gaussian_kernel, reflect101, DegradationLevel,
    STANDARD_LEVELS,
};
pub use image::Image8;
pub use nmrp::{
    gt_mask, instance_response, min_max, population_nmrp, raw_identity_residual, raw_responses,
    ImageObservation, InstanceResponse, LevelObservation, NmrpConfig, NmrpReport, NmrpRow,
    RawResponses, Region, Support, EPS, STRIDE,
};
pub use otsu::{otsu_occupancy, otsu_threshold, BoxAnnotation, OccupancyResult};
pub use synth::{pooled_features, synth_scene, Scene, SceneSpec};
