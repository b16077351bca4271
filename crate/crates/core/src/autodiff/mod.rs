//! Reverse-mode differentiation and finite-difference gradient checking.

mod gradcheck;
mod tape;

pub use gradcheck::{
    gradcheck, relative_error, reports_to_csv, tape_objective, GradCheckReport, Objective,
    DEFAULT_STEP, PASS_THRESHOLD,
};
pub use tape::{Gradients, Tape, Var};
