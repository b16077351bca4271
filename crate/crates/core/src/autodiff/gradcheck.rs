//! Central finite-difference verification of analytic gradients.

use std::fmt::Write as _;

use serde::Serialize;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference step used throughout the crate.
pub const DEFAULT_STEP: f64 = 1e-5;
/// A parameter passes when its worst element is below this relative error.
pub const PASS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub parameter: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// `|a − f| / max(1e-8, |a| + |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Scalar objective returning its value and the analytic gradient of every
/// parameter, in the order the parameters were given.
pub type Objective<'a> = dyn Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)> + 'a;

/// Compare the analytic gradient of `f` at `params` against central
/// differences with the given `step`, one report per parameter.
pub fn gradcheck(
    params: &[(String, Tensor)],
    step: f64,
    f: &Objective<'_>,
) -> Result<Vec<GradCheckReport>> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::param(format!("step {step} outside [1e-7, 1e-3]")));
    }
    let mut point: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let (value, analytic) = f(&point)?;
    if !value.is_finite() {
        return Err(Error::Eval(format!("objective is {value} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Contract(format!(
            "objective returned {} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut reports = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        analytic[p].check_same_shape(&point[p], "gradcheck")?;
        let mut worst: f64 = 0.0;
        for i in 0..point[p].len() {
            let orig = point[p].data()[i];
            point[p].data_mut()[i] = orig + step;
            let (up, _) = f(&point)?;
            point[p].data_mut()[i] = orig - step;
            let (down, _) = f(&point)?;
            point[p].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Eval(format!(
                    "objective not finite when perturbing {name}[{i}]"
                )));
            }
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
        reports.push(GradCheckReport {
            parameter: name.clone(),
            max_rel_err: worst,
            pass: worst < PASS_THRESHOLD,
        });
    }
    Ok(reports)
}

/// Wrap a graph builder into an [`Objective`]: each evaluation records a new
/// tape with the parameters as named leaves and runs one backward pass.
pub fn tape_objective<'a, F>(names: Vec<String>, build: F) -> impl Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)> + 'a
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + 'a,
{
    move |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = names
            .iter()
            .zip(values)
            .map(|(n, v)| tape.param(n.clone(), v.clone()))
            .collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.value(loss).item()?;
        let grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
    }
}

/// Render reports as `parameter,max_rel_err,pass` CSV.
pub fn reports_to_csv(reports: &[GradCheckReport]) -> String {
    let mut out = String::from("parameter,max_rel_err,pass\n");
    for r in reports {
        let _ = writeln!(out, "{},{:.6e},{}", r.parameter, r.max_rel_err, r.pass);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn half_norm_sq(values: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let x = &values[0];
        Ok((0.5 * x.sum_squares(), vec![x.clone()]))
    }

    #[test]
    fn quadratic_passes_tightly() {
        let mut rng = Rng::new(41);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let r = gradcheck(&[("x".into(), x)], DEFAULT_STEP, &half_norm_sq).unwrap();
        assert!(r[0].pass);
        assert!(r[0].max_rel_err < 1e-8, "{}", r[0].max_rel_err);
    }

    #[test]
    fn sign_flip_fails() {
        let mut rng = Rng::new(42);
        let x = Tensor::randn(&[5], 1.0, &mut rng);
        let wrong = |v: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let (f, g) = half_norm_sq(v)?;
            Ok((f, vec![g[0].scale(-1.0)]))
        };
        let r = gradcheck(&[("x".into(), x)], DEFAULT_STEP, &wrong).unwrap();
        assert!(!r[0].pass);
        assert!((r[0].max_rel_err - 1.0).abs() < 1e-6);
    }

    #[test]
    fn step_out_of_range() {
        let x = Tensor::ones(&[1]);
        assert!(gradcheck(&[("x".into(), x.clone())], 1e-2, &half_norm_sq).is_err());
        assert!(gradcheck(&[("x".into(), x)], 1e-9, &half_norm_sq).is_err());
    }

    #[test]
    fn non_finite_objective() {
        let bad = |_: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            Ok((f64::NAN, vec![Tensor::zeros(&[1])]))
        };
        let r = gradcheck(&[("x".into(), Tensor::ones(&[1]))], 1e-5, &bad);
        assert!(matches!(r, Err(Error::Eval(_))));
    }

    #[test]
    fn csv_layout() {
        let csv = reports_to_csv(&[GradCheckReport {
            parameter: "alpha".into(),
            max_rel_err: 1.5e-9,
            pass: true,
        }]);
        assert_eq!(csv, "parameter,max_rel_err,pass\nalpha,1.500000e-9,true\n");
    }

    #[test]
    fn tape_objective_matches_closed_form() {
        let f = tape_objective(vec!["x".into()], |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        });
        let (val, g) = f(&[Tensor::new(&[2], vec![1.0, 2.0]).unwrap()]).unwrap();
        assert_eq!(val, 5.0);
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }
}
