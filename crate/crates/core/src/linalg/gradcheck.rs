//! Central-difference gradient checking against the tape's backward pass.

use crate::error::Result;
use crate::linalg::{Matrix, Tape, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Coordinates with both gradients below this magnitude are compared on an
/// absolute rather than relative scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// At most this many coordinates per parameter are probed.
const MAX_COORDS_PER_PARAM: usize = 400;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares backward-pass gradients of `loss_fn` with central differences of
/// step `h`. `loss_fn` builds the scalar loss on a fresh tape from leaf vars
/// holding `params`.
pub fn finite_diff_check<F>(loss_fn: F, params: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_on(Tape::new, loss_fn, params, h)
}

/// [`finite_diff_check`] with a caller-supplied tape constructor.
pub fn finite_diff_check_on<F, T>(new_tape: T, loss_fn: F, params: &[Matrix], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    T: Fn() -> Tape,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |ps: &[Matrix]| -> Result<f64> {
        let mut tape = new_tape();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = new_tape();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get_or_zeros(*v, p))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let stride = n.div_ceil(MAX_COORDS_PER_PARAM).max(1);
        for k in (0..n).step_by(stride) {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[k];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
