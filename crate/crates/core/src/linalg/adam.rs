use crate::error::{NmceError, Result};
use crate::linalg::Matrix;

/// Moment estimates for Adam, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with β1 = 0.9, β2 = 0.999, eps = 1e-8.
    pub fn new(params: &[Matrix]) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[Matrix], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay:
///
/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps)`.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(NmceError::invalid(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(NmceError::ShapeMismatch {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
    }
    if !(lr >= 0.0) || !(weight_decay >= 0.0) {
        return Err(NmceError::invalid("adam_step: lr and weight decay must be >= 0"));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((pi, gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * weight_decay * *pi + lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.ensure_finite("adam_step")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Matrix::from_fn(2, 3, |r, c| (r + c) as f64)];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[Matrix::zeros(2, 3)], &mut s, 0.1, 0.0).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Matrix::scalar(0.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::scalar(1.0)], &mut s, 0.1, 0.0).unwrap();
        // m̂ = v̂ = 1 ⇒ Δθ = −0.1/(1 + 1e-8)
        assert!((p[0].item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn parameters_update_independently() {
        let mut both = vec![Matrix::scalar(1.0), Matrix::scalar(-2.0)];
        let g = [Matrix::scalar(0.3), Matrix::scalar(-5.0)];
        let mut s = AdamState::new(&both);
        adam_step(&mut both, &g, &mut s, 0.01, 0.0).unwrap();

        let mut only = vec![Matrix::scalar(1.0)];
        let mut s1 = AdamState::new(&only);
        adam_step(&mut only, &g[..1], &mut s1, 0.01, 0.0).unwrap();
        assert_eq!(both[0], only[0]);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = vec![Matrix::scalar(2.0)];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Matrix::scalar(0.0)], &mut s, 0.1, 0.5).unwrap();
        assert!((p[0].item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Matrix::zeros(2, 2)];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Matrix::zeros(2, 1)], &mut s, 0.1, 0.0).is_err());
    }
}
