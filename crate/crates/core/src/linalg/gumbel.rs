use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::Result;
use crate::linalg::{Matrix, Tape, Var};

/// An m×n matrix of iid standard Gumbel(0, 1) draws.
pub fn sample_gumbel<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let g = Gumbel::new(0.0, 1.0).expect("valid Gumbel parameters");
    let data = (0..rows * cols).map(|_| g.sample(rng)).collect();
    Matrix::from_raw(rows, cols, data)
}

/// Soft Gumbel-Softmax sample `softmax((logits + g)/τ)`.
///
/// With `noise = None` this is the plain softmax, as used in eval mode.
/// Training passes freshly drawn [`sample_gumbel`] noise; gradient tests pass
/// a frozen draw.
pub fn gumbel_softmax(tape: &mut Tape, logits: Var, temperature: f64, noise: Option<&Matrix>) -> Result<Var> {
    let perturbed = match noise {
        Some(g) => {
            let g = tape.constant(g.clone());
            tape.add(logits, g)?
        }
        None => logits,
    };
    tape.softmax_rows(perturbed, temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_mode_uniform_logits() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(1, 2));
        let y = gumbel_softmax(&mut t, l, 1.0, None).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn train_mode_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Matrix::from_fn(50, 5, |r, c| (r as f64 - 3.0 * c as f64) * 7.0);
        for tau in [0.1, 1.0, 4.0] {
            let mut t = Tape::new();
            let l = t.constant(logits.clone());
            let g = sample_gumbel(50, 5, &mut rng);
            let y = gumbel_softmax(&mut t, l, tau, Some(&g)).unwrap();
            for r in 0..50 {
                let s: f64 = t.value(y).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_temperature_rejected() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(1, 2));
        assert!(gumbel_softmax(&mut t, l, 0.0, None).is_err());
    }
}
