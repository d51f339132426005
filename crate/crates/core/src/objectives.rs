//! Coding-rate objectives.
//!
//! With features `Z` (m×d, unit rows) and distortion `ε`:
//!
//! - coding rate `R(Z) = ½·logdet(I + d/ε²·(1/m)·ZᵀZ)`
//! - per-cluster rate for soft memberships `Γ` (m×n):
//!   `Σⱼ (mⱼ/m)·½·logdet(I + d/(ε²·mⱼ)·Zᵀ·diag(Γ·ⱼ)·Z)`, `mⱼ = Σᵢ Γᵢⱼ`
//! - rate reduction `ΔR = R − per-cluster rate`
//! - view constraint `D(Z, Z') = mean(1 − cos(zᵢ, z'ᵢ))`
//! - TCR loss `−R([Z; Z']) + λ·D`
//! - NMCE loss `per-cluster rate(Z̄, Γ̄) − R(Z̄) + λ·D`
//!
//! Each loss exists twice: as a differentiable builder on a [`Tape`] (the
//! `*_graph` functions) and as a plain value function on checked inputs.

use crate::error::{NmceError, Result};
use crate::linalg::{decomp, Matrix, Tape, Var};

/// Clusters with total membership below this contribute no rate.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-8;

/// Tolerance for the unit-row and row-sum invariants.
pub const INVARIANT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodingRateParams {
    pub epsilon: f64,
    pub d_emb: usize,
}

impl CodingRateParams {
    pub fn new(epsilon: f64, d_emb: usize) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(NmceError::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if d_emb == 0 {
            return Err(NmceError::invalid("d_emb must be >= 1"));
        }
        Ok(CodingRateParams { epsilon, d_emb })
    }

    /// `d/ε²`.
    pub fn scale(&self) -> f64 {
        self.d_emb as f64 / (self.epsilon * self.epsilon)
    }
}

/// Features with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch(Matrix);

impl FeatureBatch {
    pub fn new(z: Matrix) -> Result<Self> {
        for (r, n) in z.row_norms().iter().enumerate() {
            if (n - 1.0).abs() > INVARIANT_TOL {
                return Err(NmceError::invalid(format!("feature row {r} has norm {n}, expected 1")));
            }
        }
        Ok(FeatureBatch(z))
    }

    /// Projects every row of `z` onto the unit sphere.
    pub fn normalized(z: &Matrix) -> Result<Self> {
        let mut tape = Tape::new();
        let v = tape.constant(z.clone());
        let n = tape.row_normalize(v)?;
        Ok(FeatureBatch(tape.value(n).clone()))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Nonnegative cluster memberships whose rows sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment(Matrix);

impl SoftAssignment {
    pub fn new(gamma: Matrix) -> Result<Self> {
        if gamma.cols() == 0 {
            return Err(NmceError::invalid("assignment needs at least one cluster"));
        }
        for r in 0..gamma.rows() {
            let row = gamma.row(r);
            if row.iter().any(|v| *v < 0.0) {
                return Err(NmceError::invalid(format!("assignment row {r} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > INVARIANT_TOL {
                return Err(NmceError::invalid(format!("assignment row {r} sums to {s}")));
            }
        }
        Ok(SoftAssignment(gamma))
    }

    /// One-hot memberships from hard labels in `0..n_clusters`.
    pub fn one_hot(labels: &[usize], n_clusters: usize) -> Result<Self> {
        let mut g = Matrix::zeros(labels.len(), n_clusters);
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_clusters {
                return Err(NmceError::invalid(format!("label {l} >= {n_clusters}")));
            }
            g.set(i, l, 1.0);
        }
        SoftAssignment::new(g)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn n_clusters(&self) -> usize {
        self.0.cols()
    }

    /// Row-wise argmax, ties to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        argmax_rows(&self.0)
    }
}

/// Row-wise argmax with ties broken towards the lowest column.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Builds `R(Z)` on the tape.
pub fn coding_rate_graph(tape: &mut Tape, z: Var, p: &CodingRateParams) -> Result<Var> {
    let cov = tape.second_moment(z)?;
    let scaled = tape.scale(cov, p.scale())?;
    let inner = tape.add_identity(scaled)?;
    let ld = tape.logdet_spd(inner)?;
    tape.scale(ld, 0.5)
}

/// Builds the membership-weighted sum of per-cluster rates on the tape.
pub fn per_cluster_rate_graph(tape: &mut Tape, z: Var, gamma: Var, p: &CodingRateParams) -> Result<Var> {
    let (m, n) = tape.value(gamma).shape();
    if m != tape.value(z).rows() {
        return Err(NmceError::ShapeMismatch {
            op: "per_cluster_rate",
            left: tape.value(z).shape(),
            right: (m, n),
        });
    }
    let mut total: Option<Var> = None;
    for j in 0..n {
        let col = tape.column(gamma, j)?;
        let mass = tape.sum(col)?;
        if tape.scalar(mass) < EMPTY_CLUSTER_MASS {
            continue;
        }
        // same operation order as coding_rate_graph, so Γ = 1 reproduces it bit for bit
        let gram = tape.weighted_gram(z, col)?;
        let inv_mass = tape.reciprocal(mass)?;
        let cov = tape.scale_by(gram, inv_mass)?;
        let scaled = tape.scale(cov, p.scale())?;
        let inner = tape.add_identity(scaled)?;
        let ld = tape.logdet_spd(inner)?;
        let frac = tape.scale(mass, 1.0 / m as f64)?;
        let weighted = tape.mul(frac, ld)?;
        let term = tape.scale(weighted, 0.5)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Matrix::scalar(0.0))),
    }
}

/// Builds `ΔR = R − per-cluster rate` on the tape.
pub fn rate_reduction_graph(tape: &mut Tape, z: Var, gamma: Var, p: &CodingRateParams) -> Result<Var> {
    let total = coding_rate_graph(tape, z, p)?;
    let clusters = per_cluster_rate_graph(tape, z, gamma, p)?;
    tape.sub(total, clusters)
}

/// Builds `D = mean(1 − cos(zᵢ, z'ᵢ))` on the tape.
pub fn constraint_d_graph(tape: &mut Tape, z: Var, z_prime: Var) -> Result<Var> {
    let cos = tape.row_cosine(z, z_prime)?;
    let m = tape.value(cos).rows();
    let total = tape.sum(cos)?;
    let mean = tape.scale(total, -1.0 / m as f64)?;
    tape.offset(mean, 1.0)
}

/// Named pieces of a loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    pub total_rate: Var,
    pub cluster_rate: Option<Var>,
    pub constraint_d: Var,
}

/// TCR: `−R([Z; Z']) + λ·D(Z, Z')`.
pub fn tcr_loss_graph(tape: &mut Tape, z: Var, z_prime: Var, p: &CodingRateParams, lambda: f64) -> Result<LossParts> {
    let both = tape.concat_rows(z, z_prime)?;
    let total_rate = coding_rate_graph(tape, both, p)?;
    let d = constraint_d_graph(tape, z, z_prime)?;
    let neg = tape.scale(total_rate, -1.0)?;
    let pen = tape.scale(d, lambda)?;
    let loss = tape.add(neg, pen)?;
    Ok(LossParts {
        loss,
        total_rate,
        cluster_rate: None,
        constraint_d: d,
    })
}

/// Re-normalized row average of two views.
pub fn average_features_graph(tape: &mut Tape, z: Var, z_prime: Var) -> Result<Var> {
    let sum = tape.add(z, z_prime)?;
    let half = tape.scale(sum, 0.5)?;
    tape.row_normalize(half)
}

/// NMCE: `per-cluster rate(Z̄, Γ̄) − R(Z̄) + λ·D(Z, Z')`, with `Z̄` the
/// re-normalized view average and `gamma_avg` the view-averaged assignment.
pub fn nmce_loss_graph(
    tape: &mut Tape,
    z: Var,
    z_prime: Var,
    gamma_avg: Var,
    p: &CodingRateParams,
    lambda: f64,
) -> Result<LossParts> {
    let z_avg = average_features_graph(tape, z, z_prime)?;
    let total_rate = coding_rate_graph(tape, z_avg, p)?;
    let cluster_rate = per_cluster_rate_graph(tape, z_avg, gamma_avg, p)?;
    let d = constraint_d_graph(tape, z, z_prime)?;
    let diff = tape.sub(cluster_rate, total_rate)?;
    let pen = tape.scale(d, lambda)?;
    let loss = tape.add(diff, pen)?;
    Ok(LossParts {
        loss,
        total_rate,
        cluster_rate: Some(cluster_rate),
        constraint_d: d,
    })
}

fn eval_scalar(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.scalar(v))
}

pub fn coding_rate(z: &FeatureBatch, p: &CodingRateParams) -> Result<f64> {
    coding_rate_of(z.matrix(), p)
}

/// [`coding_rate`] without the unit-row requirement.
pub fn coding_rate_of(z: &Matrix, p: &CodingRateParams) -> Result<f64> {
    eval_scalar(|t| {
        let zv = t.constant(z.clone());
        coding_rate_graph(t, zv, p)
    })
}

pub fn per_cluster_rate(z: &FeatureBatch, gamma: &SoftAssignment, p: &CodingRateParams) -> Result<f64> {
    per_cluster_rate_of(z.matrix(), gamma.matrix(), p)
}

pub fn per_cluster_rate_of(z: &Matrix, gamma: &Matrix, p: &CodingRateParams) -> Result<f64> {
    eval_scalar(|t| {
        let zv = t.constant(z.clone());
        let gv = t.constant(gamma.clone());
        per_cluster_rate_graph(t, zv, gv, p)
    })
}

pub fn rate_reduction(z: &FeatureBatch, gamma: &SoftAssignment, p: &CodingRateParams) -> Result<f64> {
    Ok(coding_rate(z, p)? - per_cluster_rate(z, gamma, p)?)
}

pub fn constraint_d(z: &FeatureBatch, z_prime: &FeatureBatch) -> Result<f64> {
    eval_scalar(|t| {
        let a = t.constant(z.matrix().clone());
        let b = t.constant(z_prime.matrix().clone());
        constraint_d_graph(t, a, b)
    })
}

pub fn tcr_loss(z: &FeatureBatch, z_prime: &FeatureBatch, p: &CodingRateParams, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(NmceError::invalid("lambda must be >= 0"));
    }
    eval_scalar(|t| {
        let a = t.constant(z.matrix().clone());
        let b = t.constant(z_prime.matrix().clone());
        Ok(tcr_loss_graph(t, a, b, p, lambda)?.loss)
    })
}

pub fn nmce_loss(
    z: &FeatureBatch,
    z_prime: &FeatureBatch,
    gamma_avg: &SoftAssignment,
    p: &CodingRateParams,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(NmceError::invalid("lambda must be >= 0"));
    }
    eval_scalar(|t| {
        let a = t.constant(z.matrix().clone());
        let b = t.constant(z_prime.matrix().clone());
        let g = t.constant(gamma_avg.matrix().clone());
        Ok(nmce_loss_graph(t, a, b, g, p, lambda)?.loss)
    })
}

/// Both sides of `logdet(I + ZᵀZ) = Σ ln(1 + σᵢ²)`.
#[derive(Clone, Copy, Debug)]
pub struct IdentityCheck {
    /// Cholesky log-determinant of `I + ZᵀZ`.
    pub lhs: f64,
    /// Sum over singular values of `Z`.
    pub rhs: f64,
    pub abs_diff: f64,
}

pub fn singular_value_identity_check(z: &Matrix) -> Result<IdentityCheck> {
    let mut gram = z.matmul_tn(z)?;
    for i in 0..gram.rows() {
        gram.set(i, i, gram.get(i, i) + 1.0);
    }
    let lhs = decomp::logdet_spd(&gram)?;
    let rhs: f64 = decomp::singular_values(z).iter().map(|s| (s * s).ln_1p()).sum();
    Ok(IdentityCheck {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, rng_from_seed};

    fn unit(rows: usize, cols: usize, seed: u64) -> FeatureBatch {
        FeatureBatch::normalized(&normal_matrix(rows, cols, 1.0, &mut rng_from_seed(seed))).unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(CodingRateParams::new(0.0, 3).is_err());
        assert!(CodingRateParams::new(0.1, 0).is_err());
    }

    #[test]
    fn coding_rate_of_zero_is_zero() {
        let p = CodingRateParams::new(0.5, 3).unwrap();
        assert_eq!(coding_rate_of(&Matrix::zeros(5, 3), &p).unwrap(), 0.0);
    }

    #[test]
    fn coding_rate_of_identity() {
        let p = CodingRateParams::new(1.0, 2).unwrap();
        let r = coding_rate(&FeatureBatch::new(Matrix::identity(2)).unwrap(), &p).unwrap();
        assert!((r - 2f64.ln()).abs() < 1e-15);
        let p = CodingRateParams::new(1.0, 5).unwrap();
        let r = coding_rate(&FeatureBatch::new(Matrix::identity(5)).unwrap(), &p).unwrap();
        assert!((r - 2.5 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn single_cluster_equals_total_rate() {
        let z = unit(20, 4, 1);
        let p = CodingRateParams::new(0.3, 4).unwrap();
        let g = SoftAssignment::new(Matrix::filled(20, 1, 1.0)).unwrap();
        assert_eq!(per_cluster_rate(&z, &g, &p).unwrap(), coding_rate(&z, &p).unwrap());
        assert!(rate_reduction(&z, &g, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn empty_column_is_ignored() {
        let z = unit(12, 3, 2);
        let p = CodingRateParams::new(0.2, 3).unwrap();
        let labels: Vec<usize> = (0..12).map(|i| if i % 3 == 0 { 0 } else { 2 }).collect();
        let with_empty = SoftAssignment::one_hot(&labels, 3).unwrap();
        let compact: Vec<usize> = labels.iter().map(|l| l / 2).collect();
        let without = SoftAssignment::one_hot(&compact, 2).unwrap();
        assert_eq!(
            per_cluster_rate(&z, &with_empty, &p).unwrap(),
            per_cluster_rate(&z, &without, &p).unwrap()
        );
    }

    #[test]
    fn constraint_d_cases() {
        let z = unit(6, 3, 4);
        assert!(constraint_d(&z, &z).unwrap().abs() < 1e-15);
        let neg = FeatureBatch::new(z.matrix().scale(-1.0).unwrap()).unwrap();
        assert!((constraint_d(&z, &neg).unwrap() - 2.0).abs() < 1e-15);
        let a = FeatureBatch::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
        let b = FeatureBatch::new(Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap()).unwrap();
        assert!((constraint_d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(constraint_d(&a, &unit(3, 2, 1)).is_err());
    }

    #[test]
    fn tcr_aligned_views_is_negative_total_rate() {
        let z = unit(10, 4, 5);
        let p = CodingRateParams::new(0.5, 4).unwrap();
        let both = z.matrix().concat_rows(z.matrix()).unwrap();
        let expect = -coding_rate_of(&both, &p).unwrap();
        assert_eq!(tcr_loss(&z, &z, &p, 7.0).unwrap(), expect);
        let zero = Matrix::zeros(4, 3);
        let p3 = CodingRateParams::new(0.5, 3).unwrap();
        let r = eval_scalar(|t| {
            let a = t.constant(zero.clone());
            let both = t.concat_rows(a, a)?;
            let r = coding_rate_graph(t, both, &p3)?;
            t.scale(r, -1.0)
        })
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn nmce_single_cluster_no_constraint_is_zero() {
        let z = unit(16, 4, 6);
        let z2 = unit(16, 4, 7);
        let p = CodingRateParams::new(0.5, 4).unwrap();
        let g = SoftAssignment::new(Matrix::filled(16, 1, 1.0)).unwrap();
        assert!(nmce_loss(&z, &z2, &g, &p, 0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identity_check_closed_forms() {
        let c = singular_value_identity_check(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!((c.lhs, c.rhs, c.abs_diff), (0.0, 0.0, 0.0));
        let c = singular_value_identity_check(&Matrix::identity(3)).unwrap();
        assert!((c.lhs - 8f64.ln()).abs() < 1e-14);
        assert!((c.rhs - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn unit_invariants_enforced() {
        assert!(FeatureBatch::new(Matrix::filled(2, 2, 1.0)).is_err());
        assert!(SoftAssignment::new(Matrix::filled(2, 2, 0.4)).is_err());
        assert!(SoftAssignment::new(Matrix::from_rows(&[vec![1.5, -0.5]]).unwrap()).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let m = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.2, 0.8], vec![0.3, 0.3]]).unwrap();
        assert_eq!(argmax_rows(&m), vec![0, 1, 0]);
    }
}
