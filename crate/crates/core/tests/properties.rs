use nmce::eval::{ari, clustering_accuracy, hungarian_match, nmi};
use nmce::objectives::{
    coding_rate, constraint_d, per_cluster_rate, rate_reduction, singular_value_identity_check, CodingRateParams,
    FeatureBatch, SoftAssignment,
};
use nmce::rng::{normal_matrix, rng_from_seed};
use nmce::Matrix;
use proptest::prelude::*;

fn unit_rows(m: usize, d: usize, seed: u64) -> FeatureBatch {
    FeatureBatch::normalized(&normal_matrix(m, d, 1.0, &mut rng_from_seed(seed))).unwrap()
}

fn soft_assignment(m: usize, k: usize, seed: u64) -> SoftAssignment {
    let logits = normal_matrix(m, k, 2.0, &mut rng_from_seed(seed));
    let g = Matrix::from_fn(m, k, |r, c| {
        let row = logits.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        (row[c] - mx).exp() / total
    });
    SoftAssignment::new(g).unwrap()
}

fn random_orthogonal(d: usize, seed: u64) -> Matrix {
    let a = normal_matrix(d, d, 1.0, &mut rng_from_seed(seed));
    let q = a.to_nalgebra().qr().q();
    Matrix::from_nalgebra(&q)
}

fn rotate(z: &FeatureBatch, q: &Matrix) -> FeatureBatch {
    FeatureBatch::new(z.matrix().matmul(q).unwrap()).unwrap()
}

fn eps_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.01), Just(0.1), Just(0.5), Just(1.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coding_rate_is_rotation_invariant(m in 2usize..40, d in 1usize..8, eps in eps_strategy(), seed in any::<u64>()) {
        let p = CodingRateParams::new(eps, d).unwrap();
        let z = unit_rows(m, d, seed);
        let zq = rotate(&z, &random_orthogonal(d, seed ^ 1));
        let (a, b) = (coding_rate(&z, &p).unwrap(), coding_rate(&zq, &p).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn coding_rate_ignores_row_order(m in 2usize..40, d in 1usize..8, seed in any::<u64>()) {
        let p = CodingRateParams::new(0.1, d).unwrap();
        let z = unit_rows(m, d, seed);
        let order: Vec<usize> = (0..m).rev().collect();
        let zr = FeatureBatch::new(z.matrix().select_rows(&order)).unwrap();
        let (a, b) = (coding_rate(&z, &p).unwrap(), coding_rate(&zr, &p).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn rate_reduction_is_nonnegative(m in 2usize..40, d in 1usize..8, k in 1usize..5, eps in eps_strategy(), seed in any::<u64>()) {
        let p = CodingRateParams::new(eps, d).unwrap();
        let z = unit_rows(m, d, seed);
        let g = soft_assignment(m, k, seed ^ 2);
        let dr = rate_reduction(&z, &g, &p).unwrap();
        prop_assert!(dr >= -1e-9, "ΔR = {dr}");
    }

    #[test]
    fn uniform_assignment_matches_coding_rate(m in 2usize..40, d in 1usize..8, k in 1usize..5, eps in eps_strategy(), seed in any::<u64>()) {
        let p = CodingRateParams::new(eps, d).unwrap();
        let z = unit_rows(m, d, seed);
        let g = SoftAssignment::new(Matrix::filled(m, k, 1.0 / k as f64)).unwrap();
        let (a, b) = (per_cluster_rate(&z, &g, &p).unwrap(), coding_rate(&z, &p).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn constraint_is_rotation_invariant(m in 1usize..40, d in 1usize..8, seed in any::<u64>()) {
        let z = unit_rows(m, d, seed);
        let z2 = unit_rows(m, d, seed ^ 3);
        let q = random_orthogonal(d, seed ^ 4);
        let a = constraint_d(&z, &z2).unwrap();
        let b = constraint_d(&rotate(&z, &q), &rotate(&z2, &q)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=2.0).contains(&a));
        prop_assert!(constraint_d(&z, &z).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn logdet_identity_holds(m in 1usize..33, d in 1usize..17, seed in any::<u64>()) {
        let z = normal_matrix(m, d, 1.0, &mut rng_from_seed(seed));
        let c = singular_value_identity_check(&z).unwrap();
        prop_assert!(c.abs_diff <= 1e-8, "{c:?}");
    }

    #[test]
    fn metrics_ignore_label_names(
        truth in prop::collection::vec(0usize..4, 2..60),
        pred_raw in prop::collection::vec(0usize..4, 60),
        shift in 1usize..4,
    ) {
        let pred = &pred_raw[..truth.len()];
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % 4).collect();
        prop_assert_eq!(clustering_accuracy(pred, &truth).unwrap(), clustering_accuracy(&renamed, &truth).unwrap());
        prop_assert!((nmi(pred, &truth).unwrap() - nmi(&renamed, &truth).unwrap()).abs() <= 1e-12);
        prop_assert!((ari(pred, &truth).unwrap() - ari(&renamed, &truth).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn nmi_and_ari_are_symmetric(
        a in prop::collection::vec(0usize..4, 2..60),
        b_raw in prop::collection::vec(0usize..4, 60),
    ) {
        let b = &b_raw[..a.len()];
        prop_assert!((nmi(&a, b).unwrap() - nmi(b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!((ari(&a, b).unwrap() - ari(b, &a).unwrap()).abs() <= 1e-12);
        let acc = clustering_accuracy(&a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn hungarian_returns_a_permutation_at_least_as_good_as_identity(
        n in 1usize..12,
        cells in prop::collection::vec(0i64..100, 144),
    ) {
        let w: Vec<Vec<i64>> = (0..n).map(|i| cells[i * n..(i + 1) * n].to_vec()).collect();
        let perm = hungarian_match(&w);
        let mut seen = perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let score: i64 = perm.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
        let diag: i64 = (0..n).map(|i| w[i][i]).sum();
        prop_assert!(score >= diag);
    }
}
