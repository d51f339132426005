//! Self-check suite: gradients against central differences, the singular
//! value identity against Cholesky, metrics against brute force.

use std::fmt::Write as _;

use crate::error::Result;
use crate::eval::{ari, clustering_accuracy, hungarian_match, nmi};
use crate::linalg::gradcheck::{finite_diff_check_on, DEFAULT_STEP};
use crate::linalg::tape::GradFault;
use crate::linalg::{sample_gumbel, Activation, Matrix, Tape, Var};
use crate::model::{Mlp, MlpSpec};
use crate::objectives::{
    coding_rate_graph, constraint_d_graph, nmce_loss_graph, per_cluster_rate_graph, rate_reduction_graph,
    singular_value_identity_check, tcr_loss_graph, CodingRateParams, SoftAssignment, FeatureBatch,
};
use crate::objectives::rate_reduction;
use crate::rng::{derived_rng, normal_matrix, rng_from_seed};

pub const GRAD_TOL: f64 = 1e-4;
pub const IDENTITY_TOL: f64 = 1e-8;
const METRIC_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<CheckOutcome>) -> Self {
        r.unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}")))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Deliberately corrupt a backward rule, to show the gradient checks bite.
    pub fault: Option<GradFault>,
    /// Largest point count for the exhaustive partition oracles.
    pub max_partition_points: usize,
}

impl CheckOptions {
    pub fn standard() -> Self {
        CheckOptions {
            seed: 0,
            fault: None,
            max_partition_points: 8,
        }
    }
}

pub fn run_all(opts: &CheckOptions) -> Vec<CheckOutcome> {
    let mut out = gradient_checks(opts.seed, opts.fault);
    out.push(identity_check(opts.seed, 50));
    out.push(hungarian_check(opts.seed, 6));
    out.extend(partition_metric_checks(opts.max_partition_points));
    out.push(rate_reduction_check(10));
    out
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

pub fn format_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for o in outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status}  {:width$}  {}", o.name, o.detail).expect("write to string");
    }
    out
}

type LossBuilder = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Every loss of the objectives module on random 16×4 batches, plus one
/// full encoder pass, at ε ∈ {0.5, 0.01}.
pub fn gradient_checks(seed: u64, fault: Option<GradFault>) -> Vec<CheckOutcome> {
    let (m, d, k) = (16, 4, 3);
    let mut rng = derived_rng(seed, 0x6AD, 0);
    let z = normal_matrix(m, d, 1.0, &mut rng);
    let z2 = z.add(&normal_matrix(m, d, 0.1, &mut rng)).expect("same shape");
    let logits = normal_matrix(m, k, 1.0, &mut rng);
    let logits2 = logits.add(&normal_matrix(m, k, 0.3, &mut rng)).expect("same shape");
    let lambda = 3.0;

    let mut out = Vec::new();
    for eps in [0.5, 0.01] {
        let p = CodingRateParams::new(eps, d).expect("valid params");
        let cases: Vec<(&str, Vec<Matrix>, LossBuilder)> = vec![
            (
                "coding_rate",
                vec![z.clone()],
                Box::new(move |t, v| {
                    let z = t.row_normalize(v[0])?;
                    coding_rate_graph(t, z, &p)
                }),
            ),
            (
                "per_cluster_rate",
                vec![z.clone(), logits.clone()],
                Box::new(move |t, v| {
                    let z = t.row_normalize(v[0])?;
                    let g = t.softmax_rows(v[1], 1.0)?;
                    per_cluster_rate_graph(t, z, g, &p)
                }),
            ),
            (
                "rate_reduction",
                vec![z.clone(), logits.clone()],
                Box::new(move |t, v| {
                    let z = t.row_normalize(v[0])?;
                    let g = t.softmax_rows(v[1], 1.0)?;
                    rate_reduction_graph(t, z, g, &p)
                }),
            ),
            (
                "constraint_d",
                vec![z.clone(), z2.clone()],
                Box::new(|t, v| {
                    let a = t.row_normalize(v[0])?;
                    let b = t.row_normalize(v[1])?;
                    constraint_d_graph(t, a, b)
                }),
            ),
            (
                "tcr_loss",
                vec![z.clone(), z2.clone()],
                Box::new(move |t, v| {
                    let a = t.row_normalize(v[0])?;
                    let b = t.row_normalize(v[1])?;
                    Ok(tcr_loss_graph(t, a, b, &p, lambda)?.loss)
                }),
            ),
            (
                "nmce_loss",
                vec![z.clone(), z2.clone(), logits.clone(), logits2.clone()],
                Box::new(move |t, v| {
                    let a = t.row_normalize(v[0])?;
                    let b = t.row_normalize(v[1])?;
                    let g1 = t.softmax_rows(v[2], 1.0)?;
                    let g2 = t.softmax_rows(v[3], 1.0)?;
                    let s = t.add(g1, g2)?;
                    let g = t.scale(s, 0.5)?;
                    Ok(nmce_loss_graph(t, a, b, g, &p, lambda)?.loss)
                }),
            ),
        ];
        for (name, params, build) in cases {
            out.push(run_gradcheck(&format!("grad {name} eps={eps}"), &params, build, fault));
        }
        out.push(encoder_gradcheck(seed, eps, fault));
    }
    out
}

fn new_tape(fault: Option<GradFault>) -> Tape {
    match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    }
}

fn run_gradcheck(name: &str, params: &[Matrix], build: LossBuilder, fault: Option<GradFault>) -> CheckOutcome {
    let r = finite_diff_check_on(|| new_tape(fault), build, params, DEFAULT_STEP);
    CheckOutcome::from_result(
        name,
        r.map(|rep| {
            CheckOutcome::new(
                name,
                rep.max_rel_error <= GRAD_TOL,
                format!("max rel err {:.2e} over {} coords", rep.max_rel_error, rep.coords_checked),
            )
        }),
    )
}

/// NMCE loss through a small encoder with frozen Gumbel noise.
fn encoder_gradcheck(seed: u64, eps: f64, fault: Option<GradFault>) -> CheckOutcome {
    let spec = MlpSpec {
        input_dim: 3,
        hidden_widths: vec![8, 8],
        activation: Activation::Elu,
        feature_dim: 4,
        n_clusters: 2,
        gumbel_temperature: 1.0,
    };
    let model = Mlp::init(spec, seed).expect("valid spec");
    let mut rng = derived_rng(seed, 0xE2E, 0);
    let m = 16;
    let x = normal_matrix(m, 3, 1.0, &mut rng);
    let views = x
        .add(&normal_matrix(m, 3, 0.1, &mut rng))
        .and_then(|a| a.concat_rows(&x.add(&normal_matrix(m, 3, 0.1, &mut rng))?))
        .expect("same shape");
    let noise = sample_gumbel(2 * m, 2, &mut rng);
    let p = CodingRateParams::new(eps, 4).expect("valid params");
    let name = format!("grad encoder+nmce eps={eps}");
    let build: LossBuilder = Box::new(move |t, v| {
        let xv = t.constant(views.clone());
        let out = model.forward_graph(t, v, xv, Some(&noise))?;
        let a = t.slice_rows(out.features, 0, m)?;
        let b = t.slice_rows(out.features, m, 2 * m)?;
        let g1 = t.slice_rows(out.assignment, 0, m)?;
        let g2 = t.slice_rows(out.assignment, m, 2 * m)?;
        let s = t.add(g1, g2)?;
        let g = t.scale(s, 0.5)?;
        Ok(nmce_loss_graph(t, a, b, g, &p, 5.0)?.loss)
    });
    let params = Mlp::init(
        MlpSpec {
            input_dim: 3,
            hidden_widths: vec![8, 8],
            activation: Activation::Elu,
            feature_dim: 4,
            n_clusters: 2,
            gumbel_temperature: 1.0,
        },
        seed,
    )
    .expect("valid spec")
    .params()
    .to_vec();
    // biases start at zero; nudge them so every coordinate is exercised
    let params: Vec<Matrix> = params
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            if i % 2 == 1 {
                p.add(&normal_matrix(p.rows(), p.cols(), 0.1, &mut rng)).expect("same shape")
            } else {
                p
            }
        })
        .collect();
    run_gradcheck(&name, &params, build, fault)
}

/// `logdet(I + ZᵀZ)` via Cholesky against `Σ ln(1 + σᵢ²)` on `count` random
/// matrices with up to 32 rows and 16 columns.
pub fn identity_check(seed: u64, count: usize) -> CheckOutcome {
    let mut rng = rng_from_seed(seed ^ 0x1D);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        use rand::Rng;
        let rows = rng.random_range(1..=32);
        let cols = rng.random_range(1..=16);
        let scale = [0.1, 1.0, 3.0][i % 3];
        let z = normal_matrix(rows, cols, scale, &mut rng);
        match singular_value_identity_check(&z) {
            Ok(c) => worst = worst.max(c.abs_diff),
            Err(e) => return CheckOutcome::new("logdet identity", false, format!("error: {e}")),
        }
    }
    CheckOutcome::new(
        "logdet identity",
        worst <= IDENTITY_TOL,
        format!("max |lhs - rhs| {worst:.2e} over {count} matrices"),
    )
}

/// Best matched mass over all permutations.
fn brute_force_assignment(w: &[Vec<i64>]) -> i64 {
    fn go(w: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
        if row == w.len() {
            return 0;
        }
        let mut best = i64::MIN;
        for c in 0..w.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.len()])
}

/// Hungarian matching against exhaustive search for every n ≤ `max_n`.
pub fn hungarian_check(seed: u64, max_n: usize) -> CheckOutcome {
    use rand::Rng;
    let mut rng = rng_from_seed(seed ^ 0x4A);
    let mut trials = 0;
    for n in 1..=max_n {
        for t in 0..200 {
            let hi = if t % 2 == 0 { 4 } else { 100 };
            let w: Vec<Vec<i64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..hi)).collect()).collect();
            let perm = hungarian_match(&w);
            let mut seen = vec![false; n];
            let bijective = perm.iter().all(|&c| c < n && !std::mem::replace(&mut seen[c], true));
            let got: i64 = perm.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
            if !bijective || got != brute_force_assignment(&w) {
                return CheckOutcome::new("hungarian vs exhaustive", false, format!("mismatch on {w:?}"));
            }
            trials += 1;
        }
    }
    CheckOutcome::new(
        "hungarian vs exhaustive",
        true,
        format!("{trials} random matrices, n <= {max_n}"),
    )
}

/// All set partitions of `n` points into at most `k` blocks, as restricted
/// growth strings.
pub fn set_partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, n: usize, k: usize, blocks: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for b in 0..(blocks + 1).min(k) {
            prefix.push(b);
            go(prefix, n, k, blocks.max(b + 1), out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        go(&mut Vec::with_capacity(n), n, k, 0, &mut out);
    }
    out
}

fn oracle_acc(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut best = 0;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permute(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, f);
        p.swap(i, j);
    }
}

fn oracle_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let prob = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64 / n;
    let labels = |l: &[usize]| {
        let mut v = l.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (us, vs) = (labels(pred), labels(truth));
    let h = |ls: &[usize], l: &[usize]| -> f64 {
        ls.iter()
            .map(|&a| {
                let p = prob(&|i| l[i] == a);
                -p * p.ln()
            })
            .sum()
    };
    let (hu, hv) = (h(&us, pred), h(&vs, truth));
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for &a in &us {
        for &b in &vs {
            let pab = prob(&|i| pred[i] == a && truth[i] == b);
            if pab > 0.0 {
                mi += pab * (pab / (prob(&|i| pred[i] == a) * prob(&|i| truth[i] == b))).ln();
            }
        }
    }
    mi / ((hu + hv) / 2.0)
}

/// Pair-counting form of the adjusted Rand index.
fn oracle_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

/// ACC, NMI and ARI against definition-level oracles on every pair of
/// partitions of N ≤ `max_points` points into at most 3 clusters.
pub fn partition_metric_checks(max_points: usize) -> Vec<CheckOutcome> {
    let mut worst = [0.0f64; 3];
    let mut count = 0usize;
    let mut failure: Option<String> = None;
    for n in 1..=max_points {
        let parts = set_partitions(n, 3);
        for pred in &parts {
            for truth in &parts {
                let got = [
                    clustering_accuracy(pred, truth),
                    nmi(pred, truth),
                    ari(pred, truth),
                ];
                let want = [oracle_acc(pred, truth), oracle_nmi(pred, truth), oracle_ari(pred, truth)];
                for (k, (g, w)) in got.into_iter().zip(want).enumerate() {
                    match g {
                        Ok(g) => worst[k] = worst[k].max((g - w).abs()),
                        Err(e) => {
                            failure.get_or_insert_with(|| format!("error on {pred:?} vs {truth:?}: {e}"));
                        }
                    }
                }
                count += 1;
            }
        }
    }
    ["acc", "nmi", "ari"]
        .iter()
        .zip(worst)
        .map(|(name, w)| {
            let passed = failure.is_none() && w <= METRIC_TOL;
            let detail = failure
                .clone()
                .unwrap_or_else(|| format!("max abs diff {w:.1e} over {count} partition pairs, N <= {max_points}"));
            CheckOutcome::new(format!("{name} vs oracle"), passed, detail)
        })
        .collect()
}

/// Two orthogonal rank-1 clusters: the true split must reach the largest
/// rate reduction over all 2-cluster assignments, for every m ≤ `max_m`.
pub fn rate_reduction_check(max_m: usize) -> CheckOutcome {
    let name = "rate reduction optimum";
    let run = || -> Result<CheckOutcome> {
        let p = CodingRateParams::new(0.5, 3)?;
        for m in 2..=max_m {
            let half = m / 2;
            let z = Matrix::from_fn(m, 3, |r, c| {
                let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
                match (r < half, c) {
                    (true, 0) | (false, 1) => sign,
                    _ => 0.0,
                }
            });
            let z = FeatureBatch::new(z)?;
            let truth: Vec<usize> = (0..m).map(|r| usize::from(r >= half)).collect();
            let best_true = rate_reduction(&z, &SoftAssignment::one_hot(&truth, 2)?, &p)?;
            for mask in 0u32..(1 << m) {
                let labels: Vec<usize> = (0..m).map(|i| ((mask >> i) & 1) as usize).collect();
                let dr = rate_reduction(&z, &SoftAssignment::one_hot(&labels, 2)?, &p)?;
                if dr > best_true + 1e-12 {
                    return Ok(CheckOutcome::new(
                        name,
                        false,
                        format!("m={m}: {labels:?} gives {dr} > {best_true}"),
                    ));
                }
            }
        }
        Ok(CheckOutcome::new(name, true, format!("exhaustive over m <= {max_m}")))
    };
    CheckOutcome::from_result(name, run())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_are_counted_by_stirling_numbers() {
        // S(5,1) + S(5,2) + S(5,3) = 1 + 15 + 25
        assert_eq!(set_partitions(5, 3).len(), 41);
        assert_eq!(set_partitions(4, 1), vec![vec![0; 4]]);
    }

    #[test]
    fn gradient_checks_pass() {
        for o in gradient_checks(3, None) {
            assert!(o.passed, "{o:?}");
        }
    }

    #[test]
    fn faulty_logdet_gradient_is_caught() {
        let out = gradient_checks(3, Some(GradFault::LogdetGradient));
        assert!(out.iter().any(|o| o.name.starts_with("grad coding_rate") && !o.passed));
        assert!(out.iter().all(|o| o.name.starts_with("grad constraint_d") || !o.passed));
    }

    #[test]
    fn small_suite_passes() {
        let opts = CheckOptions {
            max_partition_points: 5,
            ..CheckOptions::standard()
        };
        let out = run_all(&opts);
        assert!(all_passed(&out), "{}", format_table(&out));
    }
}
