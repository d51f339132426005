use crate::error::{NmceError, Result};

/// Maximum-weight perfect matching on a square count matrix.
///
/// Returns `perm` with `perm[row] = column`. Runs the O(n³) shortest
/// augmenting path method with row/column potentials on negated weights.
pub fn hungarian_match(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(weights.iter().all(|r| r.len() == n), "hungarian_match needs a square matrix");
    // 1-based arrays; column 0 is the virtual start.
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    perm
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(NmceError::invalid(format!(
            "{} predicted labels vs {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(NmceError::invalid("no labels to compare"));
    }
    Ok(())
}

fn n_labels(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// `table[p][t]` = number of points with predicted `p` and true `t`.
pub fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<i64>> {
    let mut table = vec![vec![0i64; n_labels(truth)]; n_labels(pred)];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    table
}

/// Accuracy under the best one-to-one relabeling, with the matching
/// (`matching[pred] = true label`).
pub fn clustering_accuracy_with_matching(pred: &[usize], truth: &[usize]) -> Result<(f64, Vec<usize>)> {
    check_lengths(pred, truth)?;
    let n = n_labels(pred).max(n_labels(truth));
    let mut square = vec![vec![0i64; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        square[p][t] += 1;
    }
    let mut perm = hungarian_match(&square);
    let matched: i64 = perm.iter().enumerate().map(|(p, &t)| square[p][t]).sum();
    perm.truncate(n_labels(pred));
    Ok((matched as f64 / pred.len() as f64, perm))
}

pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    clustering_accuracy_with_matching(pred, truth).map(|(acc, _)| acc)
}

fn entropy(counts: impl Iterator<Item = i64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let n = pred.len() as f64;
    let rows: Vec<i64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<i64> = (0..n_labels(truth)).map(|t| table.iter().map(|r| r[t]).sum()).collect();
    let h_pred = entropy(rows.iter().copied(), n);
    let h_true = entropy(cols.iter().copied(), n);
    if h_pred == 0.0 && h_true == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (p, row) in table.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[p] as f64 * cols[t] as f64)).ln();
            }
        }
    }
    Ok((mi / ((h_pred + h_true) / 2.0)).clamp(0.0, 1.0))
}

fn pairs(c: i64) -> f64 {
    (c * (c - 1) / 2) as f64
}

/// Adjusted Rand index. Degenerate cases where the expected and maximal
/// index coincide score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let sum_cols: f64 = (0..n_labels(truth))
        .map(|t| pairs(table.iter().map(|r| r[t]).sum()))
        .sum();
    let total = pairs(pred.len() as i64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = (sum_rows + sum_cols) / 2.0;
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}
