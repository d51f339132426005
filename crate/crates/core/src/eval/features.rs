use rand::Rng;

use crate::error::{NmceError, Result};
use crate::linalg::decomp::{singular_values, svd_right};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

/// Pairs drawn per z-sim estimate; smaller pair sets are enumerated.
pub const ZSIM_PAIRS: usize = 10_000;

fn abs_cos(z: &Matrix, i: usize, j: usize) -> f64 {
    let (a, b) = (z.row(i), z.row(j));
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Mean |cos| over pairs `(i, j)`, `i < j`, with `labels[i] != labels[j]`.
/// Returns `None` when no such pair exists.
fn cross_pairs_mean<R: Rng>(z: &Matrix, labels: &[usize], rng: &mut R) -> Option<f64> {
    let n = labels.len();
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let same: usize = counts.values().map(|c| c * (c - 1) / 2).sum();
    let eligible = n * (n.saturating_sub(1)) / 2 - same;
    if eligible == 0 {
        return None;
    }
    if eligible <= ZSIM_PAIRS {
        let mut total = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] != labels[j] {
                    total += abs_cos(z, i, j);
                }
            }
        }
        return Some(total / eligible as f64);
    }
    let mut total = 0.0;
    let mut drawn = 0;
    while drawn < ZSIM_PAIRS {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if labels[i] != labels[j] {
            total += abs_cos(z, i, j);
            drawn += 1;
        }
    }
    Some(total / ZSIM_PAIRS as f64)
}

/// Mean |cos| over distinct pairs of `members`.
fn within_mean<R: Rng>(z: &Matrix, members: &[usize], rng: &mut R) -> f64 {
    let k = members.len();
    let n_pairs = k * (k - 1) / 2;
    if n_pairs <= ZSIM_PAIRS {
        let mut total = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                total += abs_cos(z, members[a], members[b]);
            }
        }
        return total / n_pairs as f64;
    }
    let mut total = 0.0;
    let mut drawn = 0;
    while drawn < ZSIM_PAIRS {
        let a = rng.random_range(0..k);
        let b = rng.random_range(0..k);
        if a != b {
            total += abs_cos(z, members[a], members[b]);
            drawn += 1;
        }
    }
    total / ZSIM_PAIRS as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZSim {
    /// Across true clusters; `None` without labels.
    pub across_true: Option<f64>,
    pub across_found: Option<f64>,
    /// Averaged over found clusters with at least two members.
    pub within_found: Option<f64>,
}

/// Mean absolute cosine similarity across true clusters, across found
/// clusters and within found clusters.
pub fn zsim_stats(z: &Matrix, pred: &[usize], truth: Option<&[usize]>, seed: u64) -> Result<ZSim> {
    if pred.len() != z.rows() || truth.is_some_and(|t| t.len() != z.rows()) {
        return Err(NmceError::invalid("label vectors must have one entry per feature row"));
    }
    let mut rng = rng_from_seed(seed);
    let across_true = truth.and_then(|t| cross_pairs_mean(z, t, &mut rng));
    let across_found = cross_pairs_mean(z, pred, &mut rng);
    let mut means = Vec::new();
    for members in groups(pred) {
        if members.len() >= 2 {
            means.push(within_mean(z, &members, &mut rng));
        }
    }
    let within_found = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
    Ok(ZSim {
        across_true,
        across_found,
        within_found,
    })
}

/// Row indices per label, labels ascending, empty labels omitted.
pub fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let n = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out.retain(|g| !g.is_empty());
    out
}

/// `‖off-diag(S)‖_F / ‖diag(S)‖_F` for the second moment `S = ZᵀZ/m`.
pub fn covariance_diagonality(z: &Matrix) -> Result<f64> {
    if z.rows() < 2 {
        return Err(NmceError::invalid("covariance_diagonality needs at least two rows"));
    }
    let s = z.matmul_tn(z)?.scale(1.0 / z.rows() as f64)?;
    let (mut off, mut diag) = (0.0, 0.0);
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let v = s.get(i, j) * s.get(i, j);
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    Ok((off / diag).sqrt())
}

/// Coefficient of variation (std / mean) of the squared singular values.
pub fn squared_singular_cv(z: &Matrix) -> f64 {
    let sq: Vec<f64> = singular_values(z).iter().map(|s| s * s).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let var = sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / sq.len() as f64;
    var.sqrt() / mean
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// `None` for the whole batch.
    pub cluster: Option<usize>,
    /// Descending.
    pub sigma: Vec<f64>,
}

/// Singular values of `z`, or of each labelled cluster of rows.
pub fn singular_spectrum(z: &Matrix, labels: Option<&[usize]>) -> Result<Vec<Spectrum>> {
    if z.rows() == 0 {
        return Err(NmceError::invalid("singular_spectrum of an empty matrix"));
    }
    let Some(labels) = labels else {
        return Ok(vec![Spectrum {
            cluster: None,
            sigma: singular_values(z),
        }]);
    };
    if labels.len() != z.rows() {
        return Err(NmceError::invalid("one label per row required"));
    }
    Ok(groups(labels)
        .into_iter()
        .map(|members| Spectrum {
            cluster: Some(labels[members[0]]),
            sigma: singular_values(&z.select_rows(&members)),
        })
        .collect())
}

/// `cluster,rank,sigma` with `all` for the whole-batch spectrum.
pub fn spectra_csv(spectra: &[Spectrum]) -> String {
    let mut out = String::from("cluster,rank,sigma\n");
    for s in spectra {
        let c = s.cluster.map_or_else(|| "all".to_string(), |c| c.to_string());
        for (r, v) in s.sigma.iter().enumerate() {
            out.push_str(&format!("{c},{r},{v}\n"));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub sigma: f64,
    /// Unit direction; sign fixed so its largest-magnitude entry is positive.
    pub direction: Vec<f64>,
    /// Row indices of the cluster members most aligned with `direction`.
    pub samples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterComponents {
    pub cluster: usize,
    pub components: Vec<Component>,
    /// Fewer than the requested number of components were available.
    pub truncated: bool,
}

/// Top-`k` principal directions of each cluster (uncentered, so they span
/// the cluster's subspace) and, per direction, the `per_component` members
/// with the largest |cos| to it, ties broken by lower index.
pub fn pca_component_retrieval(
    z: &Matrix,
    labels: &[usize],
    k: usize,
    per_component: usize,
) -> Result<Vec<ClusterComponents>> {
    if labels.len() != z.rows() {
        return Err(NmceError::invalid("one label per row required"));
    }
    let mut out = Vec::new();
    for members in groups(labels) {
        let sub = z.select_rows(&members);
        let (sigma, dirs) = svd_right(&sub);
        let available = k.min(members.len()).min(sigma.len());
        let mut components = Vec::with_capacity(available);
        for c in 0..available {
            let mut direction = dirs.row(c).to_vec();
            let pivot = direction
                .iter()
                .copied()
                .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
            if pivot < 0.0 {
                direction.iter_mut().for_each(|v| *v = -*v);
            }
            let mut scored: Vec<(f64, usize)> = members
                .iter()
                .map(|&i| {
                    let row = z.row(i);
                    let dot: f64 = row.iter().zip(&direction).map(|(a, b)| a * b).sum();
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    ((dot / norm).abs(), i)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            components.push(Component {
                sigma: sigma[c],
                direction,
                samples: scored.iter().take(per_component).map(|s| s.1).collect(),
            });
        }
        out.push(ClusterComponents {
            cluster: labels[members[0]],
            truncated: available < k,
            components,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zsim_identical_features() {
        let z = Matrix::from_fn(6, 3, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let s = zsim_stats(&z, &[0, 0, 0, 1, 1, 1], Some(&[0, 1, 0, 1, 0, 1]), 0).unwrap();
        assert_eq!(s.across_true, Some(1.0));
        assert_eq!(s.across_found, Some(1.0));
        assert_eq!(s.within_found, Some(1.0));
    }

    #[test]
    fn zsim_orthogonal_clusters() {
        let z = Matrix::from_fn(8, 2, |r, c| if (r < 4) == (c == 0) { 1.0 } else { 0.0 });
        let l = [0, 0, 0, 0, 1, 1, 1, 1];
        let s = zsim_stats(&z, &l, Some(&l), 0).unwrap();
        assert_eq!(s.across_true, Some(0.0));
        assert_eq!(s.across_found, Some(0.0));
        assert_eq!(s.within_found, Some(1.0));
    }

    #[test]
    fn singleton_clusters_skip_within() {
        let z = Matrix::identity(3);
        let s = zsim_stats(&z, &[0, 1, 2], None, 0).unwrap();
        assert_eq!(s.within_found, None);
        assert_eq!(s.across_true, None);
    }

    #[test]
    fn diagonality_cases() {
        assert_eq!(covariance_diagonality(&Matrix::identity(4)).unwrap(), 0.0);
        let d = 5;
        let z = Matrix::filled(7, d, 1.0 / (d as f64).sqrt());
        let r = covariance_diagonality(&z).unwrap();
        assert!((r - ((d - 1) as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spectrum_cases() {
        let s = singular_spectrum(&Matrix::identity(4), None).unwrap();
        assert!(s[0].sigma.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let rank1 = Matrix::from_fn(5, 3, |r, c| (r + 1) as f64 * (c as f64 - 1.5));
        let s = singular_spectrum(&rank1, None).unwrap();
        assert!(s[0].sigma[0] > 1.0 && s[0].sigma[1..].iter().all(|v| *v < 1e-10));
        let per = singular_spectrum(&rank1, Some(&[1, 1, 3, 3, 3])).unwrap();
        assert_eq!(per.iter().map(|s| s.cluster).collect::<Vec<_>>(), vec![Some(1), Some(3)]);
    }

    #[test]
    fn single_direction_cluster() {
        let dir = [0.6, 0.0, -0.8];
        let z = Matrix::from_fn(6, 3, |r, c| if r % 2 == 0 { dir[c] } else { -dir[c] });
        let out = pca_component_retrieval(&z, &[0; 6], 1, 3).unwrap();
        let got = &out[0].components[0].direction;
        let cos: f64 = got.iter().zip(dir).map(|(a, b)| a * b).sum();
        assert!(cos.abs() >= 1.0 - 1e-6);
        assert_eq!(out[0].components[0].samples, vec![0, 1, 2]);
    }

    #[test]
    fn small_cluster_is_flagged() {
        let z = Matrix::from_fn(5, 4, |r, c| ((r * 4 + c) as f64).sin());
        let out = pca_component_retrieval(&z, &[0, 0, 1, 1, 1], 3, 1).unwrap();
        assert!(out[0].truncated);
        assert_eq!(out[0].components.len(), 2);
        assert!(!out[1].truncated);
    }

    #[test]
    fn spectra_csv_layout() {
        let s = vec![Spectrum {
            cluster: Some(2),
            sigma: vec![2.0, 1.0],
        }];
        assert_eq!(spectra_csv(&s), "cluster,rank,sigma\n2,0,2\n2,1,1\n");
    }
}
