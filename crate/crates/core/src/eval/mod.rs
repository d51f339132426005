//! Clustering metrics and feature-space diagnostics.

mod features;
mod metrics;

pub use features::{
    covariance_diagonality, groups, pca_component_retrieval, singular_spectrum, spectra_csv, squared_singular_cv,
    zsim_stats, ClusterComponents, Component, Spectrum, ZSim, ZSIM_PAIRS,
};
pub use metrics::{ari, clustering_accuracy, clustering_accuracy_with_matching, contingency, hungarian_match, nmi};

use std::fmt::Write as _;

use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub n_points: usize,
    pub n_found_clusters: usize,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    /// `matching[found] = true label` under the accuracy-maximizing matching.
    pub matching: Option<Vec<usize>>,
    pub zsim: ZSim,
    pub covariance_diagonality: f64,
}

/// Full report for features `z` and predicted labels; supervised metrics
/// need `truth`.
pub fn evaluate(z: &Matrix, pred: &[usize], truth: Option<&[usize]>, seed: u64) -> Result<MetricReport> {
    let (acc, matching, nmi_v, ari_v) = match truth {
        Some(t) => {
            let (acc, m) = clustering_accuracy_with_matching(pred, t)?;
            (Some(acc), Some(m), Some(nmi(pred, t)?), Some(ari(pred, t)?))
        }
        None => (None, None, None, None),
    };
    Ok(MetricReport {
        n_points: z.rows(),
        n_found_clusters: groups(pred).len(),
        acc,
        nmi: nmi_v,
        ari: ari_v,
        matching,
        zsim: zsim_stats(z, pred, truth, seed)?,
        covariance_diagonality: covariance_diagonality(z)?,
    })
}

impl MetricReport {
    /// `key: value` lines; absent values are left out.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                writeln!(out, "{k}: {v}").expect("write to string");
            }
        };
        line("acc", self.acc);
        line("nmi", self.nmi);
        line("ari", self.ari);
        line("zsim_true", self.zsim.across_true);
        line("zsim_found", self.zsim.across_found);
        line("zsim_within", self.zsim.within_found);
        line("covariance_diagonality", Some(self.covariance_diagonality));
        writeln!(out, "n_points: {}", self.n_points).expect("write to string");
        writeln!(out, "n_found_clusters: {}", self.n_found_clusters).expect("write to string");
        if let Some(m) = &self.matching {
            let s: Vec<String> = m.iter().map(usize::to_string).collect();
            writeln!(out, "matching: {}", s.join(" ")).expect("write to string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_without_labels_omits_supervised_keys() {
        let z = Matrix::from_fn(6, 2, |r, c| if (r < 3) == (c == 0) { 1.0 } else { 0.0 });
        let r = evaluate(&z, &[0, 0, 0, 1, 1, 1], None, 1).unwrap();
        let text = r.to_text();
        assert!(!text.contains("acc:") && !text.contains("zsim_true"));
        assert!(text.contains("zsim_found: 0\n") && text.contains("zsim_within: 1\n"));
    }

    #[test]
    fn report_with_labels() {
        let z = Matrix::from_fn(6, 2, |r, c| if (r < 3) == (c == 0) { 1.0 } else { 0.0 });
        let r = evaluate(&z, &[1, 1, 1, 0, 0, 0], Some(&[0, 0, 0, 1, 1, 1]), 1).unwrap();
        assert_eq!(r.acc, Some(1.0));
        assert_eq!(r.matching, Some(vec![1, 0]));
        assert!(r.to_text().starts_with("acc: 1\nnmi: 1\nari: 1\n"));
    }
}
