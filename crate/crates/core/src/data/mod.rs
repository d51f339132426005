//! Synthetic datasets and their on-disk form.

mod generators;
mod io;

pub use generators::{
    balanced_counts, dataset_from_spec, double_spiral, gaussian_augment, min_cross_distance, random_mlp_manifolds,
    DoubleSpiral, GeneratorSpec, MlpManifolds, MlpManifoldsSpec, Sampler, GENERATOR_SLOPE,
};
pub use io::{format_g17, load_csv, load_dataset, meta_path, save_csv, save_dataset};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NmceError, Result};
use crate::linalg::Matrix;

/// How a dataset was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_per_class: usize,
    pub spec: GeneratorSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Matrix,
    pub labels: Option<Vec<usize>>,
    pub meta: Option<DatasetMeta>,
}

impl Dataset {
    pub fn new(points: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.rows() {
                return Err(NmceError::invalid(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.rows()
                )));
            }
        }
        Ok(Dataset {
            points,
            labels,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

/// Where training batches come from.
pub enum BatchSource<'a> {
    /// Fresh draws from a generator every step.
    Online(&'a Sampler),
    /// Random subsets of a fixed point set.
    Fixed(&'a Matrix),
}

impl BatchSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            BatchSource::Online(s) => s.ambient_dim(),
            BatchSource::Fixed(x) => x.cols(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Matrix> {
        match self {
            BatchSource::Online(s) => Ok(s.sample(&balanced_counts(batch_size, s.n_classes()), rng).0),
            BatchSource::Fixed(x) => {
                if batch_size > x.rows() {
                    return Err(NmceError::invalid(format!(
                        "batch of {batch_size} from a dataset of {} points",
                        x.rows()
                    )));
                }
                Ok(x.select_rows(&index::sample(rng, x.rows(), batch_size).into_vec()))
            }
        }
    }
}
