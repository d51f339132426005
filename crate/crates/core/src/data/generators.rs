//! Union-of-manifold generators.
//!
//! Both generators are samplers first: [`DoubleSpiral`] and [`MlpManifolds`]
//! draw fresh batches from an rng, which is how training consumes them. The
//! `double_spiral` / `random_mlp_manifolds` functions wrap a single seeded
//! draw into a [`Dataset`].

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetMeta};
use crate::error::{NmceError, Result};
use crate::linalg::{Activation, Matrix};
use crate::rng::{derive_seed, derived_rng, normal_matrix, rng_from_seed};

/// Generator description, recorded in dataset metadata and run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    DoubleSpiral(DoubleSpiral),
    RandomMlp(MlpManifoldsSpec),
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::DoubleSpiral(_) => "double-spiral",
            GeneratorSpec::RandomMlp(_) => "random-mlp",
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            GeneratorSpec::DoubleSpiral(_) => 2,
            GeneratorSpec::RandomMlp(s) => s.ambient_dim,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            GeneratorSpec::DoubleSpiral(_) => 2,
            GeneratorSpec::RandomMlp(s) => s.latent_dims.len(),
        }
    }

    /// Builds the sampler; for random MLP manifolds this fixes the generator
    /// networks from `seed`.
    pub fn sampler(&self, seed: u64) -> Result<Sampler> {
        Ok(match self {
            GeneratorSpec::DoubleSpiral(s) => {
                s.validate()?;
                Sampler::Spiral(s.clone())
            }
            GeneratorSpec::RandomMlp(s) => Sampler::Mlp(MlpManifolds::new(s.clone(), seed)?),
        })
    }
}

/// A ready-to-sample generator.
#[derive(Clone, Debug)]
pub enum Sampler {
    Spiral(DoubleSpiral),
    Mlp(MlpManifolds),
}

impl Sampler {
    /// `n_per_class` points from every class, labels in class order.
    pub fn sample<R: Rng + ?Sized>(&self, n_per_class: &[usize], rng: &mut R) -> (Matrix, Vec<usize>) {
        match self {
            Sampler::Spiral(s) => s.sample_counts(n_per_class, rng),
            Sampler::Mlp(m) => m.sample_counts(n_per_class, rng),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Sampler::Spiral(_) => 2,
            Sampler::Mlp(m) => m.nets.len(),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Sampler::Spiral(_) => 2,
            Sampler::Mlp(m) => m.spec.ambient_dim,
        }
    }
}

/// Splits `total` points as evenly as possible over `n` classes.
pub fn balanced_counts(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| total / n + usize::from(k < total % n)).collect()
}

/// Two interleaved Archimedean spirals.
///
/// Arm `k` is `r(t)·(cos(t + kπ), sin(t + kπ))` with `r(t) = radius·t/(3π)`,
/// `t ~ U[0.25π, 3π]`, plus iid N(0, noise_sigma²) noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleSpiral {
    pub radius: f64,
    pub noise_sigma: f64,
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_t_start() -> f64 {
    0.25 * PI
}

fn default_t_end() -> f64 {
    3.0 * PI
}

impl Default for DoubleSpiral {
    fn default() -> Self {
        DoubleSpiral {
            radius: 15.0,
            noise_sigma: 0.05,
            t_start: default_t_start(),
            t_end: default_t_end(),
        }
    }
}

impl DoubleSpiral {
    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.noise_sigma >= 0.0) || !(self.t_end > self.t_start) || self.t_start < 0.0 {
            return Err(NmceError::invalid(format!("bad double-spiral parameters {self:?}")));
        }
        Ok(())
    }

    /// Noise-free point of arm `arm` at parameter `t`.
    pub fn curve(&self, arm: usize, t: f64) -> (f64, f64) {
        let r = self.radius * t / self.t_end;
        let phase = t + arm as f64 * PI;
        (r * phase.cos(), r * phase.sin())
    }

    fn sample_counts<R: Rng + ?Sized>(&self, counts: &[usize], rng: &mut R) -> (Matrix, Vec<usize>) {
        let total: usize = counts.iter().sum();
        let mut data = Vec::with_capacity(2 * total);
        let mut labels = Vec::with_capacity(total);
        for (arm, &n) in counts.iter().enumerate().take(2) {
            for _ in 0..n {
                let t = rng.random_range(self.t_start..self.t_end);
                let (x, y) = self.curve(arm, t);
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                data.push(x + self.noise_sigma * nx);
                data.push(y + self.noise_sigma * ny);
                labels.push(arm);
            }
        }
        (Matrix::from_raw(labels.len(), 2, data), labels)
    }
}

pub fn double_spiral(n_per_arm: usize, radius: f64, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n_per_arm == 0 {
        return Err(NmceError::invalid("n_per_arm must be >= 1"));
    }
    let spec = DoubleSpiral {
        radius,
        noise_sigma,
        ..DoubleSpiral::default()
    };
    spec.validate()?;
    let (points, labels) = spec.sample_counts(&[n_per_arm, n_per_arm], &mut rng_from_seed(seed));
    Ok(Dataset {
        points,
        labels: Some(labels),
        meta: Some(DatasetMeta {
            spec: GeneratorSpec::DoubleSpiral(spec),
            n_per_class: n_per_arm,
            seed,
        }),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpManifoldsSpec {
    /// One manifold per entry, with that latent dimension.
    pub latent_dims: Vec<usize>,
    pub with_bias: bool,
    pub ambient_dim: usize,
    #[serde(default = "default_gen_width")]
    pub hidden_width: usize,
    /// Biased generators whose manifolds come closer than this are rejected
    /// and redrawn.
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    /// Multiplies the generator output before the output bias is added.
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

fn default_gen_width() -> usize {
    64
}

fn default_min_separation() -> f64 {
    1.0
}

fn default_output_scale() -> f64 {
    0.3
}

impl Default for MlpManifoldsSpec {
    fn default() -> Self {
        MlpManifoldsSpec {
            latent_dims: vec![3, 6],
            with_bias: true,
            ambient_dim: 12,
            hidden_width: default_gen_width(),
            min_separation: default_min_separation(),
            output_scale: default_output_scale(),
        }
    }
}

/// Slope of the generator networks' leaky ReLU.
pub const GENERATOR_SLOPE: f64 = 0.2;

/// Points drawn per manifold when testing separation of a candidate seed.
const SEPARATION_PROBE: usize = 1500;
const MAX_SEED_ATTEMPTS: u64 = 64;

/// A random leaky-ReLU network with two hidden layers.
#[derive(Clone, Debug)]
struct GeneratorNet {
    layers: Vec<(Matrix, Option<Matrix>)>,
}

impl GeneratorNet {
    fn new<R: Rng + ?Sized>(latent: usize, spec: &MlpManifoldsSpec, rng: &mut R) -> Self {
        let dims = [latent, spec.hidden_width, spec.hidden_width, spec.ambient_dim];
        let with_bias = spec.with_bias;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == 2 { spec.output_scale } else { 1.0 };
                let weight = normal_matrix(w[0], w[1], gain * (2.0 / w[0] as f64).sqrt(), rng);
                let bias = with_bias.then(|| normal_matrix(1, w[1], 1.0, rng));
                (weight, bias)
            })
            .collect();
        GeneratorNet { layers }
    }

    fn apply(&self, latent: &Matrix) -> Matrix {
        let mut h = latent.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w).expect("generator shapes agree");
            if let Some(b) = b {
                for r in 0..h.rows() {
                    for (v, bb) in h.row_mut(r).iter_mut().zip(b.data()) {
                        *v += bb;
                    }
                }
            }
            if i < last {
                h = h.map(|v| Activation::LeakyRelu(GENERATOR_SLOPE).apply(v));
            }
        }
        h
    }
}

/// Fixed random generator networks, one per manifold.
#[derive(Clone, Debug)]
pub struct MlpManifolds {
    spec: MlpManifoldsSpec,
    nets: Vec<GeneratorNet>,
    /// Seed actually used after rejection sampling.
    effective_seed: u64,
}

impl MlpManifolds {
    pub fn new(spec: MlpManifoldsSpec, seed: u64) -> Result<Self> {
        if spec.latent_dims.is_empty() || spec.latent_dims.contains(&0) {
            return Err(NmceError::invalid("latent dims must be non-empty and >= 1"));
        }
        let max_latent = *spec.latent_dims.iter().max().expect("non-empty");
        if spec.ambient_dim < max_latent {
            return Err(NmceError::invalid(format!(
                "ambient_dim {} is below the largest latent dim {max_latent}",
                spec.ambient_dim
            )));
        }
        if !(spec.output_scale > 0.0 && spec.output_scale.is_finite()) {
            return Err(NmceError::invalid("generator output_scale must be > 0"));
        }
        if spec.hidden_width == 0 {
            return Err(NmceError::invalid("generator hidden width must be >= 1"));
        }
        let attempts = if spec.with_bias { MAX_SEED_ATTEMPTS } else { 1 };
        for attempt in 0..attempts {
            let effective_seed = if attempt == 0 { seed } else { derive_seed(seed, 0x5E9A, attempt) };
            let mut rng = rng_from_seed(effective_seed);
            let nets = spec
                .latent_dims
                .iter()
                .map(|&k| GeneratorNet::new(k, &spec, &mut rng))
                .collect();
            let candidate = MlpManifolds {
                spec: spec.clone(),
                nets,
                effective_seed,
            };
            if !spec.with_bias || candidate.min_separation(SEPARATION_PROBE, effective_seed) >= spec.min_separation {
                return Ok(candidate);
            }
        }
        Err(NmceError::invalid(format!(
            "no generator seed within {MAX_SEED_ATTEMPTS} attempts keeps the manifolds {} apart",
            spec.min_separation
        )))
    }

    pub fn spec(&self) -> &MlpManifoldsSpec {
        &self.spec
    }

    pub fn effective_seed(&self) -> u64 {
        self.effective_seed
    }

    /// Maps latent codes of manifold `j` into ambient space.
    pub fn map_latent(&self, j: usize, latent: &Matrix) -> Matrix {
        self.nets[j].apply(latent)
    }

    fn sample_counts<R: Rng + ?Sized>(&self, counts: &[usize], rng: &mut R) -> (Matrix, Vec<usize>) {
        let mut points = Matrix::zeros(0, self.spec.ambient_dim);
        let mut labels = Vec::new();
        for (j, (&n, &k)) in counts.iter().zip(&self.spec.latent_dims).enumerate() {
            let latent = normal_matrix(n, k, 1.0, rng);
            let x = self.nets[j].apply(&latent);
            points = points.concat_rows(&x).expect("same ambient dim");
            labels.extend(std::iter::repeat_n(j, n));
        }
        (points, labels)
    }

    /// Smallest distance between points of different manifolds over a probe
    /// sample of `n` points per manifold.
    pub fn min_separation(&self, n: usize, seed: u64) -> f64 {
        let counts = vec![n; self.nets.len()];
        let (x, labels) = self.sample_counts(&counts, &mut derived_rng(seed, 0x9B0E, 0));
        min_cross_distance(&x, &labels)
    }
}

/// Minimum Euclidean distance between points with different labels.
pub fn min_cross_distance(x: &Matrix, labels: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.rows() {
        for j in i + 1..x.rows() {
            if labels[i] == labels[j] {
                continue;
            }
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

pub fn random_mlp_manifolds(
    latent_dims: &[usize],
    with_bias: bool,
    n_per_manifold: usize,
    ambient_dim: usize,
    seed: u64,
) -> Result<Dataset> {
    let spec = MlpManifoldsSpec {
        latent_dims: latent_dims.to_vec(),
        with_bias,
        ambient_dim,
        ..MlpManifoldsSpec::default()
    };
    dataset_from_spec(&GeneratorSpec::RandomMlp(spec), n_per_manifold, seed)
}

/// One seeded draw of `n_per_class` points per class.
pub fn dataset_from_spec(spec: &GeneratorSpec, n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(NmceError::invalid("need at least one point per class"));
    }
    let sampler = spec.sampler(seed)?;
    let counts = vec![n_per_class; sampler.n_classes()];
    let (points, labels) = sampler.sample(&counts, &mut derived_rng(seed, 0xDA7A, 0));
    Ok(Dataset {
        points,
        labels: Some(labels),
        meta: Some(DatasetMeta {
            spec: spec.clone(),
            n_per_class,
            seed,
        }),
    })
}

/// `x + σ·N(0, I)`.
pub fn gaussian_augment<R: Rng + ?Sized>(x: &Matrix, sigma: f64, rng: &mut R) -> Result<Matrix> {
    if !(sigma >= 0.0) {
        return Err(NmceError::invalid("augmentation sigma must be >= 0"));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    x.add(&normal_matrix(x.rows(), x.cols(), sigma, rng))
}
