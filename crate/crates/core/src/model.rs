//! MLP encoder with a unit-sphere feature head and a cluster-logits head.
//!
//! Layout of the flat parameter list (see [`Mlp::param_names`]):
//! `backbone.{i}.weight`, `backbone.{i}.bias` for each hidden layer, then
//! `feature_head.weight`, `feature_head.bias`, `cluster_head.weight`,
//! `cluster_head.bias`. Weights are `in×out` and applied as `x·W + b`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NmceError, Result};
use crate::linalg::{gumbel_softmax, sample_gumbel, Activation, Matrix, Tape, Var};
use crate::objectives::{FeatureBatch, SoftAssignment};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub feature_dim: usize,
    pub n_clusters: usize,
    pub gumbel_temperature: f64,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.n_clusters == 0 {
            return Err(NmceError::invalid("MLP dimensions must be >= 1"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(NmceError::invalid("hidden widths must be >= 1"));
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(NmceError::invalid("gumbel temperature must be > 0"));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every linear map in parameter order.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((prev, self.feature_dim));
        shapes.push((prev, self.n_clusters));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Matrix>,
}

/// Vars for the outputs of one forward pass recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphOutput {
    pub features: Var,
    pub assignment: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub features: FeatureBatch,
    pub assignment: SoftAssignment,
    pub logits: Matrix,
}

impl Mlp {
    /// Kaiming-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::new();
        for (fan_in, fan_out) in spec.layer_shapes() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
            params.push(w);
            params.push(Matrix::zeros(1, fan_out));
        }
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Matrix>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if params.len() != 2 * shapes.len() {
            return Err(NmceError::invalid(format!(
                "expected {} parameter tensors, got {}",
                2 * shapes.len(),
                params.len()
            )));
        }
        for (i, (fan_in, fan_out)) in shapes.iter().enumerate() {
            let (w, b) = (&params[2 * i], &params[2 * i + 1]);
            if w.shape() != (*fan_in, *fan_out) || b.shape() != (1, *fan_out) {
                return Err(NmceError::invalid(format!(
                    "layer {i}: got weight {:?} and bias {:?}, expected ({fan_in}, {fan_out})",
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn set_gumbel_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0) {
            return Err(NmceError::invalid("gumbel temperature must be > 0"));
        }
        self.spec.gumbel_temperature = temperature;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.params.len());
        for i in 0..self.spec.hidden_widths.len() {
            names.push(format!("backbone.{i}.weight"));
            names.push(format!("backbone.{i}.bias"));
        }
        for head in ["feature_head", "cluster_head"] {
            names.push(format!("{head}.weight"));
            names.push(format!("{head}.bias"));
        }
        names
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Records a forward pass. `noise` is the Gumbel perturbation of the
    /// logits (train mode); `None` gives the plain softmax.
    pub fn forward_graph(&self, tape: &mut Tape, vars: &[Var], x: Var, noise: Option<&Matrix>) -> Result<GraphOutput> {
        let xv = tape.value(x);
        if xv.cols() != self.spec.input_dim {
            return Err(NmceError::ShapeMismatch {
                op: "forward",
                left: xv.shape(),
                right: (xv.rows(), self.spec.input_dim),
            });
        }
        let mut h = x;
        let n_hidden = self.spec.hidden_widths.len();
        for i in 0..n_hidden {
            let lin = tape.matmul(h, vars[2 * i])?;
            let lin = tape.add_bias(lin, vars[2 * i + 1])?;
            h = tape.activation(lin, self.spec.activation)?;
        }
        let f = 2 * n_hidden;
        let raw = tape.matmul(h, vars[f])?;
        let raw = tape.add_bias(raw, vars[f + 1])?;
        let features = tape.row_normalize(raw)?;
        let logits = tape.matmul(h, vars[f + 2])?;
        let logits = tape.add_bias(logits, vars[f + 3])?;
        let assignment = gumbel_softmax(tape, logits, self.spec.gumbel_temperature, noise)?;
        Ok(GraphOutput {
            features,
            assignment,
            logits,
        })
    }

    /// Forward pass without gradients. Train mode draws Gumbel noise from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, train_mode: bool, rng: &mut R) -> Result<EncoderOutput> {
        let noise = train_mode.then(|| sample_gumbel(x.rows(), self.spec.n_clusters, rng));
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = self.forward_graph(&mut tape, &vars, xv, noise.as_ref())?;
        Ok(EncoderOutput {
            features: FeatureBatch::new(tape.value(out.features).clone())?,
            assignment: SoftAssignment::new(tape.value(out.assignment).clone())?,
            logits: tape.value(out.logits).clone(),
        })
    }

    /// Deterministic eval-mode forward.
    pub fn embed(&self, x: &Matrix) -> Result<EncoderOutput> {
        // eval mode draws nothing from the rng
        self.forward(x, false, &mut rng_from_seed(0))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            tensors: self
                .param_names()
                .into_iter()
                .zip(&self.params)
                .map(|(name, m)| NamedTensor {
                    name,
                    shape: [m.rows(), m.cols()],
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&ckpt).map_err(|e| NmceError::invalid(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| NmceError::invalid(format!("checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NmceError::invalid(format!("not a checkpoint: format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NmceError::invalid(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let skeleton = Mlp::init(ckpt.spec.clone(), 0)?;
        let names = skeleton.param_names();
        if names.len() != ckpt.tensors.len() {
            return Err(NmceError::invalid("checkpoint tensor count does not match spec"));
        }
        let mut params = Vec::with_capacity(names.len());
        for (expected, t) in names.iter().zip(ckpt.tensors) {
            if &t.name != expected {
                return Err(NmceError::invalid(format!("checkpoint tensor {:?}, expected {expected:?}", t.name)));
            }
            params.push(Matrix::from_vec(t.shape[0], t.shape[1], t.data)?);
        }
        Mlp::from_params(ckpt.spec, params)
    }
}

pub const CHECKPOINT_FORMAT: &str = "nmce-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    spec: MlpSpec,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

/// View-averaged features (re-normalized) and assignments.
pub fn average_views(a: &EncoderOutput, b: &EncoderOutput) -> Result<(FeatureBatch, SoftAssignment)> {
    let (za, zb) = (a.features.matrix(), b.features.matrix());
    let z = FeatureBatch::normalized(&za.add(zb)?.scale(0.5)?)?;
    let gamma = a.assignment.matrix().add(b.assignment.matrix())?.scale(0.5)?;
    Ok((z, SoftAssignment::new(gamma)?))
}
