//! Multistage trainer and run configuration.
//!
//! Every step draws a fresh batch, makes two Gaussian-noise views, runs both
//! through the encoder as one stacked batch, and takes an Adam step on the
//! stage objective. All randomness for step `k` of a stage comes from an rng
//! derived from (stage seed, k), so runs are reproducible bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{dataset_from_spec, gaussian_augment, BatchSource, Dataset, GeneratorSpec, Sampler};
use crate::error::{NmceError, Result};
use crate::linalg::{adam_step, sample_gumbel, Activation, AdamState, Matrix, Tape};
use crate::model::{Mlp, MlpSpec};
use crate::objectives::{nmce_loss_graph, tcr_loss_graph, CodingRateParams};
use crate::rng::{derive_seed, derived_rng};

const STREAM_INIT: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_STAGE: u64 = 3;
const STREAM_STEP: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Tcr,
    Nmce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub objective: Objective,
    pub lr: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "default_temperature")]
    pub gumbel_temperature: f64,
    /// Standard deviation of the Gaussian-noise augmentation.
    pub aug_sigma: f64,
    /// Mixed with the run seed and stage index.
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}

impl StageConfig {
    fn validate(&self, path: &str) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("epsilon", self.epsilon),
            ("gumbel_temperature", self.gumbel_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{path}.{name} must be > 0 (got {v})"));
            }
        }
        let nonneg = [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("aug_sigma", self.aug_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{path}.{name} must be >= 0 (got {v})"));
            }
        }
        if self.batch_size < 2 {
            problems.push(format!("{path}.batch_size must be >= 2"));
        }
        if self.steps == 0 {
            problems.push(format!("{path}.steps must be >= 1"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NmceError::Config(problems.join("; ")))
        }
    }
}

/// Loss components after one optimizer step's forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub total_rate: f64,
    pub cluster_rate: Option<f64>,
    pub constraint_d: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub objective: Objective,
    pub steps: Vec<StepRecord>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

/// Writes `step,loss,total_rate,cluster_rate,constraint_d` with steps
/// numbered across stages. TCR stages leave `cluster_rate` empty.
pub fn write_history_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::from("step,loss,total_rate,cluster_rate,constraint_d\n");
    let mut step = 0;
    for rec in records {
        for s in &rec.steps {
            let cluster = s.cluster_rate.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{step},{},{},{cluster},{}", s.loss, s.total_rate, s.constraint_d).expect("write to string");
            step += 1;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Seed of stage `index` under `run_seed`.
pub fn stage_seed(run_seed: u64, index: usize, cfg: &StageConfig) -> u64 {
    derive_seed(derive_seed(run_seed, STREAM_STAGE, index as u64), STREAM_STAGE, cfg.seed)
}

/// Seed for the encoder's initial weights.
pub fn init_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, STREAM_INIT, 0)
}

/// Seed that fixes the data generator (and with it any random generator nets).
pub fn data_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, STREAM_DATA, 0)
}

/// Runs one stage in place on `model`.
pub fn train_stage(model: &mut Mlp, source: &BatchSource, cfg: &StageConfig, seed: u64) -> Result<RunRecord> {
    train_stage_with(model, source, cfg, seed, |_| {})
}

/// [`train_stage`] with a per-step callback.
pub fn train_stage_with(
    model: &mut Mlp,
    source: &BatchSource,
    cfg: &StageConfig,
    seed: u64,
    mut observe: impl FnMut(&StepRecord),
) -> Result<RunRecord> {
    cfg.validate("stage")?;
    if source.dim() != model.spec().input_dim {
        return Err(NmceError::invalid(format!(
            "data has {} dims, model expects {}",
            source.dim(),
            model.spec().input_dim
        )));
    }
    model.set_gumbel_temperature(cfg.gumbel_temperature)?;
    let rate = CodingRateParams::new(cfg.epsilon, model.spec().feature_dim)?;
    let mut adam = AdamState::new(model.params());
    let started = Instant::now();
    let mut steps = Vec::with_capacity(cfg.steps);
    let m = cfg.batch_size;

    for step in 0..cfg.steps {
        let last = steps.last().copied();
        let abort = |e: NmceError| match e {
            NmceError::NonFinite { .. } | NmceError::NotPositiveDefinite { .. } | NmceError::ZeroRow { .. } => {
                NmceError::NumericalAbort {
                    step,
                    detail: match last {
                        Some(s) => format!("{e}; last finite step: {s:?}"),
                        None => format!("{e}; no finite step yet"),
                    },
                }
            }
            other => other,
        };

        let mut rng = derived_rng(seed, STREAM_STEP, step as u64);
        let x = source.sample(m, &mut rng)?;
        let v1 = gaussian_augment(&x, cfg.aug_sigma, &mut rng).map_err(abort)?;
        let v2 = gaussian_augment(&x, cfg.aug_sigma, &mut rng).map_err(abort)?;
        let views = v1.concat_rows(&v2).map_err(abort)?;
        let noise = sample_gumbel(2 * m, model.spec().n_clusters, &mut rng);

        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let xv = tape.constant(views);
        let out = model.forward_graph(&mut tape, &vars, xv, Some(&noise)).map_err(abort)?;
        let parts = (|| {
            let z = tape.slice_rows(out.features, 0, m)?;
            let z2 = tape.slice_rows(out.features, m, 2 * m)?;
            match cfg.objective {
                Objective::Tcr => tcr_loss_graph(&mut tape, z, z2, &rate, cfg.lambda),
                Objective::Nmce => {
                    let g = tape.slice_rows(out.assignment, 0, m)?;
                    let g2 = tape.slice_rows(out.assignment, m, 2 * m)?;
                    let sum = tape.add(g, g2)?;
                    let gamma = tape.scale(sum, 0.5)?;
                    nmce_loss_graph(&mut tape, z, z2, gamma, &rate, cfg.lambda)
                }
            }
        })()
        .map_err(abort)?;

        let record = StepRecord {
            step,
            loss: tape.scalar(parts.loss),
            total_rate: tape.scalar(parts.total_rate),
            cluster_rate: parts.cluster_rate.map(|v| tape.scalar(v)),
            constraint_d: tape.scalar(parts.constraint_d),
        };
        let grads = tape.backward(parts.loss).map_err(abort)?;
        let grads: Vec<Matrix> = vars
            .iter()
            .zip(model.params())
            .map(|(v, p)| grads.get_or_zeros(*v, p))
            .collect();
        adam_step(model.params_mut(), &grads, &mut adam, cfg.lr, cfg.weight_decay).map_err(abort)?;
        observe(&record);
        steps.push(record);
    }
    Ok(RunRecord {
        objective: cfg.objective,
        steps,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Initializes an encoder from `spec` and runs `stages` in order.
pub fn multistage_train(
    spec: MlpSpec,
    source: &BatchSource,
    stages: &[StageConfig],
    run_seed: u64,
) -> Result<(Mlp, Vec<RunRecord>)> {
    multistage_train_with(spec, source, stages, run_seed, |_, _| {})
}

/// [`multistage_train`] with a callback receiving (stage index, step record).
pub fn multistage_train_with(
    spec: MlpSpec,
    source: &BatchSource,
    stages: &[StageConfig],
    run_seed: u64,
    mut observe: impl FnMut(usize, &StepRecord),
) -> Result<(Mlp, Vec<RunRecord>)> {
    if stages.is_empty() {
        return Err(NmceError::invalid("at least one training stage is required"));
    }
    for (i, s) in stages.iter().enumerate() {
        s.validate(&format!("stages[{i}]"))?;
    }
    let mut model = Mlp::init(spec, init_seed(run_seed))?;
    let mut records = Vec::with_capacity(stages.len());
    for (i, cfg) in stages.iter().enumerate() {
        records.push(train_stage_with(&mut model, source, cfg, stage_seed(run_seed, i, cfg), |r| {
            observe(i, r)
        })?);
    }
    Ok((model, records))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub feature_dim: usize,
    /// Defaults to the generator's class count.
    #[serde(default)]
    pub n_clusters: Option<usize>,
}

fn default_activation() -> Activation {
    Activation::Elu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub generator: GeneratorSpec,
    /// Held-out evaluation points per class.
    #[serde(default = "default_eval_per_class")]
    pub eval_per_class: usize,
}

fn default_eval_per_class() -> usize {
    1000
}

/// A complete run: data generator, encoder shape and training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub stages: Vec<StageConfig>,
}

/// Bundled presets as (name, TOML text).
pub const PRESETS: &[(&str, &str)] = &[
    ("double_spiral", include_str!("../presets/double_spiral.cfg")),
    ("synthetic_identifiable", include_str!("../presets/synthetic_identifiable.cfg")),
    ("synthetic_nonidentifiable", include_str!("../presets/synthetic_nonidentifiable.cfg")),
    ("double_spiral_full", include_str!("../presets/double_spiral_full.cfg")),
    ("synthetic_full", include_str!("../presets/synthetic_full.cfg")),
];

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| NmceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            NmceError::Config(msg) => NmceError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| NmceError::Config(format!("unknown preset {name:?}")))?;
        Self::from_toml(text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NmceError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(NmceError::Config("stages: at least one stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(&format!("stages[{i}]"))?;
        }
        if self.data.eval_per_class == 0 {
            return Err(NmceError::Config("data.eval_per_class must be >= 1".into()));
        }
        self.model_spec()
            .validate()
            .map_err(|e| NmceError::Config(format!("model: {e}")))
    }

    pub fn model_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.data.generator.ambient_dim(),
            hidden_widths: self.model.hidden_widths.clone(),
            activation: self.model.activation,
            feature_dim: self.model.feature_dim,
            n_clusters: self.model.n_clusters.unwrap_or(self.data.generator.n_classes()),
            gumbel_temperature: self.stages[0].gumbel_temperature,
        }
    }

    pub fn sampler(&self) -> Result<Sampler> {
        self.data.generator.sampler(data_seed(self.seed))
    }

    /// Held-out points from the same generator, independent of training batches.
    pub fn eval_dataset(&self) -> Result<Dataset> {
        dataset_from_spec(&self.data.generator, self.data.eval_per_class, data_seed(self.seed))
    }

    pub fn train(&self) -> Result<(Mlp, Vec<RunRecord>)> {
        self.train_with(|_, _| {})
    }

    pub fn train_with(&self, observe: impl FnMut(usize, &StepRecord)) -> Result<(Mlp, Vec<RunRecord>)> {
        let sampler = self.sampler()?;
        multistage_train_with(self.model_spec(), &BatchSource::Online(&sampler), &self.stages, self.seed, observe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(objective: Objective) -> RunConfig {
        let mut cfg = RunConfig::preset("double_spiral").unwrap();
        cfg.model.hidden_widths = vec![16];
        cfg.stages[0].objective = objective;
        cfg.stages[0].steps = 5;
        cfg.stages[0].batch_size = 32;
        cfg
    }

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap();
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::preset("synthetic_identifiable").unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn bad_field_is_named() {
        let mut cfg = RunConfig::preset("double_spiral").unwrap();
        cfg.stages[0].epsilon = -1.0;
        let err = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap_err().to_string();
        assert!(err.contains("stages[0].epsilon"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = RunConfig::preset("double_spiral").unwrap().to_toml().unwrap().replace("seed = ", "sed = 1\nseed = ");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut cfg = tiny_config(Objective::Nmce);
        cfg.stages[0].lr = 0.0;
        cfg.stages[0].weight_decay = 0.0;
        let (model, _) = cfg.train().unwrap();
        let init = Mlp::init(cfg.model_spec(), init_seed(cfg.seed)).unwrap();
        assert_eq!(model.params(), init.params());
    }

    #[test]
    fn same_seed_same_history() {
        for obj in [Objective::Tcr, Objective::Nmce] {
            let cfg = tiny_config(obj);
            let (a, ra) = cfg.train().unwrap();
            let (b, rb) = cfg.train().unwrap();
            assert_eq!(ra[0].steps, rb[0].steps);
            assert_eq!(a.params(), b.params());
            assert_eq!(ra[0].steps.len(), 5);
        }
    }

    #[test]
    fn seed_changes_history() {
        let cfg = tiny_config(Objective::Nmce);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(cfg.train().unwrap().1[0].steps, other.train().unwrap().1[0].steps);
    }

    #[test]
    fn single_stage_matches_train_stage() {
        let cfg = tiny_config(Objective::Tcr);
        let (multi, rec) = cfg.train().unwrap();
        let sampler = cfg.sampler().unwrap();
        let mut model = Mlp::init(cfg.model_spec(), init_seed(cfg.seed)).unwrap();
        let single = train_stage(
            &mut model,
            &BatchSource::Online(&sampler),
            &cfg.stages[0],
            stage_seed(cfg.seed, 0, &cfg.stages[0]),
        )
        .unwrap();
        assert_eq!(model.params(), multi.params());
        assert_eq!(single.steps, rec[0].steps);
    }

    #[test]
    fn empty_stage_list_rejected() {
        let cfg = tiny_config(Objective::Tcr);
        let sampler = cfg.sampler().unwrap();
        assert!(multistage_train(cfg.model_spec(), &BatchSource::Online(&sampler), &[], 0).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let cfg = tiny_config(Objective::Tcr);
        let x = Matrix::zeros(64, 5);
        let mut model = Mlp::init(cfg.model_spec(), 0).unwrap();
        assert!(train_stage(&mut model, &BatchSource::Fixed(&x), &cfg.stages[0], 0).is_err());
    }

    #[test]
    fn nan_input_aborts_with_step() {
        let cfg = tiny_config(Objective::Nmce);
        let mut x = Matrix::from_fn(64, 2, |r, c| (r * 2 + c) as f64 * 0.01);
        x.set(3, 0, f64::NAN);
        let mut model = Mlp::init(cfg.model_spec(), 0).unwrap();
        let mut stage = cfg.stages[0].clone();
        stage.batch_size = 64;
        match train_stage(&mut model, &BatchSource::Fixed(&x), &stage, 0) {
            Err(NmceError::NumericalAbort { step, .. }) => assert_eq!(step, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn history_csv_layout() {
        let cfg = tiny_config(Objective::Tcr);
        let (_, rec) = cfg.train().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        write_history_csv(&path, &rec).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,total_rate,cluster_rate,constraint_d");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1].split(',').nth(3), Some(""));
    }
}
