use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nmce::check::{all_passed, format_table, run_all, CheckOptions};
use nmce::data::{
    dataset_from_spec, format_g17, load_dataset, save_dataset, Dataset, DoubleSpiral, GeneratorSpec, MlpManifoldsSpec,
};
use nmce::eval::{evaluate, pca_component_retrieval, singular_spectrum, spectra_csv, MetricReport};
use nmce::linalg::tape::GradFault;
use nmce::model::Mlp;
use nmce::training::{write_history_csv, RunConfig};
use nmce::{Matrix, NmceError};
use serde::Serialize;

use crate::{CheckArgs, CliError, EvalArgs, ExportArgs, GenDataArgs, TrainArgs};

type CliResult = Result<(), CliError>;

pub fn gen_data(a: &GenDataArgs) -> CliResult {
    let mut spec = match &a.config {
        Some(path) => RunConfig::load(path)?.data.generator,
        None => match a.generator.as_str() {
            "double-spiral" => GeneratorSpec::DoubleSpiral(DoubleSpiral::default()),
            "random-mlp" => GeneratorSpec::RandomMlp(MlpManifoldsSpec::default()),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown generator {other:?} (expected double-spiral or random-mlp)"
                )))
            }
        },
    };
    if spec.name() != a.generator {
        return Err(CliError::Usage(format!(
            "config describes a {} generator, not {}",
            spec.name(),
            a.generator
        )));
    }
    match &mut spec {
        GeneratorSpec::DoubleSpiral(s) => {
            if a.latent_dims.is_some() || a.ambient_dim.is_some() || a.no_bias {
                return Err(CliError::Usage(
                    "--latent-dims, --ambient-dim and --no-bias apply to random-mlp only".into(),
                ));
            }
            s.radius = a.radius.unwrap_or(s.radius);
            s.noise_sigma = a.noise_sigma.unwrap_or(s.noise_sigma);
        }
        GeneratorSpec::RandomMlp(s) => {
            if a.radius.is_some() || a.noise_sigma.is_some() {
                return Err(CliError::Usage("--radius and --noise-sigma apply to double-spiral only".into()));
            }
            if let Some(dims) = &a.latent_dims {
                s.latent_dims = dims.clone();
            }
            s.ambient_dim = a.ambient_dim.unwrap_or(s.ambient_dim);
            s.with_bias &= !a.no_bias;
        }
    }
    let data = dataset_from_spec(&spec, a.n, a.seed)?;
    create_parent(&a.out)?;
    save_dataset(&a.out, &data)?;
    println!("wrote {} points ({} dims) to {}", data.len(), data.dim(), a.out.display());
    Ok(())
}

fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    artifacts: BTreeMap<&'static str, PathBuf>,
    stage_wall_clock_secs: Vec<f64>,
}

pub fn train(a: &TrainArgs) -> CliResult {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(CliError::Usage(
                "train needs --config <PATH> or --preset <NAME>\n\nUsage: nmce train --config <PATH> [--seed <SEED>] [--out <DIR>]"
                    .into(),
            ))
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&a.out)?;
    let mut artifacts = BTreeMap::new();
    let config_path = a.out.join("config.toml");
    fs::write(&config_path, cfg.to_toml()?)?;
    artifacts.insert("config", config_path);

    let log_every = a.log_every;
    let (model, records) = cfg.train_with(|stage, r| {
        if log_every > 0 && r.step % log_every == 0 {
            let cluster = r.cluster_rate.map(|c| format!(" cluster_rate {c:.4}")).unwrap_or_default();
            eprintln!(
                "stage {stage} step {:>6} loss {:.4} total_rate {:.4}{cluster} d {:.5}",
                r.step, r.loss, r.total_rate, r.constraint_d
            );
        }
    })?;

    let ckpt = a.out.join("checkpoint.json");
    model.save_checkpoint(&ckpt)?;
    artifacts.insert("checkpoint", ckpt);
    let history = a.out.join("history.csv");
    write_history_csv(&history, &records)?;
    artifacts.insert("loss_history", history);

    let held_out = cfg.eval_dataset()?;
    let data_path = a.out.join("eval_data.csv");
    save_dataset(&data_path, &held_out)?;
    artifacts.insert("eval_data", data_path);
    let (report, written) = write_evaluation(&a.out, &model, &held_out, cfg.seed)?;
    artifacts.extend(written);
    print!("{}", report.to_text());

    let manifest = RunManifest {
        tool: "nmce",
        version: env!("CARGO_PKG_VERSION"),
        command: "train",
        seed: cfg.seed,
        config: &cfg,
        stage_wall_clock_secs: records.iter().map(|r| r.wall_clock_secs).collect(),
        artifacts,
    };
    let manifest_path = a.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| NmceError::Config(e.to_string()))?;
    fs::write(&manifest_path, text + "\n")?;
    eprintln!("wrote {}", manifest_path.display());
    Ok(())
}

fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Mlp, Dataset), CliError> {
    let model = Mlp::load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    if ds.dim() != model.spec().input_dim {
        return Err(CliError::Core(NmceError::InvalidArgument(format!(
            "dataset has {} columns but the checkpoint expects {} inputs",
            ds.dim(),
            model.spec().input_dim
        ))));
    }
    Ok((model, ds))
}

/// `x…,z…,pred[,true]`.
fn embeddings_csv(x: &Matrix, z: &Matrix, pred: &[usize], truth: Option<&[usize]>) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    header.extend((0..z.cols()).map(|j| format!("z{j}")));
    header.push("pred".into());
    if truth.is_some() {
        header.push("true".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..x.rows() {
        let cells: Vec<String> = x.row(i).iter().chain(z.row(i)).map(|v| format_g17(*v)).collect();
        out.push_str(&cells.join(","));
        write!(out, ",{}", pred[i]).expect("write to string");
        if let Some(t) = truth {
            write!(out, ",{}", t[i]).expect("write to string");
        }
        out.push('\n');
    }
    out
}

/// Eval-mode forward, metrics, embeddings and per-cluster spectra in `dir`.
fn write_evaluation(
    dir: &Path,
    model: &Mlp,
    ds: &Dataset,
    seed: u64,
) -> Result<(MetricReport, Vec<(&'static str, PathBuf)>), CliError> {
    let out = model.embed(&ds.points)?;
    let z = out.features.matrix();
    let pred = out.assignment.hard_labels();
    let report = evaluate(z, &pred, ds.labels.as_deref(), seed)?;

    let metrics = dir.join("metrics.txt");
    fs::write(&metrics, report.to_text())?;
    let embeddings = dir.join("embeddings.csv");
    fs::write(&embeddings, embeddings_csv(&ds.points, z, &pred, ds.labels.as_deref()))?;
    let mut spectra = singular_spectrum(z, None)?;
    spectra.extend(singular_spectrum(z, Some(&pred))?);
    let spectra_path = dir.join("spectra.csv");
    fs::write(&spectra_path, spectra_csv(&spectra))?;
    Ok((
        report,
        vec![("metrics", metrics), ("embeddings", embeddings), ("spectra", spectra_path)],
    ))
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let (model, ds) = load_pair(&a.checkpoint, &a.data)?;
    fs::create_dir_all(&a.out)?;
    let (report, _) = write_evaluation(&a.out, &model, &ds, a.seed)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn export(a: &ExportArgs) -> CliResult {
    let (model, ds) = load_pair(&a.checkpoint, &a.data)?;
    fs::create_dir_all(&a.out)?;
    let (_, _) = write_evaluation(&a.out, &model, &ds, 0)?;
    let out = model.embed(&ds.points)?;
    let pred = out.assignment.hard_labels();
    let clusters = pca_component_retrieval(out.features.matrix(), &pred, a.components, a.per_component)?;
    let mut csv = String::from("cluster,component,sigma,rank,index\n");
    for c in &clusters {
        if c.truncated {
            eprintln!(
                "cluster {} has only {} components (asked for {})",
                c.cluster,
                c.components.len(),
                a.components
            );
        }
        for (k, comp) in c.components.iter().enumerate() {
            for (r, idx) in comp.samples.iter().enumerate() {
                writeln!(csv, "{},{k},{},{r},{idx}", c.cluster, comp.sigma).expect("write to string");
            }
        }
    }
    let path = a.out.join("components.csv");
    fs::write(&path, csv)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn check(a: &CheckArgs) -> CliResult {
    let opts = CheckOptions {
        seed: a.seed,
        fault: a.inject_fault.then_some(GradFault::LogdetGradient),
        max_partition_points: a.max_partition_points,
    };
    let outcomes = run_all(&opts);
    print!("{}", format_table(&outcomes));
    if all_passed(&outcomes) {
        println!("all {} checks passed", outcomes.len());
        Ok(())
    } else {
        Err(CliError::ChecksFailed(outcomes.iter().filter(|o| !o.passed).count()))
    }
}
