use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, DatasetMeta};
use crate::error::{NmceError, Result};
use crate::linalg::Matrix;

/// Formats like C's `%.17g`.
pub fn format_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{v:.*}", (16 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `x0,…,x{d-1}[,label]` rows.
pub fn save_csv(path: &Path, points: &Matrix, labels: Option<&[usize]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != points.rows() {
            return Err(NmceError::invalid("label count differs from point count"));
        }
    }
    let mut out = String::new();
    let header: Vec<String> = (0..points.cols()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for r in 0..points.rows() {
        for (j, v) in points.row(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_g17(*v));
        }
        if let Some(l) = labels {
            write!(out, ",{}", l[r]).expect("write to string");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a file written by [`save_csv`]. Errors carry 1-based line numbers.
pub fn load_csv(path: &Path) -> Result<(Matrix, Option<Vec<usize>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(NmceError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = names.last() == Some(&"label");
    let dim = names.len() - usize::from(has_label);
    for (j, name) in names[..dim].iter().enumerate() {
        if *name != format!("x{j}") {
            return Err(NmceError::Parse {
                line: 1,
                msg: format!("expected column x{j}, found {name:?}"),
            });
        }
    }
    if dim == 0 {
        return Err(NmceError::Parse {
            line: 1,
            msg: "no coordinate columns".into(),
        });
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(NmceError::Parse {
                line: line_no,
                msg: format!("{} cells, header has {}", cells.len(), names.len()),
            });
        }
        for cell in &cells[..dim] {
            let v: f64 = cell.parse().map_err(|_| NmceError::Parse {
                line: line_no,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(NmceError::Parse {
                    line: line_no,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        if has_label {
            let cell = cells[dim];
            labels.push(cell.parse::<usize>().map_err(|_| NmceError::Parse {
                line: line_no,
                msg: format!("bad label {cell:?}"),
            })?);
        }
    }
    let rows = data.len() / dim;
    Ok((Matrix::from_raw(rows, dim, data), has_label.then_some(labels)))
}

/// `data.csv` → `data.meta.toml`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// Writes the CSV and, when the dataset knows its generator, a TOML sidecar.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    save_csv(path, &data.points, data.labels.as_deref())?;
    if let Some(meta) = &data.meta {
        let text = toml::to_string(meta).map_err(|e| NmceError::Config(e.to_string()))?;
        fs::write(meta_path(path), text)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (points, labels) = load_csv(path)?;
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text = fs::read_to_string(&mp)?;
        Some(toml::from_str::<DatasetMeta>(&text).map_err(|e| NmceError::Config(format!("{}: {e}", mp.display())))?)
    } else {
        None
    };
    Ok(Dataset { points, labels, meta })
}
