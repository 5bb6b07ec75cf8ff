//! File formats: JSON manifests and group files, CSV matrices and tables.
//!
//! Floats are written with `{:?}`, the shortest text that parses back to
//! the same `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bench::{BenchReport, Cell};
use crate::error::{Error, Result};
use crate::groups::{GroupSet, GroupSpec};
use crate::losses::{LossKind, MultitaskProblem, Task};

/// Where a manifest gets its groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSource {
    File(PathBuf),
    Inline(GroupSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub loss_kind: LossKind,
    /// One CSV per task, relative to the manifest.
    pub tasks: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<GroupSource>,
    /// `p × T` CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

/// A manifest with its files loaded.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: MultitaskProblem,
    pub groups: Option<GroupSet>,
    pub truth: Option<Array2<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_groups(path: &Path) -> Result<GroupSet> {
    let spec: GroupSpec = read_json(path)?;
    spec.build().map_err(|e| parse_err(path, e))
}

/// Writes groups in explicit form.
pub fn write_groups(path: &Path, gs: &GroupSet) -> Result<()> {
    write_json(path, &GroupSpec::explicit(gs))
}

/// Numeric CSV without a header. A first line that does not parse as
/// numbers is skipped as a header.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(parse_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(parse_err(path, format!("row {i} has {} columns, expected {cols}", r.len())));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| parse_err(path, e))
}

pub fn write_matrix(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Task CSV: rows are samples, the last column is the response.
pub fn read_task(path: &Path) -> Result<Task> {
    let m = read_matrix(path)?;
    if m.ncols() < 2 || m.nrows() == 0 {
        return Err(parse_err(path, "need at least one sample and one feature plus the response"));
    }
    let p = m.ncols() - 1;
    let design = m.slice(ndarray::s![.., ..p]).to_owned();
    let response: Array1<f64> = m.column(p).to_owned();
    Ok(Task::new(design, response))
}

pub fn write_task(path: &Path, task: &Task) -> Result<()> {
    let (n, p) = task.design.dim();
    let mut m = Array2::zeros((n, p + 1));
    m.slice_mut(ndarray::s![.., ..p]).assign(&task.design);
    m.column_mut(p).assign(&task.response);
    write_matrix(path, m.view())
}

/// Loads every file a manifest names. Task paths, the group file and the
/// truth file resolve relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<LoadedProblem> {
    let manifest: Manifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if manifest.tasks.is_empty() {
        return Err(parse_err(path, "manifest lists no tasks"));
    }
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for t in &manifest.tasks {
        let file = resolve(base, t);
        let task = read_task(&file)?;
        if let Some(first) = tasks.first() {
            let first: &Task = first;
            if first.design.ncols() != task.design.ncols() {
                return Err(parse_err(
                    &file,
                    format!("{} feature columns, expected {}", task.design.ncols(), first.design.ncols()),
                ));
            }
        }
        tasks.push(task);
    }
    let mut problem = MultitaskProblem::new(tasks, manifest.loss_kind).map_err(|e| parse_err(path, e))?;
    if let Some(s) = manifest.sigma {
        problem = problem.with_noise_sigma(s);
    }
    let groups = match &manifest.groups {
        None => None,
        Some(GroupSource::File(f)) => Some(read_groups(&resolve(base, f))?),
        Some(GroupSource::Inline(spec)) => Some(spec.build().map_err(|e| parse_err(path, e))?),
    };
    let truth = match &manifest.truth {
        None => None,
        Some(f) => {
            let file = resolve(base, f);
            let x = read_matrix(&file)?;
            if x.dim() != (problem.p(), problem.task_count()) {
                return Err(parse_err(
                    &file,
                    format!(
                        "truth is {}x{}, expected {}x{}",
                        x.nrows(),
                        x.ncols(),
                        problem.p(),
                        problem.task_count()
                    ),
                ));
            }
            Some(x)
        }
    };
    Ok(LoadedProblem { problem, groups, truth })
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// One row of `path.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub lambda: f64,
    pub objective: f64,
    pub nnz: usize,
    pub selected_groups_count: usize,
    pub mse: Option<f64>,
}

pub fn write_path_csv(path: &Path, rows: &[PathRow]) -> Result<()> {
    let mut out = String::from("lambda,objective,nnz,selected_groups_count,mse_if_truth_given\n");
    for r in rows {
        let mse = r.mse.map(num).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            num(r.lambda),
            num(r.objective),
            r.nnz,
            r.selected_groups_count,
            mse
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_report_csv(path: &Path, report: &BenchReport) -> Result<()> {
    let mut out = String::from("sweep_value,method,trial,lambda_selected,mse\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            num(r.sweep_value),
            r.method.name(),
            r.trial,
            num(r.lambda_selected),
            num(r.mse)
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Serialize)]
struct Summary<'a> {
    sweep: &'a str,
    config_hash: &'a str,
    config: &'a crate::bench::BenchConfig,
    methods: Vec<&'static str>,
    cells: &'a [Cell],
}

pub fn write_summary_json(path: &Path, report: &BenchReport) -> Result<()> {
    write_json(
        path,
        &Summary {
            sweep: &report.sweep,
            config_hash: &report.config_hash,
            config: &report.config,
            methods: report.methods.iter().map(|m| m.name()).collect(),
            cells: &report.cells,
        },
    )
}

/// Creates `dir` (and parents) if missing.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}
