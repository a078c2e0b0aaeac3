//! On-disk formats: matrix CSV files, the dataset manifest, the ground-truth
//! archive, and the fitted-model archive.
//!
//! Matrices are plain comma-separated decimal text, row-major, no header;
//! shapes travel in the JSON manifests. Values are printed with Rust's
//! shortest round-trip formatting, so load(save(x)) reproduces every bit.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use hscp_core::model::{AdversaryModel, CorrelationSet, FactorModel, TimeSeriesPanel};
use hscp_core::objective::LossBreakdown;
use hscp_core::synthlab::{FitMethod, GroundTruth};
use hscp_core::trainer::{FeasibilityRecord, FitReport};

use crate::config::{method_name, parse_method};
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), CliError> {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Array2<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    let mut values = Vec::with_capacity(rows * cols);
    for (line_no, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| {
                CliError::invalid(format!(
                    "{} line {}: bad number {field:?}: {e}",
                    path.display(),
                    line_no + 1
                ))
            })?;
            values.push(v);
        }
    }
    if values.len() != rows * cols {
        return Err(CliError::invalid(format!(
            "{}: expected {rows}x{cols} = {} values, found {}",
            path.display(),
            rows * cols,
            values.len()
        )));
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Dataset manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// "timeseries" (T x P per subject) or "correlation" (P x P per subject).
    pub kind: String,
    pub node_count: usize,
    pub subject_count: usize,
    pub time_points: Option<usize>,
    pub files: Vec<String>,
    pub seed: Option<u64>,
    /// Relative path of the ground-truth archive, when simulated.
    pub truth: Option<String>,
}

pub fn dataset_manifest_path(dir: &Path) -> PathBuf {
    dir.join("dataset.json")
}

pub fn write_dataset_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::invalid(format!("encoding dataset manifest: {e}")))?;
    fs::write(dataset_manifest_path(dir), text)
        .map_err(|e| CliError::io(format!("writing dataset manifest: {e}")))
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest, CliError> {
    let path = dataset_manifest_path(dir);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))
}

/// Loads a dataset directory as correlation matrices, converting time-series
/// subjects through the Pearson correlation when needed.
pub fn load_dataset(dir: &Path) -> Result<CorrelationSet, CliError> {
    let manifest = read_dataset_manifest(dir)?;
    if manifest.files.len() != manifest.subject_count {
        return Err(CliError::invalid(format!(
            "dataset manifest lists {} files for {} subjects",
            manifest.files.len(),
            manifest.subject_count
        )));
    }
    match manifest.kind.as_str() {
        "timeseries" => {
            let t = manifest.time_points.ok_or_else(|| {
                CliError::invalid("timeseries dataset manifest missing time_points")
            })?;
            let subjects = manifest
                .files
                .iter()
                .map(|f| read_matrix(&dir.join(f), t, manifest.node_count))
                .collect::<Result<Vec<_>, _>>()?;
            let panel = TimeSeriesPanel::new(subjects).map_err(CliError::from_core)?;
            hscp_core::model::pearson_correlation(&panel).map_err(CliError::from_core)
        }
        "correlation" => {
            let mats = manifest
                .files
                .iter()
                .map(|f| read_matrix(&dir.join(f), manifest.node_count, manifest.node_count))
                .collect::<Result<Vec<_>, _>>()?;
            CorrelationSet::new(mats).map_err(CliError::from_core)
        }
        other => Err(CliError::invalid(format!("unknown dataset kind {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Ground-truth archive

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthManifest {
    pub format_version: u32,
    pub node_count: usize,
    pub subject_count: usize,
    pub widths: Vec<usize>,
    pub sparsity_fraction: f64,
    pub seed: u64,
}

pub fn write_truth(dir: &Path, truth: &GroundTruth, sparsity_fraction: f64) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    let widths: Vec<usize> = truth.components.iter().map(|c| c.ncols()).collect();
    let manifest = TruthManifest {
        format_version: FORMAT_VERSION,
        node_count: truth.node_count(),
        subject_count: truth.subject_count(),
        widths,
        sparsity_fraction,
        seed: truth.seed,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::invalid(format!("encoding truth manifest: {e}")))?;
    fs::write(dir.join("truth.json"), text)
        .map_err(|e| CliError::io(format!("writing truth manifest: {e}")))?;
    for (idx, c) in truth.components.iter().enumerate() {
        write_matrix(&dir.join(format!("component_{}.csv", idx + 1)), c)?;
    }
    for (idx, width) in truth.components.iter().map(|c| c.ncols()).enumerate() {
        let mut table = Array2::<f64>::zeros((truth.subject_count(), width));
        for (i, subj) in truth.loadings.iter().enumerate() {
            table.row_mut(i).assign(&subj[idx]);
        }
        write_matrix(&dir.join(format!("loadings_{}.csv", idx + 1)), &table)?;
    }
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<GroundTruth, CliError> {
    let path = dir.join("truth.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    let manifest: TruthManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))?;
    let mut components = Vec::new();
    let mut rows = manifest.node_count;
    for (idx, &k) in manifest.widths.iter().enumerate() {
        components.push(read_matrix(&dir.join(format!("component_{}.csv", idx + 1)), rows, k)?);
        rows = k;
    }
    let mut loadings: Vec<Vec<Array1<f64>>> =
        vec![Vec::with_capacity(manifest.widths.len()); manifest.subject_count];
    for (idx, &k) in manifest.widths.iter().enumerate() {
        let table =
            read_matrix(&dir.join(format!("loadings_{}.csv", idx + 1)), manifest.subject_count, k)?;
        for (i, row) in table.rows().into_iter().enumerate() {
            loadings[i].push(row.to_owned());
        }
    }
    Ok(GroundTruth { components, loadings, seed: manifest.seed })
}

// ---------------------------------------------------------------------------
// Model archive

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub method: String,
    pub node_count: usize,
    pub subject_count: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub converged: bool,
    pub iterations_run: usize,
    pub final_objective: f64,
}

pub struct ModelArchive {
    pub manifest: ModelManifest,
    pub model: FactorModel,
    pub adversary: Option<AdversaryModel>,
}

#[allow(clippy::too_many_arguments)]
pub fn write_model_archive(
    dir: &Path,
    method: FitMethod,
    model: &FactorModel,
    adversary: Option<&AdversaryModel>,
    lambda: &[f64],
    alpha: f64,
    beta: f64,
    seed: u64,
    report: &FitReport,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        method: method_name(method).to_string(),
        node_count: model.node_count(),
        subject_count: model.subject_count(),
        depth: model.depth(),
        widths: model.components.iter().map(|c| c.ncols()).collect(),
        lambda: lambda.to_vec(),
        alpha,
        beta,
        seed,
        converged: report.converged,
        iterations_run: report.iterations_run,
        final_objective: report.final_objective,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::invalid(format!("encoding model manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), text)
        .map_err(|e| CliError::io(format!("writing model manifest: {e}")))?;

    for (idx, w) in model.components.iter().enumerate() {
        write_matrix(&dir.join(format!("component_{}.csv", idx + 1)), w)?;
    }
    if let Some(adv) = adversary {
        for (idx, w) in adv.components.iter().enumerate() {
            write_matrix(&dir.join(format!("adversary_{}.csv", idx + 1)), w)?;
        }
    }
    for (idx, w) in model.components.iter().enumerate() {
        let k = w.ncols();
        let mut table = Array2::<f64>::zeros((model.subject_count(), k));
        for (i, subj) in model.loadings.iter().enumerate() {
            table.row_mut(i).assign(&subj[idx]);
        }
        write_matrix(&dir.join(format!("loadings_{}.csv", idx + 1)), &table)?;
    }
    if !report.loss_trace.is_empty() {
        write_trace(&dir.join("trace.csv"), &report.loss_trace)?;
    }
    if !report.feasibility_trace.is_empty() {
        write_feasibility(&dir.join("feasibility.csv"), &report.feasibility_trace)?;
    }
    Ok(())
}

pub fn read_model_archive(dir: &Path) -> Result<ModelArchive, CliError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    let manifest: ModelManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))?;
    if manifest.widths.len() != manifest.depth {
        return Err(CliError::invalid(format!(
            "{}: depth {} does not match {} widths",
            path.display(),
            manifest.depth,
            manifest.widths.len()
        )));
    }
    let method = parse_method(&manifest.method)?;

    let mut components = Vec::new();
    let mut rows = manifest.node_count;
    for (idx, &k) in manifest.widths.iter().enumerate() {
        components.push(read_matrix(&dir.join(format!("component_{}.csv", idx + 1)), rows, k)?);
        rows = k;
    }
    let mut loadings: Vec<Vec<Array1<f64>>> =
        vec![Vec::with_capacity(manifest.depth); manifest.subject_count];
    for (idx, &k) in manifest.widths.iter().enumerate() {
        let table = read_matrix(
            &dir.join(format!("loadings_{}.csv", idx + 1)),
            manifest.subject_count,
            k,
        )?;
        for (i, row) in table.rows().into_iter().enumerate() {
            loadings[i].push(row.to_owned());
        }
    }
    let adversary = if method == FitMethod::AdvHscp {
        let mut adv_components = Vec::new();
        let mut rows = manifest.node_count;
        for (idx, &k) in manifest.widths.iter().enumerate() {
            adv_components
                .push(read_matrix(&dir.join(format!("adversary_{}.csv", idx + 1)), rows, k)?);
            rows = k;
        }
        Some(AdversaryModel { components: adv_components })
    } else {
        None
    };
    Ok(ModelArchive { manifest, model: FactorModel { components, loadings }, adversary })
}

// ---------------------------------------------------------------------------
// Trace exports

pub fn write_trace(path: &Path, trace: &[LossBreakdown]) -> Result<(), CliError> {
    let mut out =
        String::from("iteration,attack_proximity,attack_fit,defense_perturbed,defense_clean,total_j\n");
    for (i, b) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            b.attack_proximity,
            b.attack_fit,
            b.defense_perturbed,
            b.defense_clean,
            b.total_j
        ));
    }
    fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn write_feasibility(path: &Path, trace: &[FeasibilityRecord]) -> Result<(), CliError> {
    let mut out = String::from(
        "iteration,max_l1_excess,max_linf_excess,max_component_negativity,max_loading_negativity,max_loading_sum_error\n",
    );
    for (i, r) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            r.max_l1_excess,
            r.max_linf_excess,
            r.max_component_negativity,
            r.max_loading_negativity,
            r.max_loading_sum_error
        ));
    }
    fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}
