//! The four experiment commands: simulate, fit, eval, grid.

use std::fs;
use std::path::Path;

use hscp_core::model::PerturbationConfig;
use hscp_core::synthlab::{
    generate_ground_truth, grid_search_lambda, match_accuracy, split_sample_reproducibility,
    synthesize_panel, FitMethod, SplitSampleOptions,
};
use hscp_core::trainer::{
    fit_adv_hscp_on_perturbed, fit_hscp, perturb_data, perturb_data_per_subject, pooled_sigma,
    FitReport,
};

use crate::archive::{
    load_dataset, read_model_archive, read_truth, write_dataset_manifest, write_matrix,
    write_model_archive, write_truth, DatasetManifest, FORMAT_VERSION,
};
use crate::config::{method_name, parse_method, ExperimentConfig};
use crate::CliError;

/// Exit status of a successful command run.
pub enum Outcome {
    Done,
    /// Fit finished by hitting the iteration cap without converging.
    IterationCapHit,
}

fn require_out(config: &ExperimentConfig, out_flag: Option<&str>) -> Result<String, CliError> {
    out_flag
        .map(str::to_string)
        .or_else(|| config.output.clone())
        .ok_or_else(|| CliError::invalid("no output directory: pass --out or set \"output\""))
}

fn require_dataset(config: &ExperimentConfig) -> Result<String, CliError> {
    config
        .data
        .dataset
        .clone()
        .ok_or_else(|| CliError::invalid("config is missing data.dataset"))
}

/// Generates a planted dataset: ground-truth archive, per-subject time-series
/// CSV files, and the dataset manifest.
pub fn cmd_simulate(config: &ExperimentConfig, out_flag: Option<&str>) -> Result<Outcome, CliError> {
    let out = require_out(config, out_flag)?;
    let synth = config
        .synth
        .as_ref()
        .ok_or_else(|| CliError::invalid("config is missing the \"synth\" section"))?;
    let hierarchy = config
        .hierarchy
        .as_ref()
        .ok_or_else(|| CliError::invalid("config is missing the \"hierarchy\" section"))?;
    if synth.subject_count == 0 {
        return Err(CliError::invalid("synth.subject_count must be >= 1"));
    }
    let seed = config.fit.seed;

    // Everything is validated before any file is written.
    let truth = generate_ground_truth(
        synth.node_count,
        &hierarchy.widths,
        synth.sparsity_fraction,
        synth.subject_count,
        seed,
    )
    .map_err(CliError::from_core)?;
    let panel = synthesize_panel(
        &truth,
        synth.time_points,
        synth.gaussian_sigma,
        synth.poisson_mean,
        seed.wrapping_add(1),
    )
    .map_err(CliError::from_core)?;

    let dir = Path::new(&out);
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {out}: {e}")))?;
    write_truth(&dir.join("truth"), &truth, synth.sparsity_fraction)?;
    let mut files = Vec::with_capacity(panel.subject_count());
    for (i, x) in panel.subjects().iter().enumerate() {
        let name = format!("subject_{i:03}.csv");
        write_matrix(&dir.join(&name), x)?;
        files.push(name);
    }
    write_dataset_manifest(
        dir,
        &DatasetManifest {
            format_version: FORMAT_VERSION,
            kind: "timeseries".into(),
            node_count: synth.node_count,
            subject_count: synth.subject_count,
            time_points: Some(synth.time_points),
            files,
            seed: Some(seed),
            truth: Some("truth".into()),
        },
    )?;
    println!(
        "simulated {} subjects x {} time points on {} nodes -> {out}",
        synth.subject_count, synth.time_points, synth.node_count
    );
    Ok(Outcome::Done)
}

/// Builds the perturbed set per the configured sigma scope: one pooled sigma
/// over all entries, or each subject shifted by its own sigma.
fn perturbed_set_for(
    config: &ExperimentConfig,
    data: &hscp_core::model::CorrelationSet,
) -> Result<hscp_core::model::CorrelationSet, CliError> {
    let factor = config.perturb.magnitude_factor;
    match config.perturb.sigma_scope.as_str() {
        "pooled" => {
            let perturb =
                PerturbationConfig::new(factor, pooled_sigma(data)).map_err(CliError::from_core)?;
            Ok(perturb_data(data, &perturb))
        }
        "per-subject" => Ok(perturb_data_per_subject(data, factor)),
        other => Err(CliError::invalid(format!(
            "unknown perturb.sigma_scope {other:?}; expected \"pooled\" or \"per-subject\""
        ))),
    }
}

/// Fits the configured model to a dataset and archives the result.
pub fn cmd_fit(
    config: &ExperimentConfig,
    method_flag: Option<&str>,
    out_flag: Option<&str>,
) -> Result<Outcome, CliError> {
    let out = require_out(config, out_flag)?;
    let method = match method_flag {
        Some(name) => parse_method(name)?,
        None => config.method()?,
    };
    let spec = config.hierarchy_spec()?;
    let fit_config = config.fit_config();
    let dataset_dir = require_dataset(config)?;
    let data = load_dataset(Path::new(&dataset_dir))?;
    spec.validate_for(data.node_count()).map_err(CliError::from_core)?;

    let (model, adversary, report): (_, Option<_>, FitReport) = match method {
        FitMethod::Hscp => {
            let (m, r) = fit_hscp(&data, &spec, &fit_config).map_err(CliError::from_core)?;
            (m, None, r)
        }
        FitMethod::AdvHscp => {
            let perturbed = perturbed_set_for(config, &data)?;
            let (m, a, r) = fit_adv_hscp_on_perturbed(&data, &spec, &fit_config, &perturbed)
                .map_err(CliError::from_core)?;
            (m, Some(a), r)
        }
    };

    write_model_archive(
        Path::new(&out),
        method,
        &model,
        adversary.as_ref(),
        &spec.sparsity,
        spec.alpha,
        spec.beta,
        fit_config.seed,
        &report,
    )?;
    println!(
        "fit {} in {} iterations (converged: {}), final objective {:.6e} -> {out}",
        method_name(method),
        report.iterations_run,
        report.converged,
        report.final_objective
    );
    if report.converged {
        Ok(Outcome::Done)
    } else {
        Ok(Outcome::IterationCapHit)
    }
}

/// Accuracy against ground truth or split-sample reproducibility, exported as
/// a CSV table.
pub fn cmd_eval(config: &ExperimentConfig, out_flag: Option<&str>) -> Result<Outcome, CliError> {
    let out = require_out(config, out_flag)?;
    match config.eval.kind.as_str() {
        "accuracy" => eval_accuracy(config, &out),
        "reproducibility" => eval_reproducibility(config, &out),
        other => Err(CliError::invalid(format!(
            "unknown eval.kind {other:?}; expected \"accuracy\" or \"reproducibility\""
        ))),
    }
}

fn eval_accuracy(config: &ExperimentConfig, out: &str) -> Result<Outcome, CliError> {
    let truth_dir = config
        .data
        .truth
        .clone()
        .ok_or_else(|| CliError::invalid("accuracy eval needs data.truth"))?;
    if config.eval.archives.is_empty() {
        return Err(CliError::invalid("accuracy eval needs eval.archives"));
    }
    let truth = read_truth(Path::new(&truth_dir))?;

    // (method, widths, level) -> accuracies across archives.
    let mut rows: Vec<(String, Vec<usize>, usize, Vec<f64>)> = Vec::new();
    for dir in &config.eval.archives {
        let archive = read_model_archive(Path::new(dir))?;
        let depth = archive.model.depth().min(truth.depth());
        for level in 1..=depth {
            let estimated = archive.model.cumulative_component(level);
            let reference = truth.pattern(level);
            let acc = match_accuracy(&estimated, &reference)
                .map_err(CliError::from_core)?
                .mean_accuracy;
            let key_method = archive.manifest.method.clone();
            let key_widths = archive.manifest.widths.clone();
            match rows
                .iter_mut()
                .find(|(m, w, l, _)| *m == key_method && *w == key_widths && *l == level)
            {
                Some((_, _, _, values)) => values.push(acc),
                None => rows.push((key_method, key_widths, level, vec![acc])),
            }
        }
    }

    let mut csv = String::from("method,widths,level,mean,std,n\n");
    for (method, widths, level, values) in &rows {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (values.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        let widths_text =
            widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x");
        csv.push_str(&format!("{method},{widths_text},{level},{mean},{std},{}\n", values.len()));
    }
    let dir = Path::new(out);
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {out}: {e}")))?;
    fs::write(dir.join("accuracy.csv"), &csv)
        .map_err(|e| CliError::io(format!("writing accuracy.csv: {e}")))?;
    print!("{csv}");
    Ok(Outcome::Done)
}

fn eval_reproducibility(config: &ExperimentConfig, out: &str) -> Result<Outcome, CliError> {
    let spec = config.hierarchy_spec()?;
    let fit_config = config.fit_config();
    let dataset_dir = require_dataset(config)?;
    let data = load_dataset(Path::new(&dataset_dir))?;
    spec.validate_for(data.node_count()).map_err(CliError::from_core)?;
    let opts = SplitSampleOptions {
        n_runs: config.eval.n_runs,
        seed: fit_config.seed,
        perturb_factor: config.perturb.magnitude_factor,
    };

    let mut csv = String::from("method,widths,level,mean,std,n_runs\n");
    let widths_text =
        spec.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("x");
    for name in &config.eval.methods {
        let method = parse_method(name)?;
        let stats = split_sample_reproducibility(&data, &spec, &fit_config, method, &opts)
            .map_err(CliError::from_core)?;
        for s in stats {
            csv.push_str(&format!(
                "{},{widths_text},{},{},{},{}\n",
                method_name(method),
                s.level,
                s.mean,
                s.std,
                opts.n_runs
            ));
        }
    }
    let dir = Path::new(out);
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {out}: {e}")))?;
    fs::write(dir.join("reproducibility.csv"), &csv)
        .map_err(|e| CliError::io(format!("writing reproducibility.csv: {e}")))?;
    print!("{csv}");
    Ok(Outcome::Done)
}

/// Sparsity grid search by split-sample reproducibility.
pub fn cmd_grid(config: &ExperimentConfig, out_flag: Option<&str>) -> Result<Outcome, CliError> {
    let out = require_out(config, out_flag)?;
    let spec = config.hierarchy_spec()?;
    let fit_config = config.fit_config();
    let method = config.method()?;
    let dataset_dir = require_dataset(config)?;
    let data = load_dataset(Path::new(&dataset_dir))?;
    spec.validate_for(data.node_count()).map_err(CliError::from_core)?;
    let opts = SplitSampleOptions {
        n_runs: config.grid.n_runs,
        seed: fit_config.seed,
        perturb_factor: config.perturb.magnitude_factor,
    };
    let result = grid_search_lambda(
        &data,
        &spec,
        &config.grid.exponents,
        &fit_config,
        method,
        &opts,
    )
    .map_err(CliError::from_core)?;

    let mut csv = String::from("lambda,level,mean,std,n_runs\n");
    for cell in &result.cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.lambda, cell.level, cell.mean, cell.std, cell.n_runs
        ));
    }
    let dir = Path::new(&out);
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {out}: {e}")))?;
    fs::write(dir.join("grid.csv"), &csv)
        .map_err(|e| CliError::io(format!("writing grid.csv: {e}")))?;
    if !result.failures.is_empty() {
        let mut failures = String::from("lambda,error\n");
        for (lambda, err) in &result.failures {
            failures.push_str(&format!("{lambda},{}\n", err.replace(',', ";")));
        }
        fs::write(dir.join("grid_failures.csv"), &failures)
            .map_err(|e| CliError::io(format!("writing grid_failures.csv: {e}")))?;
    }
    let chosen_json = serde_json::to_string_pretty(
        &result
            .chosen
            .iter()
            .map(|(level, lambda)| serde_json::json!({"level": level, "lambda": lambda}))
            .collect::<Vec<_>>(),
    )
    .map_err(|e| CliError::invalid(format!("encoding chosen lambdas: {e}")))?;
    fs::write(dir.join("chosen_lambda.json"), chosen_json)
        .map_err(|e| CliError::io(format!("writing chosen_lambda.json: {e}")))?;
    for (level, lambda) in &result.chosen {
        println!("level {level}: lambda = {lambda}");
    }
    Ok(Outcome::Done)
}
