use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use ndarray::Array1;
use ntkspectra::alignment::{
    batched_alignment, estimate_alignment_band, fit_power_law, AlignmentBand, AlignmentProfile, AlignmentSummary,
    BatchedAlignmentConfig, KernelSource, PowerLawFit, TargetKind,
};
use ntkspectra::bounds::{convergence_band, time_complexity, width_requirement, BoundParams, TimeComplexityInputs};
use ntkspectra::dataio::{
    check_assumptions, generate_sphere_dataset, load_csv, write_csv, write_spec_json, Dataset, LabelTarget,
    SyntheticSpec,
};
use ntkspectra::format::fmt_f64;
use ntkspectra::linalg::{read_vector_csv, write_matrix_csv, write_vector_csv};
use ntkspectra::netsim::MlpNetwork;
use ntkspectra::ntk_analytic::{two_point_analysis, AnalyticNtkConfig};
use ntkspectra::eigh_symmetric;
use serde_json::json;

use crate::args::{Command, DataArgs, FitArgs, GlobalArgs, KernelArgs, KernelKind, OutputFormat, TargetArg};
use crate::pipeline::{build_kernel, require_seed, train_and_bounds, TrainBoundsConfig};
use crate::report::ExperimentReport;
use crate::{NumericalFailure, UsageError};

pub const SPECTRUM_FILE: &str = "eigenvalues.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const REPORT_FILE: &str = "experiment_report.json";

pub fn dispatch(global: &GlobalArgs, command: &Command) -> Result<()> {
    match command {
        Command::GenData {
            n,
            d,
            pairs,
            frequency,
            name,
        } => gen_data(global, *n, *d, pairs.iter().map(|p| p.0).collect(), *frequency, name),
        Command::CheckData { data, threshold } => check_data(global, data, *threshold),
        Command::Ntk { data, kernel } => ntk(global, data, kernel),
        Command::Spectrum {
            data,
            kernel,
            fit,
            save_vectors,
        } => spectrum(global, data, kernel, fit, *save_vectors),
        Command::Align {
            data,
            kernel,
            fit,
            target,
            batch_size,
            num_batches,
            num_networks,
        } => align(global, data, kernel, fit, *target, *batch_size, *num_batches, *num_networks),
        Command::Train {
            data,
            depth,
            width,
            eta,
            eta_scale,
            steps,
            slack_fraction,
            fit,
        } => {
            let cfg = TrainBoundsConfig {
                depth: *depth,
                width: *width,
                seed: require_seed(global.seed, "train")?,
                eta: *eta,
                eta_scale: *eta_scale,
                steps: *steps,
                slack_fraction: *slack_fraction,
                exclude_top_k: fit.exclude_top_k,
                floor: fit.floor,
            };
            train(global, data, &cfg)
        }
        Command::Bounds {
            spectrum,
            eta,
            c,
            delta,
            slack,
            l0,
            steps,
        } => bounds(global, spectrum, *eta, *c, *delta, *slack, *l0, *steps),
        Command::TwoPoint {
            theta,
            depth,
            y1,
            y2,
            lipschitz,
        } => two_point(global, *theta, *depth, *y1, *y2, *lipschitz),
        Command::Report {
            artifacts,
            target_epsilon,
            beta,
        } => {
            let dir = artifacts.clone().unwrap_or_else(|| global.out_dir.clone());
            report(global, &dir, *target_epsilon, *beta)
        }
    }
}

fn out_path(global: &GlobalArgs, name: &str) -> PathBuf {
    global.out_dir.join(name)
}

fn load(data: &DataArgs) -> Result<Dataset> {
    if !data.data.exists() {
        return Err(ntkspectra::Error::MissingArtifact(data.data.clone()).into());
    }
    load_csv(&data.data, data.normalize).with_context(|| format!("loading {}", data.data.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_data(
    global: &GlobalArgs,
    n: usize,
    d: usize,
    pairs: Vec<ntkspectra::dataio::PairGroup>,
    frequency: f64,
    name: &str,
) -> Result<()> {
    let spec = SyntheticSpec {
        n,
        d,
        seed: require_seed(global.seed, "gen-data")?,
        target: LabelTarget::CosineOfProjection { frequency },
        near_dup_pairs: pairs,
    };
    let ds = generate_sphere_dataset(&spec)?;
    let csv_path = out_path(global, &format!("{name}.csv"));
    write_csv(&ds, &csv_path)?;
    write_spec_json(&spec, &out_path(global, &format!("{name}.spec.json")))?;
    info!("{} rows, {} injected pairs", ds.len(), ds.injected_pairs.len());
    println!("{}", csv_path.display());
    Ok(())
}

fn check_data(global: &GlobalArgs, data: &DataArgs, threshold: f64) -> Result<()> {
    let ds = load(data)?;
    let report = check_assumptions(&ds, threshold);
    let path = match global.format {
        OutputFormat::Json => {
            let p = out_path(global, "check.json");
            write_json(&p, &report)?;
            p
        }
        OutputFormat::Csv => {
            let p = out_path(global, "check.csv");
            let mut out = std::io::BufWriter::new(std::fs::File::create(&p)?);
            writeln!(out, "metric,value")?;
            writeln!(out, "n,{}", report.n)?;
            writeln!(out, "unit_norm_violations,{}", report.unit_norm_violations.len())?;
            writeln!(out, "parallel_pairs,{}", report.parallel_pairs.len())?;
            writeln!(out, "min_pairwise_angle,{}", fmt_f64(report.min_pairwise_angle))?;
            writeln!(out, "lipschitz_estimate,{}", fmt_f64(report.lipschitz_estimate))?;
            writeln!(out, "near_duplicate_pairs,{}", report.near_duplicate_pairs.len())?;
            out.flush()?;
            p
        }
    };
    if !report.assumptions_hold() {
        warn!(
            "{} rows off the sphere, {} parallel pairs",
            report.unit_norm_violations.len(),
            report.parallel_pairs.len()
        );
    }
    println!(
        "n = {}, min angle = {:.3e}, L_y = {:.6}, near duplicates = {}, assumptions hold: {}",
        report.n,
        report.min_pairwise_angle,
        report.lipschitz_estimate,
        report.near_duplicate_pairs.len(),
        report.assumptions_hold()
    );
    println!("{}", path.display());
    Ok(())
}

fn ntk(global: &GlobalArgs, data: &DataArgs, kernel: &KernelArgs) -> Result<()> {
    let ds = load(data)?;
    let k = build_kernel(&ds, kernel.kernel, kernel.depth, kernel.width, global.seed)?;
    let path = match global.format {
        OutputFormat::Csv => {
            let p = out_path(global, "kernel.csv");
            write_matrix_csv(&p, k.view())?;
            p
        }
        OutputFormat::Json => {
            let p = out_path(global, "kernel.json");
            let rows: Vec<Vec<f64>> = k.view().rows().into_iter().map(|r| r.to_vec()).collect();
            write_json(&p, &json!({ "n": k.order(), "kernel": rows }))?;
            p
        }
    };
    println!("{}", path.display());
    Ok(())
}

fn power_law_over_all(eigenvalues: &Array1<f64>) -> Option<PowerLawFit> {
    match fit_power_law(eigenvalues.view(), (1, eigenvalues.len())) {
        Ok(f) => Some(f),
        Err(e) => {
            warn!("power-law fit skipped: {e}");
            None
        }
    }
}

fn write_profile(
    global: &GlobalArgs,
    stem: &str,
    profile: &AlignmentProfile,
    band: Option<&AlignmentBand>,
    power: Option<&PowerLawFit>,
) -> Result<()> {
    profile.write_csv(&out_path(global, &format!("{stem}.csv")))?;
    AlignmentSummary::new(profile, band, power).write_json(&out_path(global, &format!("{stem}.json")))?;
    println!("{stem}: alpha = {:.4} (r² = {:.3})", profile.alpha, profile.r_squared);
    Ok(())
}

fn spectrum(global: &GlobalArgs, data: &DataArgs, kernel: &KernelArgs, fit: &FitArgs, save_vectors: bool) -> Result<()> {
    let ds = load(data)?;
    let k = build_kernel(&ds, kernel.kernel, kernel.depth, kernel.width, global.seed)?;
    let decomp = eigh_symmetric(&k)?;
    match global.format {
        OutputFormat::Csv => write_vector_csv(&out_path(global, SPECTRUM_FILE), decomp.eigenvalues.view())?,
        OutputFormat::Json => write_json(
            &out_path(global, "eigenvalues.json"),
            &json!({ "eigenvalues": decomp.eigenvalues.to_vec() }),
        )?,
    }
    if save_vectors {
        write_matrix_csv(&out_path(global, "eigenvectors.csv"), decomp.eigenvectors.view())?;
    }
    let power = power_law_over_all(&decomp.eigenvalues);
    match AlignmentProfile::from_decomposition(&decomp, ds.y.view(), fit.exclude_top_k, fit.floor) {
        Ok(p) => write_profile(global, "profile_labels", &p, None, power.as_ref())?,
        Err(e) => warn!("label profile skipped: {e}"),
    }
    if kernel.kernel == KernelKind::Empirical {
        let seed = require_seed(global.seed, "the empirical kernel")?;
        let net = MlpNetwork::init(ds.dim(), kernel.width, kernel.depth, seed)?;
        let r0 = &net.forward(ds.x.view())? - &ds.y;
        let band = estimate_alignment_band(&decomp, r0.view(), fit.floor, fit.exclude_top_k).ok();
        match AlignmentProfile::from_decomposition(&decomp, r0.view(), fit.exclude_top_k, fit.floor) {
            Ok(p) => write_profile(global, "profile_residual", &p, band.as_ref(), power.as_ref())?,
            Err(e) => warn!("residual profile skipped: {e}"),
        }
    }
    println!(
        "λ_max = {}, λ_min = {}",
        fmt_f64(decomp.lambda_max()),
        fmt_f64(decomp.lambda_min())
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn align(
    global: &GlobalArgs,
    data: &DataArgs,
    kernel: &KernelArgs,
    fit: &FitArgs,
    target: TargetArg,
    batch_size: usize,
    num_batches: usize,
    num_networks: usize,
) -> Result<()> {
    let ds = load(data)?;
    let seed = require_seed(global.seed, "align")?;
    let source = match kernel.kernel {
        KernelKind::Analytic => KernelSource::Analytic(AnalyticNtkConfig::normalized(kernel.depth)?),
        KernelKind::Empirical => KernelSource::Network {
            width: kernel.width,
            depth: kernel.depth,
            seeds: (0..num_networks as u64).map(|i| seed.wrapping_add(i)).collect(),
        },
    };
    let target = match target {
        TargetArg::Labels => TargetKind::Labels,
        TargetArg::Residual => TargetKind::Residual,
    };
    let cfg = BatchedAlignmentConfig {
        batch_size,
        num_batches,
        seed,
        target,
        exclude_top_k: fit.exclude_top_k,
        floor: fit.floor,
    };
    let profile = batched_alignment(&ds, &source, &cfg)?;
    let stem = match target {
        TargetKind::Labels => "align_labels",
        TargetKind::Residual => "align_residual",
    };
    write_profile(global, stem, &profile, None, None)
}

fn train(global: &GlobalArgs, data: &DataArgs, cfg: &TrainBoundsConfig) -> Result<()> {
    let ds = load(data)?;
    let run = train_and_bounds(&ds, cfg)?;

    let trace_path = out_path(global, "trace.csv");
    let bounds_path = out_path(global, "bounds.csv");
    run.trace.write_csv(&trace_path)?;
    run.curve.write_csv(&bounds_path, Some(&run.trace.losses))?;
    let residual_path = out_path(global, "residuals.csv");
    let wrote_residuals = run.trace.write_residuals_csv(&residual_path)?;

    let mut report = ExperimentReport::new(Some(cfg.seed));
    report.config.insert("command".into(), json!("train"));
    report.config.insert("data".into(), json!(data.data));
    report.config.insert("n".into(), json!(ds.len()));
    report.config.insert("depth".into(), json!(cfg.depth));
    report.config.insert("width".into(), json!(cfg.width));
    report.config.insert("eta".into(), json!(run.params.eta));
    report.config.insert("steps".into(), json!(cfg.steps));
    report.config.insert("l0".into(), json!(run.l0));
    report.config.insert("slack_epsilon".into(), json!(run.params.slack_epsilon));
    report.config.insert("exclude_top_k".into(), json!(cfg.exclude_top_k));
    report.config.insert("floor".into(), json!(cfg.floor));
    report.files.insert("trace".into(), trace_path);
    report.files.insert("bounds".into(), bounds_path.clone());
    if wrote_residuals {
        report.files.insert("residuals".into(), residual_path);
    }
    fill_from_run(&mut report, &run);
    report.explain_missing("computed by the report command");
    let report_path = out_path(global, TRAIN_REPORT_FILE);
    report.write(&report_path)?;

    println!(
        "coverage = {:.3}, max ‖Δ_t‖/‖r₀‖ = {}, upper/classical at t = {}: {:.4e}",
        run.coverage,
        run.max_relative_deviation().map_or("n/a".into(), |v| format!("{v:.4e}")),
        run.curve.len() - 1,
        run.refined_over_classical(run.curve.len() - 1)
    );
    println!("{}", bounds_path.display());
    if let Some((step, loss)) = run.divergence {
        return Err(NumericalFailure(format!(
            "gradient descent diverged at step {step} (loss {loss:e}); partial trace in {}",
            report_path.display()
        ))
        .into());
    }
    Ok(())
}

fn fill_from_run(report: &mut ExperimentReport, run: &crate::pipeline::TrainBoundsRun) {
    let last = run.curve.len() - 1;
    report.set("c", Ok(run.band.c));
    report.set("delta", Ok(run.band.delta));
    report.set(
        "dominance",
        if run.band.delta == 0.0 {
            Err("δ = 0: exact alignment".into())
        } else {
            Ok(run.band.dominance)
        },
    );
    report.set("lambda_min", Ok(run.lambda_min()));
    report.set("lambda_max", Ok(run.lambda_max()));
    report.set("trK", Ok(run.trace_k()));
    report.set("coverage", Ok(run.coverage));
    report.set(
        "max_relative_deviation",
        run.max_relative_deviation().ok_or_else(|| "no deviations recorded".to_string()),
    );
    report.set("refined_over_classical", Ok(run.refined_over_classical(last)));
    report.set(
        "alpha_label",
        run.label_profile.as_ref().map(|p| p.alpha).ok_or_else(|| "label fit failed".to_string()),
    );
    report.set(
        "alpha_residual",
        run.residual_profile
            .as_ref()
            .map(|p| p.alpha)
            .ok_or_else(|| "residual fit failed".to_string()),
    );
    report.diverged = run.divergence.is_some();
}

#[allow(clippy::too_many_arguments)]
fn bounds(
    global: &GlobalArgs,
    spectrum: &Path,
    eta: f64,
    c: f64,
    delta: f64,
    slack: f64,
    l0: Option<f64>,
    steps: usize,
) -> Result<()> {
    let eigenvalues = read_vector_csv(spectrum)?;
    let l0 = l0.unwrap_or(0.5 * c * eigenvalues.sum());
    let params = BoundParams::new(eta, c, delta, slack, l0).map_err(|e| UsageError(e.to_string()))?;
    let curve = convergence_band(eigenvalues.view(), &params, steps)?;
    let path = out_path(global, "bounds.csv");
    curve.write_csv(&path, None)?;
    println!("{}", path.display());
    Ok(())
}

fn two_point(global: &GlobalArgs, theta: f64, depth: usize, y1: f64, y2: f64, lipschitz: f64) -> Result<()> {
    let cfg = AnalyticNtkConfig::normalized(depth)?;
    let r = two_point_analysis(theta, &cfg, y1, y2, lipschitz)?;
    let path = out_path(global, "two_point.json");
    write_json(&path, &r)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn read_summary(path: &Path) -> Option<AlignmentSummary> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn report(global: &GlobalArgs, dir: &Path, target_epsilon: f64, beta: f64) -> Result<()> {
    let spectrum_path = dir.join(SPECTRUM_FILE);
    let eigenvalues = read_vector_csv(&spectrum_path)?;
    let n = eigenvalues.len();
    let train_path = dir.join(TRAIN_REPORT_FILE);
    let mut rep = if train_path.exists() {
        ExperimentReport::read(&train_path)?
    } else {
        ExperimentReport::new(global.seed)
    };
    rep.tool_version = env!("CARGO_PKG_VERSION").to_string();
    rep.files.insert("spectrum".into(), spectrum_path.clone());
    rep.config.insert("target_epsilon".into(), json!(target_epsilon));
    rep.config.insert("beta".into(), json!(beta));

    let lambda_min = eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    rep.set("lambda_min", Ok(lambda_min));
    rep.set("lambda_max", Ok(eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))));
    rep.set("trK", Ok(eigenvalues.sum()));

    for (field, file) in [("alpha_label", "profile_labels.json"), ("alpha_residual", "profile_residual.json")] {
        let path = dir.join(file);
        if let Some(alpha) = read_summary(&path).and_then(|s| s.alpha) {
            rep.set(field, Ok(alpha));
            rep.files.insert(file.trim_end_matches(".json").into(), path);
        } else if rep.get(field).is_none() {
            rep.set(field, Err(format!("{} not found", path.display())));
        }
    }

    let power = fit_power_law(eigenvalues.view(), (1, n));
    match &power {
        Ok(p) => {
            rep.set("q", Ok(p.q));
            rep.set("C1", Ok(p.c1));
            rep.set("C2", Ok(p.c2));
        }
        Err(e) => {
            for f in ["q", "C1", "C2"] {
                rep.set(f, Err(format!("power-law fit failed: {e}")));
            }
        }
    }

    let band = rep.c.zip(rep.delta);
    let eta = rep.config_value("eta");
    let l0 = rep.config_value("l0");
    let t_eps = match (&power, band, eta, l0) {
        (Ok(p), Some((c, delta)), Some(eta), Some(l0)) => time_complexity(&TimeComplexityInputs {
            q: p.q,
            c1: p.c1,
            c2: p.c2,
            c,
            delta,
            target_epsilon,
            eta,
            n,
            l0,
        })
        .map_err(|e| e.to_string()),
        (Err(_), ..) => Err("no power-law fit".to_string()),
        _ => Err(format!("band constants, η and L0 come from {TRAIN_REPORT_FILE}")),
    };
    rep.set("T_epsilon", t_eps);

    let depth = rep.config_value("depth");
    let slack = rep.config_value("slack_epsilon");
    let width = match (band, eta, l0, depth, slack) {
        (Some((c, delta)), Some(eta), Some(l0), Some(depth), Some(slack)) if slack > 0.0 => {
            BoundParams::new(eta, c, delta, slack, l0)
                .and_then(|mut p| {
                    p.beta = beta;
                    width_requirement(n, lambda_min, slack, &p, depth as usize)
                })
                .map(|w| w.log10_m)
                .map_err(|e| e.to_string())
        }
        _ => Err(format!("needs a positive slack and the training settings from {TRAIN_REPORT_FILE}")),
    };
    rep.set("width_diag_log10", width);
    rep.explain_missing(&format!("no {TRAIN_REPORT_FILE} in {}", dir.display()));

    let path = out_path(global, REPORT_FILE);
    rep.write(&path)?;
    println!("{}", path.display());
    Ok(())
}
