//! The four workflows behind the subcommands: fit, predict, simulate, and
//! the repeated-split experiment.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use mldp::data::{load_csv_optional_response, Column};
use mldp::error::{Error, Result};
use mldp::eval::{auc, rmse, EvalReport};
use mldp::gibbs::Trace;
use mldp::multiindex::enumerate_groups;
use mldp::predict::predict_batch;
use mldp::prior::{compute_weights, sample_latent_factors};
use mldp::testkit::{measure_moment_check, MomentCheck};

use crate::config::{Metric, RunConfig};
use crate::pipeline::{
    build_design, fit_design, prepare_table, requests_for_rows, responses,
};

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at_stage(name))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::Input(format!("cannot create '{}': {e}", path.display()))
    })?))
}

/// Fit summary returned to the caller and printed for humans.
#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    pub trace_path: PathBuf,
    pub diagnostics_path: PathBuf,
    pub design_path: Option<PathBuf>,
    pub n_samples: usize,
    pub n_snapshots: usize,
    pub final_log_joint: f64,
    pub final_live_clusters: usize,
}

/// Ingest, preprocess, group, run the sampler, and write the trace NDJSON
/// plus the per-sweep diagnostics CSV. With `dump_design` the processed
/// design matrix (factor levels, transformed features, response) is cached
/// as `design.csv`.
pub fn cmd_fit(run: &RunConfig, out_dir: &Path, dump_design: bool) -> Result<FitOutput> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Input(format!("cannot create '{}': {e}", out_dir.display())))?;
    let prepared = stage("ingest", prepare_table(run))?;
    let factor_cfg = prepared.factor_cfg.clone();
    let design = stage("preprocess", build_design(run, &prepared, &factor_cfg, None))?;
    let (_, trace) = stage(
        "sample",
        fit_design(run, factor_cfg.clone(), &design, run.sampler.seed),
    )?;

    let trace_path = out_dir.join("trace.ndjson");
    let diagnostics_path = out_dir.join("diagnostics.csv");
    stage("write", trace.write_ndjson(create(&trace_path)?))?;
    stage("write", trace.write_diagnostics_csv(create(&diagnostics_path)?))?;
    let design_path = if dump_design {
        let path = out_dir.join("design.csv");
        stage(
            "write",
            write_design_csv(&design, &factor_cfg, create(&path)?),
        )?;
        Some(path)
    } else {
        None
    };

    let last = trace.sweep_stats.last().expect("at least one sweep");
    Ok(FitOutput {
        trace_path,
        diagnostics_path,
        design_path,
        n_samples: design.flat.len(),
        n_snapshots: trace.snapshots.len(),
        final_log_joint: last.log_joint,
        final_live_clusters: last.n_live_clusters,
    })
}

/// The grouped, fully transformed design in canonical scan order.
fn write_design_csv(
    design: &crate::pipeline::Design,
    factor_cfg: &mldp::multiindex::FactorConfig,
    mut w: impl Write,
) -> Result<()> {
    let mut header: Vec<String> = (1..=factor_cfg.n_groups())
        .map(|n| format!("g{n}"))
        .collect();
    header.extend(design.grouped.feature_names.iter().cloned());
    header.push("y".into());
    writeln!(w, "{}", header.join(","))
        .map_err(|e| Error::Input(format!("write failed: {e}")))?;
    for (g, group) in enumerate_groups(factor_cfg).iter().enumerate() {
        let x = &design.grouped.x[g];
        for r in 0..x.nrows() {
            let mut cells: Vec<String> =
                group.indices().iter().map(|i| i.to_string()).collect();
            cells.extend((0..x.ncols()).map(|c| format!("{}", x[(r, c)])));
            cells.push(format!("{}", design.grouped.y[g][r]));
            writeln!(w, "{}", cells.join(","))
                .map_err(|e| Error::Input(format!("write failed: {e}")))?;
        }
    }
    Ok(())
}

/// Batch prediction: append a `y_hat` column to the input CSV, preserving
/// row order. Preprocessing is re-derived deterministically from the
/// config's training dataset.
pub fn cmd_predict(
    run: &RunConfig,
    trace_path: &Path,
    input: &Path,
    output: &Path,
) -> Result<usize> {
    let trace = stage(
        "read-trace",
        File::open(trace_path)
            .map_err(|e| Error::Input(format!("cannot open '{}': {e}", trace_path.display())))
            .and_then(|f| Trace::read_ndjson(BufReader::new(f))),
    )?;
    let prepared = stage("ingest", prepare_table(run))?;
    let factor_cfg = prepared.factor_cfg.clone();
    if factor_cfg != trace.header.cfg {
        return Err(Error::Config(
            "config factor layout does not match the trace".into(),
        ));
    }
    let design = stage("preprocess", build_design(run, &prepared, &factor_cfg, None))?;

    let raw_schema = run.schema();
    let (input_raw, had_response) =
        stage("read-input", load_csv_optional_response(input, &raw_schema))?;
    let (input_encoded, _) = stage(
        "preprocess",
        prepared.encoder.transform(&input_raw, &raw_schema),
    )?;
    let requests = stage(
        "preprocess",
        requests_for_rows(&prepared, &factor_cfg, &design.transform, &input_encoded),
    )?;
    let predictions = if requests.is_empty() {
        Vec::new()
    } else {
        stage("predict", predict_batch(&trace, &requests))?
    };

    let mut w = create(output)?;
    let keep: Vec<usize> = (0..input_raw.headers.len())
        .filter(|&c| had_response || input_raw.headers[c] != raw_schema.response_column)
        .collect();
    let header: Vec<&str> = keep
        .iter()
        .map(|&c| input_raw.headers[c].as_str())
        .chain(std::iter::once("y_hat"))
        .collect();
    writeln!(w, "{}", header.join(","))
        .map_err(|e| Error::Input(format!("write failed: {e}")))?;
    for r in 0..input_raw.n_rows {
        let mut cells: Vec<String> = keep
            .iter()
            .map(|&c| match &input_raw.columns[c] {
                Column::Numeric(v) => format!("{}", v[r]),
                Column::Categorical(v) => v[r].clone(),
            })
            .collect();
        cells.push(format!("{}", predictions[r]));
        writeln!(w, "{}", cells.join(","))
            .map_err(|e| Error::Input(format!("write failed: {e}")))?;
    }
    Ok(input_raw.n_rows)
}

/// Simulator outputs: the weight tensor of every group and the
/// moment-check summary.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub weights_path: PathBuf,
    pub summary_path: PathBuf,
    pub all_ok: bool,
}

#[derive(Debug, Serialize)]
struct GroupMomentCheck {
    group_flat_index: usize,
    #[serde(flatten)]
    check: MomentCheck,
}

/// Draw latent factors from the prior, emit every group's weight tensor as
/// plot data, and run the Monte-Carlo moment checks per group.
pub fn cmd_simulate(run: &RunConfig, out_dir: &Path) -> Result<SimulateOutput> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Input(format!("cannot create '{}': {e}", out_dir.display())))?;
    let cfg = run.factor_config()?;
    let hyper = run.hyperparams()?;
    let mut rng = mldp::gibbs::stream_rng(run.sampler.seed, mldp::gibbs::STREAM_INIT);
    let latents = sample_latent_factors(&hyper, &cfg, &mut rng);

    let weights_path = out_dir.join("weights.csv");
    let mut w = create(&weights_path)?;
    writeln!(w, "group_flat_index,basis_flat_index,weight")
        .map_err(|e| Error::Input(format!("write failed: {e}")))?;
    let mut checks = Vec::new();
    for (g, group) in enumerate_groups(&cfg).iter().enumerate() {
        let wt = compute_weights(&latents, group, &cfg)?;
        for (b, weight) in wt.weights().iter().enumerate() {
            writeln!(w, "{g},{b},{weight}")
                .map_err(|e| Error::Input(format!("write failed: {e}")))?;
        }
        let check = measure_moment_check(
            &wt,
            &hyper,
            run.simulate.n_sims,
            run.simulate.truncation,
            run.sampler.seed.wrapping_add(g as u64),
        )?;
        checks.push(GroupMomentCheck {
            group_flat_index: g,
            check,
        });
    }
    drop(w);

    let all_ok = checks.iter().all(|c| c.check.mean_ok && c.check.var_ok);
    let summary_path = out_dir.join("moment_summary.json");
    let mut s = create(&summary_path)?;
    let body = serde_json::json!({ "groups": checks, "all_ok": all_ok });
    writeln!(s, "{}", serde_json::to_string_pretty(&body).expect("serializable"))
        .map_err(|e| Error::Input(format!("write failed: {e}")))?;

    Ok(SimulateOutput {
        weights_path,
        summary_path,
        all_ok,
    })
}

/// Repeated-split experiment results.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub metric: String,
    pub mldp: EvalReport,
    /// Present when the DP baseline ran alongside.
    pub dp: Option<EvalReport>,
    /// Repetitions where the full model beat the baseline (RMSE: lower,
    /// AUC: higher).
    pub wins_vs_dp: Option<usize>,
}

fn compute_metric(metric: Metric, y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    match metric {
        Metric::Rmse => rmse(y_true, y_pred),
        Metric::Auc => {
            let labels: Vec<bool> = y_true
                .iter()
                .map(|&y| {
                    if y == 0.0 || y == 1.0 {
                        Ok(y == 1.0)
                    } else {
                        Err(Error::Input(format!(
                            "auc needs 0/1 responses, found {y}"
                        )))
                    }
                })
                .collect::<Result<_>>()?;
            auc(&labels, y_pred)
        }
    }
}

/// Run `repetitions` random splits: fit on the training half, predict the
/// held-out half, score, and aggregate. With `dp_baseline` the degenerate
/// single-basis model runs on identical splits for side-by-side reporting.
/// Repetitions run concurrently with per-repetition seeds.
pub fn cmd_experiment(run: &RunConfig, dp_baseline: bool) -> Result<ExperimentOutput> {
    if run.preprocess.log1p_response && run.experiment.metric == Metric::Auc {
        return Err(Error::Config(
            "auc cannot be combined with a log1p response transform".into(),
        ));
    }
    let prepared = stage("ingest", prepare_table(run))?;
    let factor_cfg = prepared.factor_cfg.clone();
    let degenerate_cfg = factor_cfg.degenerate();
    let base_seed = run.sampler.seed;
    let n = prepared.table.n_rows;

    let per_rep: Vec<(f64, Option<f64>)> = (0..run.experiment.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<(f64, Option<f64>)> {
            let rep_seed = base_seed.wrapping_add(rep as u64);
            let (train_rows, test_rows) =
                mldp::data::split_indices(n, run.experiment.split_fraction, rep_seed)?;
            let design = build_design(run, &prepared, &factor_cfg, Some(&train_rows))?;
            let test_table = prepared.table.select_rows(&test_rows);
            let requests =
                requests_for_rows(&prepared, &factor_cfg, &design.transform, &test_table)?;
            let y_true = responses(&test_table, &prepared.schema)?;

            let (_, trace) = fit_design(run, factor_cfg.clone(), &design, rep_seed)?;
            let y_pred = predict_batch(&trace, &requests)?;
            let score = compute_metric(run.experiment.metric, &y_true, &y_pred)?;

            let dp_score = if dp_baseline {
                let mut dp_flat = design.flat.clone();
                dp_flat.cfg = degenerate_cfg.clone();
                let dp_model = run.baseline_model(&design.train_x)?;
                let mut dp_sampler_cfg = run.sampler_config();
                dp_sampler_cfg.seed = rep_seed;
                let mut dp_sampler =
                    mldp::gibbs::GibbsSampler::new(&dp_model, &dp_flat, dp_sampler_cfg)?;
                let dp_trace = dp_sampler.run()?;
                let dp_requests: Vec<_> = requests
                    .iter()
                    .map(|r| mldp::predict::PredictionRequest {
                        x: r.x.clone(),
                        group: mldp::multiindex::GroupIndex::new(
                            r.group.indices().to_vec(),
                            &degenerate_cfg,
                        )
                        .expect("factor layout unchanged"),
                    })
                    .collect();
                let dp_pred = predict_batch(&dp_trace, &dp_requests)?;
                Some(compute_metric(run.experiment.metric, &y_true, &dp_pred)?)
            } else {
                None
            };
            Ok((score, dp_score))
        })
        .collect::<Result<_>>()?;

    let metric_name = match run.experiment.metric {
        Metric::Rmse => "rmse",
        Metric::Auc => "auc",
    };
    let mldp_report =
        EvalReport::from_reps(metric_name, per_rep.iter().map(|(m, _)| *m).collect())?;
    let (dp_report, wins) = if dp_baseline {
        let dp_values: Vec<f64> = per_rep.iter().map(|(_, d)| d.unwrap()).collect();
        let wins = per_rep
            .iter()
            .filter(|(m, d)| {
                let d = d.unwrap();
                match run.experiment.metric {
                    Metric::Rmse => *m < d,
                    Metric::Auc => *m > d,
                }
            })
            .count();
        (
            Some(EvalReport::from_reps(metric_name, dp_values)?),
            Some(wins),
        )
    } else {
        (None, None)
    };

    Ok(ExperimentOutput {
        metric: metric_name.to_string(),
        mldp: mldp_report,
        dp: dp_report,
        wins_vs_dp: wins,
    })
}
