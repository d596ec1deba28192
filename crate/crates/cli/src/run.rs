//! Experiment execution and artifact layout.
//!
//! A run directory holds `seed-<s>/<method>/{sigma,trace}.csv` per seed and
//! method, the aggregates `curves.csv`, `final.csv`, `methods.csv`,
//! `observables.csv` and (in 1D) `kde.csv`, a `summary.json`, and the SVGs
//! rendered from those CSVs.

use std::path::Path;

use otunfold::eval::{kde_1d, linspace, observables};
use otunfold::{rl_solve, solve, DiscreteMeasure, IterationTrace, UnfoldingProblem};
use rayon::prelude::*;
use serde_json::json;

use crate::artifacts::{num, write_csv, write_file, Embedded};
use crate::config::{ProblemConfig, RunConfig, SweepAxis};
use crate::error::CliError;
use crate::render;

pub const OT_LABEL: &str = "ot";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Methods {
    OtOnly,
    OtAndRl,
}

pub struct MethodRun {
    pub label: String,
    pub result: Result<(Vec<f64>, IterationTrace), String>,
}

impl MethodRun {
    pub fn final_w2sq(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(|(_, t)| t.final_metric())
    }
}

pub struct SeedRun {
    pub seed: u64,
    pub problem: UnfoldingProblem,
    pub truth: DiscreteMeasure,
    pub methods: Vec<MethodRun>,
}

pub fn run_seed(config: &RunConfig, seed: u64, methods: Methods) -> Result<SeedRun, CliError> {
    let (problem, truth) = config.build_problem(seed)?;
    let mut runs = vec![MethodRun {
        label: OT_LABEL.to_string(),
        result: solve(&problem, &config.solver_config()).map_err(|e| e.to_string()),
    }];
    if methods == Methods::OtAndRl {
        for entry in &config.rl.bins {
            runs.push(MethodRun {
                label: format!("rl-{}", entry.label()),
                result: rl_solve(&problem, &config.rl_config(entry)).map_err(|e| e.to_string()),
            });
        }
    }
    Ok(SeedRun {
        seed,
        problem,
        truth,
        methods: runs,
    })
}

/// Runs every seed in parallel, keeping seed order.
pub fn run_all(config: &RunConfig, methods: Methods) -> Result<Vec<SeedRun>, CliError> {
    config.seeds.par_iter().map(|&s| run_seed(config, s, methods)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// Sample mean and standard deviation (`n - 1` denominator).
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, std })
    }

    pub fn se(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Final `W_p` (not its power) per method label, over the seeds that
/// produced one.
pub fn method_stats(runs: &[SeedRun], p: f64) -> Vec<(String, Option<Stats>)> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let values: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.methods[k].final_w2sq())
                .map(|v| v.max(0.0).powf(1.0 / p))
                .collect();
            (m.label.clone(), Stats::of(&values))
        })
        .collect()
}

fn problem_p(config: &RunConfig) -> f64 {
    match &config.problem {
        ProblemConfig::OneDim(c) => c.p,
        ProblemConfig::TwoDim(c) => c.p,
    }
}

fn point_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

fn write_seed_method(
    dir: &Path,
    embedded: &Embedded,
    problem: &UnfoldingProblem,
    sigma: &[f64],
    trace: &IterationTrace,
    timing: bool,
) -> Result<(), CliError> {
    let dim = problem.prior_support.dim();
    let mut header = point_columns(dim);
    header.push("weight".into());
    let rows: Vec<Vec<String>> = problem
        .prior_support
        .iter()
        .zip(sigma)
        .map(|(x, w)| x.iter().map(|c| num(Some(*c))).chain([num(Some(*w))]).collect())
        .collect();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("sigma.csv"), embedded, &h, &rows)?;

    let mut header = vec!["iteration", "w2sq", "second_marginal_residual", "ker_residual", "neg_log_likelihood"];
    if timing {
        header.push("elapsed");
    }
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.iteration.to_string(),
                num(r.w2sq_to_data),
                num(r.second_marginal_residual),
                num(r.ker_residual),
                num(r.neg_log_likelihood),
            ];
            if timing {
                row.push(num(Some(r.elapsed)));
            }
            row
        })
        .collect();
    write_csv(&dir.join("trace.csv"), embedded, &header, &rows)
}

fn observable_row(label: &str, seed: u64, iteration: usize, measure: &DiscreteMeasure) -> Vec<String> {
    let o = observables(measure);
    vec![
        label.to_string(),
        seed.to_string(),
        iteration.to_string(),
        num(Some(o.mean_x1)),
        num(o.mean_x2),
        num(o.mean_ratio_x1_x2),
        num(Some(o.variance)),
    ]
}

/// Writes all artifacts of a run and renders its plots. Returns the
/// number of method runs that aborted.
pub fn write_run(dir: &Path, embedded: &Embedded, runs: &[SeedRun]) -> Result<usize, CliError> {
    let config = &embedded.config;
    let p = problem_p(config);
    let timing = config.output.record_timing;
    let mut failures = 0;
    let mut curves = Vec::new();
    let mut finals = Vec::new();
    let mut obs = Vec::new();
    let mut run_summaries = Vec::new();

    for run in runs {
        obs.push(observable_row("truth", run.seed, 0, &run.truth));
        for m in &run.methods {
            let (status, iterations, final_w2sq) = match &m.result {
                Ok((sigma, trace)) => {
                    let sub = dir.join(format!("seed-{}", run.seed)).join(&m.label);
                    write_seed_method(&sub, embedded, &run.problem, sigma, trace, timing)?;
                    for r in &trace.records {
                        if let Some(w) = r.w2sq_to_data {
                            curves.push(vec![m.label.clone(), run.seed.to_string(), r.iteration.to_string(), num(Some(w))]);
                        }
                        let est = DiscreteMeasure::from_raw(run.problem.prior_support.clone(), r.sigma.clone())
                            .map_err(|e| CliError::Solver(e.to_string()))?;
                        obs.push(observable_row(&m.label, run.seed, r.iteration, &est));
                    }
                    ("ok".to_string(), trace.len(), trace.final_metric())
                }
                Err(e) => {
                    failures += 1;
                    (format!("error: {e}"), 0, None)
                }
            };
            finals.push(vec![
                m.label.clone(),
                run.seed.to_string(),
                iterations.to_string(),
                num(final_w2sq),
                num(final_w2sq.map(|v| v.max(0.0).powf(1.0 / p))),
                status.clone(),
            ]);
            run_summaries.push(json!({
                "seed": run.seed,
                "method": m.label,
                "iterations": iterations,
                "final_w2sq": final_w2sq,
                "status": status,
            }));
        }
    }

    write_csv(&dir.join("curves.csv"), embedded, &["method", "seed", "iteration", "w2sq"], &curves)?;
    write_csv(
        &dir.join("final.csv"),
        embedded,
        &["method", "seed", "iterations", "final_w2sq", "final_w2", "status"],
        &finals,
    )?;
    let stats = method_stats(runs, p);
    let stat_rows: Vec<Vec<String>> = stats
        .iter()
        .map(|(label, s)| match s {
            Some(s) => vec![label.clone(), s.n.to_string(), num(Some(s.mean)), num(Some(s.std)), num(Some(s.se()))],
            None => vec![label.clone(), "0".into(), String::new(), String::new(), String::new()],
        })
        .collect();
    write_csv(
        &dir.join("methods.csv"),
        embedded,
        &["method", "seeds", "mean_w2", "std_w2", "se_w2"],
        &stat_rows,
    )?;
    write_csv(
        &dir.join("observables.csv"),
        embedded,
        &["method", "seed", "iteration", "mean_x1", "mean_x2", "mean_ratio_x1_x2", "variance"],
        &obs,
    )?;
    if config.dim() == 1 {
        if let Some(run) = runs.first() {
            write_kde(dir, embedded, run)?;
        }
    }

    let summary = json!({
        "tool": "otunfold",
        "version": env!("CARGO_PKG_VERSION"),
        "command": embedded.command,
        "seeds": config.seeds,
        "embedded": embedded.block(),
        "runs": run_summaries,
        "methods": stats.iter().map(|(label, s)| json!({
            "method": label,
            "seeds": s.as_ref().map_or(0, |s| s.n),
            "mean_w2": s.as_ref().map(|s| s.mean),
            "std_w2": s.as_ref().map(|s| s.std),
            "se_w2": s.as_ref().map(Stats::se),
        })).collect::<Vec<_>>(),
        "failures": failures,
    });
    write_file(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
    )?;
    render::render_run(dir)?;
    Ok(failures)
}

fn write_kde(dir: &Path, embedded: &Embedded, run: &SeedRun) -> Result<(), CliError> {
    let e = &embedded.config.eval;
    let xs = run.problem.prior_support.coords();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 3.0 * e.kde_bandwidth;
    let grid = linspace(lo - pad, hi + pad, e.kde_points);
    let mut rows = Vec::new();
    let mut push = |label: &str, measure: &DiscreteMeasure| -> Result<(), CliError> {
        let d = kde_1d(measure, e.kde_bandwidth, &grid).map_err(|e| CliError::Solver(e.to_string()))?;
        for (x, y) in grid.iter().zip(d) {
            rows.push(vec![label.to_string(), num(Some(*x)), num(Some(y))]);
        }
        Ok(())
    };
    push("truth", &run.truth)?;
    for m in &run.methods {
        if let Ok((sigma, _)) = &m.result {
            let est = DiscreteMeasure::from_raw(run.problem.prior_support.clone(), sigma.clone())
                .map_err(|e| CliError::Solver(e.to_string()))?;
            push(&m.label, &est)?;
        }
    }
    write_csv(&dir.join("kde.csv"), embedded, &["series", "x", "density"], &rows)
}

pub fn value_label(axis: SweepAxis, v: f64) -> String {
    match axis {
        SweepAxis::M | SweepAxis::NBin => format!("{}", v as usize),
        SweepAxis::Epsilon => format!("{v:?}"),
    }
}

/// One compare run per axis value in `<axis>-<value>/`, then the
/// cross-cell table `sweep.csv` and the faceted plot.
pub fn sweep(dir: &Path, embedded: &Embedded) -> Result<usize, CliError> {
    let config = &embedded.config;
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a [sweep] table with axis and values".into()))?;
    let cells: Vec<(String, RunConfig)> = sweep
        .values
        .iter()
        .map(|&v| (value_label(sweep.axis, v), config.sweep_cell(sweep.axis, v)))
        .collect();
    let results: Vec<Result<Vec<SeedRun>, CliError>> =
        cells.par_iter().map(|(_, c)| run_all(c, Methods::OtAndRl)).collect();

    let mut failures = 0;
    let mut rows = Vec::new();
    let p = problem_p(config);
    for ((label, cell), runs) in cells.iter().zip(results) {
        let runs = runs?;
        let sub = format!("{}-{label}", sweep.axis.name());
        failures += write_run(&dir.join(&sub), &Embedded::new("compare", cell), &runs)?;
        for (method, s) in method_stats(&runs, p) {
            let (n, mean, std, se) = match s {
                Some(s) => (s.n, Some(s.mean), Some(s.std), Some(s.se())),
                None => (0, None, None, None),
            };
            rows.push(vec![
                sweep.axis.name().to_string(),
                label.clone(),
                sub.clone(),
                method,
                n.to_string(),
                num(mean),
                num(std),
                num(se),
            ]);
        }
    }
    write_csv(
        &dir.join("sweep.csv"),
        embedded,
        &["axis", "value", "dir", "method", "seeds", "mean_w2", "std_w2", "se_w2"],
        &rows,
    )?;
    let summary = json!({
        "tool": "otunfold",
        "version": env!("CARGO_PKG_VERSION"),
        "command": embedded.command,
        "seeds": config.seeds,
        "embedded": embedded.block(),
        "cells": cells.iter().map(|(l, _)| format!("{}-{l}", sweep.axis.name())).collect::<Vec<_>>(),
        "failures": failures,
    });
    write_file(
        &dir.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
    )?;
    render::render_sweep(dir)?;
    Ok(failures)
}
