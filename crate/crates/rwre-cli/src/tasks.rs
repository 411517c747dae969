//! Task execution: law → harvest → estimators → CSV rows + provenance.
//!
//! Every row carries the seed and cycle count that produced it. Per-point
//! estimator refusals become a `status` column entry on that row; only
//! errors that prevent any row at all (bad config, failed harvest) abort
//! the run.

use std::time::Instant;

use serde_json::{json, Value};

use rwre_core::lmgf::{classify_theta, grad_lambda, hessian_lambda, lambda_hat};
use rwre_core::oracle::finite_n_lambda;
use rwre_core::rate::{nestling_boundary_probe, rate_curve};
use rwre_core::tilted::{mean_drift_tilted, tilted_cylinder_with, BlockScheme, CylinderFunction};
use rwre_core::walk_sim::harvest_cycles;
use rwre_core::{CycleEnsemble64, EnvironmentLaw64, SolverParams64};

use crate::config::{ExperimentConfig, TaskKind};
use crate::CliError;

/// Everything a run produces; the caller decides where it lands on disk.
pub struct TaskArtifacts {
    pub csv: String,
    pub provenance: Value,
}

/// Render a float with the shortest round-trip representation; identical
/// values therefore always produce identical bytes.
fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Quote a CSV field if it contains a delimiter, quote, or newline.
fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(header: Vec<String>) -> CsvTable {
        CsvTable {
            header,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "ragged CSV row");
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let escaped: Vec<String> = row.iter().map(|f| escape(f)).collect();
            out.push_str(&escaped.join(","));
            out.push('\n');
        }
        out
    }
}

fn axis_columns(prefix: &str, dimension: usize) -> Vec<String> {
    (0..dimension).map(|i| format!("{prefix}_{i}")).collect()
}

fn matrix_columns(prefix: &str, dimension: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for i in 0..dimension {
        for j in 0..dimension {
            cols.push(format!("{prefix}_{i}_{j}"));
        }
    }
    cols
}

fn blanks(n: usize) -> Vec<String> {
    vec![String::new(); n]
}

fn harvest_info(ensemble: &CycleEnsemble64, config: &ExperimentConfig) -> Value {
    json!({
        "requested_cycles": config.harvest.n_cycles,
        "collected_cycles": ensemble.len(),
        "runs": config.harvest.runs,
        "cycle_cap": config.harvest.cycle_cap,
        "starved_walks": ensemble.starved_walks(),
        "master_seed": ensemble.master_seed(),
        "lln_velocity": ensemble.velocity(),
        "nestling": ensemble.nestling().is_nestling(),
    })
}

fn solver_params(config: &ExperimentConfig) -> SolverParams64 {
    SolverParams64 {
        lambda_tol: config.estimation.tolerance,
        z_crit: config.estimation.z_crit,
        cycle_cap: config.harvest.cycle_cap,
        runs: config.harvest.runs,
        ..Default::default()
    }
}

/// Run the configured task. `workers` only shapes the thread pool; results
/// are independent of it by the harvest's determinism contract.
pub fn run_task(config: &ExperimentConfig, workers: usize) -> Result<TaskArtifacts, CliError> {
    let start = Instant::now();
    let law = config.build_law()?;
    let direction = config.resolve_direction(&law)?;
    let (table, harvest, ess_values) = match config.task {
        TaskKind::LambdaSweep => lambda_sweep(config, &law, &direction)?,
        TaskKind::RateCurve => rate_curve_task(config, &law, &direction)?,
        TaskKind::Tilted => tilted_task(config, &law, &direction)?,
        TaskKind::BoundaryProbe => boundary_probe_task(config, &law, &direction)?,
        TaskKind::OracleCrosscheck => oracle_crosscheck_task(config, &law, &direction)?,
    };
    let diagnostics = if ess_values.is_empty() {
        Value::Null
    } else {
        let min = ess_values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ess_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        json!({ "min_ess": min, "max_ess": max })
    };
    let provenance = json!({
        "task": config.task.name(),
        "seed": config.seed,
        "workers": workers,
        "direction": direction,
        "library": {
            "core": rwre_core::VERSION,
            "cli": env!("CARGO_PKG_VERSION"),
        },
        "wall_time_ms": start.elapsed().as_millis() as u64,
        "config": serde_json::to_value(config).expect("config serializes"),
        "harvest": harvest,
        "ess": diagnostics,
    });
    Ok(TaskArtifacts {
        csv: table.render(),
        provenance,
    })
}

type TaskOutput = (CsvTable, Value, Vec<f64>);

fn harvest(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<CycleEnsemble64, CliError> {
    harvest_cycles(
        law,
        direction,
        config.harvest.n_cycles,
        config.seed,
        config.harvest.cycle_cap,
        config.harvest.runs,
    )
    .map_err(CliError::Harvest)
}

fn prefix_row(config: &ExperimentConfig) -> Vec<String> {
    vec![
        config.task.name().to_string(),
        config.seed.to_string(),
        config.harvest.n_cycles.to_string(),
    ]
}

fn lambda_sweep(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<TaskOutput, CliError> {
    let d = config.law.dimension;
    let ensemble = harvest(config, law, direction)?;
    let mut header = vec!["task".into(), "seed".into(), "n_cycles".into()];
    header.extend(axis_columns("theta", d));
    header.push("label".into());
    header.extend(["lambda".into(), "lambda_se".into(), "ess".into()]);
    header.extend(axis_columns("grad", d));
    header.extend(axis_columns("grad_se", d));
    header.extend(matrix_columns("hess", d));
    header.push("min_eigenvalue".into());
    header.push("status".into());
    let numeric_width = 3 + 2 * d + d * d + 1;

    let mut table = CsvTable::new(header);
    let mut ess_values = Vec::new();
    for theta in &config.grids.theta {
        let label = classify_theta(&ensemble, theta, config.estimation.z_crit);
        let mut row = prefix_row(config);
        row.extend(theta.iter().map(|&t| fmt(t)));
        row.push(label.to_string());
        let outcome = lambda_hat(&ensemble, theta, config.estimation.tolerance).and_then(|root| {
            let grad = grad_lambda(&ensemble, theta, root.value)?;
            let hess = hessian_lambda(&ensemble, theta, root.value, &grad.value)?;
            Ok((root, grad, hess))
        });
        match outcome {
            Ok((root, grad, hess)) => {
                ess_values.push(root.ess);
                row.extend([fmt(root.value), fmt(root.std_error), fmt(root.ess)]);
                row.extend(grad.value.iter().map(|&g| fmt(g)));
                row.extend(grad.std_error.iter().map(|&g| fmt(g)));
                for i in 0..d {
                    for j in 0..d {
                        row.push(fmt(hess.matrix[i][j]));
                    }
                }
                row.push(fmt(hess.min_eigenvalue));
                row.push("ok".into());
            }
            Err(e) => {
                row.extend(blanks(numeric_width));
                row.push(e.to_string());
            }
        }
        table.push(row);
    }
    let info = harvest_info(&ensemble, config);
    Ok((table, info, ess_values))
}

fn rate_curve_task(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<TaskOutput, CliError> {
    let d = config.law.dimension;
    let params = solver_params(config);
    let curve = rate_curve(
        law,
        direction,
        &config.grids.xi,
        config.harvest.n_cycles,
        config.seed,
        &params,
    )
    .map_err(CliError::Rate)?;

    let mut header = vec!["task".into(), "seed".into(), "n_cycles".into()];
    header.extend(axis_columns("xi", d));
    header.extend(axis_columns("theta", d));
    header.extend([
        "rate".into(),
        "rate_se".into(),
        "fenchel_gap".into(),
        "grad_residual".into(),
        "ess".into(),
    ]);
    header.extend(matrix_columns("rate_hess", d));
    header.push("status".into());
    let numeric_width = d + 5 + d * d;

    let mut table = CsvTable::new(header);
    let mut ess_values = Vec::new();
    for row_result in &curve.rows {
        let mut row = prefix_row(config);
        row.extend(row_result.xi.iter().map(|&x| fmt(x)));
        match &row_result.outcome {
            Ok(point) => {
                ess_values.push(point.ess);
                row.extend(point.theta.iter().map(|&t| fmt(t)));
                row.extend([
                    fmt(point.rate),
                    fmt(point.rate_se),
                    fmt(point.fenchel_gap),
                    fmt(point.grad_residual),
                    fmt(point.ess),
                ]);
                for i in 0..d {
                    for j in 0..d {
                        row.push(fmt(point.rate_hessian[i][j]));
                    }
                }
                row.push("ok".into());
            }
            Err(e) => {
                row.extend(blanks(numeric_width));
                row.push(e.to_string());
            }
        }
        table.push(row);
    }
    let info = harvest_info(&curve.ensemble, config);
    Ok((table, info, ess_values))
}

fn tilted_task(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<TaskOutput, CliError> {
    let d = config.law.dimension;
    let ensemble = harvest(config, law, direction)?;
    let entries = config.cylinder_entries()?;
    let depth = entries[0].0.len();
    let cylinder = CylinderFunction::from_entries(depth, entries).map_err(CliError::Tilted)?;
    let k_max = if config.tilted.k_max == 0 {
        depth
    } else {
        config.tilted.k_max
    };

    let mut header = vec!["task".into(), "seed".into(), "n_cycles".into()];
    header.extend(axis_columns("theta", d));
    header.extend([
        "lambda".into(),
        "lambda_se".into(),
        "k".into(),
        "value".into(),
        "std_error".into(),
        "n_blocks".into(),
    ]);
    header.extend(axis_columns("drift", d));
    header.extend(axis_columns("drift_se", d));
    header.push("status".into());

    let mut table = CsvTable::new(header);
    let mut ess_values = Vec::new();
    for theta in &config.grids.theta {
        let root = match lambda_hat(&ensemble, theta, config.estimation.tolerance) {
            Ok(root) => root,
            Err(e) => {
                let mut row = prefix_row(config);
                row.extend(theta.iter().map(|&t| fmt(t)));
                row.extend(blanks(6 + 2 * d));
                row.push(e.to_string());
                table.push(row);
                continue;
            }
        };
        ess_values.push(root.ess);
        let drift = mean_drift_tilted(&ensemble, theta, root.value).map_err(CliError::Tilted)?;
        for k in depth..=k_max {
            let mut row = prefix_row(config);
            row.extend(theta.iter().map(|&t| fmt(t)));
            row.extend([fmt(root.value), fmt(root.std_error)]);
            match tilted_cylinder_with(
                &ensemble,
                theta,
                root.value,
                &cylinder,
                k,
                BlockScheme::NonOverlapping,
            ) {
                Ok(est) => {
                    row.extend([
                        k.to_string(),
                        fmt(est.value),
                        fmt(est.std_error),
                        est.n_blocks.to_string(),
                    ]);
                    row.extend(drift.iter().map(|a| fmt(a.value)));
                    row.extend(drift.iter().map(|a| fmt(a.std_error)));
                    row.push("ok".into());
                }
                Err(e) => {
                    row.push(k.to_string());
                    row.extend(blanks(3 + 2 * d));
                    row.push(e.to_string());
                }
            }
            table.push(row);
        }
    }
    let info = harvest_info(&ensemble, config);
    Ok((table, info, ess_values))
}

fn boundary_probe_task(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<TaskOutput, CliError> {
    let d = config.law.dimension;
    let params = solver_params(config);
    let points = nestling_boundary_probe(
        law,
        direction,
        &config.grids.theta,
        config.harvest.n_cycles,
        config.seed,
        &params,
    )
    .map_err(CliError::Rate)?;
    // The probe harvests internally from the same inputs; by the harvest
    // determinism contract this reproduces the identical ensemble, so the
    // provenance stats describe exactly the cycles the probe consumed.
    let ensemble = harvest(config, law, direction)?;

    let mut header = vec!["task".into(), "seed".into(), "n_cycles".into()];
    header.extend(axis_columns("theta", d));
    header.push("label".into());
    header.extend(axis_columns("grad", d));
    header.push("inner_product_check".into());
    header.push("status".into());

    let mut table = CsvTable::new(header);
    for point in &points {
        let mut row = prefix_row(config);
        row.extend(point.theta.iter().map(|&t| fmt(t)));
        row.push(point.label.to_string());
        match &point.gradient {
            Some(grad) => row.extend(grad.iter().map(|&g| fmt(g))),
            None => row.extend(blanks(d)),
        }
        row.push(point.inner_product_check.map(fmt).unwrap_or_default());
        row.push(if point.gradient.is_some() {
            "ok".into()
        } else {
            "refused".into()
        });
        table.push(row);
    }
    let info = harvest_info(&ensemble, config);
    Ok((table, info, Vec::new()))
}

fn oracle_crosscheck_task(
    config: &ExperimentConfig,
    law: &EnvironmentLaw64,
    direction: &[f64],
) -> Result<TaskOutput, CliError> {
    let d = config.law.dimension;
    let theta = &config.grids.theta[0];
    let fit = finite_n_lambda(law, theta, &config.oracle.lengths).map_err(CliError::Oracle)?;
    let ensemble = harvest(config, law, direction)?;
    let label = classify_theta(&ensemble, theta, config.estimation.z_crit);

    let mut header = vec!["task".into(), "seed".into(), "n_cycles".into()];
    header.extend(axis_columns("theta", d));
    header.extend([
        "label".into(),
        "lambda_hat".into(),
        "lambda_se".into(),
        "ess".into(),
        "oracle_lambda".into(),
        "oracle_slope".into(),
        "fit_residual".into(),
        "abs_difference".into(),
        "status".into(),
    ]);

    let mut table = CsvTable::new(header);
    let mut ess_values = Vec::new();
    let mut row = prefix_row(config);
    row.extend(theta.iter().map(|&t| fmt(t)));
    row.push(label.to_string());
    match lambda_hat(&ensemble, theta, config.estimation.tolerance) {
        Ok(root) => {
            ess_values.push(root.ess);
            row.extend([fmt(root.value), fmt(root.std_error), fmt(root.ess)]);
            row.extend([fmt(fit.lambda), fmt(fit.slope), fmt(fit.residual)]);
            row.push(fmt((root.value - fit.lambda).abs()));
            row.push("ok".into());
        }
        Err(e) => {
            row.extend(blanks(3));
            row.extend([fmt(fit.lambda), fmt(fit.slope), fmt(fit.residual)]);
            row.push(String::new());
            row.push(e.to_string());
        }
    }
    table.push(row);
    let info = harvest_info(&ensemble, config);
    Ok((table, info, ess_values))
}
