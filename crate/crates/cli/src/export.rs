//! Tables exported from a registry: noise vs loss, Pareto fronts with their
//! fitted curves, B_crit per goal and temperature windows.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::commands::TemperatureReport;
use crate::error::CliError;
use crate::registry::Registry;
use crate::sweep::{goal_path, GoalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLossRow {
    pub run_id: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub step: usize,
    pub loss_smoothed: f64,
    pub b_simple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: f64,
    pub examples: f64,
    /// `S_min + E_min/B` from the goal's fit, if it has one.
    pub fitted_steps: Option<f64>,
    /// `S_min·B + E_min`.
    pub fitted_examples: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BCritRow {
    pub goal_index: usize,
    pub threshold: f64,
    pub points: usize,
    pub b_crit: Option<f64>,
    pub s_min: Option<f64>,
    pub e_min: Option<f64>,
    pub stderr_log_bcrit: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub phase: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub b_simple: f64,
    pub ratio_to_before: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportSummary {
    /// Written files, relative to the output directory.
    pub written: Vec<String>,
    pub warnings: Vec<String>,
}

/// Writes every table the registry has data for into `export/`. An absent
/// or empty registry writes nothing and yields a warning.
pub fn export(out_dir: &Path, format: Format) -> Result<ExportSummary, CliError> {
    let mut summary = ExportSummary::default();
    let Some(mut registry) = Registry::load(out_dir)? else {
        summary.warnings.push(format!("no registry in {}; nothing to export", out_dir.display()));
        return Ok(summary);
    };
    let m = registry.manifest();
    let has_data = !m.runs.is_empty() || m.artifacts.keys().any(|k| k != "config.toml");
    if !has_data {
        summary.warnings.push(format!("registry in {} is empty; nothing to export", out_dir.display()));
        return Ok(summary);
    }

    let noise = noise_vs_loss(&registry)?;
    if !noise.is_empty() {
        write_table(&mut registry, &mut summary, "noise_vs_loss", format, &noise)?;
    }

    let mut goals = Vec::new();
    for i in 0.. {
        let Some(bytes) = registry.read_artifact(&goal_path(i))? else { break };
        goals.push(serde_json::from_slice::<GoalReport>(&bytes)?);
    }
    for g in &goals {
        let rows = pareto_rows(g);
        write_table(&mut registry, &mut summary, &format!("pareto_goal_{}", g.goal_index), format, &rows)?;
    }
    if !goals.is_empty() {
        let rows: Vec<BCritRow> = goals.iter().map(bcrit_row).collect();
        write_table(&mut registry, &mut summary, "bcrit_vs_goal", format, &rows)?;
    }

    if let Some(bytes) = registry.read_artifact("temperature/readings.json")? {
        let report: TemperatureReport = serde_json::from_slice(&bytes)?;
        write_table(&mut registry, &mut summary, "temperature_windows", format, &temperature_rows(&report))?;
    }

    if summary.written.is_empty() {
        summary.warnings.push("registry has no exportable tables".into());
    }
    registry.save()?;
    Ok(summary)
}

fn noise_vs_loss(registry: &Registry) -> Result<Vec<NoiseLossRow>, CliError> {
    let mut rows = Vec::new();
    for (id, entry) in &registry.manifest().runs {
        let Some(run) = registry.lookup(id)? else {
            return Err(CliError::Registry(format!("run {id} is missing or corrupt")));
        };
        for r in &run.records {
            if let Some(b) = r.b_simple {
                rows.push(NoiseLossRow {
                    run_id: id.clone(),
                    batch_size: entry.batch_size,
                    learning_rate: entry.learning_rate,
                    seed: entry.seed,
                    step: r.step,
                    loss_smoothed: r.loss_smoothed,
                    b_simple: b,
                });
            }
        }
    }
    Ok(rows)
}

pub fn pareto_rows(report: &GoalReport) -> Vec<ParetoRow> {
    report
        .points
        .iter()
        .map(|p| ParetoRow {
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            steps: p.steps,
            examples: p.examples,
            fitted_steps: report.fit.map(|f| f.steps_at_batch(p.batch_size as f64)),
            fitted_examples: report.fit.map(|f| f.examples_at_batch(p.batch_size as f64)),
        })
        .collect()
}

fn bcrit_row(report: &GoalReport) -> BCritRow {
    BCritRow {
        goal_index: report.goal_index,
        threshold: report.goal.threshold,
        points: report.points.len(),
        b_crit: report.fit.map(|f| f.b_crit),
        s_min: report.fit.map(|f| f.s_min),
        e_min: report.fit.map(|f| f.e_min),
        stderr_log_bcrit: report.fit.map(|f| f.stderr_log_bcrit),
        residual: report.fit.map(|f| f.residual),
    }
}

fn temperature_rows(report: &TemperatureReport) -> Vec<TemperatureRow> {
    let r = report.readings;
    let w = report.window;
    let row = |phase: &str, start, end, b: f64| TemperatureRow {
        phase: phase.into(),
        start,
        end,
        b_simple: b,
        ratio_to_before: b / r.before,
    };
    vec![
        row("before", 1, w.start, r.before),
        row("during", w.start, w.end, r.during),
        row("after", w.end, report.steps + 1, r.after),
    ]
}

fn write_table<T: Serialize>(
    registry: &mut Registry,
    summary: &mut ExportSummary,
    name: &str,
    format: Format,
    rows: &[T],
) -> Result<(), CliError> {
    let bytes = match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(rows)?;
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in rows {
                w.serialize(row).map_err(|e| CliError::Registry(format!("{name}: {e}")))?;
            }
            w.into_inner().map_err(|e| CliError::Registry(format!("{name}: {e}")))?
        }
    };
    let rel = format!("export/{name}.{}", format.extension());
    registry.write_artifact(&rel, &bytes)?;
    summary.written.push(rel);
    Ok(())
}
