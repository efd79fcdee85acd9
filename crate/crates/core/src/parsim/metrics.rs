use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::train::TrainRun;
use crate::error::Result;

/// One row of the run CSV. Column order is the file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub examples: u64,
    pub loss_raw: f64,
    pub loss_smoothed: f64,
    pub gsq_local: f64,
    pub gsq_global: f64,
    pub b_simple: Option<f64>,
    pub lr: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(HEADER)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub const HEADER: [&str; 9] =
    ["step", "examples", "loss_raw", "loss_smoothed", "gsq_local", "gsq_global", "b_simple", "lr", "batch"];

/// Flattens a run's step records for export.
pub fn replay_metrics(run: &TrainRun) -> MetricsTable {
    MetricsTable {
        rows: run
            .records
            .iter()
            .map(|r| MetricsRow {
                step: r.step,
                examples: r.examples,
                loss_raw: r.loss_raw,
                loss_smoothed: r.loss_smoothed,
                gsq_local: r.gsq_local,
                gsq_global: r.gsq_global,
                b_simple: r.b_simple,
                lr: r.learning_rate,
                batch: r.batch,
            })
            .collect(),
    }
}
