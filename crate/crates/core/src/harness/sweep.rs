use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::measure::{measure_errors, ErrorReport};
use crate::error::{Error, Result};
use crate::linalg::fmt17;
use crate::rng::GENERATOR_NAME;

/// Bumped whenever the column set changes.
pub const CSV_SCHEMA: &str = "hmm-icl-sweep/1";

pub const CSV_COLUMNS: [&str; 23] = [
    "n", "L", "k", "T", "m", "eps1", "eps1_se", "eps2", "eps2_se", "eps2_direct", "eps2_direct_se", "eps3", "eps3_se",
    "total", "total_se", "total_source", "lambda_min", "lambda_max", "ridge_used", "layer_count", "lr", "seed", "error",
];

/// Values to override in the base config; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub l: Vec<usize>,
    #[serde(default)]
    pub steps: Vec<usize>,
    #[serde(default)]
    pub k: Vec<usize>,
}

impl SweepGrid {
    /// Every cell's config, `n` varying slowest and `k` fastest.
    pub fn cells(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &n in &or(&self.n, base.n) {
            for &l in &or(&self.l, base.l) {
                for &t in &or(&self.steps, base.construction.steps) {
                    for &k in &or(&self.k, base.k) {
                        let mut cfg = base.clone();
                        cfg.n = n;
                        cfg.l = l;
                        cfg.k = k;
                        cfg.construction.steps = t;
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub config: ExperimentConfig,
    pub result: std::result::Result<ErrorReport, String>,
}

/// Measures every cell in parallel. Cells share the base seed, so their
/// random streams coincide wherever the sample sizes overlap.
pub fn sweep(grid: &SweepGrid, base: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let cells = grid.cells(base);
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty sweep grid".into()));
    }
    Ok(cells
        .into_par_iter()
        .map(|config| {
            let result = measure_errors(&config).map_err(|e| e.to_string());
            SweepRow { config, result }
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], base: &ExperimentConfig, mut out: W) -> Result<()> {
    writeln!(out, "# schema={CSV_SCHEMA}")?;
    writeln!(out, "# seed={}", base.seed)?;
    writeln!(out, "# generator={GENERATOR_NAME}")?;
    writeln!(out, "# version={}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# base_config={}", serde_json::to_string(base)?)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        let c = &row.config;
        let mut rec: Vec<String> = [c.n, c.l, c.k, c.construction.steps, c.m].iter().map(|v| v.to_string()).collect();
        match &row.result {
            Ok(r) => {
                for e in [r.eps1, r.eps2, r.eps2_direct, r.eps3, r.total] {
                    rec.push(fmt17(e.mean));
                    rec.push(fmt17(e.se));
                }
                rec.push(r.total_source.clone());
                rec.extend([r.assumption.lambda_min, r.assumption.lambda_max, r.ridge_used].map(fmt17));
                rec.push(r.layer_count.to_string());
                rec.push(fmt17(r.lr));
                rec.push(r.seed.to_string());
                rec.push(String::new());
            }
            Err(msg) => {
                rec.extend(std::iter::repeat_n(String::new(), CSV_COLUMNS.len() - 7));
                rec.push(c.seed.to_string());
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
