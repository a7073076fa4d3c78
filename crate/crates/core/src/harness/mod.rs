//! End-to-end experiments: error decomposition, sweeps and oracle checks.

pub mod config;
pub mod measure;
pub mod sweep;
pub mod verify;

pub use config::{ConstructionSpec, ExperimentConfig, HmmSource};
pub use measure::{check_assumption, measure_errors, AssumptionReport, ErrorReport};
pub use sweep::{sweep, write_sweep_csv, SweepGrid, SweepRow, CSV_SCHEMA};
pub use verify::{verify_config, Check, VerifyReport};

use nalgebra::DVector;

use crate::context::{vec_index, ContextLayout};
use crate::error::{Error, Result};
use crate::oracles::RegressionProblem;

/// Regression window of a history ending just before the predicted symbols:
/// the last `R` symbols, most recent first.
pub fn window_of(history: &[usize], layout: &ContextLayout) -> Result<Vec<usize>> {
    let r = layout.window_len();
    if history.len() < r {
        return Err(Error::Shape { expected: format!("at least {r} symbols"), got: format!("{}", history.len()) });
    }
    Ok(history.iter().rev().take(r).copied().collect())
}

/// `(target code, window)` of one demonstration: the target is the Vec code
/// of the last `m` symbols, the window the `R` symbols before them.
pub fn demo_pair(demo: &[usize], layout: &ContextLayout) -> Result<(usize, Vec<usize>)> {
    if demo.len() != layout.l {
        return Err(Error::Shape { expected: format!("demo of length {}", layout.l), got: format!("{}", demo.len()) });
    }
    let split = layout.l - layout.m;
    Ok((vec_index(&demo[split..], layout.p), window_of(&demo[..split], layout)?))
}

/// Stacked one-hot regression input of a window.
pub fn window_vector(window: &[usize], p: usize) -> DVector<f64> {
    let mut z = DVector::zeros(p * window.len());
    for (b, &s) in window.iter().enumerate() {
        z[b * p + s] = 1.0;
    }
    z
}

/// The regression problem the gradient layers solve on these demonstrations.
pub fn regression_problem(demos: &[Vec<usize>], layout: &ContextLayout, ridge: f64) -> Result<RegressionProblem> {
    let (targets, windows): (Vec<_>, Vec<_>) = demos
        .iter()
        .enumerate()
        .map(|(i, d)| demo_pair(d, layout).map_err(|e| Error::DemoMismatch { demo: i, reason: e.to_string() }))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    RegressionProblem::from_windows(&targets, &windows, layout.p, layout.out_dim(), ridge)
}
