//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix image used by every JSON artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMajor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for RowMajor {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        RowMajor { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<&RowMajor> for DMatrix<f64> {
    type Error = Error;

    fn try_from(r: &RowMajor) -> Result<Self> {
        if r.data.len() != r.rows * r.cols {
            return Err(Error::Shape {
                expected: format!("{} entries", r.rows * r.cols),
                got: format!("{} entries", r.data.len()),
            });
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

pub fn l1_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Format with 17 significant digits, the text encoding used by CSV outputs.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sum of the values in a canonical order, so the result does not depend on
/// the order in which the terms were produced.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}
