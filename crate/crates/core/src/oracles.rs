//! Reference computations for the regression the constructed layers solve.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets `O` (`P_out x n`) and inputs `Z` (`P_in x n`), one column per
/// demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub o: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub ridge: f64,
}

impl RegressionProblem {
    pub fn new(o: DMatrix<f64>, z: DMatrix<f64>, ridge: f64) -> Result<Self> {
        if o.ncols() != z.ncols() {
            return Err(Error::Shape {
                expected: format!("{} target columns", z.ncols()),
                got: format!("{}", o.ncols()),
            });
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge {ridge} must be finite and >= 0")));
        }
        Ok(RegressionProblem { o, z, ridge })
    }

    /// One-hot problem: column `i` of `Z` stacks `one_hot(windows[i][r], p)`
    /// for `r = 0..R`, column `i` of `O` is `one_hot(targets[i], out_dim)`.
    pub fn from_windows(targets: &[usize], windows: &[Vec<usize>], p: usize, out_dim: usize, ridge: f64) -> Result<Self> {
        let n = windows.len();
        if targets.len() != n || n == 0 {
            return Err(Error::Shape { expected: format!("{n} targets"), got: format!("{}", targets.len()) });
        }
        let r = windows[0].len();
        let mut z = DMatrix::zeros(p * r, n);
        let mut o = DMatrix::zeros(out_dim, n);
        for (i, (w, &t)) in windows.iter().zip(targets).enumerate() {
            if w.len() != r || w.iter().any(|&s| s >= p) || t >= out_dim {
                return Err(Error::DemoMismatch { demo: i, reason: "window or target out of range".into() });
            }
            for (b, &s) in w.iter().enumerate() {
                z[(b * p + s, i)] = 1.0;
            }
            o[(t, i)] = 1.0;
        }
        RegressionProblem::new(o, z, ridge)
    }

    pub fn num_samples(&self) -> usize {
        self.z.ncols()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }

    /// `||O - W Z||_F^2 + ridge ||W||_F^2`.
    pub fn objective(&self, w: &DMatrix<f64>) -> f64 {
        (&self.o - w * &self.z).norm_squared() + self.ridge * w.norm_squared()
    }

    /// `2 (W Z - O) Z^T + 2 ridge W`.
    pub fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        (w * &self.z - &self.o) * self.z.transpose() * 2.0 + w * (2.0 * self.ridge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub w: DMatrix<f64>,
    /// Extreme eigenvalues of `Z Z^T` (without the ridge).
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Condition number of the regularized Gram.
    pub condition_number: f64,
}

/// `O Z^T (Z Z^T + ridge I)^-1` through a symmetric eigendecomposition.
pub fn least_squares(problem: &RegressionProblem) -> Result<LeastSquares> {
    let eig = SymmetricEigen::new(problem.gram());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if problem.ridge == 0.0 && min <= 1e-10 * problem.num_samples() as f64 {
        return Err(Error::SingularGram { min_eigenvalue: min });
    }
    let shifted = eig.eigenvalues.map(|x| x + problem.ridge);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&shifted.map(|x| 1.0 / x)) * eig.eigenvectors.transpose();
    Ok(LeastSquares {
        w: &problem.o * problem.z.transpose() * inv,
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition_number: shifted.max() / shifted.min(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdTrace {
    /// `W_0 = 0, W_1, ..., W_T` (shorter if the run diverged).
    pub iterates: Vec<DMatrix<f64>>,
    /// Set when `||W_t||_F` exceeded `1e6`; iteration stops there.
    pub diverged: bool,
}

impl GdTrace {
    pub fn last(&self) -> &DMatrix<f64> {
        self.iterates.last().expect("W_0 is always present")
    }
}

/// `W_{t+1} = W_t - lr 2 (W_t Z - O) Z^T` from `W_0 = 0`. The ridge term is
/// not part of this update.
pub fn gd_reference(problem: &RegressionProblem, steps: usize, lr: f64) -> GdTrace {
    gd_from(problem, DMatrix::zeros(problem.o.nrows(), problem.z.nrows()), steps, lr)
}

pub fn gd_from(problem: &RegressionProblem, w0: DMatrix<f64>, steps: usize, lr: f64) -> GdTrace {
    let zt = problem.z.transpose();
    let mut iterates = vec![w0];
    for _ in 0..steps {
        let w = iterates.last().expect("nonempty");
        let next = w - (w * &problem.z - &problem.o) * &zt * (2.0 * lr);
        if !(next.norm() <= 1e6) {
            return GdTrace { iterates, diverged: true };
        }
        iterates.push(next);
    }
    GdTrace { iterates, diverged: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub lr: f64,
    /// Extreme eigenvalues of `Z Z^T`.
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub steps: usize,
    /// `min_t (bound_t - ||W_t - W*||^2)`.
    pub worst_slack: f64,
    pub violations: usize,
    /// Absolute tolerance below which a squared error counts as converged.
    pub floor: f64,
}

/// Step `1 / beta` of the contraction bound for this objective: `1 / (2 lambda_max)`.
pub fn rate_lr(problem: &RegressionProblem) -> f64 {
    let max = SymmetricEigen::new(problem.gram()).eigenvalues.max();
    1.0 / (2.0 * max)
}

/// Checks `||W_t - W*||^2 <= exp(-t / kappa) ||W_0 - W*||^2` for `t <= steps`,
/// starting from zero, against the closed-form minimiser.
pub fn rate_check(problem: &RegressionProblem, lr: f64, steps: usize) -> Result<RateReport> {
    rate_check_from(problem, None, lr, steps)
}

/// As [`rate_check`], starting from `w0` when given.
pub fn rate_check_from(problem: &RegressionProblem, w0: Option<DMatrix<f64>>, lr: f64, steps: usize) -> Result<RateReport> {
    let unregularized = RegressionProblem { ridge: 0.0, ..problem.clone() };
    let ls = least_squares(&unregularized)?;
    let kappa = ls.max_eigenvalue / ls.min_eigenvalue;
    let w0 = w0.unwrap_or_else(|| DMatrix::zeros(problem.o.nrows(), problem.z.nrows()));
    let trace = gd_from(&unregularized, w0, steps, lr);
    let e0 = (&trace.iterates[0] - &ls.w).norm_squared();
    let scale = 1e3 * kappa * f64::EPSILON * ls.w.norm().max(1.0);
    let floor = scale * scale;
    let mut worst = f64::INFINITY;
    let mut violations = usize::from(trace.diverged);
    for (t, w) in trace.iterates.iter().enumerate() {
        let err = (w - &ls.w).norm_squared();
        let bound = (-(t as f64) / kappa).exp() * e0;
        worst = worst.min(bound - err);
        if err > bound * (1.0 + 1e-9) + floor {
            violations += 1;
        }
    }
    Ok(RateReport {
        lr,
        alpha: ls.min_eigenvalue,
        beta: ls.max_eigenvalue,
        kappa,
        steps,
        worst_slack: worst,
        violations,
        floor,
    })
}
