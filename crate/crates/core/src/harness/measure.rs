use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{regression_problem, window_of, window_vector};
use crate::construct::assemble_stack;
use crate::context::{build_context, read_out, ContextLayout};
use crate::error::{Error, Result};
use crate::hmm::{BeliefState, LowRankHmm};
use crate::kernel::forward;
use crate::linalg::{l1_distance, sym_eigenvalues};
use crate::memory::{exact_m_step, MemoryModel};
use crate::oracles::{gd_reference, least_squares, LeastSquares, RegressionProblem};
use crate::rng::{stream_rng, streams, GENERATOR_NAME};
use crate::stats::McEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Extreme eigenvalues of `n^-1 Z Z^T`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub alpha_floor: f64,
    pub pass: bool,
}

/// Spectrum of the mean sample covariance of the regression inputs.
pub fn check_assumption(z: &DMatrix<f64>, alpha_floor: f64) -> AssumptionReport {
    let n = z.ncols().max(1) as f64;
    let ev = sym_eigenvalues(&(z * z.transpose() / n));
    let lambda_min = ev.first().copied().unwrap_or(0.0);
    let lambda_max = ev.last().copied().unwrap_or(0.0);
    AssumptionReport { lambda_min, lambda_max, alpha_floor, pass: lambda_min >= alpha_floor }
}

/// Least squares, falling back to ridge `1e-8 trace(Z Z^T) / rows` when the
/// Gram is singular. Returns the fit and the ridge used (0 if none).
pub fn fit_with_fallback(problem: &RegressionProblem) -> Result<(LeastSquares, f64)> {
    match least_squares(problem) {
        Ok(ls) => Ok((ls, problem.ridge)),
        Err(Error::SingularGram { .. }) => {
            let g = problem.gram();
            let ridge = 1e-8 * g.trace() / g.nrows() as f64;
            let ls = least_squares(&RegressionProblem { ridge, ..problem.clone() })?;
            Ok((ls, ridge))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `E ||exact - P_L||_1`.
    pub eps1: McEstimate,
    /// `E ||W* z - W_hat z||_1` against the large-sample linear reference.
    pub eps2: McEstimate,
    /// `E ||P_L - W_hat z||_1`.
    pub eps2_direct: McEstimate,
    /// `E ||W_hat z - W_T z||_1`.
    pub eps3: McEstimate,
    /// `E ||exact - prediction||_1`.
    pub total: McEstimate,
    /// `"stack"` when the prediction is the Transformer read-out, `"oracle"`
    /// when it is `W_T z` (stack evaluation off, or `T = 0`).
    pub total_source: String,
    /// Largest `|read_out - W_T z|` over all prompts, when the stack ran.
    pub stack_max_deviation: Option<f64>,
    pub triangle_ok: bool,
    pub assumption: AssumptionReport,
    pub ridge_used: f64,
    pub reference_ridge: f64,
    pub gd_diverged: bool,
    pub layer_count: usize,
    pub lr: f64,
    pub task: Option<usize>,
    pub seed: u64,
    pub generator_name: String,
    pub config: ExperimentConfig,
}

struct PromptErrors {
    eps1: f64,
    eps2: f64,
    eps2_direct: f64,
    eps3: f64,
    total: f64,
    deviation: f64,
    deviation_l1: f64,
}

fn sample_demos(hmm: &LowRankHmm, count: usize, len: usize, seed: u64, stream: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = stream_rng(seed, stream);
    (0..count).map(|_| Ok(hmm.sample_sequence(len, &mut rng)?.obs)).collect()
}

/// Test prompts in the order [`crate::memory::model_approx_error`] draws
/// them for the same seed.
pub fn sample_prefixes(hmm: &LowRankHmm, layout: &ContextLayout, num: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    sample_demos(hmm, num, layout.k - 1, seed, streams::TEST_PREFIXES)
}

pub fn measure_errors(config: &ExperimentConfig) -> Result<ErrorReport> {
    config.validate()?;
    let (hmm, task) = config.hmm.resolve(config.seed)?;
    let layout = config.layout(hmm.num_obs())?;
    let cc = config.construction_config(layout)?;
    let ly = &layout;

    let demos = sample_demos(&hmm, ly.n, ly.l, config.seed, streams::DEMOS)?;
    let problem = regression_problem(&demos, ly, 0.0)?;
    let assumption = check_assumption(&problem.z, config.alpha_floor);
    let (fit, ridge_used) = fit_with_fallback(&problem)?;
    let gd = gd_reference(&problem, cc.steps, cc.lr);
    let w_t = gd.last().clone();

    let reference_demos = sample_demos(&hmm, config.linear_reference_samples, ly.l, config.seed, streams::LINEAR_REFERENCE)?;
    let (reference, reference_ridge) = fit_with_fallback(&regression_problem(&reference_demos, ly, 0.0)?)?;
    drop(reference_demos);

    let built = if cc.steps > 0 { Some(assemble_stack(&cc)?) } else { None };
    let stack = built.as_ref().filter(|_| config.evaluate_stack).map(|b| &b.stack);
    let model = MemoryModel::with_prior(&hmm, ly.l - 1, ly.m, BeliefState::uniform(hmm.num_hidden()))?;
    let prefixes = sample_prefixes(&hmm, ly, config.num_mc, config.seed)?;

    let per_prompt = prefixes
        .par_iter()
        .map(|prefix| -> Result<PromptErrors> {
            let exact = exact_m_step(&hmm, prefix, ly.m)?;
            let window = &prefix[prefix.len() - model.m_step_window_len()..];
            let p_l = model.m_step_conditional(window)?;
            let z = window_vector(&window_of(prefix, ly)?, ly.p);
            let hat = &fit.w * &z;
            let w_t_z = &w_t * &z;
            let star = &reference.w * &z;
            let (prediction, deviation, deviation_l1) = match stack {
                Some(stack) => {
                    let m0 = build_context(&demos, prefix, ly)?;
                    let out = read_out(&forward(&m0.data, stack)?, ly, ly.readout_mode())?;
                    let dev = (&out - &w_t_z).amax();
                    let dev_l1 = l1_distance(&out, &w_t_z);
                    (out, dev, dev_l1)
                }
                None => (w_t_z.clone(), 0.0, 0.0),
            };
            Ok(PromptErrors {
                eps1: l1_distance(&exact, &p_l),
                eps2: l1_distance(&star, &hat),
                eps2_direct: l1_distance(&p_l, &hat),
                eps3: l1_distance(&hat, &w_t_z),
                total: l1_distance(&exact, &prediction),
                deviation,
                deviation_l1,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let collect = |f: fn(&PromptErrors) -> f64| McEstimate::from_samples(&per_prompt.iter().map(f).collect::<Vec<_>>());
    let eps1 = collect(|e| e.eps1);
    let eps2 = collect(|e| e.eps2);
    let eps2_direct = collect(|e| e.eps2_direct);
    let eps3 = collect(|e| e.eps3);
    let total = collect(|e| e.total);
    let dev_l1 = collect(|e| e.deviation_l1).mean;
    let slack = 3.0 * (eps1.se + eps2_direct.se + eps3.se + total.se) + dev_l1 + 1e-12;
    let triangle_ok = total.mean <= eps1.mean + eps2_direct.mean + eps3.mean + slack;

    Ok(ErrorReport {
        eps1,
        eps2,
        eps2_direct,
        eps3,
        total,
        total_source: if stack.is_some() { "stack" } else { "oracle" }.into(),
        stack_max_deviation: stack.map(|_| per_prompt.iter().map(|e| e.deviation).fold(0.0, f64::max)),
        triangle_ok,
        assumption,
        ridge_used,
        reference_ridge,
        gd_diverged: gd.diverged,
        layer_count: built.as_ref().map_or(0, |b| b.metadata.attention_layers),
        lr: cc.lr,
        task,
        seed: config.seed,
        generator_name: GENERATOR_NAME.into(),
        config: config.clone(),
    })
}

/// Prediction of the constructed stack for one prompt, for callers that
/// already hold the demonstrations.
pub fn stack_prediction(
    demos: &[Vec<usize>],
    prefix: &[usize],
    layout: &ContextLayout,
    stack: &crate::kernel::TransformerStack,
) -> Result<DVector<f64>> {
    let m0 = build_context(demos, prefix, layout)?;
    read_out(&forward(&m0.data, stack)?, layout, layout.readout_mode())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_inputs_fail() {
        let z = DMatrix::from_fn(6, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        let r = check_assumption(&z, 0.01);
        assert!(r.lambda_min.abs() < 1e-10);
        assert!(!r.pass);
    }

    #[test]
    fn block_identity_spectrum() {
        // 3 copies of the 4x4 identity: n^-1 Z Z^T = (3/12) I
        let z = DMatrix::from_fn(4, 12, |i, j| if j % 4 == i { 1.0 } else { 0.0 });
        let r = check_assumption(&z, 0.1);
        assert!((r.lambda_min - 0.25).abs() < 1e-14);
        assert!((r.lambda_max - 0.25).abs() < 1e-14);
        assert!(r.pass);
    }

    #[test]
    fn fallback_ridge_when_singular() {
        let pr = RegressionProblem::from_windows(&[0, 1, 1], &[vec![0, 1], vec![1, 0], vec![1, 1]], 2, 2, 0.0).unwrap();
        let (_, ridge) = fit_with_fallback(&pr).unwrap();
        assert!((ridge - 1e-8 * 6.0 / 4.0).abs() < 1e-20);
    }
}
