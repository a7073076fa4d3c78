use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::measure::sample_prefixes;
use super::{regression_problem, window_of, window_vector};
use crate::construct::{assemble_stack, Beta1, FeatureMap};
use crate::context::{build_context, read_out, vec_decode, ContextLayout};
use crate::error::Result;
use crate::kernel::forward_trace;
use crate::memory::{exact_m_step, MemoryModel};
use crate::oracles::gd_reference;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, tolerance, pass: value <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub seed: u64,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// The copy blocks by definition: `Z_r(t) = M0(max(t - r, 1))` and
/// `F_r(t) = M0(min(t + r, last))`, everything else zero.
pub fn shifted_copy_blocks(m0: &DMatrix<f64>, fm: &FeatureMap) -> DMatrix<f64> {
    let rows = m0.nrows();
    let w = fm.original.len();
    let mut out = DMatrix::zeros(rows, m0.ncols());
    for t in 0..rows {
        for (i, b) in fm.z_blocks.iter().enumerate() {
            let src = t.saturating_sub(i + 1);
            out.view_mut((t, b.start), (1, w)).copy_from(&m0.view((src, 0), (1, w)));
        }
        for (i, b) in fm.f_blocks.iter().enumerate() {
            let src = (t + i + 1).min(rows - 1);
            out.view_mut((t, b.start), (1, w)).copy_from(&m0.view((src, 0), (1, w)));
        }
    }
    out
}

fn block_deviation(h: &DMatrix<f64>, expected: &DMatrix<f64>, fm: &FeatureMap) -> f64 {
    let mut dev: f64 = 0.0;
    for b in fm.z_blocks.iter().chain(&fm.f_blocks) {
        for t in 0..h.nrows() {
            for c in b.clone() {
                dev = dev.max((h[(t, c)] - expected[(t, c)]).abs());
            }
        }
    }
    dev
}

/// Marginal of an `m`-step law over its first symbol.
pub fn first_symbol_marginal(joint: &nalgebra::DVector<f64>, p: usize, m: usize) -> nalgebra::DVector<f64> {
    let mut out = nalgebra::DVector::zeros(p);
    for (code, &x) in joint.iter().enumerate() {
        out[vec_decode(code, p, m)[0]] += x;
    }
    out
}

/// Oracle-equivalence checks on the config's first prompt.
pub fn verify_config(config: &ExperimentConfig) -> Result<VerifyReport> {
    config.validate()?;
    let (hmm, _) = config.hmm.resolve(config.seed)?;
    let layout: ContextLayout = config.layout(hmm.num_obs())?;
    let cc = config.construction_config(layout)?;
    let built = assemble_stack(&cc)?;
    let fm = &built.feature_map;
    let ly = &layout;

    let mut demo_rng = stream_rng(config.seed, streams::DEMOS);
    let mut demos = (0..ly.n).map(|_| Ok(hmm.sample_sequence(ly.l, &mut demo_rng)?.obs)).collect::<Result<Vec<_>>>()?;
    let prefix = sample_prefixes(&hmm, ly, 1, config.seed)?.remove(0);
    let m0 = build_context(&demos, &prefix, ly)?;
    let trace = forward_trace(&m0.data, &built.stack)?;
    let hard = cc.beta1 == Beta1::Hard;
    let mut checks = Vec::new();

    let expected = shifted_copy_blocks(&m0.data, fm);
    let copy_tol = if hard { 0.0 } else { 1e-3 };
    checks.push(Check::new("copy_blocks_max_abs", block_deviation(&trace[built.after_copy()], &expected, fm), copy_tol));

    let problem = regression_problem(&demos, ly, 0.0)?;
    let gd = gd_reference(&problem, cc.steps, cc.lr);
    let last = ly.rows() - 1;
    let iterate_dev = gd
        .iterates
        .iter()
        .enumerate()
        .map(|(t, w)| (fm.read_w(&trace[built.after_gd(t)], last) - w).amax())
        .fold(0.0, f64::max);
    checks.push(Check::new("gd_iterates_max_abs", iterate_dev, 1e-9));
    checks.push(Check::new("gd_diverged", f64::from(u8::from(gd.diverged)), 0.0));

    let z = window_vector(&window_of(&prefix, ly)?, ly.p);
    let oracle = gd.last() * &z;
    let out = read_out(trace.last().expect("nonempty"), ly, ly.readout_mode())?;
    checks.push(Check::new("readout_vs_oracle_max_abs", (&out - &oracle).amax(), 1e-8));

    if hard {
        let mut rng = stream_rng(config.seed, streams::SHUFFLE);
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            demos.shuffle(&mut rng);
            let m = build_context(&demos, &prefix, ly)?;
            let shuffled = read_out(&crate::kernel::forward(&m.data, &built.stack)?, ly, ly.readout_mode())?;
            worst = worst.max((&shuffled - &out).amax());
        }
        checks.push(Check::new("shuffle_max_abs", worst, 0.0));
    }

    let exact = exact_m_step(&hmm, &prefix, ly.m)?;
    checks.push(Check::new("exact_sum_minus_one", (exact.sum() - 1.0).abs(), 1e-10));
    if ly.m > 1 {
        let model = MemoryModel::new(&hmm, ly.l - 1, ly.m)?;
        let joint = model.m_step_conditional(&prefix[prefix.len() - model.m_step_window_len()..])?;
        let one = MemoryModel::with_prior(&hmm, model.m_step_window_len(), 1, model.prior().clone())?;
        let single = one.l_memory_conditional(&prefix[prefix.len() - model.m_step_window_len()..])?;
        let dev = (first_symbol_marginal(&joint, ly.p, ly.m) - single).amax();
        checks.push(Check::new("m_step_marginal_max_abs", dev, 1e-9));
    }
    Ok(VerifyReport { checks, seed: config.seed })
}
