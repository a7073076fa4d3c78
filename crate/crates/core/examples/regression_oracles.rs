//! Closed-form least squares against gradient descent on a one-hot window
//! regression, with the contraction check.
use hmm_icl::harness::regression_problem;
use hmm_icl::context::ContextLayout;
use hmm_icl::hmm::LowRankHmm;
use hmm_icl::oracles::{gd_reference, least_squares, rate_check, rate_lr};
use hmm_icl::rng::{stream_rng, streams};

fn main() -> hmm_icl::Result<()> {
    let hmm = LowRankHmm::new_low_rank(3, 3, 2, 1.0, 0)?;
    let layout = ContextLayout::new(400, 2, 4, 3, 1)?;
    let mut rng = stream_rng(2, streams::DEMOS);
    let demos = (0..layout.n).map(|_| Ok(hmm.sample_sequence(2, &mut rng)?.obs)).collect::<hmm_icl::Result<Vec<_>>>()?;
    let problem = regression_problem(&demos, &layout, 0.0)?;

    let ls = least_squares(&problem)?;
    println!("Gram eigenvalues [{:.1}, {:.1}], condition {:.2}", ls.min_eigenvalue, ls.max_eigenvalue, ls.condition_number);
    let lr = rate_lr(&problem);
    let gd = gd_reference(&problem, 50, lr);
    for t in [0, 1, 2, 5, 10, 20, 50] {
        println!("t={t:>2}: |W_t - W_hat| = {:.3e}", (&gd.iterates[t] - &ls.w).norm());
    }
    let report = rate_check(&problem, lr, 200)?;
    println!("rate check: kappa {:.2}, {} violations", report.kappa, report.violations);
    Ok(())
}
