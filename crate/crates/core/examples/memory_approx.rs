//! How fast a length-L window forgets: Monte-Carlo estimate of the L1 gap
//! between the full-history predictor and the windowed one.
use hmm_icl::hmm::LowRankHmm;
use hmm_icl::memory::model_approx_error;
use hmm_icl::rng::{stream_rng, streams};

fn main() -> hmm_icl::Result<()> {
    let hmm = LowRankHmm::new_low_rank(3, 3, 2, 1.0, 0)?;
    for l in [2, 3, 4, 6, 8] {
        // same draws for every L
        let est = model_approx_error(&hmm, l, 10, 1, 10_000, &mut stream_rng(0, streams::TEST_PREFIXES))?;
        println!("L={l}: eps1 = {:.3e} +/- {:.1e}", est.mean, est.se);
    }
    Ok(())
}
