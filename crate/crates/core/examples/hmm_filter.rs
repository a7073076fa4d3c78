//! Sample from a random low-rank HMM and track the predictive distribution
//! of the next symbol as the history grows.
use hmm_icl::hmm::{conditional_next, estimate_gamma, LowRankHmm};
use hmm_icl::rng::{stream_rng, streams};

fn main() -> hmm_icl::Result<()> {
    let hmm = LowRankHmm::new_low_rank(6, 3, 2, 1.0, 7)?;
    let gamma = estimate_gamma(&hmm, 2000, &mut stream_rng(7, streams::GAMMA))?;
    println!("K=6 p=3 rank=2, gamma ~ {:.3}", gamma.estimate);

    let seq = hmm.sample_sequence(12, &mut stream_rng(7, streams::DEMOS))?;
    println!("hidden {:?}", seq.hidden);
    println!("obs    {:?}", seq.obs);
    for t in 0..seq.obs.len() {
        let next = conditional_next(&hmm, &seq.obs[..t])?;
        let probs: Vec<String> = next.iter().map(|x| format!("{x:.3}")).collect();
        println!("t={t:>2} P(o_t+1 | history) = [{}]", probs.join(", "));
    }
    Ok(())
}
