//! Predict the joint law of the next two symbols with the extended stack.
use hmm_icl::construct::{assemble_stack, ConstructionConfig};
use hmm_icl::context::{build_context, read_out, vec_decode, ContextLayout};
use hmm_icl::hmm::LowRankHmm;
use hmm_icl::harness::{regression_problem, window_of, window_vector};
use hmm_icl::kernel::forward;
use hmm_icl::memory::{exact_m_step, MemoryModel};
use hmm_icl::oracles::gd_reference;
use hmm_icl::rng::{stream_rng, streams};

fn main() -> hmm_icl::Result<()> {
    let hmm = LowRankHmm::new_low_rank(3, 2, 2, 1.0, 5)?;
    let layout = ContextLayout::new(60, 4, 6, 2, 2)?;
    let mut rng = stream_rng(5, streams::DEMOS);
    let demos = (0..layout.n).map(|_| Ok(hmm.sample_sequence(layout.l, &mut rng)?.obs)).collect::<hmm_icl::Result<Vec<_>>>()?;
    let prefix = hmm.sample_sequence(layout.k - 1, &mut stream_rng(5, streams::TEST_PREFIXES))?.obs;

    let cfg = ConstructionConfig::new(layout, 30)?;
    let built = assemble_stack(&cfg)?;
    let out = read_out(&forward(&build_context(&demos, &prefix, &layout)?.data, &built.stack)?, &layout, layout.readout_mode())?;
    let exact = exact_m_step(&hmm, &prefix, 2)?;
    let model = MemoryModel::new(&hmm, layout.l - 1, 2)?;
    let windowed = model.m_step_conditional(&prefix[prefix.len() - model.m_step_window_len()..])?;
    let gd = gd_reference(&regression_problem(&demos, &layout, 0.0)?, cfg.steps, cfg.lr);
    let oracle = gd.last() * window_vector(&window_of(&prefix, &layout)?, 2);
    println!("pair    stack    W_T z    window   exact");
    for code in 0..out.len() {
        println!(
            "{:?}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            vec_decode(code, 2, 2),
            out[code],
            oracle[code],
            windowed[code],
            exact[code]
        );
    }
    Ok(())
}
