//! Assemble the attention-only stack, run it, and compare each layer's
//! weight block with plain gradient descent.
use hmm_icl::construct::{assemble_stack, ConstructionConfig};
use hmm_icl::context::{build_context, read_out, ContextLayout};
use hmm_icl::harness::{regression_problem, window_of, window_vector};
use hmm_icl::hmm::LowRankHmm;
use hmm_icl::kernel::forward_trace;
use hmm_icl::oracles::gd_reference;
use hmm_icl::rng::{stream_rng, streams};

fn main() -> hmm_icl::Result<()> {
    let hmm = LowRankHmm::new_low_rank(4, 3, 2, 1.0, 1)?;
    let layout = ContextLayout::new(24, 4, 6, 3, 1)?;
    let mut rng = stream_rng(1, streams::DEMOS);
    let demos = (0..layout.n).map(|_| Ok(hmm.sample_sequence(layout.l, &mut rng)?.obs)).collect::<hmm_icl::Result<Vec<_>>>()?;
    let prefix = hmm.sample_sequence(layout.k - 1, &mut stream_rng(1, streams::TEST_PREFIXES))?.obs;

    let cfg = ConstructionConfig::new(layout, 8)?;
    let built = assemble_stack(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&built.metadata)?);

    let m0 = build_context(&demos, &prefix, &layout)?;
    let trace = forward_trace(&m0.data, &built.stack)?;
    let gd = gd_reference(&regression_problem(&demos, &layout, 0.0)?, cfg.steps, cfg.lr);
    for (t, w) in gd.iterates.iter().enumerate() {
        let got = built.feature_map.read_w(&trace[built.after_gd(t)], layout.rows() - 1);
        println!("t={t}: |W_layer - W_t| = {:.2e}", (got - w).amax());
    }
    let out = read_out(trace.last().unwrap(), &layout, layout.readout_mode())?;
    let z = window_vector(&window_of(&prefix, &layout)?, layout.p);
    println!("read-out {:?}", out.as_slice());
    println!("W_T z    {:?}", (gd.last() * z).as_slice());
    Ok(())
}
