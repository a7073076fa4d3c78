//! Read-out gap between finite-temperature copy heads and the hardmax limit.
use hmm_icl::construct::{assemble_stack, Beta1, ConstructionConfig};
use hmm_icl::context::{build_context, read_out, ContextLayout};
use hmm_icl::kernel::forward;

fn main() -> hmm_icl::Result<()> {
    let layout = ContextLayout::new(2, 3, 4, 2, 1)?;
    let m0 = build_context(&[vec![0, 1, 1], vec![1, 0, 0]], &[1, 1, 0], &layout)?;
    let run = |beta1| -> hmm_icl::Result<_> {
        let mut cfg = ConstructionConfig::new(layout, 2)?;
        cfg.beta1 = beta1;
        read_out(&forward(&m0.data, &assemble_stack(&cfg)?.stack)?, &layout, layout.readout_mode())
    };
    let hard = run(Beta1::Hard)?;
    // neighbouring positions differ in logit by about beta1 * theta^2 / 2
    let theta = layout.theta();
    for exp in [2, 4, 6, 8, 10, 12] {
        let beta1 = 10f64.powi(exp);
        let gap = (run(Beta1::Finite(beta1))? - &hard).amax();
        println!("beta1=1e{exp:<2} logit margin {:.1e}  gap {gap:.3e}", beta1 * theta * theta / 2.0);
    }
    Ok(())
}
