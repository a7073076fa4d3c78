//! Full error decomposition for one config, running the stack on every prompt.
use hmm_icl::construct::Beta1;
use hmm_icl::harness::{measure_errors, ConstructionSpec, ExperimentConfig, HmmSource};

fn main() -> hmm_icl::Result<()> {
    let cfg = ExperimentConfig {
        hmm: HmmSource::Random { num_hidden: 3, num_obs: 3, rank: 2, concentration: 1.0, seed: 0 },
        n: 40,
        l: 3,
        k: 5,
        m: 1,
        width: None,
        construction: ConstructionSpec { beta1: Beta1::Hard, beta2: None, steps: 10, lr: None },
        num_mc: 100,
        alpha_floor: 0.0,
        seed: 1,
        linear_reference_samples: 100_000,
        evaluate_stack: true,
    };
    let r = measure_errors(&cfg)?;
    for (name, e) in [("eps1", r.eps1), ("eps2", r.eps2), ("eps2_direct", r.eps2_direct), ("eps3", r.eps3), ("total", r.total)] {
        println!("{name:<12} {:.4} +/- {:.4}", e.mean, e.se);
    }
    println!("lambda_min {:.4}, ridge {:.2e}, layers {}", r.assumption.lambda_min, r.ridge_used, r.layer_count);
    println!("stack deviation {:.2e}, triangle ok: {}", r.stack_max_deviation.unwrap_or(0.0), r.triangle_ok);
    Ok(())
}
