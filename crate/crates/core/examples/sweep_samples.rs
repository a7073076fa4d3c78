//! Sweep the number of demonstrations and fit the log-log slope of eps2.
use hmm_icl::construct::Beta1;
use hmm_icl::harness::{sweep, write_sweep_csv, ConstructionSpec, ExperimentConfig, HmmSource, SweepGrid};
use hmm_icl::stats::fit_line;

fn main() -> hmm_icl::Result<()> {
    let base = ExperimentConfig {
        hmm: HmmSource::Random { num_hidden: 3, num_obs: 3, rank: 2, concentration: 1.0, seed: 0 },
        n: 64,
        l: 3,
        k: 5,
        m: 1,
        width: None,
        construction: ConstructionSpec { beta1: Beta1::Hard, beta2: None, steps: 10, lr: None },
        num_mc: 500,
        alpha_floor: 0.0,
        seed: 0,
        linear_reference_samples: 100_000,
        // the oracle iterate stands in for the read-out at these sizes
        evaluate_stack: false,
    };
    let grid = SweepGrid { n: vec![64, 128, 256, 512, 1024], ..Default::default() };
    let rows = sweep(&grid, &base)?;
    write_sweep_csv(&rows, &base, std::io::stdout())?;

    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.result.as_ref().ok().map(|e| ((r.config.n as f64).ln(), e.eps2.mean.ln())))
        .unzip();
    let fit = fit_line(&xs, &ys);
    eprintln!("eps2 ~ n^{:.3} (R^2 {:.3})", fit.slope, fit.r_squared);
    Ok(())
}
