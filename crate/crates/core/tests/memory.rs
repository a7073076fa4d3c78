mod common;

use common::{l1, path_conditional, uniform};
use hmm_icl::context::vec_decode;
use hmm_icl::hmm::LowRankHmm;
use hmm_icl::memory::{approximation_gap, exact_m_step, model_approx_error, MemoryModel};
use hmm_icl::rng::{stream_rng, streams};
use nalgebra::DVector;
use proptest::prelude::*;

fn sample(hmm: &LowRankHmm, len: usize, seed: u64) -> Vec<usize> {
    hmm.sample_sequence(len, &mut stream_rng(seed, 11)).unwrap().obs
}

/// Marginal of the first `j` symbols of a joint over `m`-tuples.
fn leading_marginal(joint: &DVector<f64>, p: usize, m: usize, j: usize) -> DVector<f64> {
    let mut out = DVector::<f64>::zeros(p.pow(j as u32));
    for (code, &v) in joint.iter().enumerate() {
        let head = vec_decode(code, p, m)[..j].iter().fold(0, |acc, &s| acc * p + s);
        out[head] += v;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_m_step_matches_paths(k in 1usize..=3, p in 2usize..=3, m in 1usize..=3, len in 0usize..=4, seed in 0u64..500) {
        let hmm = LowRankHmm::new_low_rank(k, p, 1 + seed as usize % k, 1.0, seed).unwrap();
        let h = if len == 0 { vec![] } else { sample(&hmm, len, seed) };
        let fast = exact_m_step(&hmm, &h, m).unwrap();
        prop_assert!(l1(&fast, &path_conditional(&hmm, hmm.initial(), &h, m)) < 1e-10);
        prop_assert!((fast.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn windowed_model_matches_paths_from_uniform(k in 1usize..=3, p in 2usize..=3, m in 1usize..=2, window in 1usize..=4, seed in 0u64..500) {
        let hmm = LowRankHmm::new_low_rank(k, p, 1 + seed as usize % k, 1.0, seed).unwrap();
        let model = MemoryModel::new(&hmm, window + m - 1, m).unwrap();
        let w = sample(&hmm, window, seed);
        let fast = model.m_step_conditional(&w).unwrap();
        prop_assert!(l1(&fast, &path_conditional(&hmm, &uniform(k), &w, m)) < 1e-10);
    }

    #[test]
    fn joint_marginalizes_to_shorter_horizon(k in 1usize..=4, p in 2usize..=3, m in 2usize..=3, window in 1usize..=3, seed in 0u64..500) {
        let hmm = LowRankHmm::new_low_rank(k, p, 1 + seed as usize % k, 1.0, seed).unwrap();
        let w = sample(&hmm, window, seed);
        let joint = MemoryModel::new(&hmm, window + m - 1, m).unwrap().m_step_conditional(&w).unwrap();
        for j in 1..m {
            let shorter = MemoryModel::new(&hmm, window + j - 1, j).unwrap().m_step_conditional(&w).unwrap();
            prop_assert!((leading_marginal(&joint, p, m, j) - shorter).amax() < 1e-9);
        }
        let single = MemoryModel::new(&hmm, window, 1).unwrap().l_memory_conditional(&w).unwrap();
        prop_assert!((leading_marginal(&joint, p, m, 1) - single).amax() < 1e-9);
    }
}

#[test]
fn longer_memory_is_no_worse() {
    for seed in 0..3 {
        let hmm = LowRankHmm::new_low_rank(4, 3, 2, 1.0, seed).unwrap();
        let e3 = model_approx_error(&hmm, 3, 8, 1, 4000, &mut stream_rng(seed, streams::TEST_PREFIXES)).unwrap();
        let e5 = model_approx_error(&hmm, 5, 8, 1, 4000, &mut stream_rng(seed, streams::TEST_PREFIXES)).unwrap();
        assert!(e5.mean <= e3.mean, "seed {seed}: {} > {}", e5.mean, e3.mean);
    }
}

#[test]
fn full_window_has_zero_gap() {
    // with k = L the window is the whole history and both sides start uniform
    let hmm = LowRankHmm::new_low_rank(3, 3, 2, 1.0, 4).unwrap();
    let e = model_approx_error(&hmm, 4, 4, 1, 200, &mut stream_rng(4, 1)).unwrap();
    assert!(e.mean < 1e-12);
}

#[test]
fn mc_estimate_is_mean_of_gaps() {
    let hmm = LowRankHmm::new_low_rank(3, 2, 2, 1.0, 6).unwrap();
    let est = model_approx_error(&hmm, 3, 6, 1, 300, &mut stream_rng(6, 1)).unwrap();
    let model = MemoryModel::new(&hmm, 2, 1).unwrap();
    let mut rng = stream_rng(6, 1);
    let gaps: Vec<f64> =
        (0..300).map(|_| approximation_gap(&model, &hmm.sample_sequence(5, &mut rng).unwrap().obs).unwrap()).collect();
    let mean = gaps.iter().sum::<f64>() / 300.0;
    assert!((est.mean - mean).abs() < 1e-12);
}

#[test]
fn short_history_is_rejected() {
    let hmm = LowRankHmm::new_low_rank(3, 2, 2, 1.0, 6).unwrap();
    let model = MemoryModel::new(&hmm, 4, 1).unwrap();
    assert!(approximation_gap(&model, &[0, 1]).is_err());
    assert!(model_approx_error(&hmm, 3, 2, 1, 10, &mut stream_rng(0, 1)).is_err());
}
