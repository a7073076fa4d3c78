#![allow(dead_code)]

use hmm_icl::context::vec_decode;
use hmm_icl::hmm::LowRankHmm;
use nalgebra::{DMatrix, DVector};

/// Joint probability of `obs` followed by every `m`-tuple, summed over all
/// hidden paths, with the first hidden state drawn from `start`.
pub fn path_joint(hmm: &LowRankHmm, start: &DVector<f64>, obs: &[usize], m: usize) -> DVector<f64> {
    let k = hmm.num_hidden();
    let p = hmm.num_obs();
    let len = obs.len() + m;
    let tr = hmm.transition();
    let e = hmm.emission();
    let mut out = DVector::<f64>::zeros(p.pow(m as u32));
    for code in 0..k.pow(len as u32) {
        let path = vec_decode(code, k, len);
        let mut w = start[path[0]];
        for s in 1..len {
            w *= tr[(path[s - 1], path[s])];
        }
        for (s, &o) in obs.iter().enumerate() {
            w *= e[(o, path[s])];
        }
        if w == 0.0 {
            continue;
        }
        for (idx, slot) in out.iter_mut().enumerate() {
            let tuple = vec_decode(idx, p, m);
            let mut v = w;
            for (j, &x) in tuple.iter().enumerate() {
                v *= e[(x, path[obs.len() + j])];
            }
            *slot += v;
        }
    }
    out
}

/// `P(next m symbols | obs)` by path enumeration.
pub fn path_conditional(hmm: &LowRankHmm, start: &DVector<f64>, obs: &[usize], m: usize) -> DVector<f64> {
    let joint = path_joint(hmm, start, obs, m);
    let total = joint.sum();
    joint / total
}

/// Posterior of the hidden state that emitted the last symbol of `obs`.
pub fn path_posterior(hmm: &LowRankHmm, start: &DVector<f64>, obs: &[usize]) -> DVector<f64> {
    let k = hmm.num_hidden();
    let tr = hmm.transition();
    let e = hmm.emission();
    let mut post = DVector::<f64>::zeros(k);
    for code in 0..k.pow(obs.len() as u32) {
        let path = vec_decode(code, k, obs.len());
        let mut w = start[path[0]] * e[(obs[0], path[0])];
        for s in 1..obs.len() {
            w *= tr[(path[s - 1], path[s])] * e[(obs[s], path[s])];
        }
        post[path[obs.len() - 1]] += w;
    }
    let total = post.sum();
    post / total
}

pub fn l1(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).abs().sum()
}

pub fn uniform(k: usize) -> DVector<f64> {
    DVector::from_element(k, 1.0 / k as f64)
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
