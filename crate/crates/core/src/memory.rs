//! Fixed-memory approximations of the HMM predictive distribution.
//!
//! A [`MemoryModel`] forgets everything before its window: it restarts the
//! filter from a history-independent prior at the first window symbol. The
//! gap between that predictor and the exact full-history one is the model
//! approximation error measured by [`model_approx_error`].

use nalgebra::DVector;

use crate::context::vec_decode;
use crate::error::{Error, Result};
use crate::hmm::{filter, BeliefState, LowRankHmm};
use crate::linalg::l1_distance;
use crate::rng::Rng;
use crate::stats::McEstimate;

#[derive(Debug, Clone)]
pub struct MemoryModel<'a> {
    hmm: &'a LowRankHmm,
    memory_len: usize,
    prior: BeliefState,
    steps_ahead: usize,
}

impl<'a> MemoryModel<'a> {
    /// Model remembering `memory_len` observations, predicting `steps_ahead`
    /// symbols, with the uniform prior over hidden states.
    pub fn new(hmm: &'a LowRankHmm, memory_len: usize, steps_ahead: usize) -> Result<Self> {
        Self::with_prior(hmm, memory_len, steps_ahead, BeliefState::uniform(hmm.num_hidden()))
    }

    pub fn with_prior(
        hmm: &'a LowRankHmm,
        memory_len: usize,
        steps_ahead: usize,
        prior: BeliefState,
    ) -> Result<Self> {
        if memory_len == 0 || steps_ahead == 0 {
            return Err(Error::InvalidConfig("memory_len and steps_ahead must be at least 1".into()));
        }
        if memory_len < steps_ahead {
            return Err(Error::InvalidConfig(format!(
                "memory_len {memory_len} shorter than steps_ahead {steps_ahead}"
            )));
        }
        if prior.probs().len() != hmm.num_hidden() {
            return Err(Error::Shape {
                expected: format!("prior over {} states", hmm.num_hidden()),
                got: format!("{}", prior.probs().len()),
            });
        }
        Ok(MemoryModel { hmm, memory_len, prior, steps_ahead })
    }

    pub fn memory_len(&self) -> usize {
        self.memory_len
    }

    pub fn steps_ahead(&self) -> usize {
        self.steps_ahead
    }

    pub fn prior(&self) -> &BeliefState {
        &self.prior
    }

    /// Window length consumed by [`Self::m_step_conditional`]:
    /// `memory_len - (steps_ahead - 1)`.
    pub fn m_step_window_len(&self) -> usize {
        self.memory_len + 1 - self.steps_ahead
    }

    /// One-step predictor `P_L(. | window)`.
    pub fn l_memory_conditional(&self, window: &[usize]) -> Result<DVector<f64>> {
        if window.len() != self.memory_len {
            return Err(Error::Shape {
                expected: format!("window of length {}", self.memory_len),
                got: format!("{}", window.len()),
            });
        }
        let belief = filter(self.hmm, &self.prior, window)?;
        Ok(self.hmm.emit(&self.hmm.propagate(belief.probs())))
    }

    /// Joint predictor of the next `steps_ahead` symbols, indexed by the
    /// big-endian tuple code of [`crate::context::vec_index`].
    pub fn m_step_conditional(&self, window: &[usize]) -> Result<DVector<f64>> {
        if window.len() != self.m_step_window_len() {
            return Err(Error::Shape {
                expected: format!("window of length {}", self.m_step_window_len()),
                got: format!("{}", window.len()),
            });
        }
        let belief = filter(self.hmm, &self.prior, window)?;
        Ok(rollout(self.hmm, &self.hmm.propagate(belief.probs()), self.steps_ahead))
    }
}

/// Joint law of the next `m` observations given the distribution of the
/// hidden state emitting the first of them.
pub fn rollout(hmm: &LowRankHmm, next_state: &DVector<f64>, m: usize) -> DVector<f64> {
    let p = hmm.num_obs();
    let size = p.pow(m as u32);
    DVector::from_iterator(
        size,
        (0..size).map(|code| {
            let symbols = vec_decode(code, p, m);
            let mut alpha = next_state.clone();
            for (j, &o) in symbols.iter().enumerate() {
                alpha.component_mul_assign(&hmm.emission().row(o).transpose());
                if j + 1 < m {
                    alpha = hmm.propagate(&alpha);
                }
            }
            alpha.sum()
        }),
    )
}

/// Exact full-history law of the next `m` observations.
pub fn exact_m_step(hmm: &LowRankHmm, history: &[usize], m: usize) -> Result<DVector<f64>> {
    if history.is_empty() {
        return Ok(rollout(hmm, hmm.initial(), m));
    }
    let prior = BeliefState::new(hmm.initial().clone())?;
    let belief = filter(hmm, &prior, history)?;
    Ok(rollout(hmm, &hmm.propagate(belief.probs()), m))
}

/// L1 gap between the exact and the memory-model predictors for one history.
/// The model sees the last `m_step_window_len()` symbols of `history`.
pub fn approximation_gap(model: &MemoryModel<'_>, history: &[usize]) -> Result<f64> {
    let m = model.steps_ahead();
    let window_len = model.m_step_window_len();
    if history.len() < window_len {
        return Err(Error::InvalidConfig(format!(
            "history of length {} shorter than window {window_len}",
            history.len()
        )));
    }
    let window = &history[history.len() - window_len..];
    let exact = exact_m_step(model.hmm, history, m)?;
    let approx = model.m_step_conditional(window)?;
    Ok(l1_distance(&exact, &approx))
}

/// Monte-Carlo estimate of `E || P(. | o_{1:k-1}) - P_L(. | window) ||_1`
/// over histories of length `k - 1` drawn from the HMM, with the uniform prior.
///
/// For `m > 1` both sides are joint laws of the next `m` symbols and the
/// window holds the last `L - m` observations.
pub fn model_approx_error(
    hmm: &LowRankHmm,
    l: usize,
    k: usize,
    m: usize,
    num_samples: usize,
    rng: &mut Rng,
) -> Result<McEstimate> {
    model_approx_error_with_prior(hmm, &BeliefState::uniform(hmm.num_hidden()), l, k, m, num_samples, rng)
}

pub fn model_approx_error_with_prior(
    hmm: &LowRankHmm,
    prior: &BeliefState,
    l: usize,
    k: usize,
    m: usize,
    num_samples: usize,
    rng: &mut Rng,
) -> Result<McEstimate> {
    if !(k >= l && l > m && m >= 1) {
        return Err(Error::InvalidConfig(format!("need k >= L > m >= 1, got k={k}, L={l}, m={m}")));
    }
    let model = MemoryModel::with_prior(hmm, l - 1, m, prior.clone())?;
    let gaps = (0..num_samples)
        .map(|_| {
            let history = hmm.sample_sequence(k - 1, rng)?.obs;
            approximation_gap(&model, &history)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McEstimate::from_samples(&gaps))
}
