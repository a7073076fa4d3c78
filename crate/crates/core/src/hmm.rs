//! Low-rank hidden Markov models: generation, sampling, exact filtering and
//! observability estimation.
//!
//! The hidden transition is stored in factored form
//! `P(h' | h) = sum_z psi[h, z] * w[h', z]`, i.e. every row of the transition
//! is a mixture of the `rank` distributions held in the columns of `w`. The
//! full `K x K` matrix is never stored; [`LowRankHmm::transition`] assembles it
//! on demand.
//!
//! Time convention: `initial` is the distribution of the hidden state that
//! emits the first observation. A [`BeliefState`] after a history `o_1..o_s`
//! is the posterior over the hidden state that emitted `o_s`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RowMajor;
use crate::rng::{self, Rng, GENERATOR_NAME};

/// Filtering normalizers below this value are reported as impossible
/// observations instead of being renormalized.
pub const MIN_LIKELIHOOD: f64 = 1e-300;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankHmm {
    num_hidden: usize,
    num_obs: usize,
    rank: usize,
    psi: DMatrix<f64>,
    w: DMatrix<f64>,
    emission: DMatrix<f64>,
    initial: DVector<f64>,
    seed: u64,
}

impl LowRankHmm {
    /// Random HMM whose transition is a mixture of `rank` Dirichlet
    /// distributions, so the factorization is exact by construction.
    ///
    /// `psi` rows, `w` columns and `emission` columns are drawn from a
    /// symmetric Dirichlet with the given concentration; the initial
    /// distribution is uniform.
    pub fn new_low_rank(
        num_hidden: usize,
        num_obs: usize,
        rank: usize,
        concentration: f64,
        seed: u64,
    ) -> Result<Self> {
        if num_hidden == 0 || num_obs == 0 || rank == 0 {
            return Err(Error::InvalidDimension(format!(
                "sizes must be positive (hidden={num_hidden}, obs={num_obs}, rank={rank})"
            )));
        }
        if rank > num_hidden {
            return Err(Error::InvalidDimension(format!(
                "rank {rank} exceeds hidden-state count {num_hidden}"
            )));
        }
        if !(concentration > 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "concentration must be positive, got {concentration}"
            )));
        }
        let mut rng = rng::stream_rng(seed, 0);
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| Error::InvalidConfig(format!("gamma({concentration}): {e}")))?;

        let mut psi = DMatrix::zeros(num_hidden, rank);
        for h in 0..num_hidden {
            let row = dirichlet(&gamma, rank, &mut rng);
            psi.row_mut(h).copy_from_slice(&row);
        }
        let mut w = DMatrix::zeros(num_hidden, rank);
        for z in 0..rank {
            let col = dirichlet(&gamma, num_hidden, &mut rng);
            w.column_mut(z).copy_from_slice(&col);
        }
        let mut emission = DMatrix::zeros(num_obs, num_hidden);
        for h in 0..num_hidden {
            let col = dirichlet(&gamma, num_obs, &mut rng);
            emission.column_mut(h).copy_from_slice(&col);
        }
        let initial = DVector::from_element(num_hidden, 1.0 / num_hidden as f64);
        Self::from_parts(psi, w, emission, initial, seed)
    }

    /// Assemble from explicit factors, checking every stochasticity invariant.
    pub fn from_parts(
        psi: DMatrix<f64>,
        w: DMatrix<f64>,
        emission: DMatrix<f64>,
        initial: DVector<f64>,
        seed: u64,
    ) -> Result<Self> {
        let (num_hidden, rank) = psi.shape();
        let num_obs = emission.nrows();
        if num_hidden == 0 || rank == 0 || num_obs == 0 {
            return Err(Error::InvalidDimension("empty factor".into()));
        }
        if rank > num_hidden {
            return Err(Error::InvalidDimension(format!(
                "rank {rank} exceeds hidden-state count {num_hidden}"
            )));
        }
        if w.shape() != (num_hidden, rank) {
            return Err(Error::Shape {
                expected: format!("w {num_hidden}x{rank}"),
                got: format!("{}x{}", w.nrows(), w.ncols()),
            });
        }
        if emission.ncols() != num_hidden || initial.len() != num_hidden {
            return Err(Error::Shape {
                expected: format!("emission px{num_hidden}, initial {num_hidden}"),
                got: format!("emission {}x{}, initial {}", emission.nrows(), emission.ncols(), initial.len()),
            });
        }
        let check = |name: &str, values: &mut dyn Iterator<Item = f64>| -> Result<()> {
            let mut sum = 0.0;
            for v in values {
                if !(v >= 0.0) {
                    return Err(Error::InvalidConfig(format!("{name} has negative or NaN entry {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidConfig(format!("{name} sums to {sum}")));
            }
            Ok(())
        };
        for h in 0..num_hidden {
            check(&format!("psi row {h}"), &mut psi.row(h).iter().copied())?;
            check(&format!("emission column {h}"), &mut emission.column(h).iter().copied())?;
        }
        for z in 0..rank {
            check(&format!("w column {z}"), &mut w.column(z).iter().copied())?;
        }
        check("initial", &mut initial.iter().copied())?;
        Ok(LowRankHmm { num_hidden, num_obs, rank, psi, w, emission, initial, seed })
    }

    /// Same model with a different start distribution.
    pub fn with_initial(&self, initial: DVector<f64>) -> Result<Self> {
        Self::from_parts(self.psi.clone(), self.w.clone(), self.emission.clone(), initial, self.seed)
    }

    pub fn num_hidden(&self) -> usize {
        self.num_hidden
    }
    pub fn num_obs(&self) -> usize {
        self.num_obs
    }
    pub fn rank(&self) -> usize {
        self.rank
    }
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }
    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Row-stochastic `K x K` matrix with `[h, h'] = P(h' | h) = psi * w^T`.
    pub fn transition(&self) -> DMatrix<f64> {
        &self.psi * self.w.transpose()
    }

    /// Distribution of the next hidden state given a distribution over the
    /// current one, computed through the rank-`d` bottleneck.
    pub fn propagate(&self, belief: &DVector<f64>) -> DVector<f64> {
        let mixture = self.psi.tr_mul(belief);
        &self.w * mixture
    }

    /// Observation distribution for a distribution over the emitting state.
    pub fn emit(&self, hidden: &DVector<f64>) -> DVector<f64> {
        &self.emission * hidden
    }

    /// Draw a hidden/observation trajectory of the given length.
    pub fn sample_sequence(&self, length: usize, rng: &mut Rng) -> Result<Sample> {
        if length == 0 {
            return Err(Error::InvalidDimension("sequence length must be at least 1".into()));
        }
        let mut hidden = Vec::with_capacity(length);
        let mut obs = Vec::with_capacity(length);
        let mut h = draw_categorical(self.initial.iter().copied(), rng);
        for s in 0..length {
            if s > 0 {
                let z = draw_categorical(self.psi.row(h).iter().copied(), rng);
                h = draw_categorical(self.w.column(z).iter().copied(), rng);
            }
            hidden.push(h);
            obs.push(draw_categorical(self.emission.column(h).iter().copied(), rng));
        }
        Ok(Sample { hidden, obs })
    }

    pub fn to_document(&self) -> HmmDocument {
        HmmDocument {
            num_hidden: self.num_hidden,
            num_obs: self.num_obs,
            rank: self.rank,
            psi: RowMajor::from(&self.psi).data,
            w: RowMajor::from(&self.w).data,
            emission: RowMajor::from(&self.emission).data,
            initial: self.initial.iter().copied().collect(),
            seed: self.seed,
            generator_name: GENERATOR_NAME.to_string(),
        }
    }

    pub fn from_document(doc: &HmmDocument) -> Result<Self> {
        let (k, p, d) = (doc.num_hidden, doc.num_obs, doc.rank);
        let mat = |rows, cols, data: &[f64]| -> Result<DMatrix<f64>> {
            DMatrix::try_from(&RowMajor { rows, cols, data: data.to_vec() })
        };
        Self::from_parts(
            mat(k, d, &doc.psi)?,
            mat(k, d, &doc.w)?,
            mat(p, k, &doc.emission)?,
            DVector::from_vec(doc.initial.clone()),
            doc.seed,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// JSON image of a [`LowRankHmm`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmDocument {
    pub num_hidden: usize,
    pub num_obs: usize,
    pub rank: usize,
    pub psi: Vec<f64>,
    pub w: Vec<f64>,
    pub emission: Vec<f64>,
    pub initial: Vec<f64>,
    pub seed: u64,
    pub generator_name: String,
}

/// Hidden path and observation symbols (0-based) of one sampled sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub hidden: Vec<usize>,
    pub obs: Vec<usize>,
}

/// Posterior distribution over hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    probs: DVector<f64>,
}

impl BeliefState {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidConfig("belief must be a nonnegative vector".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!("belief sums to {sum}")));
        }
        Ok(BeliefState { probs })
    }

    pub fn uniform(num_hidden: usize) -> Self {
        BeliefState { probs: DVector::from_element(num_hidden, 1.0 / num_hidden as f64) }
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.probs
    }
}

/// Condition a distribution over the emitting state on one observation.
pub fn condition(hmm: &LowRankHmm, prior: &DVector<f64>, obs: usize) -> Result<BeliefState> {
    if obs >= hmm.num_obs {
        return Err(Error::InvalidDimension(format!("observation {obs} out of range {}", hmm.num_obs)));
    }
    let mut post = prior.component_mul(&hmm.emission.row(obs).transpose());
    let normalizer: f64 = post.iter().sum();
    if !(normalizer >= MIN_LIKELIHOOD) {
        return Err(Error::DegenerateLikelihood { obs, normalizer });
    }
    post /= normalizer;
    Ok(BeliefState { probs: post })
}

/// One Bayes filter step: propagate through the transition, then condition on
/// the new observation.
pub fn belief_update(hmm: &LowRankHmm, belief: &BeliefState, obs: usize) -> Result<BeliefState> {
    condition(hmm, &hmm.propagate(&belief.probs), obs)
}

/// Filter a window of observations starting from `prior`, the distribution
/// of the hidden state that emits the first window symbol. An empty window
/// returns the prior unchanged.
pub fn filter(hmm: &LowRankHmm, prior: &BeliefState, window: &[usize]) -> Result<BeliefState> {
    let mut iter = window.iter();
    let Some(&first) = iter.next() else {
        return Ok(prior.clone());
    };
    let mut belief = condition(hmm, &prior.probs, first)?;
    for &o in iter {
        belief = belief_update(hmm, &belief, o)?;
    }
    Ok(belief)
}

/// Exact full-memory predictive `P(o_k | o_1..o_{k-1})`.
///
/// With an empty history this is the marginal of the first observation,
/// `emission * initial`.
pub fn conditional_next(hmm: &LowRankHmm, history: &[usize]) -> Result<DVector<f64>> {
    if history.is_empty() {
        return Ok(hmm.emit(&hmm.initial));
    }
    let prior = BeliefState { probs: hmm.initial.clone() };
    let belief = filter(hmm, &prior, history)?;
    Ok(hmm.emit(&hmm.propagate(belief.probs())))
}

pub fn one_hot(symbol: usize, size: usize) -> DVector<f64> {
    let mut v = DVector::zeros(size);
    v[symbol] = 1.0;
    v
}

/// Index of the single unit entry of an exact one-hot vector.
pub fn symbol_of(v: &DVector<f64>) -> Result<usize> {
    let mut found = None;
    for (i, &x) in v.iter().enumerate() {
        if x == 1.0 && found.is_none() {
            found = Some(i);
        } else if x != 0.0 {
            return Err(Error::NotOneHot(format!("{:?}", v.as_slice())));
        }
    }
    found.ok_or_else(|| Error::NotOneHot(format!("{:?}", v.as_slice())))
}

fn dirichlet(gamma: &Gamma<f64>, dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

/// Inverse-CDF draw from unnormalized-tolerant probabilities.
pub(crate) fn draw_categorical(probs: impl Iterator<Item = f64> + Clone, rng: &mut Rng) -> usize {
    let total: f64 = probs.clone().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Result of [`estimate_gamma`]. Every field is an upper bound on the true
/// observability constant; `estimate` is the tightest of them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    /// Minimum over pairs of distinct point masses.
    pub vertex_min: f64,
    /// Minimum over randomly drawn distribution pairs (includes the vertex pairs).
    pub sampled_min: f64,
    /// Minimum over the vertices of the piecewise-linear arrangement, when
    /// the hidden space is small enough to enumerate. Equals the true constant.
    pub arrangement_min: Option<f64>,
    pub estimate: f64,
}

/// Hidden spaces up to this size get the exact arrangement enumeration.
pub const GAMMA_EXACT_MAX_HIDDEN: usize = 8;

/// Estimate the observability constant
/// `min ||T d - T d'||_1 / ||d - d'||_1` over pairs of hidden distributions.
///
/// The minimum over point-mass pairs is always included. `num_pairs` random
/// pairs (uniform on the simplex) tighten it; the result is a running
/// minimum, so a longer draw from the same stream never increases it.
pub fn estimate_gamma(hmm: &LowRankHmm, num_pairs: usize, rng: &mut Rng) -> Result<GammaEstimate> {
    if num_pairs == 0 {
        return Err(Error::InvalidConfig("num_pairs must be at least 1".into()));
    }
    let t = &hmm.emission;
    let k = hmm.num_hidden;
    let mut vertex_min = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let diff: f64 = (0..hmm.num_obs).map(|o| (t[(o, i)] - t[(o, j)]).abs()).sum();
            vertex_min = vertex_min.min(diff / 2.0);
        }
    }
    if k == 1 {
        // a single hidden state admits no distinct pair
        vertex_min = 1.0;
    }
    let unit = Gamma::new(1.0, 1.0).expect("unit gamma");
    let mut sampled_min = vertex_min;
    for _ in 0..num_pairs {
        let d = DVector::from_vec(dirichlet(&unit, k, rng));
        let e = DVector::from_vec(dirichlet(&unit, k, rng));
        let den: f64 = (&d - &e).iter().map(|x| x.abs()).sum();
        if den > 0.0 {
            let num: f64 = (t * (&d - &e)).iter().map(|x| x.abs()).sum();
            sampled_min = sampled_min.min(num / den);
        }
    }
    let arrangement_min = (k <= GAMMA_EXACT_MAX_HIDDEN && k >= 2).then(|| arrangement_gamma(t));
    let estimate = arrangement_min.map_or(sampled_min, |a| a.min(sampled_min));
    Ok(GammaEstimate { vertex_min, sampled_min, arrangement_min, estimate })
}

/// Exact observability constant by vertex enumeration.
///
/// Writing `d - d' = s (a - b)` with `a`, `b` distributions of disjoint
/// support, the ratio equals `||T a - T b||_1 / 2`. On each face
/// `supp a ⊆ A, supp b ⊆ B` this is convex and piecewise linear, so its
/// minimum sits where `|A| + |B| - 2` output coordinates of `T(a - b)` vanish.
fn arrangement_gamma(t: &DMatrix<f64>) -> f64 {
    let (p, k) = t.shape();
    let mut best = f64::INFINITY;
    // label[h] in {0: unused, 1: in A, 2: in B}
    let total = 3usize.pow(k as u32);
    for code in 0..total {
        let mut labels = Vec::with_capacity(k);
        let mut c = code;
        for _ in 0..k {
            labels.push(c % 3);
            c /= 3;
        }
        let a: Vec<usize> = (0..k).filter(|&h| labels[h] == 1).collect();
        let b: Vec<usize> = (0..k).filter(|&h| labels[h] == 2).collect();
        if a.is_empty() || b.is_empty() || a[0] > b[0] {
            // (A, B) and (B, A) give the same value
            continue;
        }
        let unknowns = a.len() + b.len();
        let zeros = unknowns - 2;
        if zeros > p {
            continue;
        }
        for rows in combinations(p, zeros) {
            let mut sys = DMatrix::zeros(unknowns, unknowns);
            let mut rhs = DVector::zeros(unknowns);
            for (r, &o) in rows.iter().enumerate() {
                for (c, &h) in a.iter().enumerate() {
                    sys[(r, c)] = t[(o, h)];
                }
                for (c, &h) in b.iter().enumerate() {
                    sys[(r, a.len() + c)] = -t[(o, h)];
                }
            }
            for c in 0..a.len() {
                sys[(zeros, c)] = 1.0;
            }
            for c in 0..b.len() {
                sys[(zeros + 1, a.len() + c)] = 1.0;
            }
            rhs[zeros] = 1.0;
            rhs[zeros + 1] = 1.0;
            let Some(sol) = sys.lu().solve(&rhs) else { continue };
            if sol.iter().any(|x| !(*x > 1e-12)) {
                continue;
            }
            let mut u = DVector::zeros(k);
            for (c, &h) in a.iter().enumerate() {
                u[h] = sol[c];
            }
            for (c, &h) in b.iter().enumerate() {
                u[h] = -sol[a.len() + c];
            }
            let value: f64 = (t * &u).iter().map(|x| x.abs()).sum::<f64>() / 2.0;
            best = best.min(value);
        }
    }
    best
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, r, &mut Vec::new(), &mut out);
    out
}

/// Parameters of a mixture of HMM tasks sharing one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub num_tasks: usize,
    pub hidden_per_task: usize,
    pub vocab: usize,
    pub rank: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    pub task_prior: Vec<f64>,
    pub seed: u64,
}

fn default_concentration() -> f64 {
    1.0
}

impl MixtureConfig {
    /// 8 tasks, 8 hidden states, 4 symbols, rank 2, uniform task prior.
    pub fn desk_scale(seed: u64) -> Self {
        Self::uniform(8, 8, 4, 2, seed)
    }

    /// 8192 tasks with 128 hidden states over a 16-token vocabulary.
    pub fn full_scale(seed: u64) -> Self {
        Self::uniform(8192, 128, 16, 4, seed)
    }

    pub fn uniform(num_tasks: usize, hidden_per_task: usize, vocab: usize, rank: usize, seed: u64) -> Self {
        MixtureConfig {
            num_tasks,
            hidden_per_task,
            vocab,
            rank,
            concentration: 1.0,
            task_prior: vec![1.0 / num_tasks.max(1) as f64; num_tasks],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::InvalidDimension("num_tasks must be positive".into()));
        }
        if self.task_prior.len() != self.num_tasks {
            return Err(Error::InvalidConfig(format!(
                "task_prior has {} entries for {} tasks",
                self.task_prior.len(),
                self.num_tasks
            )));
        }
        let sum: f64 = self.task_prior.iter().sum();
        if self.task_prior.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidConfig(format!("task_prior must be a distribution (sum {sum})")));
        }
        Ok(())
    }
}

/// A set of HMM tasks plus the prior used to pick one per sequence.
#[derive(Debug, Clone)]
pub struct Mixture {
    config: MixtureConfig,
    tasks: Vec<LowRankHmm>,
}

impl Mixture {
    pub fn new(config: MixtureConfig) -> Result<Self> {
        config.validate()?;
        let tasks = (0..config.num_tasks)
            .into_par_iter()
            .map(|i| {
                let seed = rand::RngCore::next_u64(&mut rng::stream_rng(
                    config.seed,
                    rng::streams::MIXTURE_TASK_BASE + i as u64,
                ));
                LowRankHmm::new_low_rank(
                    config.hidden_per_task,
                    config.vocab,
                    config.rank,
                    config.concentration,
                    seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mixture { config, tasks })
    }

    pub fn config(&self) -> &MixtureConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[LowRankHmm] {
        &self.tasks
    }

    pub fn sample_task(&self, rng: &mut Rng) -> usize {
        if self.tasks.len() == 1 {
            return 0;
        }
        draw_categorical(self.config.task_prior.iter().copied(), rng)
    }

    /// Draw a task, then a sequence from it.
    pub fn sample(&self, length: usize, rng: &mut Rng) -> Result<(usize, Sample)> {
        let task = self.sample_task(rng);
        Ok((task, self.tasks[task].sample_sequence(length, rng)?))
    }

    /// Configuration plus generator metadata, without the task parameters.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "generator_name": GENERATOR_NAME,
            "num_tasks_built": self.tasks.len(),
        })
    }
}
