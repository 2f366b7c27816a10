//! η-outage capacity of a slow-fading MIMO channel.
//!
//! All probabilities are taken over a fixed [`StatePool`] (common random
//! numbers): the pool is drawn once per query and every covariance and every
//! rate is scored against the same states, so the objective is deterministic
//! and bisection over rates is well defined.
//!
//! The capacity is located two ways. The quantile route maximizes
//! `R(Q) = sup{R : P[f(G,Q) < R] <= η}` directly over `Q` by Nelder–Mead on a
//! Cholesky-type factor. The bisection route searches for the largest rate at
//! which the inner minimum of the outage probability over `Q` stays below η.
//! Every covariance found by either route is kept as a candidate, and the
//! reported value is the best `R(Q)` among them, so it is always achieved by a
//! concrete covariance on the pool.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::channel::{waterfilling_gram, ChannelState, FadingEnsemble, InputCovariance, NoiseSpec};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigen, ln_det_hpd_in_place, CMatrix, C64, MATRIX_TOL};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::SeedTree;

/// Slack when comparing cumulative weights against η.
const WEIGHT_TOL: f64 = 1e-12;

/// Parameters of an outage query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageSpec {
    pub eta: f64,
    pub power: f64,
    pub sigma_sq: f64,
    pub n_state_samples: usize,
    pub confidence: f64,
}

impl OutageSpec {
    pub fn new(eta: f64, power: f64, sigma_sq: f64) -> Result<Self> {
        let spec = OutageSpec { eta, power, sigma_sq, n_state_samples: 100_000, confidence: 0.95 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_samples(self, n_state_samples: usize) -> Self {
        OutageSpec { n_state_samples, ..self }
    }

    pub fn with_eta(self, eta: f64) -> Self {
        OutageSpec { eta, ..self }
    }

    pub fn with_power(self, power: f64) -> Self {
        OutageSpec { power, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0, 1), got {}", self.eta)));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(invalid(format!("power must be positive, got {}", self.power)));
        }
        if self.n_state_samples == 0 {
            return Err(invalid("n_state_samples must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        NoiseSpec::new(self.sigma_sq)?;
        Ok(())
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec::new(self.sigma_sq).expect("validated")
    }
}

/// Two-sided Wilson score interval half-width for a proportion `p_hat`
/// observed on `n` trials.
pub fn wilson_half_width(p_hat: f64, n: usize, confidence: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n = n as f64;
    let z2 = z * z;
    z / (1.0 + z2 / n) * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Wilson score upper limit, one-sided at `confidence`.
pub fn wilson_upper(p_hat: f64, n: usize, confidence: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let z = Normal::standard().inverse_cdf(confidence);
    let n = n as f64;
    let z2 = z * z;
    let center = (p_hat + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt();
    (center + half).min(1.0)
}

#[derive(Debug, Clone)]
enum Weights {
    /// `1/N` each; sampled pools.
    Uniform,
    /// Exact probabilities of a finite law, all positive.
    Exact(Vec<f64>),
}

/// Fixed list of channel states with probability weights. Sampled pools
/// carry weight `1/N`; finite-support, point-mass and empirical ensembles
/// are represented exactly.
#[derive(Debug, Clone)]
pub struct StatePool {
    states: Vec<ChannelState>,
    weights: Weights,
    n_tx: usize,
    /// Row-major `g^H g` per state, concatenated.
    grams: Vec<C64>,
}

/// States drawn per generator in a sampled pool.
const POOL_CHUNK: usize = 1024;

impl StatePool {
    /// A pool for `ensemble`: the exact support when the law is finite or
    /// empirical, otherwise `n_samples` i.i.d. draws.
    pub fn from_ensemble(ensemble: &FadingEnsemble, n_samples: usize, seed: SeedTree) -> Result<Self> {
        match ensemble {
            FadingEnsemble::PointMass(_) | FadingEnsemble::FiniteSupport { .. } => {
                let (states, probs) = ensemble.exact_support().expect("finite law");
                Self::weighted(states, probs)
            }
            // the samples are the law itself, so the pool is exact
            FadingEnsemble::Empirical { samples } => Self::weighted(samples.clone(), vec![1.0 / samples.len() as f64; samples.len()]),
            FadingEnsemble::RayleighIid { .. } => {
                if n_samples == 0 {
                    return Err(Error::EmptyPool);
                }
                let chunks = n_samples.div_ceil(POOL_CHUNK);
                let states: Vec<ChannelState> = (0..chunks)
                    .into_par_iter()
                    .flat_map_iter(|c| {
                        let mut rng = seed.index(c as u64).rng();
                        let len = POOL_CHUNK.min(n_samples - c * POOL_CHUNK);
                        (0..len).map(move |_| ensemble.sample_state(&mut rng)).collect::<Vec<_>>()
                    })
                    .collect();
                Self::from_states(states)
            }
        }
    }

    /// Equally weighted states.
    pub fn from_states(states: Vec<ChannelState>) -> Result<Self> {
        Self::build(states, Weights::Uniform)
    }

    /// States with explicit probabilities; zero-probability states are dropped.
    pub fn weighted(states: Vec<ChannelState>, probs: Vec<f64>) -> Result<Self> {
        if states.len() != probs.len() {
            return Err(Error::Dimension("one weight per state is required".into()));
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(invalid("pool weights must be nonnegative and sum to 1"));
        }
        let (states, probs): (Vec<_>, Vec<_>) = states.into_iter().zip(probs).filter(|(_, p)| *p > 0.0).unzip();
        Self::build(states, Weights::Exact(probs))
    }

    fn build(states: Vec<ChannelState>, weights: Weights) -> Result<Self> {
        let first = states.first().ok_or(Error::EmptyPool)?;
        let dims = first.dims();
        if states.iter().any(|s| s.dims() != dims) {
            return Err(Error::Dimension("pool states disagree on dimensions".into()));
        }
        let n_tx = dims.1;
        let mut grams = Vec::with_capacity(states.len() * n_tx * n_tx);
        for s in &states {
            let a = s.gram();
            for r in 0..n_tx {
                for c in 0..n_tx {
                    grams.push(a[(r, c)]);
                }
            }
        }
        Ok(StatePool { states, weights, n_tx, grams })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.states[0].n_rx()
    }

    /// Whether probabilities are exact rather than Monte Carlo frequencies.
    pub fn is_exact(&self) -> bool {
        matches!(self.weights, Weights::Exact(_))
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Weights::Uniform => 1.0 / self.len() as f64,
            Weights::Exact(w) => w[i],
        }
    }

    /// Probability-weighted mean of `g^H g`.
    pub fn mean_gram(&self) -> CMatrix {
        let n = self.n_tx;
        let mut m = CMatrix::zeros(n, n);
        for (i, a) in self.grams.chunks(n * n).enumerate() {
            let w = self.weight(i);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] += a[r * n + c] * w;
                }
            }
        }
        m
    }

    /// `f(g_i, L L^H)` for every state, in pool order.
    fn f_values_factor(&self, l: &CMatrix, sigma_sq: f64) -> Vec<f64> {
        let n = self.n_tx;
        let lf: Vec<C64> = (0..n * n).map(|k| l[(k / n, k % n)]).collect();
        let inv = 1.0 / sigma_sq;
        self.grams
            .par_chunks(n * n)
            .with_min_len(256)
            .map_init(
                || (vec![C64::new(0.0, 0.0); n * n], vec![C64::new(0.0, 0.0); n * n]),
                |(al, m), a| {
                    // al = A L
                    for r in 0..n {
                        for c in 0..n {
                            let mut s = C64::new(0.0, 0.0);
                            for k in 0..n {
                                s += a[r * n + k] * lf[k * n + c];
                            }
                            al[r * n + c] = s;
                        }
                    }
                    // m = I + L^H A L / sigma^2, lower triangle only
                    for r in 0..n {
                        for c in 0..=r {
                            let mut s = C64::new(0.0, 0.0);
                            for k in 0..n {
                                s += lf[k * n + r].conj() * al[k * n + c];
                            }
                            m[r * n + c] = s * inv;
                        }
                        m[r * n + r].re += 1.0;
                    }
                    match ln_det_hpd_in_place(m, n) {
                        Some(ln) => (ln / std::f64::consts::LN_2).max(0.0),
                        None => 0.0,
                    }
                },
            )
            .collect()
    }

    /// `f(g_i, Q)` for every state, in pool order.
    pub fn f_values(&self, q: &InputCovariance, noise: &NoiseSpec) -> Result<Vec<f64>> {
        if q.n_tx() != self.n_tx {
            return Err(Error::Dimension(format!(
                "covariance is {0}x{0} but pool states have {1} transmit antennas",
                q.n_tx(),
                self.n_tx
            )));
        }
        Ok(self.f_values_factor(&q.factor(), noise.sigma_sq()))
    }

    /// Per-state water-filling capacities.
    pub fn waterfilling_values(&self, power: f64, noise: &NoiseSpec) -> Result<Vec<f64>> {
        let n = self.n_tx;
        self.grams
            .par_chunks(n * n)
            .with_min_len(64)
            .map(|a| {
                let m = CMatrix::from_fn(n, n, |r, c| a[r * n + c]);
                waterfilling_gram(&m, power, noise).map(|(_, c)| c)
            })
            .collect()
    }

    /// Total weight of states with value strictly below `rate`.
    fn weight_below(&self, values: &[f64], rate: f64) -> f64 {
        match &self.weights {
            Weights::Uniform => values.iter().filter(|&&v| v < rate).count() as f64 / values.len() as f64,
            Weights::Exact(w) => values.iter().zip(w).filter(|(&v, _)| v < rate).map(|(_, w)| w).sum(),
        }
    }

    /// `sup{R : P[value < R] <= eta}` for the pool law.
    fn quantile(&self, values: &[f64], eta: f64) -> f64 {
        match &self.weights {
            Weights::Uniform => {
                let n = values.len();
                let k = (((eta + WEIGHT_TOL) * n as f64).floor() as usize).min(n - 1);
                let mut v = values.to_vec();
                let (_, kth, _) = v.select_nth_unstable_by(k, f64::total_cmp);
                *kth
            }
            Weights::Exact(w) => {
                let mut order: Vec<usize> = (0..values.len()).collect();
                order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
                let mut acc = 0.0;
                for &i in &order {
                    // acc is the weight of the states ranked below i
                    let next = acc + w[i];
                    if next > eta + WEIGHT_TOL {
                        return values[i];
                    }
                    acc = next;
                }
                values[*order.last().unwrap()]
            }
        }
    }

    /// Smoothed outage: logistic relaxation of the indicator `value < rate`.
    fn smoothed_below(&self, values: &[f64], rate: f64, width: f64) -> f64 {
        let s = |v: f64| 1.0 / (1.0 + ((v - rate) / width).exp());
        match &self.weights {
            Weights::Uniform => values.iter().map(|&v| s(v)).sum::<f64>() / values.len() as f64,
            Weights::Exact(w) => values.iter().zip(w).map(|(&v, w)| w * s(v)).sum(),
        }
    }

    fn ci_half_width(&self, p: f64, confidence: f64) -> f64 {
        if self.is_exact() {
            0.0
        } else {
            wilson_half_width(p, self.len(), confidence)
        }
    }
}

/// `P[f(G, q) < rate]` on the pool, with the Wilson half-width at
/// `spec.confidence` (zero for exact pools).
pub fn outage_probability(pool: &StatePool, q: &InputCovariance, rate: f64, spec: &OutageSpec) -> Result<(f64, f64)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let values = pool.f_values(q, &spec.noise())?;
    let p = pool.weight_below(&values, rate);
    Ok((p, pool.ci_half_width(p, spec.confidence)))
}

/// `R(Q)`: the largest rate whose outage on the pool is at most `eta`.
pub fn rate_for_q(pool: &StatePool, q: &InputCovariance, eta: f64, noise: &NoiseSpec) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) {
        return Err(invalid(format!("eta must lie in [0, 1), got {eta}")));
    }
    let values = pool.f_values(q, noise)?;
    Ok(pool.quantile(&values, eta))
}

/// Knobs of the covariance search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub restarts: usize,
    pub bisection_tol: f64,
    pub max_bisection_iters: usize,
    /// Starts used by each outage minimization inside the bisection, taken
    /// from the best candidates so far.
    pub bisection_starts: usize,
    /// Width (bits) of the logistic relaxation used by the outage
    /// minimization; `None` searches the exact count directly.
    pub smoothing_width: Option<f64>,
    /// Best candidates of one grid point handed to the next by the curve
    /// helpers.
    pub carried: usize,
    /// Nelder–Mead evaluations per start is `base + per_dim * dim`.
    pub nm_evals_base: usize,
    pub nm_evals_per_dim: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            restarts: 8,
            bisection_tol: 1e-3,
            max_bisection_iters: 40,
            bisection_starts: 2,
            smoothing_width: Some(0.05),
            carried: 2,
            nm_evals_base: 100,
            nm_evals_per_dim: 30,
        }
    }
}

/// Result of a capacity query.
#[derive(Debug, Clone)]
pub struct CapacityEstimate {
    pub value_bits: f64,
    pub lower_bracket: f64,
    pub upper_bracket: f64,
    pub argmax_q: InputCovariance,
    pub diagnostics: CapacityDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityDiagnostics {
    pub samples: usize,
    pub exact_pool: bool,
    pub restarts: usize,
    pub ci_half_width: f64,
    /// Best `R(Q)` reached by direct maximization.
    pub quantile_value: f64,
    /// Lower end of the bisection bracket when it stopped.
    pub bisection_value: f64,
    pub bisection_iters: usize,
    /// `eta`-quantile of per-state water-filling capacities; an upper bound
    /// on every `R(Q)`.
    pub waterfilling_quantile: f64,
    /// Set when the two routes differ by more than the bisection tolerance.
    pub routes_disagree: bool,
}

/// Real parameter vector of a lower-triangular factor: the `n` real diagonal
/// entries, then the strictly lower entries as `(re, im)` pairs.
fn theta_dim(n: usize) -> usize {
    n * n
}

fn factor_from_theta(theta: &[f64], n: usize, power: f64) -> CMatrix {
    let mut l = CMatrix::zeros(n, n);
    for i in 0..n {
        l[(i, i)] = C64::new(theta[i], 0.0);
    }
    let mut k = n;
    for r in 1..n {
        for c in 0..r {
            l[(r, c)] = C64::new(theta[k], theta[k + 1]);
            k += 2;
        }
    }
    let fro: f64 = l.iter().map(|z| z.norm_sqr()).sum();
    if !(fro > 1e-300) || !fro.is_finite() {
        return CMatrix::identity(n, n).scale((power / n as f64).sqrt());
    }
    // tr(L L^H) = ||L||_F^2, so this puts the trace exactly at P
    l.scale((power / fro).sqrt())
}

fn theta_from_factor(l: &CMatrix) -> Vec<f64> {
    let n = l.nrows();
    let mut t = Vec::with_capacity(theta_dim(n));
    for i in 0..n {
        t.push(l[(i, i)].re);
    }
    for r in 1..n {
        for c in 0..r {
            t.push(l[(r, c)].re);
            t.push(l[(r, c)].im);
        }
    }
    normalized(t)
}

fn normalized(mut t: Vec<f64>) -> Vec<f64> {
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for v in t.iter_mut() {
            *v /= norm;
        }
    }
    t
}

/// A lower-triangular factor with real diagonal for any PSD `q`.
fn lower_factor(q: &CMatrix) -> CMatrix {
    let n = q.nrows();
    let tr: f64 = q.diagonal().iter().map(|z| z.re).sum();
    let ridge = 1e-12 * tr.max(1e-300);
    let reg = q + CMatrix::identity(n, n).scale(ridge);
    match reg.cholesky() {
        Some(ch) => ch.unpack(),
        None => CMatrix::identity(n, n).scale((tr / n as f64).max(0.0).sqrt()),
    }
}

/// Rank-one factor whose first column is `v` rotated so its top entry is real.
fn rank_one_factor(v: &[C64]) -> CMatrix {
    let n = v.len();
    let phase = if v[0].norm() > 0.0 { v[0].conj() / v[0].norm() } else { C64::new(1.0, 0.0) };
    let mut l = CMatrix::zeros(n, n);
    for r in 0..n {
        l[(r, 0)] = v[r] * phase;
    }
    l[(0, 0)].im = 0.0;
    l
}

fn covariance_from_theta(theta: &[f64], n: usize, power: f64) -> Result<InputCovariance> {
    InputCovariance::from_factor(&factor_from_theta(theta, n, power), power)
}

/// Scored covariance candidate.
#[derive(Debug, Clone)]
struct Candidate {
    theta: Vec<f64>,
    rate: f64,
}

/// Searches over `Q_P` for one pool, power and η.
struct Search<'a> {
    pool: &'a StatePool,
    power: f64,
    sigma_sq: f64,
    eta: f64,
    opts: SearchOptions,
}

impl Search<'_> {
    fn n(&self) -> usize {
        self.pool.n_tx()
    }

    fn values(&self, theta: &[f64]) -> Vec<f64> {
        let l = factor_from_theta(theta, self.n(), self.power);
        debug_assert!(
            l.iter().map(|z| z.norm_sqr()).sum::<f64>() <= self.power + MATRIX_TOL,
            "trace feasibility"
        );
        self.pool.f_values_factor(&l, self.sigma_sq)
    }

    fn rate(&self, theta: &[f64]) -> f64 {
        self.pool.quantile(&self.values(theta), self.eta)
    }

    fn nm_opts(&self) -> NelderMeadOptions {
        let d = theta_dim(self.n());
        NelderMeadOptions {
            max_evals: self.opts.nm_evals_base + self.opts.nm_evals_per_dim * d,
            f_tol: 1e-10,
            x_tol: 1e-6,
            initial_step: 0.25,
        }
    }

    /// Deterministic starts followed by random ones, `restarts` in total
    /// (never fewer than the deterministic ones that fit).
    fn starts(&self, seed: SeedTree) -> Vec<Vec<f64>> {
        let n = self.n();
        let noise = NoiseSpec::new(self.sigma_sq).expect("validated");
        let mut out = vec![isotropic_theta(n)];
        let mean = self.pool.mean_gram();
        if let Ok((q, _)) = waterfilling_gram(&mean, self.power, &noise) {
            out.push(theta_from_factor(&lower_factor(q.matrix())));
        }
        let (_, vecs) = hermitian_eigen(&mean);
        let principal: Vec<C64> = (0..n).map(|r| vecs[(r, n - 1)]).collect();
        out.push(theta_from_factor(&rank_one_factor(&principal)));
        for i in 0..n {
            let e: Vec<C64> = (0..n).map(|r| C64::new(if r == i { 1.0 } else { 0.0 }, 0.0)).collect();
            out.push(theta_from_factor(&rank_one_factor(&e)));
        }
        out.truncate(self.opts.restarts.max(1));
        let mut k = 0u64;
        while out.len() < self.opts.restarts {
            let mut rng = seed.index(k).rng();
            k += 1;
            let t: Vec<f64> = (0..theta_dim(n)).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            out.push(normalized(t));
        }
        out
    }

    fn maximize_rate(&self, start: &[f64]) -> Candidate {
        let m = nelder_mead(|t| -self.rate(t), start, &self.nm_opts(), None);
        let theta = normalized(m.x);
        let rate = self.rate(&theta);
        let start_rate = self.rate(start);
        if start_rate >= rate {
            Candidate { theta: start.to_vec(), rate: start_rate }
        } else {
            Candidate { theta, rate }
        }
    }

    /// Minimizes the outage at `rate` from each start, stopping as soon as
    /// some covariance reaches `target`. With a smoothing width the search
    /// runs on the logistic relaxation and is scored on the exact count;
    /// without one it runs on the exact (piecewise constant) count. Returns
    /// the best parameters and their exact outage.
    fn minimize_outage(&self, rate: f64, starts: &[Vec<f64>], target: Option<f64>) -> (Vec<f64>, f64) {
        let exact = |t: &[f64]| self.pool.weight_below(&self.values(t), rate);
        let hit = |p: f64| target.is_some_and(|t| p <= t + WEIGHT_TOL);
        let mut best: Option<(Vec<f64>, f64)> = None;
        let consider = |t: Vec<f64>, p: f64, best: &mut Option<(Vec<f64>, f64)>| {
            if best.as_ref().is_none_or(|(_, b)| p < *b) {
                *best = Some((t, p));
            }
        };
        for s in starts {
            let p0 = exact(s);
            consider(s.clone(), p0, &mut best);
            if hit(p0) {
                break;
            }
            match self.opts.smoothing_width {
                Some(width) => {
                    let mut found: Option<(Vec<f64>, f64)> = None;
                    let m = nelder_mead(
                        |t| {
                            let v = self.values(t);
                            let p = self.pool.weight_below(&v, rate);
                            if hit(p) {
                                found = Some((t.to_vec(), p));
                                return -1.0;
                            }
                            self.pool.smoothed_below(&v, rate, width)
                        },
                        s,
                        &self.nm_opts(),
                        Some(-0.5),
                    );
                    if let Some((t, p)) = found {
                        consider(normalized(t), p, &mut best);
                        break;
                    }
                    let t = normalized(m.x);
                    let p = exact(&t);
                    consider(t, p, &mut best);
                }
                None => {
                    let stop = target.map(|t| t + WEIGHT_TOL);
                    let m = nelder_mead(exact, s, &self.nm_opts(), stop);
                    let t = normalized(m.x);
                    let p = exact(&t);
                    let done = hit(p);
                    consider(t, p, &mut best);
                    if done {
                        break;
                    }
                }
            }
        }
        best.expect("at least one start")
    }
}

fn isotropic_theta(n: usize) -> Vec<f64> {
    normalized(vec![1.0; n].into_iter().chain(vec![0.0; n * n - n]).collect())
}

/// Inner infimum: approximately minimizes `P[f(G,Q) < rate]` over `Q_P`.
pub fn min_outage_over_q(
    pool: &StatePool,
    rate: f64,
    spec: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
) -> Result<(InputCovariance, f64)> {
    spec.validate()?;
    let search = Search { pool, power: spec.power, sigma_sq: spec.sigma_sq, eta: spec.eta, opts: *opts };
    let n = pool.n_tx();
    if n == 1 {
        let q = InputCovariance::from_diag(&[spec.power], spec.power)?;
        let (p, _) = outage_probability(pool, &q, rate, spec)?;
        return Ok((q, p));
    }
    let starts = search.starts(seed.label("starts"));
    let (theta, p) = search.minimize_outage(rate, &starts, Some(0.0));
    Ok((covariance_from_theta(&theta, n, spec.power)?, p))
}

fn solve(
    pool: &StatePool,
    spec: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
    carried: &[Vec<f64>],
) -> Result<(CapacityEstimate, Vec<Vec<f64>>)> {
    spec.validate()?;
    let n = pool.n_tx();
    let noise = spec.noise();
    let search = Search { pool, power: spec.power, sigma_sq: spec.sigma_sq, eta: spec.eta, opts: *opts };
    let wf = pool.waterfilling_values(spec.power, &noise)?;
    let upper = pool.quantile(&wf, spec.eta);
    let ci = pool.ci_half_width(spec.eta, spec.confidence);

    if n == 1 {
        // f is increasing in the scalar Q, so Q = [P] is optimal for every rate
        let theta = isotropic_theta(1);
        let value = search.rate(&theta);
        let est = CapacityEstimate {
            value_bits: value,
            lower_bracket: value,
            upper_bracket: value.max(upper),
            argmax_q: covariance_from_theta(&theta, 1, spec.power)?,
            diagnostics: CapacityDiagnostics {
                samples: pool.len(),
                exact_pool: pool.is_exact(),
                restarts: 1,
                ci_half_width: ci,
                quantile_value: value,
                bisection_value: value,
                bisection_iters: 0,
                waterfilling_quantile: upper,
                routes_disagree: false,
            },
        };
        return Ok((est, vec![theta]));
    }

    let mut starts = search.starts(seed.label("starts"));
    starts.extend(carried.iter().cloned());
    let restarts = starts.len();
    let mut cands: Vec<Candidate> = starts.par_iter().map(|s| search.maximize_rate(s)).collect();
    let best_of = |cs: &[Candidate]| -> usize {
        (0..cs.len()).max_by(|&a, &b| cs[a].rate.total_cmp(&cs[b].rate).then(b.cmp(&a))).unwrap()
    };
    let quantile_value = cands[best_of(&cands)].rate;

    let mut lo = quantile_value;
    let mut hi = upper.max(lo);
    let mut iters = 0;
    while hi - lo > opts.bisection_tol && iters < opts.max_bisection_iters {
        iters += 1;
        let mid = 0.5 * (lo + hi);
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| cands[b].rate.total_cmp(&cands[a].rate).then(a.cmp(&b)));
        let from: Vec<Vec<f64>> = order.iter().take(opts.bisection_starts.max(1)).map(|&i| cands[i].theta.clone()).collect();
        let (theta, p) = search.minimize_outage(mid, &from, Some(spec.eta));
        if p <= spec.eta + WEIGHT_TOL {
            let r = search.rate(&theta);
            debug_assert!(r >= mid - 1e-12);
            lo = lo.max(r);
            cands.push(Candidate { theta, rate: r });
            if lo >= hi {
                hi = upper.max(lo);
            }
        } else {
            hi = mid;
        }
    }
    let best = best_of(&cands);
    let value = cands[best].rate;
    let est = CapacityEstimate {
        value_bits: value,
        lower_bracket: value,
        upper_bracket: hi.max(value),
        argmax_q: covariance_from_theta(&cands[best].theta, n, spec.power)?,
        diagnostics: CapacityDiagnostics {
            samples: pool.len(),
            exact_pool: pool.is_exact(),
            restarts,
            ci_half_width: ci,
            quantile_value,
            bisection_value: lo,
            bisection_iters: iters,
            waterfilling_quantile: upper,
            routes_disagree: (lo - quantile_value).abs() > opts.bisection_tol,
        },
    };
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].rate.total_cmp(&cands[a].rate).then(a.cmp(&b)));
    let keep = order.iter().take(opts.carried.max(1)).map(|&i| cands[i].theta.clone()).collect();
    Ok((est, keep))
}

/// η-outage capacity on a pool drawn from `ensemble` under `seed`.
pub fn eta_outage_capacity(
    ensemble: &FadingEnsemble,
    spec: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
) -> Result<CapacityEstimate> {
    spec.validate()?;
    let pool = StatePool::from_ensemble(ensemble, spec.n_state_samples, seed.label("pool"))?;
    eta_outage_capacity_on_pool(&pool, spec, opts, seed)
}

/// η-outage capacity on a given pool.
pub fn eta_outage_capacity_on_pool(
    pool: &StatePool,
    spec: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
) -> Result<CapacityEstimate> {
    Ok(solve(pool, spec, opts, seed.label("search"), &[])?.0)
}

/// Capacities along an η grid on one pool. Each solve is seeded with all
/// covariances found so far, so the curve is nondecreasing when `etas` is.
pub fn capacity_curve_eta(
    pool: &StatePool,
    etas: &[f64],
    base: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
) -> Result<Vec<CapacityEstimate>> {
    let mut carried = Vec::new();
    let mut out = Vec::with_capacity(etas.len());
    for (i, &eta) in etas.iter().enumerate() {
        let (est, cands) = solve(pool, &base.with_eta(eta), opts, seed.label("eta-curve").index(i as u64), &carried)?;
        carried = cands;
        out.push(est);
    }
    Ok(out)
}

/// Capacities along a power grid on one pool, carrying covariance shapes
/// forward (a shape at higher power is the scaled-up covariance).
pub fn capacity_curve_power(
    pool: &StatePool,
    powers: &[f64],
    base: &OutageSpec,
    opts: &SearchOptions,
    seed: SeedTree,
) -> Result<Vec<CapacityEstimate>> {
    let mut carried = Vec::new();
    let mut out = Vec::with_capacity(powers.len());
    for (i, &p) in powers.iter().enumerate() {
        let (est, cands) = solve(pool, &base.with_power(p), opts, seed.label("power-curve").index(i as u64), &carried)?;
        carried = cands;
        out.push(est);
    }
    Ok(out)
}

/// Where the gain-magnitude quantile of a scalar channel comes from.
pub enum GainQuantileSource<'a> {
    /// Empirical quantile of `|g|` over a 1×1 pool.
    Pool(&'a StatePool),
    /// `P[|G| < gamma] = 1 - exp(-gamma^2 / scale^2)`.
    Rayleigh { scale: f64 },
    /// Any CDF of `|G|`, inverted numerically.
    Cdf(&'a dyn Fn(f64) -> f64),
}

/// `gamma_0 = sup{gamma : P[|G| < gamma] <= eta}`.
pub fn gain_quantile(source: &GainQuantileSource<'_>, eta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) {
        return Err(invalid(format!("eta must lie in [0, 1), got {eta}")));
    }
    match source {
        GainQuantileSource::Pool(pool) => {
            if pool.n_tx() != 1 || pool.n_rx() != 1 {
                return Err(Error::Dimension("scalar capacity needs a 1x1 ensemble".into()));
            }
            let mags: Vec<f64> = pool.states().iter().map(|s| s.matrix()[(0, 0)].norm()).collect();
            Ok(pool.quantile(&mags, eta))
        }
        GainQuantileSource::Rayleigh { scale } => {
            if !(*scale > 0.0) {
                return Err(invalid("Rayleigh scale must be positive"));
            }
            Ok(scale * (-(-eta).ln_1p()).sqrt())
        }
        GainQuantileSource::Cdf(cdf) => {
            // the CDF is nondecreasing; find the crossing of eta by bisection
            let mut hi = 1.0;
            let mut guard = 0;
            while cdf(hi) <= eta {
                hi *= 2.0;
                guard += 1;
                if guard > 1100 {
                    return Err(invalid("CDF never exceeds eta"));
                }
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) <= eta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
    }
}

/// Scalar closed form `log2(1 + P gamma_0^2 / sigma^2)`.
pub fn siso_outage_capacity(source: &GainQuantileSource<'_>, eta: f64, power: f64, noise: &NoiseSpec) -> Result<f64> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(invalid(format!("power must be positive, got {power}")));
    }
    let g0 = gain_quantile(source, eta)?;
    Ok((1.0 + power * g0 * g0 / noise.sigma_sq()).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{log_det_mi, ChannelState};

    fn noise1() -> NoiseSpec {
        NoiseSpec::new(1.0).unwrap()
    }

    fn five_point_pool() -> StatePool {
        // f = log2(1 + g^2) with Q = [1]; choose g so f = 1..5
        let states = (1..=5).map(|k| ChannelState::scalar(((2f64).powi(k) - 1.0).sqrt())).collect();
        StatePool::weighted(states, vec![0.2; 5]).unwrap()
    }

    #[test]
    fn five_point_quantile() {
        let pool = five_point_pool();
        let q = InputCovariance::from_diag(&[1.0], 1.0).unwrap();
        let r = rate_for_q(&pool, &q, 0.25, &noise1()).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert!((rate_for_q(&pool, &q, 0.0, &noise1()).unwrap() - 1.0).abs() < 1e-12);
        // the same law as an unweighted pool
        let uni = StatePool::from_states(pool.states().to_vec()).unwrap();
        assert!((rate_for_q(&uni, &q, 0.25, &noise1()).unwrap() - 2.0).abs() < 1e-12);
        assert!((rate_for_q(&uni, &q, 0.2, &noise1()).unwrap() - 2.0).abs() < 1e-12);
        assert!((rate_for_q(&pool, &q, 0.2, &noise1()).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_outage_is_zero_or_one() {
        let g = ChannelState::from_real(2, 2, &[1.0, 0.3, -0.2, 0.7]).unwrap();
        let pool = StatePool::from_ensemble(&FadingEnsemble::point_mass(g.clone()), 10, SeedTree::new(0)).unwrap();
        let q = InputCovariance::isotropic(2, 1.0).unwrap();
        let spec = OutageSpec::new(0.1, 1.0, 1.0).unwrap();
        let f = log_det_mi(&g, &q, &noise1()).unwrap();
        assert_eq!(outage_probability(&pool, &q, f, &spec).unwrap().0, 0.0);
        assert_eq!(outage_probability(&pool, &q, f - 0.1, &spec).unwrap().0, 0.0);
        assert_eq!(outage_probability(&pool, &q, f + 1.0, &spec).unwrap().0, 1.0);
        for eta in [0.0, 0.5, 0.99] {
            assert!((rate_for_q(&pool, &q, eta, &noise1()).unwrap() - f).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_route_matches_log_det() {
        let ens = FadingEnsemble::rayleigh(3, 2, 1.3).unwrap();
        let pool = StatePool::from_ensemble(&ens, 50, SeedTree::new(4)).unwrap();
        let q = InputCovariance::new(
            CMatrix::from_row_slice(2, 2, &[C64::new(0.7, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(0.3, 0.0)]),
            1.0,
        )
        .unwrap();
        let noise = NoiseSpec::new(0.6).unwrap();
        let fast = pool.f_values(&q, &noise).unwrap();
        for (s, v) in pool.states().iter().zip(fast) {
            assert!((log_det_mi(s, &q, &noise).unwrap() - v).abs() < 1e-10);
        }
    }

    #[test]
    fn rayleigh_scalar_outage_matches_exponential_cdf() {
        let ens = FadingEnsemble::rayleigh(1, 1, 1.0).unwrap();
        let spec = OutageSpec::new(0.1, 1.0, 1.0).unwrap().with_samples(100_000);
        let pool = StatePool::from_ensemble(&ens, spec.n_state_samples, SeedTree::new(9)).unwrap();
        let q = InputCovariance::from_diag(&[1.0], 1.0).unwrap();
        let (p, half) = outage_probability(&pool, &q, 1.0, &spec).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((p - exact).abs() <= half, "{p} vs {exact} +- {half}");
        let (qq, pm) = min_outage_over_q(&pool, 1.0, &spec, &SearchOptions::default(), SeedTree::new(1)).unwrap();
        assert_eq!(qq.matrix()[(0, 0)].re, 1.0);
        assert_eq!(pm, p);
    }

    #[test]
    fn point_mass_capacity_is_waterfilling() {
        let g = ChannelState::diag(&[2.0, 1.0]);
        let ens = FadingEnsemble::point_mass(g);
        for eta in [0.0, 0.3, 0.9] {
            let spec = OutageSpec::new(eta, 1.0, 1.0).unwrap();
            let est = eta_outage_capacity(&ens, &spec, &SearchOptions::default(), SeedTree::new(3)).unwrap();
            let wf = 4.5f64.log2() + 1.125f64.log2();
            assert!((est.value_bits - wf).abs() < 0.02, "{}", est.value_bits);
            assert!(est.lower_bracket <= est.value_bits && est.value_bits <= est.upper_bracket);
        }
    }

    #[test]
    fn min_outage_point_mass_reaches_waterfilling() {
        let g = ChannelState::from_real(2, 2, &[1.5, 0.4, 0.2, 0.6]).unwrap();
        let (_, wf) = crate::channel::waterfilling_capacity(&g, 2.0, &noise1()).unwrap();
        let pool = StatePool::from_states(vec![g.clone()]).unwrap();
        let spec = OutageSpec::new(0.0, 2.0, 1.0).unwrap();
        let (q, p) = min_outage_over_q(&pool, wf - 0.005, &spec, &SearchOptions::default(), SeedTree::new(2)).unwrap();
        assert_eq!(p, 0.0);
        assert!(log_det_mi(&g, &q, &noise1()).unwrap() >= wf - 0.01);
        assert!(q.trace() <= 2.0 + MATRIX_TOL);
    }

    #[test]
    fn siso_closed_form() {
        let v = siso_outage_capacity(&GainQuantileSource::Rayleigh { scale: 1.0 }, 0.1, 10.0, &noise1()).unwrap();
        let expected = (1.0 + 10.0 * -(0.9f64.ln())).log2();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 1.038).abs() < 1e-3);
        let cdf = |g: f64| 1.0 - (-g * g).exp();
        let w = siso_outage_capacity(&GainQuantileSource::Cdf(&cdf), 0.1, 10.0, &noise1()).unwrap();
        assert!((v - w).abs() < 1e-9);
        let pm = StatePool::from_states(vec![ChannelState::scalar(0.8)]).unwrap();
        for eta in [0.0, 0.4] {
            let x = siso_outage_capacity(&GainQuantileSource::Pool(&pm), eta, 3.0, &noise1()).unwrap();
            assert!((x - (1.0 + 3.0 * 0.64f64).log2()).abs() < 1e-12);
        }
        let mut last = f64::MIN;
        for eta in [0.1, 0.2, 0.5] {
            let x = siso_outage_capacity(&GainQuantileSource::Rayleigh { scale: 1.0 }, eta, 10.0, &noise1()).unwrap();
            assert!(x > last);
            last = x;
        }
        let wide = StatePool::from_states(vec![ChannelState::zeros(2, 1)]).unwrap();
        assert!(siso_outage_capacity(&GainQuantileSource::Pool(&wide), 0.1, 1.0, &noise1()).is_err());
    }

    #[test]
    fn finite_support_zero_outage_is_maxmin() {
        let states = vec![ChannelState::diag(&[2.0, 0.5]), ChannelState::diag(&[0.5, 2.0]), ChannelState::diag(&[1.0, 1.0])];
        let ens = FadingEnsemble::uniform_support(states.clone()).unwrap();
        let spec = OutageSpec::new(0.0, 2.0, 1.0).unwrap();
        let est = eta_outage_capacity(&ens, &spec, &SearchOptions::default(), SeedTree::new(5)).unwrap();
        // brute force over diagonal Q
        let mut best = f64::MIN;
        for k in 0..=2000 {
            let a = 2.0 * k as f64 / 2000.0;
            let q = InputCovariance::from_diag(&[a, 2.0 - a], 2.0).unwrap();
            let m = states.iter().map(|g| log_det_mi(g, &q, &noise1()).unwrap()).fold(f64::MAX, f64::min);
            best = best.max(m);
        }
        assert!(est.value_bits >= best - 1e-3, "{} vs {best}", est.value_bits);
        for g in &states {
            let (_, wf) = crate::channel::waterfilling_capacity(g, 2.0, &noise1()).unwrap();
            assert!(est.value_bits <= wf + 1e-9);
        }
    }

    #[test]
    fn wilson_shrinks_with_n() {
        let a = wilson_half_width(0.1, 100, 0.95);
        let b = wilson_half_width(0.1, 10_000, 0.95);
        assert!(a > b && b > 0.0);
        assert!(wilson_upper(0.0, 1000, 0.95) > 0.0);
    }
}
