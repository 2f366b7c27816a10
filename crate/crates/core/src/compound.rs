//! Compound Gaussian MIMO channels: random Gaussian codebooks, the
//! information-density threshold decoder, ε-nets of the operator-norm ball,
//! the closed-form error bounds behind the achievability argument, and Monte
//! Carlo harnesses that check each bound against simulation.
//!
//! All information quantities are in bits.

use std::f64::consts::LN_2;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, log_det_mi, operator_norm, ChannelState, InputCovariance, NoiseSpec, SignalBlock};
use crate::error::{invalid, Error, Result};
use crate::linalg::{log2_det_hpd, sample_cn, CMatrix, C64};
use crate::outage::wilson_half_width;
use crate::rng::SeedTree;

/// A finite family of channel states inside the operator-norm ball of
/// radius `a`.
#[derive(Debug, Clone)]
pub struct CompoundFamily {
    states: Vec<ChannelState>,
    norm_bound_a: f64,
    noise: NoiseSpec,
}

impl CompoundFamily {
    pub fn new(states: Vec<ChannelState>, norm_bound_a: f64, noise: NoiseSpec) -> Result<Self> {
        if !(norm_bound_a > 0.0 && norm_bound_a.is_finite()) {
            return Err(invalid(format!("norm bound must be positive, got {norm_bound_a}")));
        }
        if let Some(first) = states.first() {
            if states.iter().any(|s| s.dims() != first.dims()) {
                return Err(Error::Dimension("family states disagree on dimensions".into()));
            }
        }
        for s in &states {
            let nrm = operator_norm(s);
            if nrm > norm_bound_a * (1.0 + 1e-12) {
                return Err(invalid(format!("family member has norm {nrm} above the bound {norm_bound_a}")));
            }
        }
        Ok(CompoundFamily { states, norm_bound_a, noise })
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound_a
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    /// `min_g f(g, q)` over the family.
    pub fn min_rate(&self, q: &InputCovariance) -> Result<f64> {
        let mut m = f64::INFINITY;
        for g in &self.states {
            m = m.min(log_det_mi(g, q, &self.noise)?);
        }
        Ok(m)
    }
}

/// `i_g(t^n, z^n) = log2 W_g(z^n | t^n) / q(z^n)` with `q` the product
/// `CN(0, g Q g^H + sigma^2 I)` density.
pub fn info_density(g: &ChannelState, q: &InputCovariance, t: &SignalBlock, z: &SignalBlock, noise: &NoiseSpec) -> Result<f64> {
    if t.len() != z.len() {
        return Err(Error::Dimension("input and output blocks differ in length".into()));
    }
    if t.dim() != g.n_tx() || z.dim() != g.n_rx() {
        return Err(Error::Dimension("blocks do not match the channel dimensions".into()));
    }
    let s2 = noise.sigma_sq();
    let gm = g.matrix();
    let theta = gm * q.matrix() * gm.adjoint() + CMatrix::identity(g.n_rx(), g.n_rx()).scale(s2);
    let theta_inv = theta
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("output covariance is not positive definite".into()))?
        .inverse();
    let f = log_det_mi(g, q, noise)?;
    let resid = z.data() - gm * t.data();
    let mut phi = 0.0;
    for i in 0..z.len() {
        let zi = z.data().column(i);
        let quad = (zi.adjoint() * &theta_inv * zi)[(0, 0)].re;
        phi += quad - resid.column(i).norm_squared() / s2;
    }
    Ok(z.len() as f64 * f + phi / LN_2)
}

/// `P[i_g <= E i_g - n delta] <= 2^{-(n N_R / (2 ln 2)) [sqrt(1 + (ln2 delta)^2 / N_R^2) - 1]}`.
pub fn chernoff_info_density_bound(n: usize, n_rx: usize, delta: f64) -> f64 {
    (-chernoff_exponent(n_rx, delta) * n as f64).exp2()
}

/// Per-symbol exponent of [`chernoff_info_density_bound`].
pub fn chernoff_exponent(n_rx: usize, delta: f64) -> f64 {
    let nr = n_rx as f64;
    nr / (2.0 * LN_2) * ((1.0 + (LN_2 * delta).powi(2) / (nr * nr)).sqrt() - 1.0)
}

/// `P[sum ||X_i||^2 >= n (M + delta)] <= [(1 + delta/M) 2^{-delta/(ln2 M)}]^n`
/// for i.i.d. `CN(0, O)` with `tr O <= M`.
pub fn power_overflow_bound(n: usize, trace_cap_m: f64, delta: f64) -> f64 {
    (-power_overflow_exponent(trace_cap_m, delta) * n as f64).exp2()
}

/// Per-symbol exponent of [`power_overflow_bound`].
pub fn power_overflow_exponent(trace_cap_m: f64, delta: f64) -> f64 {
    let r = delta / trace_cap_m;
    r / LN_2 - (1.0 + r).log2()
}

/// `log2` of the likelihood-ratio bound
/// `(2n / (ln2 sigma^2)) [sqrt(P rho) + a P] ||g - g_hat||`.
pub fn likelihood_ratio_log2_bound(g: &ChannelState, g_hat: &ChannelState, n: usize, power: f64, rho: f64, a: f64, sigma_sq: f64) -> f64 {
    let dist = operator_norm(&ChannelState::new(g.matrix() - g_hat.matrix()).expect("finite difference"));
    2.0 * n as f64 / (LN_2 * sigma_sq) * ((power * rho).sqrt() + a * power) * dist
}

/// `W_g(z^n|t^n) / W_g_hat(z^n|t^n)` is at most this for blocks with average
/// powers at most `P` and `rho`.
pub fn likelihood_ratio_bound(g: &ChannelState, g_hat: &ChannelState, n: usize, power: f64, rho: f64, a: f64, sigma_sq: f64) -> f64 {
    likelihood_ratio_log2_bound(g, g_hat, n, power, rho, a, sigma_sq).exp2()
}

/// `rho = 2 a^2 P + 2 N_R sigma^2 + 2` and the per-symbol factor
/// `(1 + 1/(sigma^2 N_R)) 2^{-1/(ln2 sigma^2 N_R)}` bounding
/// `P[(1/n) sum ||z_i||^2 >= rho]` as `factor^n`.
pub fn output_power_threshold(a: f64, power: f64, n_rx: usize, sigma_sq: f64) -> (f64, f64) {
    let nr = n_rx as f64;
    let rho = 2.0 * a * a * power + 2.0 * nr * sigma_sq + 2.0;
    let s = sigma_sq * nr;
    (rho, (1.0 + 1.0 / s) * (-1.0 / (LN_2 * s)).exp2())
}

/// `beta_hat = beta / (ln2 P_hat) - log2(1 + beta / P_hat)` with `P_hat = P - beta`.
pub fn beta_hat(power: f64, beta: f64) -> f64 {
    power_overflow_exponent(power - beta, beta)
}

/// The four terms of the compound Feinstein bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeinsteinTerms {
    pub codebook: f64,
    pub cross: f64,
    pub overflow: f64,
    pub tails: f64,
}

impl FeinsteinTerms {
    pub fn total(&self) -> f64 {
        self.codebook + self.cross + self.overflow + self.tails
    }
}

/// `|G| tau 2^{-alpha} + |G|^2 2^{-delta} + |G| P[T^n not in E_n] + sum_g P[i_g <= alpha + delta]`
/// given the overflow probability and the per-state tail probabilities.
pub fn feinstein_compound_bound(family_size: usize, tau: f64, alpha: f64, delta: f64, overflow_prob: f64, tail_probs: &[f64]) -> FeinsteinTerms {
    if family_size == 0 {
        return FeinsteinTerms { codebook: 0.0, cross: 0.0, overflow: 0.0, tails: 0.0 };
    }
    let k = family_size as f64;
    FeinsteinTerms {
        codebook: k * tau * (-alpha).exp2(),
        cross: k * k * (-delta).exp2(),
        overflow: k * overflow_prob,
        tails: tail_probs.iter().sum(),
    }
}

/// Code parameters derived from a target rate and a margin `theta`, with
/// `2 theta = max_Q min_g f - R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeinsteinSetup {
    pub family_size: usize,
    pub n: usize,
    pub n_rx: usize,
    pub rate: f64,
    pub theta: f64,
    pub power: f64,
    pub beta: f64,
}

impl FeinsteinSetup {
    /// `floor(2^{nR})`.
    pub fn tau(&self) -> f64 {
        (self.n as f64 * self.rate).exp2().floor()
    }

    /// `n (R + theta/8)`.
    pub fn alpha(&self) -> f64 {
        self.n as f64 * (self.rate + self.theta / 8.0)
    }

    /// `n theta / 8`.
    pub fn delta(&self) -> f64 {
        self.n as f64 * self.theta / 8.0
    }

    /// Decoding threshold `alpha + delta = n (R + theta/4)`.
    pub fn threshold(&self) -> f64 {
        self.alpha() + self.delta()
    }

    pub fn beta_hat(&self) -> f64 {
        beta_hat(self.power, self.beta)
    }

    pub fn terms(&self) -> FeinsteinTerms {
        let overflow = (-(self.n as f64) * self.beta_hat()).exp2();
        let tail = chernoff_info_density_bound(self.n, self.n_rx, self.theta / 4.0);
        let tails = vec![tail; self.family_size];
        feinstein_compound_bound(self.family_size, self.tau(), self.alpha(), self.delta(), overflow, &tails)
    }

    pub fn bound(&self) -> f64 {
        self.terms().total()
    }

    /// The closed display `(|G| + |G|^2) 2^{-n theta/8} + |G| 2^{-n beta_hat} + |G| 2^{-n c_1}`,
    /// which uses `2^{nR}` in place of `tau` and so is never smaller.
    pub fn closed_form(&self) -> f64 {
        let k = self.family_size as f64;
        let n = self.n as f64;
        let c1 = chernoff_exponent(self.n_rx, self.theta / 4.0);
        (k + k * k) * (-n * self.theta / 8.0).exp2() + k * (-n * self.beta_hat()).exp2() + k * (-n * c1).exp2()
    }
}

/// A non-singular covariance close to `q`: `(1-s) q + s (P/2)/N_T I` for the
/// largest `s` in `2^-1 .. 2^-30` whose family-minimum rate loss is at most
/// `epsilon`. Non-singular `q` with trace below `P` is returned as is.
pub fn perturb_to_nonsingular(q: &InputCovariance, epsilon: f64, family: &CompoundFamily) -> Result<InputCovariance> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let power = q.power_budget();
    if q.is_nonsingular() && q.trace() < power {
        return Ok(q.clone());
    }
    let n = q.n_tx();
    let base = if family.is_empty() { 0.0 } else { family.min_rate(q)? };
    let iso = CMatrix::identity(n, n).scale(power / 2.0 / n as f64);
    for k in 1..=30 {
        let s = (-(k as f64)).exp2();
        let m = q.matrix().scale(1.0 - s) + iso.scale(s);
        let cand = InputCovariance::new(m, power)?;
        let rate = if family.is_empty() { 0.0 } else { family.min_rate(&cand)? };
        if rate >= base - epsilon && cand.min_eigenvalue() > 0.0 && cand.trace() < power {
            return Ok(cand);
        }
    }
    Err(Error::PerturbationFailed { epsilon })
}

/// Generator covariance for the random code: a non-singular perturbation of
/// `q` scaled to trace `P - beta`. Fails when it does not keep every family
/// member at or above `min_rate`.
pub fn generator_covariance(q: &InputCovariance, family: &CompoundFamily, beta: f64, epsilon: f64, min_rate: f64) -> Result<InputCovariance> {
    let power = q.power_budget();
    if !(beta > 0.0 && beta < power) {
        return Err(invalid(format!("power back-off must lie in (0, P), got {beta}")));
    }
    let q0 = perturb_to_nonsingular(q, epsilon, family)?;
    let q1 = q0.rescaled(power - beta, power)?;
    let worst = family.min_rate(&q1)?;
    if worst < min_rate {
        return Err(invalid(format!(
            "generator covariance reaches only {worst:.4} bits on the family, below the required {min_rate:.4}"
        )));
    }
    Ok(q1)
}

/// Codewords drawn i.i.d. `CN(0, Q_1)` per symbol, each redrawn until its
/// average power is at most the cap.
#[derive(Debug, Clone)]
pub struct GaussianCodebook {
    codewords: Vec<SignalBlock>,
    generator: InputCovariance,
    block_length: usize,
    power_cap: f64,
    raw_draws: usize,
}

impl GaussianCodebook {
    pub fn generate<R: Rng + ?Sized>(generator: &InputCovariance, tau: usize, n: usize, power_cap: f64, rng: &mut R) -> Result<Self> {
        if !generator.is_nonsingular() {
            return Err(Error::Singular("generator covariance must be non-singular".into()));
        }
        if tau == 0 || n == 0 {
            return Err(invalid("codebook size and block length must be positive"));
        }
        let mut codewords = Vec::with_capacity(tau);
        let mut raw = 0usize;
        while codewords.len() < tau {
            raw += 1;
            if raw > 1000 * tau + 1000 {
                return Err(invalid("power cap rejects almost every Gaussian draw"));
            }
            let t = SignalBlock::gaussian(generator, n, rng);
            if t.satisfies_power(power_cap) {
                codewords.push(t);
            }
        }
        Ok(GaussianCodebook { codewords, generator: generator.clone(), block_length: n, power_cap, raw_draws: raw })
    }

    /// Codebook with explicit codewords, for tests and small demos.
    pub fn from_codewords(codewords: Vec<SignalBlock>, generator: InputCovariance, power_cap: f64) -> Result<Self> {
        let n = codewords.first().map(|c| c.len()).ok_or_else(|| invalid("empty codebook"))?;
        if codewords.iter().any(|c| c.len() != n || c.dim() != generator.n_tx()) {
            return Err(Error::Dimension("codewords disagree in shape".into()));
        }
        if codewords.iter().any(|c| !c.satisfies_power(power_cap)) {
            return Err(invalid("codeword violates the power cap"));
        }
        let raw = codewords.len();
        Ok(GaussianCodebook { codewords, generator, block_length: n, power_cap, raw_draws: raw })
    }

    pub fn codewords(&self) -> &[SignalBlock] {
        &self.codewords
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn generator(&self) -> &InputCovariance {
        &self.generator
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn power_cap(&self) -> f64 {
        self.power_cap
    }

    /// Fraction of raw Gaussian draws that were discarded.
    pub fn rejection_rate(&self) -> f64 {
        1.0 - self.codewords.len() as f64 / self.raw_draws as f64
    }
}

/// Per-member quantities of the threshold decoder.
#[derive(Debug, Clone)]
struct MemberDensity {
    g: CMatrix,
    theta_inv: CMatrix,
    /// `f(g, Q_1)`.
    rate: f64,
    gram: CMatrix,
}

/// Threshold decoder: message `l` is declared iff it is the only codeword
/// with `max_g i_g(t_l, z) > alpha + delta` over the family.
#[derive(Debug, Clone)]
pub struct ThresholdDecoderSpec {
    alpha: f64,
    delta: f64,
    members: Vec<MemberDensity>,
    noise: NoiseSpec,
    n_rx: usize,
    n_tx: usize,
}

impl ThresholdDecoderSpec {
    pub fn new(family: &CompoundFamily, generator: &InputCovariance, alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && delta > 0.0) {
            return Err(invalid("alpha and delta must be positive"));
        }
        let first = family.states().first().ok_or_else(|| invalid("decoder needs a non-empty family"))?;
        let noise = family.noise();
        let mut members = Vec::with_capacity(family.len());
        for g in family.states() {
            let gm = g.matrix().clone();
            let theta = &gm * generator.matrix() * gm.adjoint() + CMatrix::identity(g.n_rx(), g.n_rx()).scale(noise.sigma_sq());
            let theta_inv = theta
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Singular("output covariance is not positive definite".into()))?
                .inverse();
            let rate = log2_det_hpd(&theta) - g.n_rx() as f64 * noise.sigma_sq().log2();
            let gram = gm.adjoint() * &gm;
            members.push(MemberDensity { g: gm, theta_inv, rate, gram });
        }
        Ok(ThresholdDecoderSpec { alpha, delta, members, noise, n_rx: first.n_rx(), n_tx: first.n_tx() })
    }

    pub fn threshold(&self) -> f64 {
        self.alpha + self.delta
    }

    /// Decodes `z`; `None` on a miss or an ambiguity. Scans codewords in
    /// index order; `hint`, when given, is tested first, which only changes
    /// how early a decision is reached, not the decision itself.
    pub fn decode(&self, codebook: &PreparedCodebook, z: &SignalBlock, hint: Option<usize>) -> Option<usize> {
        let n = z.len();
        let zc = time_major(z);
        let zz: f64 = zc.iter().map(|v| v.norm_sqr()).sum();
        // sum_i z_i^H Theta^{-1} z_i per member
        let quad: Vec<f64> = self
            .members
            .iter()
            .map(|m| {
                let mut acc = 0.0;
                for i in 0..n {
                    let zi = &zc[i * self.n_rx..(i + 1) * self.n_rx];
                    for r in 0..self.n_rx {
                        let s: C64 = zi.iter().enumerate().map(|(c, &v)| m.theta_inv[(r, c)] * v).sum();
                        acc += (zi[r].conj() * s).re;
                    }
                }
                acc
            })
            .collect();
        let th = self.threshold();
        let passes = |l: usize| -> bool {
            let cw = &codebook.words[l];
            // cross[c * n_rx + r] = sum_i t_i[c] conj(z_i[r])
            let mut cross = vec![C64::new(0.0, 0.0); self.n_tx * self.n_rx];
            for i in 0..n {
                let ti = &cw.data[i * self.n_tx..(i + 1) * self.n_tx];
                let zi = &zc[i * self.n_rx..(i + 1) * self.n_rx];
                for c in 0..self.n_tx {
                    for r in 0..self.n_rx {
                        cross[c * self.n_rx + r] += ti[c] * zi[r].conj();
                    }
                }
            }
            self.members.iter().zip(&quad).any(|(m, &qd)| {
                let mut lin = C64::new(0.0, 0.0);
                for r in 0..self.n_rx {
                    for c in 0..self.n_tx {
                        lin += m.g[(r, c)] * cross[c * self.n_rx + r];
                    }
                }
                let mut energy = 0.0;
                for r in 0..self.n_tx {
                    for c in 0..self.n_tx {
                        energy += (m.gram[(r, c)] * cw.outer[(c, r)]).re;
                    }
                }
                let resid = zz - 2.0 * lin.re + energy;
                let i = n as f64 * m.rate + (qd - resid / self.noise.sigma_sq()) / LN_2;
                i > th
            })
        };
        let mut found = hint.filter(|&h| passes(h));
        for l in 0..codebook.words.len() {
            if Some(l) == hint {
                continue;
            }
            if passes(l) {
                if found.is_some() {
                    return None;
                }
                found = Some(l);
            }
        }
        found
    }
}

/// Codebook in the flat layout used by the decoder.
#[derive(Debug, Clone)]
pub struct PreparedCodebook {
    words: Vec<PreparedWord>,
}

#[derive(Debug, Clone)]
struct PreparedWord {
    /// time-major `t_i[c]`
    data: Vec<C64>,
    /// `sum_i t_i t_i^H`
    outer: CMatrix,
}

fn time_major(b: &SignalBlock) -> Vec<C64> {
    let d = b.data();
    let mut v = Vec::with_capacity(d.len());
    for i in 0..d.ncols() {
        for r in 0..d.nrows() {
            v.push(d[(r, i)]);
        }
    }
    v
}

impl PreparedCodebook {
    pub fn new(codebook: &GaussianCodebook) -> Self {
        let words = codebook
            .codewords()
            .iter()
            .map(|t| PreparedWord { data: time_major(t), outer: t.data() * t.data().adjoint() })
            .collect();
        PreparedCodebook { words }
    }
}

/// Sends codeword `msg` once over `g` and decodes it.
pub fn simulate_decode_once<R: Rng + ?Sized>(
    codebook: &GaussianCodebook,
    prepared: &PreparedCodebook,
    decoder: &ThresholdDecoderSpec,
    g: &ChannelState,
    msg: usize,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Option<usize> {
    let z = apply_channel(g, &codebook.codewords()[msg], noise, rng).expect("decoder built for this state");
    decoder.decode(prepared, &z, Some(msg))
}

/// Per-state outcome of [`simulate_compound_error`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateErrorEstimate {
    pub state_index: usize,
    pub trials: usize,
    pub errors: usize,
    /// Errors over trials, messages cycled through the codebook.
    pub error_rate: f64,
    pub ci_half_width: f64,
    /// Largest per-message error frequency among messages sent at least once.
    pub max_message_error: f64,
}

/// `z' = c z + CN(0, sigma^2 (1 - c^2))` with `c = a / ||g||`: the output of
/// `W_{c g}` built from the output of `W_g`. Identity when `||g|| <= a`.
pub fn degrade_to_ball<R: Rng + ?Sized>(g: &ChannelState, z: &SignalBlock, a: f64, noise: &NoiseSpec, rng: &mut R) -> (ChannelState, SignalBlock) {
    let nrm = operator_norm(g);
    if nrm <= a {
        return (g.clone(), z.clone());
    }
    let c = a / nrm;
    let extra = noise.sigma_sq() * (1.0 - c * c);
    let mut data = z.data().scale(c);
    for v in data.iter_mut() {
        *v += sample_cn(rng, extra);
    }
    (g.scaled(c), SignalBlock::new(data))
}

/// Sends messages `trial mod tau` over each state in `states` and decodes
/// with `decoder`. States outside the decoder's norm ball are first degraded
/// onto it.
pub fn simulate_compound_error(
    codebook: &GaussianCodebook,
    decoder: &ThresholdDecoderSpec,
    family: &CompoundFamily,
    states: &[ChannelState],
    trials: usize,
    confidence: f64,
    seed: SeedTree,
) -> Result<Vec<StateErrorEstimate>> {
    let prepared = PreparedCodebook::new(codebook);
    let noise = family.noise();
    let tau = codebook.len();
    let mut out = Vec::with_capacity(states.len());
    for (si, g) in states.iter().enumerate() {
        if g.n_tx() != codebook.generator().n_tx() || g.n_rx() != decoder.n_rx {
            return Err(Error::Dimension("state does not match the code dimensions".into()));
        }
        let base = seed.index(si as u64);
        let wrong: Vec<bool> = (0..trials)
            .into_par_iter()
            .with_min_len(8)
            .map(|k| {
                let mut rng = base.index(k as u64).rng();
                let msg = k % tau;
                let z = apply_channel(g, &codebook.codewords()[msg], &noise, &mut rng).expect("checked dims");
                let (_, z) = degrade_to_ball(g, &z, family.norm_bound(), &noise, &mut rng);
                decoder.decode(&prepared, &z, Some(msg)) != Some(msg)
            })
            .collect();
        let errors = wrong.iter().filter(|&&w| w).count();
        let mut per_msg = vec![(0usize, 0usize); tau];
        for (k, &w) in wrong.iter().enumerate() {
            per_msg[k % tau].0 += 1;
            per_msg[k % tau].1 += usize::from(w);
        }
        let max_message_error = per_msg
            .iter()
            .filter(|(s, _)| *s > 0)
            .map(|(s, e)| *e as f64 / *s as f64)
            .fold(0.0, f64::max);
        let rate = errors as f64 / trials.max(1) as f64;
        out.push(StateErrorEstimate {
            state_index: si,
            trials,
            errors,
            error_rate: rate,
            ci_half_width: wilson_half_width(rate, trials, confidence),
            max_message_error,
        });
    }
    Ok(out)
}

/// A finite set whose members are within `mu` (operator norm) of every
/// matrix in the ball `||g|| <= a`, and which itself lies in that ball.
/// Built from the real/imaginary grid of pitch `mu / sqrt(2 N_T N_R)`:
/// points of norm at most `a + mu/2` are kept and those outside the ball are
/// pulled radially onto it.
pub fn epsilon_net(norm_bound_a: f64, n_tx: usize, n_rx: usize, mu: f64, cap: usize) -> Result<Vec<ChannelState>> {
    if !(mu > 0.0 && norm_bound_a > 0.0) {
        return Err(invalid("mu and a must be positive"));
    }
    if n_tx == 0 || n_rx == 0 {
        return Err(Error::Dimension("antenna counts must be positive".into()));
    }
    if mu > norm_bound_a {
        return Ok(vec![ChannelState::zeros(n_rx, n_tx)]);
    }
    let dims = 2 * n_tx * n_rx;
    let pitch = mu / (dims as f64).sqrt();
    let k_max = (norm_bound_a / pitch).ceil() as i64;
    let side = (2 * k_max + 1) as f64;
    let raw = side.powi(dims as i32);
    if raw > cap as f64 * 64.0 {
        return Err(Error::TooLarge(format!("net grid has {raw:.3e} points (cap {cap})")));
    }
    let limit = norm_bound_a + mu / 2.0;
    let mut idx = vec![-k_max; dims];
    let mut out: Vec<ChannelState> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    loop {
        let m = CMatrix::from_fn(n_rx, n_tx, |r, c| {
            let k = 2 * (r * n_tx + c);
            C64::new(idx[k] as f64 * pitch, idx[k + 1] as f64 * pitch)
        });
        let g = ChannelState::new(m).expect("finite grid point");
        let nrm = operator_norm(&g);
        if nrm <= limit {
            let member = if nrm > norm_bound_a { g.scaled(norm_bound_a / nrm) } else { g };
            let key: Vec<u64> = member.matrix().iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
            if seen.insert(key) {
                out.push(member);
                if out.len() > cap {
                    return Err(Error::TooLarge(format!("net exceeds {cap} points")));
                }
            }
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == dims {
                return Ok(out);
            }
            idx[d] += 1;
            if idx[d] > k_max {
                idx[d] = -k_max;
                d += 1;
            } else {
                break;
            }
        }
    }
}

/// Largest codebook the Feinstein experiment will draw.
pub const MAX_EXPERIMENT_CODEBOOK: f64 = 65_536.0;

/// A random code at rate `R` on a finite family, its Feinstein bound, and the
/// simulated error on every member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeinsteinExperiment {
    pub setup: FeinsteinSetup,
    /// `max_Q min_g f(g, Q)` as found by the outage search at `eta = 0`.
    pub max_min_rate: f64,
    pub terms: FeinsteinTerms,
    pub bound: f64,
    pub tau: usize,
    pub rejection_rate: f64,
    pub per_state: Vec<StateErrorEstimate>,
    /// Whether the bound is below one, the only case where it says anything.
    pub nontrivial: bool,
    /// Every state's error rate is at most `bound + ci_half_width`.
    pub dominated: bool,
}

/// Draws a code at rate `rate` with margin `theta = (max_min - rate) / 2`
/// and back-off `beta`, and simulates `trials` transmissions per member.
pub fn run_feinstein_experiment(
    family: &CompoundFamily,
    power: f64,
    rate: f64,
    beta: f64,
    n: usize,
    trials: usize,
    seed: SeedTree,
) -> Result<FeinsteinExperiment> {
    use crate::outage::{eta_outage_capacity_on_pool, OutageSpec, SearchOptions, StatePool};
    if family.is_empty() {
        return Err(invalid("experiment needs a non-empty family"));
    }
    if !(rate > 0.0) || n == 0 {
        return Err(invalid("rate and block length must be positive"));
    }
    let pool = StatePool::from_states(family.states().to_vec())?;
    let spec = OutageSpec::new(0.0, power, family.noise().sigma_sq())?;
    let est = eta_outage_capacity_on_pool(&pool, &spec, &SearchOptions::default(), seed.label("q-star"))?;
    let q_star = est.argmax_q;
    let max_min = family.min_rate(&q_star)?;
    let theta = (max_min - rate) / 2.0;
    if !(theta > 0.0) {
        return Err(invalid(format!("rate {rate} is not below max-min rate {max_min:.4}")));
    }
    let setup = FeinsteinSetup { family_size: family.len(), n, n_rx: family.states()[0].n_rx(), rate, theta, power, beta };
    let tau = setup.tau();
    if tau > MAX_EXPERIMENT_CODEBOOK {
        return Err(Error::TooLarge(format!("codebook of {tau:.3e} words")));
    }
    let q1 = generator_covariance(&q_star, family, beta, theta / 4.0, rate + theta / 2.0)?;
    let book = GaussianCodebook::generate(&q1, tau as usize, n, power, &mut seed.label("codebook").rng())?;
    let dec = ThresholdDecoderSpec::new(family, &q1, setup.alpha(), setup.delta())?;
    let per_state = simulate_compound_error(&book, &dec, family, family.states(), trials, 0.95, seed.label("trials"))?;
    let terms = setup.terms();
    let bound = terms.total();
    let dominated = per_state.iter().all(|s| s.error_rate <= bound + s.ci_half_width);
    Ok(FeinsteinExperiment {
        setup,
        max_min_rate: max_min,
        terms,
        bound,
        tau: tau as usize,
        rejection_rate: book.rejection_rate(),
        per_state,
        nontrivial: bound < 1.0,
        dominated,
    })
}

/// One row of a bound-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bound_name: String,
    pub parameters: String,
    pub analytic: f64,
    pub empirical: f64,
    pub trials: usize,
    pub ci_half_width: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn probability(name: &str, parameters: String, analytic: f64, hits: usize, trials: usize, confidence: f64) -> Self {
        let p = hits as f64 / trials as f64;
        let half = wilson_half_width(p, trials, confidence);
        BoundCheck {
            bound_name: name.to_string(),
            parameters,
            analytic,
            empirical: p,
            trials,
            ci_half_width: half,
            pass: p <= analytic + half,
        }
    }
}

/// Counts trials satisfying `event`, one generator per trial.
fn count_hits<F: Fn(&mut crate::rng::SimRng) -> bool + Sync>(trials: usize, seed: SeedTree, event: F) -> usize {
    (0..trials)
        .into_par_iter()
        .with_min_len(256)
        .map(|k| usize::from(event(&mut seed.index(k as u64).rng())))
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// A deterministic test covariance with trace `trace` and distinct
/// eigenvalues, plus a complex off-diagonal.
fn test_covariance(n: usize, trace: f64) -> InputCovariance {
    let mut m = CMatrix::zeros(n, n);
    let weights: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
    let total: f64 = weights.iter().sum();
    for i in 0..n {
        m[(i, i)] = C64::new(trace * weights[i] / total, 0.0);
    }
    if n > 1 {
        let off = 0.3 * (m[(0, 0)].re * m[(1, 1)].re).sqrt();
        m[(0, 1)] = C64::new(off * 0.6, off * 0.8);
        m[(1, 0)] = m[(0, 1)].conj();
    }
    InputCovariance::new(m, trace).expect("valid by construction")
}

/// A deterministic test channel with every entry nonzero.
fn test_channel(n_rx: usize, n_tx: usize) -> ChannelState {
    let m = CMatrix::from_fn(n_rx, n_tx, |r, c| {
        let k = (r * n_tx + c) as f64;
        C64::new(0.9 - 0.2 * k, 0.3 + 0.1 * k)
    });
    ChannelState::new(m).expect("finite")
}

/// Simulates `P[i_g(T^n, Z^n) <= n f(g,Q) - n delta]` against
/// [`chernoff_info_density_bound`].
pub fn check_chernoff(n: usize, n_rx: usize, n_tx: usize, delta: f64, sigma_sq: f64, trials: usize, confidence: f64, seed: SeedTree) -> Result<BoundCheck> {
    let g = test_channel(n_rx, n_tx);
    let q = test_covariance(n_tx, 1.0);
    let noise = NoiseSpec::new(sigma_sq)?;
    let mean = n as f64 * log_det_mi(&g, &q, &noise)?;
    let hits = count_hits(trials, seed, |rng| {
        let t = SignalBlock::gaussian(&q, n, rng);
        let z = apply_channel(&g, &t, &noise, rng).expect("dims");
        info_density(&g, &q, &t, &z, &noise).expect("non-singular") <= mean - n as f64 * delta
    });
    Ok(BoundCheck::probability(
        "info-density-deviation",
        format!("n={n};n_rx={n_rx};n_tx={n_tx};delta={delta};sigma_sq={sigma_sq}"),
        chernoff_info_density_bound(n, n_rx, delta),
        hits,
        trials,
        confidence,
    ))
}

/// Simulates `P[sum ||X_i||^2 >= n (M + delta)]` for `X ~ CN(0, O)`,
/// `tr O = M`, against [`power_overflow_bound`].
pub fn check_power_overflow(n: usize, dim: usize, m: f64, delta: f64, trials: usize, confidence: f64, seed: SeedTree) -> Result<BoundCheck> {
    let o = test_covariance(dim, m);
    let hits = count_hits(trials, seed, |rng| {
        SignalBlock::gaussian(&o, n, rng).energy() >= n as f64 * (m + delta)
    });
    Ok(BoundCheck::probability(
        "power-overflow",
        format!("n={n};dim={dim};m={m};delta={delta}"),
        power_overflow_bound(n, m, delta),
        hits,
        trials,
        confidence,
    ))
}

/// Simulates `P[(1/n) sum ||z_i||^2 >= rho]` for a full-power input on a
/// channel with `||g|| = a`, against `factor^n` from [`output_power_threshold`].
pub fn check_output_power(n: usize, n_rx: usize, n_tx: usize, a: f64, power: f64, sigma_sq: f64, trials: usize, confidence: f64, seed: SeedTree) -> Result<BoundCheck> {
    let g0 = test_channel(n_rx, n_tx);
    let g = g0.scaled(a / operator_norm(&g0));
    let noise = NoiseSpec::new(sigma_sq)?;
    let (rho, factor) = output_power_threshold(a, power, n_rx, sigma_sq);
    // aligned with the top right singular vector so ||g t_i|| = a ||t_i||
    let svd = g.matrix().clone().svd(false, true);
    let top = (0..svd.singular_values.len()).max_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y])).unwrap();
    let v_t = svd.v_t.expect("requested");
    let col: Vec<C64> = (0..n_tx).map(|c| v_t[(top, c)].conj() * power.sqrt()).collect();
    let t = SignalBlock::new(CMatrix::from_fn(n_tx, n, |r, _| col[r]));
    let hits = count_hits(trials, seed, |rng| {
        let z = apply_channel(&g, &t, &noise, rng).expect("dims");
        z.average_power() >= rho
    });
    Ok(BoundCheck::probability(
        "output-power",
        format!("n={n};n_rx={n_rx};n_tx={n_tx};a={a};p={power};sigma_sq={sigma_sq};rho={rho}"),
        factor.powi(n as i32),
        hits,
        trials,
        confidence,
    ))
}

/// Largest `log2 W_g(z|t) / W_g_hat(z|t)` over random blocks with average
/// powers at most `P` and `rho`, against [`likelihood_ratio_log2_bound`].
/// Half the draws put `z` along `(g - g_hat) t`, where the ratio is largest.
pub fn check_likelihood_ratio(n: usize, n_rx: usize, n_tx: usize, a: f64, dist: f64, power: f64, sigma_sq: f64, trials: usize, seed: SeedTree) -> Result<BoundCheck> {
    let g0 = test_channel(n_rx, n_tx);
    let g = g0.scaled(0.5 * a / operator_norm(&g0));
    let dir = CMatrix::from_fn(n_rx, n_tx, |r, c| C64::new(((r + 2 * c) % 3) as f64 - 1.0, if (r + c) % 2 == 0 { 0.5 } else { -0.5 }));
    let dn = crate::linalg::spectral_norm(&dir);
    let g_hat = ChannelState::new(g.matrix() + dir.scale(dist / dn))?;
    let norm_hat = operator_norm(&g_hat);
    if norm_hat > a {
        return Err(invalid("perturbed channel leaves the norm ball; lower dist"));
    }
    let (rho, _) = output_power_threshold(a, power, n_rx, sigma_sq);
    let bound = likelihood_ratio_log2_bound(&g, &g_hat, n, power, rho, a, sigma_sq);
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .with_min_len(64)
        .map(|k| {
            let mut rng = seed.index(k as u64).rng();
            let raw = CMatrix::from_fn(n_tx, n, |_, _| sample_cn(&mut rng, 1.0));
            let u: f64 = rng.random();
            let mut t = SignalBlock::new(raw);
            t = SignalBlock::new(t.data().scale((u * power / t.average_power()).sqrt()));
            let z = if k % 2 == 0 {
                SignalBlock::new(CMatrix::from_fn(n_rx, n, |_, _| sample_cn(&mut rng, 1.0)))
            } else {
                SignalBlock::new((g.matrix() - g_hat.matrix()) * t.data())
            };
            let v: f64 = rng.random();
            let zp = z.average_power();
            let z = if zp > 0.0 { SignalBlock::new(z.data().scale((v * rho / zp).sqrt())) } else { z };
            let d1: f64 = (z.data() - g.matrix() * t.data()).iter().map(|x| x.norm_sqr()).sum();
            let d2: f64 = (z.data() - g_hat.matrix() * t.data()).iter().map(|x| x.norm_sqr()).sum();
            (d2 - d1) / (sigma_sq * LN_2)
        })
        .collect();
    let worst = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundCheck {
        bound_name: "likelihood-ratio".into(),
        parameters: format!("n={n};n_rx={n_rx};n_tx={n_tx};a={a};dist={dist};p={power};sigma_sq={sigma_sq};log2"),
        analytic: bound,
        empirical: worst,
        trials,
        ci_half_width: 0.0,
        pass: worst <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn noise1() -> NoiseSpec {
        NoiseSpec::new(1.0).unwrap()
    }

    #[test]
    fn info_density_at_origin_is_n_bits() {
        let g = ChannelState::scalar(1.0);
        let q = InputCovariance::from_diag(&[1.0], 1.0).unwrap();
        let n = 7;
        let t = SignalBlock::zeros(1, n);
        let v = info_density(&g, &q, &t, &t, &noise1()).unwrap();
        assert!((v - n as f64).abs() < 1e-12);
    }

    #[test]
    fn info_density_mean_and_change_of_measure() {
        let g = test_channel(2, 2);
        let q = test_covariance(2, 1.5);
        let noise = NoiseSpec::new(0.7).unwrap();
        let n = 5;
        let mean = n as f64 * log_det_mi(&g, &q, &noise).unwrap();
        let mut rng = stream(1, "id");
        let trials = 10_000;
        let draws: Vec<f64> = (0..trials)
            .map(|_| {
                let t = SignalBlock::gaussian(&q, n, &mut rng);
                let z = apply_channel(&g, &t, &noise, &mut rng).unwrap();
                info_density(&g, &q, &t, &z, &noise).unwrap()
            })
            .collect();
        let m = draws.iter().sum::<f64>() / trials as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        assert!((m - mean).abs() < 3.0 * (var / trials as f64).sqrt(), "{m} vs {mean}");

        // z from the reference density, independent of t: E[2^i] = 1
        let theta = g.matrix() * q.matrix() * g.matrix().adjoint() + CMatrix::identity(2, 2).scale(0.7);
        let th = InputCovariance::new(theta.clone(), theta.diagonal().iter().map(|d| d.re).sum::<f64>()).unwrap();
        let n = 1;
        let vals: Vec<f64> = (0..40_000)
            .map(|_| {
                let t = SignalBlock::gaussian(&q, n, &mut rng);
                let z = SignalBlock::gaussian(&th, n, &mut rng);
                info_density(&g, &q, &t, &z, &noise).unwrap().exp2()
            })
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((m - 1.0).abs() < 3.0 * (var / vals.len() as f64).sqrt(), "{m}");
    }

    #[test]
    fn closed_form_bound_values() {
        let v = chernoff_info_density_bound(100, 1, 1.0);
        let expected = (-(100.0 / (2.0 * LN_2)) * ((1.0 + LN_2 * LN_2).sqrt() - 1.0)).exp2();
        assert!((v - expected).abs() < 1e-18);
        assert!((v - 1.96e-5).abs() < 0.05e-5, "{v}");
        assert!((chernoff_info_density_bound(50, 2, 1e-9) - 1.0).abs() < 1e-12);
        let a = chernoff_info_density_bound(30, 2, 0.7);
        assert!((chernoff_info_density_bound(60, 2, 0.7) - a * a).abs() < 1e-15);

        let p = power_overflow_bound(10, 1.0, 1.0);
        assert!((p - (2.0 * (-1.0 / LN_2).exp2()).powi(10)).abs() < 1e-15);
        assert!((p - 0.0465).abs() < 1e-4, "{p}");
        assert!((power_overflow_bound(10, 1.0, 1e-9) - 1.0).abs() < 1e-9);

        let (rho, f) = output_power_threshold(1.0, 1.0, 1, 1.0);
        assert_eq!(rho, 6.0);
        assert!((f - 0.736).abs() < 1e-3);

        let g = test_channel(2, 2);
        assert_eq!(likelihood_ratio_bound(&g, &g, 10, 1.0, 6.0, 2.0, 1.0), 1.0);
        let h = g.scaled(1.01);
        let k = ChannelState::new(g.matrix() + (h.matrix() - g.matrix()).scale(2.0)).unwrap();
        let b1 = likelihood_ratio_bound(&g, &h, 10, 1.0, 6.0, 2.0, 1.0);
        let b2 = likelihood_ratio_bound(&g, &k, 10, 1.0, 6.0, 2.0, 1.0);
        assert!((b2 - b1 * b1).abs() < 1e-9 * b2);
    }

    #[test]
    fn feinstein_display_agrees() {
        let s = FeinsteinSetup { family_size: 1, n: 200, n_rx: 1, rate: 0.5, theta: 0.5, power: 2.0, beta: 0.5 };
        // tau = 2^100 exactly, so the general form and the display coincide
        assert!((s.bound() - s.closed_form()).abs() <= 1e-12 * s.closed_form());
        let t = s.terms();
        // independent evaluation of each displayed exponential
        let k: f64 = 1.0;
        let c1 = (1.0 / (2.0 * LN_2)) * ((1.0 + (LN_2 * 0.5 / 4.0).powi(2)).sqrt() - 1.0);
        let bh = 0.5 / (LN_2 * 1.5) - (1.0 + 0.5 / 1.5f64).log2();
        assert!((t.codebook + t.cross - (k + k * k) * (-200.0 * 0.5 / 8.0f64).exp2()).abs() < 1e-15);
        assert!((t.overflow - (-200.0 * bh).exp2()).abs() < 1e-15);
        assert!((t.tails - (-200.0 * c1).exp2()).abs() < 1e-12);
        assert_eq!(feinstein_compound_bound(0, 4.0, 1.0, 1.0, 0.5, &[]).total(), 0.0);
        let mut last = 0.0;
        for size in 1..6 {
            let b = FeinsteinSetup { family_size: size, ..s }.bound();
            assert!(b > last);
            last = b;
        }
    }

    #[test]
    fn perturbation_examples() {
        let fam = CompoundFamily::new(vec![ChannelState::from_real(1, 2, &[1.0, 0.5]).unwrap()], 2.0, noise1()).unwrap();
        let q = InputCovariance::from_diag(&[0.3, 0.4], 1.0).unwrap();
        assert_eq!(perturb_to_nonsingular(&q, 0.01, &fam).unwrap(), q);
        // rank-one beamformer along the channel
        let v = [1.0 / 1.25f64.sqrt(), 0.5 / 1.25f64.sqrt()];
        let m = CMatrix::from_fn(2, 2, |r, c| C64::new(v[r] * v[c], 0.0));
        let q = InputCovariance::new(m, 1.0).unwrap();
        let out = perturb_to_nonsingular(&q, 0.05, &fam).unwrap();
        assert!(out.min_eigenvalue() > 0.0);
        assert!(out.trace() < 1.0);
        assert!(fam.min_rate(&q).unwrap() - fam.min_rate(&out).unwrap() <= 0.05);
    }

    #[test]
    fn net_examples() {
        // pitch 1/sqrt(2): grid points (i, j) / sqrt(2) with i^2 + j^2 <= 4.5
        let net = epsilon_net(1.0, 1, 1, 1.0, 1_000_000).unwrap();
        assert_eq!(net.len(), 13);
        let net = epsilon_net(1.0, 1, 1, 2.5, 1_000_000).unwrap();
        assert_eq!(net, vec![ChannelState::zeros(1, 1)]);
        assert!(matches!(epsilon_net(1.0, 2, 2, 0.01, 1000), Err(Error::TooLarge(_))));
    }

    #[test]
    fn net_covers_ball() {
        let (a, mu) = (1.0, 0.6);
        let net = epsilon_net(a, 2, 1, mu, 1_000_000).unwrap();
        assert!(net.iter().all(|g| operator_norm(g) <= a + 1e-12));
        let mut rng = stream(3, "net");
        for _ in 0..1000 {
            let m = CMatrix::from_fn(1, 2, |_, _| sample_cn(&mut rng, 1.0));
            let nrm = crate::linalg::spectral_norm(&m);
            let u: f64 = rng.random();
            let g = m.scale(a * u.sqrt() / nrm);
            let d = net
                .iter()
                .map(|h| crate::linalg::spectral_norm(&(h.matrix() - &g)))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= mu + 1e-12, "{d}");
        }
    }

    #[test]
    fn noiseless_two_codewords_decode() {
        let g = ChannelState::scalar(1.0);
        let fam = CompoundFamily::new(vec![g.clone()], 1.0, noise1().noiseless()).unwrap();
        let q = InputCovariance::from_diag(&[1.0], 2.0).unwrap();
        let cw = vec![SignalBlock::from_real_columns(1, &[1.0; 8]), SignalBlock::from_real_columns(1, &[-1.0; 8])];
        let book = GaussianCodebook::from_codewords(cw, q.clone(), 2.0).unwrap();
        let dec = ThresholdDecoderSpec::new(&fam, &q, 0.5, 0.5).unwrap();
        let res = simulate_compound_error(&book, &dec, &fam, &[g], 50, 0.95, SeedTree::new(1)).unwrap();
        assert_eq!(res[0].errors, 0);
    }

    #[test]
    fn fast_decoder_matches_direct_information_density() {
        let fam = CompoundFamily::new(vec![test_channel(2, 2).scaled(0.5), test_channel(2, 2).scaled(0.3)], 2.0, noise1()).unwrap();
        let q = test_covariance(2, 1.0);
        let mut rng = stream(5, "dec");
        let book = GaussianCodebook::generate(&q, 6, 4, 2.0, &mut rng).unwrap();
        let prepared = PreparedCodebook::new(&book);
        for _ in 0..30 {
            let z = apply_channel(&fam.states()[0], &book.codewords()[2], &noise1(), &mut rng).unwrap();
            let th: f64 = rng.random_range(-2.0..6.0);
            let direct: Vec<bool> = book
                .codewords()
                .iter()
                .map(|t| fam.states().iter().any(|g| info_density(g, &q, t, &z, &noise1()).unwrap() > th))
                .collect();
            let expect = if direct.iter().filter(|&&b| b).count() == 1 { direct.iter().position(|&b| b) } else { None };
            let dec = ThresholdDecoderSpec::new(&fam, &q, th.abs().max(1e-3), 1e-9).unwrap();
            if (dec.threshold() - th).abs() < 1e-8 {
                assert_eq!(dec.decode(&prepared, &z, None), expect);
                assert_eq!(dec.decode(&prepared, &z, Some(2)), expect);
                assert_eq!(dec.decode(&prepared, &z, Some(2)), dec.decode(&prepared, &z, Some(2)));
            }
        }
    }

    #[test]
    fn degraded_output_has_unit_noise() {
        let g = ChannelState::scalar(4.0);
        let t = SignalBlock::from_real_columns(1, &vec![1.0; 40_000]);
        let mut rng = stream(6, "deg");
        let z = apply_channel(&g, &t, &noise1(), &mut rng).unwrap();
        let (gp, zp) = degrade_to_ball(&g, &z, 2.0, &noise1(), &mut rng);
        assert!((operator_norm(&gp) - 2.0).abs() < 1e-12);
        let resid = zp.data() - gp.matrix() * t.data();
        let p = resid.iter().map(|v| v.norm_sqr()).sum::<f64>() / 40_000.0;
        assert!((p - 1.0).abs() < 3.0 * (1.0 / 40_000f64).sqrt());
    }

    #[test]
    fn codebook_respects_power_cap() {
        let q = InputCovariance::from_diag(&[0.9], 1.0).unwrap();
        let mut rng = stream(7, "cb");
        let book = GaussianCodebook::generate(&q, 200, 10, 1.0, &mut rng).unwrap();
        assert!(book.codewords().iter().all(|c| c.average_power() <= 1.0));
        assert!(book.rejection_rate() > 0.0 && book.rejection_rate() < 1.0);
        let sing = InputCovariance::from_diag(&[1.0, 0.0], 1.0).unwrap();
        assert!(GaussianCodebook::generate(&sing, 2, 2, 1.0, &mut rng).is_err());
    }
}
