//! Desk-scale simulation of the binning protocol for common-randomness
//! generation under slow fading.
//!
//! The sender observes `x^n`, looks for a jointly typical codeword in a
//! binned type-class codebook, keeps it as `K` and sends its bin index over
//! the fading channel. The receiver observes `y^n` and the (possibly
//! corrupted) bin index and keeps the unique member of that bin that is
//! jointly typical with `y^n` as `L`. Failures on either side map to the
//! reserve value.
//!
//! Bin and member indices are zero-based; the reserve index is `N1`.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{log_det_mi, operator_norm, ChannelState, FadingEnsemble, InputCovariance, NoiseSpec};
use crate::compound::{simulate_decode_once, CompoundFamily, GaussianCodebook, PreparedCodebook, ThresholdDecoderSpec};
use crate::cr::{entropy, induced_quantities, JointSource, TestChannel};
use crate::error::{invalid, Error, Result};
use crate::outage::wilson_half_width;
use crate::rng::SeedTree;

/// Default bound on `N1 * N2`.
pub const DEFAULT_CODEBOOK_CAP: usize = 1 << 20;

/// How the bin index reaches the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TransportConfig {
    /// Delivered iff `log2(N1 + 1) / n <= f(g, (P/N_T) I)`; otherwise an
    /// independent uniform wrong index arrives.
    Genie { power: f64, sigma_sq: f64 },
    /// Always delivered.
    Noiseless,
    /// Always replaced by a uniform wrong index (control runs).
    AlwaysWrong,
    /// A Gaussian codebook of `N1 + 1` words of length `block_length` with
    /// threshold decoding at margin `theta`; the receiver knows the state.
    Physical { power: f64, sigma_sq: f64, block_length: usize, theta: f64, noiseless: bool },
}

/// Protocol parameters. `u_type` defaults to `P_U` rounded to a type of
/// length `block_length_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub block_length_n: usize,
    pub mu: f64,
    pub typ_delta: f64,
    pub alpha_target: f64,
    #[serde(default)]
    pub u_type: Option<Vec<f64>>,
    pub transport: TransportConfig,
    pub trials: usize,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_cap")]
    pub codebook_cap: usize,
    /// When false the receiver skips the typicality test and keeps the first
    /// member of the received bin.
    #[serde(default = "default_true")]
    pub decoder_typicality: bool,
}

fn default_states() -> usize {
    20
}

fn default_cap() -> usize {
    DEFAULT_CODEBOOK_CAP
}

fn default_true() -> bool {
    true
}

impl ProtocolConfig {
    pub fn new(block_length_n: usize, mu: f64, typ_delta: f64, transport: TransportConfig) -> Self {
        ProtocolConfig {
            block_length_n,
            mu,
            typ_delta,
            alpha_target: 0.1,
            u_type: None,
            transport,
            trials: 200,
            n_states: 20,
            codebook_cap: DEFAULT_CODEBOOK_CAP,
            decoder_typicality: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_length_n == 0 || self.trials == 0 || self.n_states == 0 {
            return Err(invalid("block length, trials and state count must be positive"));
        }
        if !(self.mu > 0.0 && self.typ_delta > 0.0) {
            return Err(invalid("mu and typ_delta must be positive"));
        }
        if !(self.alpha_target > 0.0 && self.alpha_target < 1.0) {
            return Err(invalid("alpha_target must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Rounds `p` to the nearest type of length `n` by largest remainders.
pub fn nearest_type(p: &[f64], n: usize) -> Vec<f64> {
    let raw: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|v| v.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

/// Symbol counts of a type of length `n`, or an error if `n * t` is not
/// integral.
pub fn type_counts(t: &[f64], n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(t.len());
    for &v in t {
        let c = v * n as f64;
        if (c - c.round()).abs() > 1e-9 || c < -1e-9 {
            return Err(invalid(format!("{t:?} is not a type for block length {n}")));
        }
        out.push(c.round() as usize);
    }
    if out.iter().sum::<usize>() != n {
        return Err(invalid(format!("{t:?} does not sum to one")));
    }
    Ok(out)
}

/// `N1 = floor(2^{n[I(U;X) - I(U;Y) + 3 mu]})` and
/// `N2 = floor(2^{n[I(U;Y) - 2 mu]})`, each at least 1.
pub fn bin_sizes(iux: f64, iuy: f64, n: usize, mu: f64) -> (f64, f64) {
    let n = n as f64;
    let n1 = (n * (iux - iuy + 3.0 * mu)).exp2().floor().max(1.0);
    let n2 = (n * (iuy - 2.0 * mu)).exp2().floor().max(1.0);
    (n1, n2)
}

/// The common-randomness value held by one terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrValue {
    Word { bin: usize, index: usize },
    /// The constant reserve word; distinct from every codeword by tag.
    Reserve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCodebook {
    bins: Vec<Vec<Vec<u8>>>,
    reserve_word: Vec<u8>,
    u_type: Vec<f64>,
}

impl BinCodebook {
    /// Codebook from explicit bins (tests and planted examples).
    pub fn from_bins(bins: Vec<Vec<Vec<u8>>>, u_card: usize) -> Result<Self> {
        let n = bins.first().and_then(|b| b.first()).map(|w| w.len()).ok_or_else(|| invalid("empty codebook"))?;
        if bins.iter().any(|b| b.is_empty() || b.len() != bins[0].len()) {
            return Err(invalid("all bins must hold the same positive number of words"));
        }
        if bins.iter().flatten().any(|w| w.len() != n || w.iter().any(|&s| s as usize >= u_card)) {
            return Err(invalid("codeword of wrong length or symbol out of range"));
        }
        let mut counts = vec![0usize; u_card];
        for &s in &bins[0][0] {
            counts[s as usize] += 1;
        }
        let u_type: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let top = most_probable(&u_type);
        Ok(BinCodebook { bins, reserve_word: vec![top as u8; n], u_type })
    }

    pub fn n1(&self) -> usize {
        self.bins.len()
    }

    pub fn n2(&self) -> usize {
        self.bins[0].len()
    }

    pub fn block_length(&self) -> usize {
        self.reserve_word.len()
    }

    pub fn bins(&self) -> &[Vec<Vec<u8>>] {
        &self.bins
    }

    pub fn reserve_word(&self) -> &[u8] {
        &self.reserve_word
    }

    pub fn u_type(&self) -> &[f64] {
        &self.u_type
    }

    /// `|K| = N1 N2 + 1`.
    pub fn k_alphabet_size(&self) -> usize {
        self.n1() * self.n2() + 1
    }

    /// Sequence carried by a CR value.
    pub fn word(&self, v: CrValue) -> &[u8] {
        match v {
            CrValue::Word { bin, index } => &self.bins[bin][index],
            CrValue::Reserve => &self.reserve_word,
        }
    }

    /// Dense index in `0..|K|`, the reserve last.
    pub fn value_index(&self, v: CrValue) -> usize {
        match v {
            CrValue::Word { bin, index } => bin * self.n2() + index,
            CrValue::Reserve => self.n1() * self.n2(),
        }
    }
}

fn most_probable(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

/// Draws `N1 * N2` words independently and uniformly from the type class of
/// the configured `u_type`.
pub fn generate_codebook(config: &ProtocolConfig, aux: &TestChannel, source: &JointSource, seed: SeedTree) -> Result<BinCodebook> {
    config.validate()?;
    let (iux, iuy) = induced_quantities(source, aux)?;
    let (n1, n2) = bin_sizes(iux, iuy, config.block_length_n, config.mu);
    if n1 * n2 > config.codebook_cap as f64 {
        return Err(Error::TooLarge(format!("N1 * N2 = {:.3e} exceeds the cap {}", n1 * n2, config.codebook_cap)));
    }
    let u_type = resolve_u_type(config, aux, source)?;
    let counts = type_counts(&u_type, config.block_length_n)?;
    let template: Vec<u8> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s as u8, c)).collect();
    let (n1, n2) = (n1 as usize, n2 as usize);
    let bins = (0..n1)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.index(i as u64).rng();
            (0..n2)
                .map(|_| {
                    let mut w = template.clone();
                    w.shuffle(&mut rng);
                    w
                })
                .collect()
        })
        .collect();
    let top = most_probable(&u_type);
    Ok(BinCodebook { bins, reserve_word: vec![top as u8; config.block_length_n], u_type })
}

fn resolve_u_type(config: &ProtocolConfig, aux: &TestChannel, source: &JointSource) -> Result<Vec<f64>> {
    match &config.u_type {
        Some(t) => {
            if t.len() != aux.u_card() {
                return Err(Error::Dimension("u_type length differs from the U alphabet".into()));
            }
            type_counts(t, config.block_length_n)?;
            Ok(t.clone())
        }
        None => {
            let px = source.px();
            let pu: Vec<f64> = (0..aux.u_card()).map(|u| aux.rows().iter().zip(&px).map(|(r, p)| r[u] * p).sum()).collect();
            Ok(nearest_type(&pu, config.block_length_n))
        }
    }
}

/// True iff the joint empirical distribution of `(a, b)` is within `delta`
/// of `pmf[a][b]` in every cell.
pub fn joint_typicality(a: &[u8], b: &[u8], pmf: &[Vec<f64>], delta: f64) -> bool {
    if a.len() != b.len() || a.is_empty() {
        return false;
    }
    let na = pmf.len();
    let nb = pmf[0].len();
    let mut counts = vec![0u32; na * nb];
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as usize, y as usize);
        if x >= na || y >= nb {
            return false;
        }
        counts[x * nb + y] += 1;
    }
    let n = a.len() as f64;
    counts.iter().enumerate().all(|(k, &c)| (c as f64 / n - pmf[k / nb][k % nb]).abs() <= delta)
}

/// `P_XU(x, u) = P_X(x) P_{U|X}(u|x)`.
pub fn joint_xu(source: &JointSource, aux: &TestChannel) -> Vec<Vec<f64>> {
    source.px().iter().zip(aux.rows()).map(|(p, r)| r.iter().map(|w| p * w).collect()).collect()
}

/// `P_YU(y, u) = sum_x P_XY(x, y) P_{U|X}(u|x)`.
pub fn joint_yu(source: &JointSource, aux: &TestChannel) -> Vec<Vec<f64>> {
    (0..source.ny())
        .map(|y| (0..aux.u_card()).map(|u| source.pmf().iter().zip(aux.rows()).map(|(r, w)| r[y] * w[u]).sum()).collect())
        .collect()
}

/// First jointly typical codeword in bin-major scan order, with its bin; the
/// reserve value and index `N1` when there is none.
pub fn encoder_phi(x: &[u8], codebook: &BinCodebook, joint_xu: &[Vec<f64>], typ_delta: f64) -> (CrValue, usize) {
    for (i, bin) in codebook.bins.iter().enumerate() {
        for (j, w) in bin.iter().enumerate() {
            if joint_typicality(x, w, joint_xu, typ_delta) {
                return (CrValue::Word { bin: i, index: j }, i);
            }
        }
    }
    (CrValue::Reserve, codebook.n1())
}

/// The unique member of the received bin that is jointly typical with `y`;
/// the reserve value on the reserve index, on no match and on several.
/// With `typicality` off the first member of the bin is kept.
pub fn decoder_psi(y: &[u8], received_index: usize, codebook: &BinCodebook, joint_yu: &[Vec<f64>], typ_delta: f64, typicality: bool) -> CrValue {
    if received_index >= codebook.n1() {
        return CrValue::Reserve;
    }
    if !typicality {
        return CrValue::Word { bin: received_index, index: 0 };
    }
    let mut found = None;
    for (j, w) in codebook.bins[received_index].iter().enumerate() {
        if joint_typicality(y, w, joint_yu, typ_delta) {
            if found.is_some() {
                return CrValue::Reserve;
            }
            found = Some(j);
        }
    }
    found.map_or(CrValue::Reserve, |index| CrValue::Word { bin: received_index, index })
}

/// Transport with any codebook it needs already drawn.
pub struct PreparedTransport {
    config: TransportConfig,
    messages: usize,
    /// Bits carried per channel use by the protocol stage.
    rate: f64,
    physical: Option<(GaussianCodebook, PreparedCodebook)>,
}

impl PreparedTransport {
    /// `messages` indices sent with `channel_uses` uses of the channel.
    pub fn new(config: &TransportConfig, messages: usize, channel_uses: usize, n_tx: usize, seed: SeedTree) -> Result<Self> {
        if messages == 0 || channel_uses == 0 {
            return Err(invalid("transport needs at least one message and one channel use"));
        }
        let rate = (messages as f64).log2() / channel_uses as f64;
        let physical = match config {
            TransportConfig::Physical { power, block_length, .. } => {
                let q1 = InputCovariance::isotropic(n_tx, 0.9 * power)?;
                let book = GaussianCodebook::generate(&q1, messages, *block_length, *power, &mut seed.rng())?;
                let prepared = PreparedCodebook::new(&book);
                Some((book, prepared))
            }
            TransportConfig::Genie { power, sigma_sq } => {
                InputCovariance::isotropic(n_tx, *power)?;
                NoiseSpec::new(*sigma_sq)?;
                None
            }
            _ => None,
        };
        Ok(PreparedTransport { config: config.clone(), messages, rate, physical })
    }

    pub fn messages(&self) -> usize {
        self.messages
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Per-state decoder; `None` outside physical mode.
    pub fn state_decoder(&self, g: &ChannelState) -> Result<Option<ThresholdDecoderSpec>> {
        let (TransportConfig::Physical { sigma_sq, block_length, theta, noiseless, .. }, Some((book, _))) = (&self.config, &self.physical) else {
            return Ok(None);
        };
        let mut noise = NoiseSpec::new(*sigma_sq)?;
        if *noiseless {
            noise = noise.noiseless();
        }
        let family = CompoundFamily::new(vec![g.clone()], operator_norm(g).max(1e-12), noise)?;
        let nb = *block_length as f64;
        let r = (self.messages as f64).log2() / nb;
        let alpha = (nb * (r + theta / 8.0)).max(1e-9);
        let delta = nb * theta / 8.0;
        Ok(Some(ThresholdDecoderSpec::new(&family, book.generator(), alpha, delta)?))
    }

    /// Carries `index` over state `g`.
    pub fn transmit<R: Rng + ?Sized>(&self, index: usize, g: &ChannelState, decoder: Option<&ThresholdDecoderSpec>, rng: &mut R) -> usize {
        let wrong = |rng: &mut R| -> usize {
            if self.messages == 1 {
                return index;
            }
            let k = rng.random_range(0..self.messages - 1);
            if k >= index {
                k + 1
            } else {
                k
            }
        };
        match &self.config {
            TransportConfig::Noiseless => index,
            TransportConfig::AlwaysWrong => wrong(rng),
            TransportConfig::Genie { power, sigma_sq } => {
                let q = InputCovariance::isotropic(g.n_tx(), *power).expect("validated");
                let noise = NoiseSpec::new(*sigma_sq).expect("validated");
                if self.rate <= log_det_mi(g, &q, &noise).unwrap_or(0.0) {
                    index
                } else {
                    wrong(rng)
                }
            }
            TransportConfig::Physical { sigma_sq, noiseless, .. } => {
                let (book, prepared) = self.physical.as_ref().expect("built with the config");
                let mut noise = NoiseSpec::new(*sigma_sq).expect("validated");
                if *noiseless {
                    noise = noise.noiseless();
                }
                let dec = decoder.expect("physical transport needs a state decoder");
                // a miss or an ambiguity surfaces as a uniform wrong index
                match simulate_decode_once(book, prepared, dec, g, index, &noise, rng) {
                    Some(m) => m,
                    None => wrong(rng),
                }
            }
        }
    }
}

/// Carries `bin_index` over `g` (convenience wrapper building the transport).
pub fn transmit_bin<R: Rng + ?Sized>(bin_index: usize, transport: &PreparedTransport, g: &ChannelState, rng: &mut R) -> Result<usize> {
    if bin_index >= transport.messages() {
        return Err(invalid(format!("index {bin_index} outside 0..{}", transport.messages())));
    }
    let dec = transport.state_decoder(g)?;
    Ok(transport.transmit(bin_index, g, dec.as_ref(), rng))
}

/// Draws `n` i.i.d. pairs from `P_XY`.
pub fn sample_source<R: Rng + ?Sized>(source: &JointSource, n: usize, rng: &mut R) -> (Vec<u8>, Vec<u8>) {
    let ny = source.ny();
    let flat: Vec<f64> = source.pmf().iter().flatten().copied().collect();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = flat.len() - 1;
        for (i, p) in flat.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        // never land on a zero-probability cell through rounding
        while flat[k] == 0.0 {
            k -= 1;
        }
        x.push((k / ny) as u8);
        y.push((k % ny) as u8);
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDisagreement {
    pub state_index: usize,
    pub disagreement: f64,
    pub ci_half_width: f64,
    /// Fraction of trials where the sender kept the reserve value.
    pub encoder_reserve: f64,
    /// Fraction of trials where the bin index arrived intact.
    pub transport_ok: f64,
    /// Fraction of trials with the reserve value on both sides.
    pub both_reserve: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub per_state: Vec<StateDisagreement>,
    /// Fraction of states whose disagreement exceeds `alpha_target`.
    pub outage_fraction: f64,
    pub median_disagreement: f64,
    /// Plug-in `H(K) / n` over all trials.
    pub entropy_rate_estimate: f64,
    pub k_alphabet_size: usize,
    pub n1: usize,
    pub n2: usize,
    pub iux: f64,
    pub iuy: f64,
    /// `n (H(X) + mu + 1)`.
    pub log2_k_bound: f64,
    pub cardinality_ok: bool,
}

/// Both terminals' values for one source draw.
pub fn run_trial<R: Rng + ?Sized>(
    source: &JointSource,
    parts: &ProtocolParts,
    g: &ChannelState,
    decoder: Option<&ThresholdDecoderSpec>,
    rng: &mut R,
) -> (CrValue, CrValue, usize, usize) {
    let (x, y) = sample_source(source, parts.codebook.block_length(), rng);
    let (k, sent) = encoder_phi(&x, &parts.codebook, &parts.joint_xu, parts.typ_delta);
    let received = parts.transport.transmit(sent, g, decoder, rng);
    let l = decoder_psi(&y, received, &parts.codebook, &parts.joint_yu, parts.typ_delta, parts.decoder_typicality);
    (k, l, sent, received)
}

/// Everything shared by the trials of one run.
pub struct ProtocolParts {
    pub codebook: BinCodebook,
    pub transport: PreparedTransport,
    pub joint_xu: Vec<Vec<f64>>,
    pub joint_yu: Vec<Vec<f64>>,
    pub typ_delta: f64,
    pub decoder_typicality: bool,
    pub iux: f64,
    pub iuy: f64,
}

impl ProtocolParts {
    pub fn build(source: &JointSource, aux: &TestChannel, config: &ProtocolConfig, n_tx: usize, seed: SeedTree) -> Result<Self> {
        let (iux, iuy) = induced_quantities(source, aux)?;
        let codebook = generate_codebook(config, aux, source, seed.label("codebook"))?;
        let channel_uses = match config.transport {
            TransportConfig::Physical { block_length, .. } => block_length,
            _ => config.block_length_n,
        };
        let transport = PreparedTransport::new(&config.transport, codebook.n1() + 1, channel_uses, n_tx, seed.label("transport-code"))?;
        Ok(ProtocolParts {
            joint_xu: joint_xu(source, aux),
            joint_yu: joint_yu(source, aux),
            codebook,
            transport,
            typ_delta: config.typ_delta,
            decoder_typicality: config.decoder_typicality,
            iux,
            iuy,
        })
    }
}

pub fn run_protocol(
    source: &JointSource,
    aux: &TestChannel,
    config: &ProtocolConfig,
    ensemble: &FadingEnsemble,
    seed: SeedTree,
) -> Result<ProtocolOutcome> {
    config.validate()?;
    let parts = ProtocolParts::build(source, aux, config, ensemble.n_tx(), seed)?;
    run_with_parts(source, &parts, config, ensemble, seed)
}

/// Runs the trials against prepared parts.
pub fn run_with_parts(
    source: &JointSource,
    parts: &ProtocolParts,
    config: &ProtocolConfig,
    ensemble: &FadingEnsemble,
    seed: SeedTree,
) -> Result<ProtocolOutcome> {
    let states: Vec<ChannelState> = (0..config.n_states)
        .map(|s| ensemble.sample_state(&mut seed.label("states").index(s as u64).rng()))
        .collect();
    let mut per_state = Vec::with_capacity(states.len());
    let mut k_counts = vec![0u64; parts.codebook.k_alphabet_size()];
    for (si, g) in states.iter().enumerate() {
        let decoder = parts.transport.state_decoder(g)?;
        let base = seed.label("trials").index(si as u64);
        let results: Vec<(CrValue, CrValue, usize, usize)> = (0..config.trials)
            .into_par_iter()
            .with_min_len(16)
            .map(|t| run_trial(source, parts, g, decoder.as_ref(), &mut base.index(t as u64).rng()))
            .collect();
        let trials = results.len() as f64;
        let mut dis = 0usize;
        let mut enc_res = 0usize;
        let mut ok = 0usize;
        let mut both = 0usize;
        for &(k, l, sent, received) in &results {
            dis += usize::from(k != l);
            enc_res += usize::from(k == CrValue::Reserve);
            ok += usize::from(sent == received);
            both += usize::from(k == CrValue::Reserve && l == CrValue::Reserve);
            k_counts[parts.codebook.value_index(k)] += 1;
        }
        let d = dis as f64 / trials;
        per_state.push(StateDisagreement {
            state_index: si,
            disagreement: d,
            ci_half_width: wilson_half_width(d, results.len(), 0.95),
            encoder_reserve: enc_res as f64 / trials,
            transport_ok: ok as f64 / trials,
            both_reserve: both as f64 / trials,
        });
    }
    let total: u64 = k_counts.iter().sum();
    let pk: Vec<f64> = k_counts.iter().map(|&c| c as f64 / total as f64).collect();
    let mut ds: Vec<f64> = per_state.iter().map(|s| s.disagreement).collect();
    ds.sort_by(f64::total_cmp);
    let median = if ds.len() % 2 == 1 { ds[ds.len() / 2] } else { 0.5 * (ds[ds.len() / 2 - 1] + ds[ds.len() / 2]) };
    let outage = per_state.iter().filter(|s| s.disagreement > config.alpha_target).count() as f64 / per_state.len() as f64;
    let n = config.block_length_n as f64;
    let k_size = parts.codebook.k_alphabet_size();
    let bound = n * (source.h_x() + config.mu + 1.0);
    Ok(ProtocolOutcome {
        per_state,
        outage_fraction: outage,
        median_disagreement: median,
        entropy_rate_estimate: entropy(&pk) / n,
        k_alphabet_size: k_size,
        n1: parts.codebook.n1(),
        n2: parts.codebook.n2(),
        iux: parts.iux,
        iuy: parts.iuy,
        log2_k_bound: bound,
        cardinality_ok: (k_size as f64).log2() <= bound,
    })
}

/// One run per codebook seed; the protocol's guarantees are about random
/// codebooks, so a single realization says little at small `n`.
pub fn run_protocol_over_codebooks(
    source: &JointSource,
    aux: &TestChannel,
    config: &ProtocolConfig,
    ensemble: &FadingEnsemble,
    codebooks: usize,
    seed: SeedTree,
) -> Result<Vec<ProtocolOutcome>> {
    (0..codebooks).map(|c| run_protocol(source, aux, config, ensemble, seed.label("codebook-seed").index(c as u64))).collect()
}

/// Binary symmetric test channel with crossover `p` (so `u_card = 2`).
pub fn bsc(p: f64) -> Result<TestChannel> {
    TestChannel::new(vec![vec![1.0 - p, p], vec![p, 1.0 - p]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn genie() -> TransportConfig {
        TransportConfig::Genie { power: 100.0, sigma_sq: 1.0 }
    }

    #[test]
    fn type_class_draws() {
        let src = JointSource::dsbs(0.1).unwrap();
        let mut cfg = ProtocolConfig::new(4, 0.05, 0.05, genie());
        cfg.u_type = Some(vec![0.5, 0.5]);
        let book = generate_codebook(&cfg, &bsc(0.1).unwrap(), &src, SeedTree::new(1)).unwrap();
        for w in book.bins().iter().flatten() {
            assert_eq!(w.iter().filter(|&&s| s == 1).count(), 2);
        }
        assert_eq!(book.k_alphabet_size(), book.n1() * book.n2() + 1);
        cfg.u_type = Some(vec![0.3, 0.7]);
        assert!(generate_codebook(&cfg, &bsc(0.1).unwrap(), &src, SeedTree::new(1)).is_err());
    }

    #[test]
    fn first_symbol_marginal_matches_type() {
        let src = JointSource::dsbs(0.1).unwrap();
        let mut cfg = ProtocolConfig::new(10, 0.3, 0.05, genie());
        cfg.u_type = Some(vec![0.3, 0.7]);
        let mut ones = 0usize;
        let mut total = 0usize;
        let mut c = 0u64;
        while total < 10_000 {
            let book = generate_codebook(&cfg, &bsc(0.1).unwrap(), &src, SeedTree::new(2).index(c)).unwrap();
            c += 1;
            for w in book.bins().iter().flatten() {
                ones += usize::from(w[0] == 1);
                total += 1;
            }
        }
        let p = ones as f64 / total as f64;
        let se = (0.21 / total as f64).sqrt();
        assert!((p - 0.7).abs() < 3.0 * se, "{p}");
    }

    #[test]
    fn codebook_cap() {
        let src = JointSource::dsbs(0.1).unwrap();
        let mut cfg = ProtocolConfig::new(40, 0.5, 0.05, genie());
        cfg.codebook_cap = 1000;
        assert!(matches!(generate_codebook(&cfg, &bsc(0.1).unwrap(), &src, SeedTree::new(1)), Err(Error::TooLarge(_))));
    }

    #[test]
    fn typicality_examples() {
        let pmf = vec![vec![0.4, 0.1], vec![0.1, 0.4]];
        assert!(joint_typicality(&[0, 0, 0, 0], &[0, 1, 0, 1], &pmf, 1.0));
        let x = vec![0u8; 400];
        let mut rng = stream(1, "typ");
        let u: Vec<u8> = (0..400).map(|_| rng.random_range(0..2)).collect();
        assert!(!joint_typicality(&x, &u, &pmf, 0.05));
        // cell standard deviations at n = 200 stay below delta / 2
        let skewed = vec![vec![0.9, 0.04], vec![0.03, 0.03]];
        let src = JointSource::new(skewed.clone()).unwrap();
        let hits = (0..1000)
            .filter(|_| {
                let (a, b) = sample_source(&src, 200, &mut rng);
                joint_typicality(&a, &b, &skewed, 0.05)
            })
            .count();
        assert!(hits >= 900, "{hits}");
    }

    #[test]
    fn encoder_and_decoder_branches() {
        let pmf = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let bins = vec![vec![vec![0, 1, 1, 0], vec![1, 1, 0, 0]], vec![vec![1, 1, 0, 0], vec![0, 0, 1, 1]]];
        let book = BinCodebook::from_bins(bins, 2).unwrap();
        let x = [1u8, 1, 0, 0];
        // planted at (0, 1) and (1, 0): the scan finds (0, 1) first
        assert_eq!(encoder_phi(&x, &book, &pmf, 0.01), (CrValue::Word { bin: 0, index: 1 }, 0));
        assert_eq!(encoder_phi(&[1, 0, 1, 0], &book, &pmf, 0.01), (CrValue::Reserve, 2));
        assert_eq!(decoder_psi(&x, 0, &book, &pmf, 0.01, true), CrValue::Word { bin: 0, index: 1 });
        assert_eq!(decoder_psi(&x, 2, &book, &pmf, 0.01, true), CrValue::Reserve);
        let dup = BinCodebook::from_bins(vec![vec![vec![1, 1, 0, 0], vec![1, 1, 0, 0]]], 2).unwrap();
        assert_eq!(decoder_psi(&x, 0, &dup, &pmf, 0.01, true), CrValue::Reserve);
        assert_eq!(decoder_psi(&x, 1, &book, &pmf, 0.01, false), CrValue::Word { bin: 1, index: 0 });
    }

    #[test]
    fn genie_transport() {
        let mut rng = stream(4, "tr");
        let good = ChannelState::scalar(10.0);
        let t = PreparedTransport::new(&genie(), 16, 4, 1, SeedTree::new(0)).unwrap();
        assert!((0..16).all(|i| transmit_bin(i, &t, &good, &mut rng).unwrap() == i));
        let bad = ChannelState::scalar(0.01);
        let wrong = (0..1000).filter(|k| transmit_bin(k % 16, &t, &bad, &mut rng).unwrap() != k % 16).count();
        assert_eq!(wrong, 1000);
        assert!(transmit_bin(16, &t, &good, &mut rng).is_err());
    }

    #[test]
    fn physical_noiseless_two_messages() {
        let mut rng = stream(5, "phys");
        let cfg = TransportConfig::Physical { power: 1.0, sigma_sq: 1.0, block_length: 16, theta: 0.5, noiseless: true };
        let t = PreparedTransport::new(&cfg, 2, 16, 1, SeedTree::new(3)).unwrap();
        let g = ChannelState::scalar(1.0);
        assert!((0..20).all(|k| transmit_bin(k % 2, &t, &g, &mut rng).unwrap() == k % 2));
    }

    #[test]
    fn degenerate_codebook_always_agrees() {
        let src = JointSource::dsbs(0.1).unwrap();
        let mut cfg = ProtocolConfig::new(6, 0.5, 1.0, TransportConfig::Noiseless);
        cfg.trials = 50;
        cfg.n_states = 2;
        // I(U;Y) - 2 mu < 0 and the exponent of N1 is below one bit
        let aux = TestChannel::constant(2, &[0.5, 0.5]).unwrap();
        cfg.mu = 0.01;
        let out = run_protocol(&src, &aux, &cfg, &FadingEnsemble::point_mass(ChannelState::scalar(1.0)), SeedTree::new(9)).unwrap();
        assert_eq!((out.n1, out.n2), (1, 1));
        assert!(out.per_state.iter().all(|s| s.disagreement == 0.0));
        assert_eq!(out.k_alphabet_size, 2);
    }

    #[test]
    fn same_seed_same_outcome() {
        let src = JointSource::dsbs(0.05).unwrap();
        let mut cfg = ProtocolConfig::new(8, 0.2, 0.1, genie());
        cfg.trials = 30;
        cfg.n_states = 3;
        let ens = FadingEnsemble::rayleigh(1, 1, 1.0).unwrap();
        let a = run_protocol(&src, &bsc(0.05).unwrap(), &cfg, &ens, SeedTree::new(5)).unwrap();
        let b = run_protocol(&src, &bsc(0.05).unwrap(), &cfg, &ens, SeedTree::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
