//! Identification on top of common randomness, at toy scale.
//!
//! Each identity owns a coloring of the CR alphabet. To signal identity `i`
//! the sender runs the CR protocol, sends the bin index in a first stage of
//! `n` channel uses and the color `E_i(K)` in a second stage of
//! `ceil(sqrt(n))` uses carrying `ceil(delta sqrt(n))` bits. A receiver
//! testing identity `j` accepts iff the received color equals `E_j(L)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, FadingEnsemble};
use crate::compound::ThresholdDecoderSpec;
use crate::cr::{JointSource, TestChannel};
use crate::error::{invalid, Result};
use crate::protocol::{decoder_psi, encoder_phi, sample_source, PreparedTransport, ProtocolConfig, ProtocolParts, TransportConfig};
use crate::rng::SeedTree;

/// `N` maps from the CR alphabet (size `M'`) onto `M''` colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColoringFamily {
    colorings: Vec<Vec<u32>>,
    m_double_prime: usize,
}

impl ColoringFamily {
    pub fn from_maps(colorings: Vec<Vec<u32>>, m_double_prime: usize) -> Result<Self> {
        let m_prime = colorings.first().map_or(0, |c| c.len());
        if colorings.is_empty() || m_prime == 0 || m_double_prime == 0 {
            return Err(invalid("coloring family needs identities, CR values and colors"));
        }
        if colorings.iter().any(|c| c.len() != m_prime || c.iter().any(|&v| v as usize >= m_double_prime)) {
            return Err(invalid("every coloring must be a total map into the color set"));
        }
        Ok(ColoringFamily { colorings, m_double_prime })
    }

    pub fn n_identities(&self) -> usize {
        self.colorings.len()
    }

    pub fn m_prime(&self) -> usize {
        self.colorings[0].len()
    }

    pub fn m_double_prime(&self) -> usize {
        self.m_double_prime
    }

    pub fn color(&self, identity: usize, k: usize) -> u32 {
        self.colorings[identity][k]
    }
}

/// I.i.d. uniform colorings.
pub fn build_colorings(n_identities: usize, m_prime: usize, m_double_prime: usize, seed: SeedTree) -> Result<ColoringFamily> {
    if n_identities == 0 || m_prime == 0 || m_double_prime == 0 {
        return Err(invalid("identity count, CR alphabet and color count must be positive"));
    }
    let maps = (0..n_identities)
        .map(|i| {
            let mut rng = seed.index(i as u64).rng();
            (0..m_prime).map(|_| rng.random_range(0..m_double_prime as u32)).collect()
        })
        .collect();
    ColoringFamily::from_maps(maps, m_double_prime)
}

/// `(ceil(sqrt(n)), max(2, 2^{ceil(delta sqrt(n))}))`: length and message
/// count of the second stage.
pub fn second_stage_size(n: usize, delta: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0) || n == 0 {
        return Err(invalid("second-stage rate and block length must be positive"));
    }
    let root = (n as f64).sqrt();
    let len = root.ceil() as usize;
    let bits = (delta * root).ceil();
    if bits > 24.0 {
        return Err(invalid(format!("second stage would carry {bits} bits")));
    }
    Ok((len, (bits.exp2() as usize).max(2)))
}

/// Decision rule of the receiver.
pub fn accepts(family: &ColoringFamily, tested: usize, l_index: usize, received_color: u32) -> bool {
    family.color(tested, l_index) == received_color
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdConfig {
    pub protocol: ProtocolConfig,
    pub n_identities: usize,
    /// Rate of the second stage in bits per use.
    pub stage2_delta: f64,
    pub stage2_transport: TransportConfig,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Both stages and the colorings.
pub struct IdSystem {
    pub parts: ProtocolParts,
    pub stage2: PreparedTransport,
    pub family: ColoringFamily,
}

impl IdSystem {
    pub fn build(source: &JointSource, aux: &TestChannel, config: &IdConfig, n_tx: usize, seed: SeedTree) -> Result<Self> {
        config.protocol.validate()?;
        let parts = ProtocolParts::build(source, aux, &config.protocol, n_tx, seed.label("protocol"))?;
        let (len, m2) = second_stage_size(config.protocol.block_length_n, config.stage2_delta)?;
        let stage2 = PreparedTransport::new(&config.stage2_transport, m2, len, n_tx, seed.label("stage2-code"))?;
        let family = build_colorings(config.n_identities, parts.codebook.k_alphabet_size(), m2, seed.label("colorings"))?;
        Ok(IdSystem { parts, stage2, family })
    }
}

/// One identification attempt: `sent` is signalled, `tested` is checked.
#[allow(clippy::too_many_arguments)]
pub fn id_round<R: Rng + ?Sized>(
    identity_sent: usize,
    identity_tested: usize,
    source: &JointSource,
    system: &IdSystem,
    g: &ChannelState,
    stage1_decoder: Option<&ThresholdDecoderSpec>,
    stage2_decoder: Option<&ThresholdDecoderSpec>,
    rng: &mut R,
) -> Result<bool> {
    let fam = &system.family;
    if identity_sent >= fam.n_identities() || identity_tested >= fam.n_identities() {
        return Err(invalid("identity out of range"));
    }
    let parts = &system.parts;
    let (x, y) = sample_source(source, parts.codebook.block_length(), rng);
    let (k, sent) = encoder_phi(&x, &parts.codebook, &parts.joint_xu, parts.typ_delta);
    let received = parts.transport.transmit(sent, g, stage1_decoder, rng);
    let l = decoder_psi(&y, received, &parts.codebook, &parts.joint_yu, parts.typ_delta, parts.decoder_typicality);
    let color = fam.color(identity_sent, parts.codebook.value_index(k)) as usize;
    let got = system.stage2.transmit(color, g, stage2_decoder, rng) as u32;
    Ok(accepts(fam, identity_tested, parts.codebook.value_index(l), got))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdStateErrors {
    pub state_index: usize,
    /// Largest rejection rate of the true identity.
    pub e1: f64,
    /// Largest acceptance rate of a wrong identity.
    pub e2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdOutcome {
    pub per_state: Vec<IdStateErrors>,
    pub identity_count: usize,
    /// Size `M'` of the CR alphabet.
    pub m_prime: usize,
    /// Message count `M''` of the second stage.
    pub second_stage_messages: usize,
    pub second_stage_length: usize,
    /// Largest `e1` and `e2` over the sampled states.
    pub measured_lambda1: f64,
    pub measured_lambda2: f64,
    pub lambda_sum_below_one: bool,
    /// Fractions of states with `e1 > lambda1` and with `e2 > lambda2`.
    pub outage_lambda1: f64,
    pub outage_lambda2: f64,
}

/// Monte Carlo estimate of both error kinds per sampled state. Each trial
/// runs the CR protocol once and the second stage once per sent identity,
/// and scores every (sent, tested) pair against that draw.
pub fn estimate_id_errors(
    source: &JointSource,
    aux: &TestChannel,
    config: &IdConfig,
    ensemble: &FadingEnsemble,
    seed: SeedTree,
) -> Result<IdOutcome> {
    let system = IdSystem::build(source, aux, config, ensemble.n_tx(), seed)?;
    estimate_with_system(source, &system, config, ensemble, seed)
}

pub fn estimate_with_system(
    source: &JointSource,
    system: &IdSystem,
    config: &IdConfig,
    ensemble: &FadingEnsemble,
    seed: SeedTree,
) -> Result<IdOutcome> {
    let n_id = system.family.n_identities();
    let pc = &config.protocol;
    let parts = &system.parts;
    let mut per_state = Vec::with_capacity(pc.n_states);
    for s in 0..pc.n_states {
        let g = ensemble.sample_state(&mut seed.label("states").index(s as u64).rng());
        let d1 = parts.transport.state_decoder(&g)?;
        let d2 = system.stage2.state_decoder(&g)?;
        let base = seed.label("trials").index(s as u64);
        // accept[sent * n_id + tested] counts
        let counts: Vec<Vec<u32>> = (0..pc.trials)
            .into_par_iter()
            .with_min_len(8)
            .map(|t| {
                let mut rng = base.index(t as u64).rng();
                let (x, y) = sample_source(source, parts.codebook.block_length(), &mut rng);
                let (k, sent) = encoder_phi(&x, &parts.codebook, &parts.joint_xu, parts.typ_delta);
                let received = parts.transport.transmit(sent, &g, d1.as_ref(), &mut rng);
                let l = decoder_psi(&y, received, &parts.codebook, &parts.joint_yu, parts.typ_delta, parts.decoder_typicality);
                let (ki, li) = (parts.codebook.value_index(k), parts.codebook.value_index(l));
                let mut acc = vec![0u32; n_id * n_id];
                for i in 0..n_id {
                    let got = system.stage2.transmit(system.family.color(i, ki) as usize, &g, d2.as_ref(), &mut rng) as u32;
                    for j in 0..n_id {
                        acc[i * n_id + j] = u32::from(accepts(&system.family, j, li, got));
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0u32; n_id * n_id];
        for c in &counts {
            for (a, b) in total.iter_mut().zip(c) {
                *a += b;
            }
        }
        let tr = pc.trials as f64;
        let e1 = (0..n_id).map(|i| 1.0 - total[i * n_id + i] as f64 / tr).fold(0.0, f64::max);
        let e2 = (0..n_id)
            .flat_map(|i| (0..n_id).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| total[i * n_id + j] as f64 / tr)
            .fold(0.0, f64::max);
        per_state.push(IdStateErrors { state_index: s, e1, e2 });
    }
    let l1 = per_state.iter().map(|s| s.e1).fold(0.0, f64::max);
    let l2 = per_state.iter().map(|s| s.e2).fold(0.0, f64::max);
    let ns = per_state.len() as f64;
    let (len, m2) = second_stage_size(pc.block_length_n, config.stage2_delta)?;
    Ok(IdOutcome {
        outage_lambda1: per_state.iter().filter(|s| s.e1 > config.lambda1).count() as f64 / ns,
        outage_lambda2: per_state.iter().filter(|s| s.e2 > config.lambda2).count() as f64 / ns,
        per_state,
        identity_count: n_id,
        m_prime: system.family.m_prime(),
        second_stage_messages: m2,
        second_stage_length: len,
        measured_lambda1: l1,
        measured_lambda2: l2,
        lambda_sum_below_one: l1 + l2 < 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outage::wilson_half_width;
    use crate::protocol::bsc;

    fn toy_config(n_identities: usize, delta: f64) -> IdConfig {
        let mut p = ProtocolConfig::new(16, 0.171, 0.1, TransportConfig::Noiseless);
        p.trials = 100;
        p.n_states = 2;
        IdConfig { protocol: p, n_identities, stage2_delta: delta, stage2_transport: TransportConfig::Noiseless, lambda1: 0.25, lambda2: 0.5 }
    }

    #[test]
    fn coloring_examples() {
        let f = build_colorings(5, 10, 1, SeedTree::new(1)).unwrap();
        assert!((0..5).all(|i| (0..10).all(|k| f.color(i, k) == 0)));
        assert_eq!(build_colorings(16, 4, 2, SeedTree::new(2)).unwrap().n_identities(), 16);
        assert_eq!(build_colorings(3, 4, 2, SeedTree::new(2)).unwrap(), build_colorings(3, 4, 2, SeedTree::new(2)).unwrap());
        // collision fraction of two uniform maps averages 1/M''
        let mut same = 0usize;
        let seeds = 400;
        for s in 0..seeds {
            let f = build_colorings(2, 16, 4, SeedTree::new(100 + s)).unwrap();
            same += (0..16).filter(|&k| f.color(0, k) == f.color(1, k)).count();
        }
        let p = same as f64 / (16 * seeds) as f64;
        assert!((p - 0.25).abs() < wilson_half_width(p, 16 * seeds as usize, 0.997), "{p}");
    }

    #[test]
    fn second_stage_sizes() {
        assert_eq!(second_stage_size(16, 0.75).unwrap(), (4, 8));
        assert_eq!(second_stage_size(16, 0.01).unwrap(), (4, 2));
        assert!(second_stage_size(16, 0.0).is_err());
    }

    #[test]
    fn round_examples() {
        let src = JointSource::identical(&[0.5, 0.5]).unwrap();
        let cfg = toy_config(4, 0.75);
        let mut system = IdSystem::build(&src, &bsc(0.14).unwrap(), &cfg, 1, SeedTree::new(3)).unwrap();
        let g = ChannelState::scalar(1.0);
        let m = system.family.m_prime();
        system.family = ColoringFamily::from_maps(vec![vec![1; m], vec![2; m]], 8).unwrap();
        let mut rng = SeedTree::new(4).rng();
        for _ in 0..20 {
            assert!(!id_round(0, 1, &src, &system, &g, None, None, &mut rng).unwrap());
        }
        assert!(id_round(0, 2, &src, &system, &g, None, None, &mut rng).is_err());
    }

    #[test]
    fn false_accept_rate_with_agreement() {
        // K = L by construction: acceptance of j given i is a color collision
        let fam = build_colorings(2, 4096, 8, SeedTree::new(5)).unwrap();
        let mut rng = SeedTree::new(6).rng();
        let trials = 20_000;
        let hits = (0..trials)
            .filter(|_| {
                let k = rng.random_range(0..4096);
                accepts(&fam, 1, k, fam.color(0, k))
            })
            .count();
        let p = hits as f64 / trials as f64;
        let half = wilson_half_width(p, trials, 0.997) + 0.01;
        assert!((p - 0.125).abs() < half, "{p}");
    }

    #[test]
    fn noiseless_identical_source() {
        let src = JointSource::identical(&[0.5, 0.5]).unwrap();
        let cfg = toy_config(16, 0.75);
        let ens = FadingEnsemble::point_mass(ChannelState::scalar(1.0));
        let out = estimate_id_errors(&src, &bsc(0.14).unwrap(), &cfg, &ens, SeedTree::new(7)).unwrap();
        assert!(out.lambda_sum_below_one, "{out:?}");
        assert!(out.identity_count > out.second_stage_messages);
        let again = estimate_id_errors(&src, &bsc(0.14).unwrap(), &cfg, &ens, SeedTree::new(7)).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn identical_colorings_are_indistinguishable() {
        let src = JointSource::identical(&[0.5, 0.5]).unwrap();
        let cfg = toy_config(3, 0.75);
        let ens = FadingEnsemble::point_mass(ChannelState::scalar(1.0));
        let mut system = IdSystem::build(&src, &bsc(0.14).unwrap(), &cfg, 1, SeedTree::new(8)).unwrap();
        let row: Vec<u32> = (0..system.family.m_prime()).map(|k| (k % 8) as u32).collect();
        system.family = ColoringFamily::from_maps(vec![row; 3], 8).unwrap();
        let out = estimate_with_system(&src, &system, &cfg, &ens, SeedTree::new(8)).unwrap();
        assert!(out.per_state.iter().all(|s| s.e2 == 1.0 - s.e1 || s.e2 == 1.0));
    }
}
