//! Channel states, fading ensembles, the AWGN MIMO channel, and the log-det
//! mutual information functional `f(g, Q) = log2 det(I + g Q g^H / sigma^2)`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    all_finite, hermitian_eigen, is_hermitian, log2_det_hpd, sample_cn, spectral_norm, trace_re, CMatrix, C64,
    MATRIX_TOL,
};

/// One realization of the complex gain matrix, `n_rx x n_tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    entries: CMatrix,
}

impl ChannelState {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Dimension("channel matrix must be non-empty".into()));
        }
        if !all_finite(&entries) {
            return Err(invalid("channel matrix has non-finite entries"));
        }
        Ok(ChannelState { entries })
    }

    /// Real-valued matrix given row-major.
    pub fn from_real(n_rx: usize, n_tx: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n_rx * n_tx {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {n_rx}x{n_tx} matrix, got {}",
                n_rx * n_tx,
                values.len()
            )));
        }
        Self::new(CMatrix::from_fn(n_rx, n_tx, |r, c| C64::new(values[r * n_tx + c], 0.0)))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        ChannelState {
            entries: CMatrix::from_fn(n, n, |r, c| if r == c { C64::new(values[r], 0.0) } else { C64::new(0.0, 0.0) }),
        }
    }

    pub fn scalar(gain: f64) -> Self {
        Self::diag(&[gain])
    }

    pub fn identity(n: usize) -> Self {
        ChannelState { entries: CMatrix::identity(n, n) }
    }

    pub fn zeros(n_rx: usize, n_tx: usize) -> Self {
        ChannelState { entries: CMatrix::zeros(n_rx, n_tx) }
    }

    pub fn n_rx(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_tx(&self) -> usize {
        self.entries.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_rx(), self.n_tx())
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    /// `g^H g`, the `n_tx x n_tx` Gram matrix.
    pub fn gram(&self) -> CMatrix {
        self.entries.adjoint() * &self.entries
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ChannelState { entries: self.entries.scale(factor) }
    }
}

/// A sampleable distribution over channel states.
#[derive(Debug, Clone)]
pub enum FadingEnsemble {
    /// i.i.d. `CN(0, scale^2)` entries.
    RayleighIid { n_rx: usize, n_tx: usize, scale: f64 },
    PointMass(ChannelState),
    FiniteSupport { states: Vec<ChannelState>, probs: Vec<f64> },
    /// Uniform over the stored samples.
    Empirical { samples: Vec<ChannelState> },
}

fn check_shared_dims(states: &[ChannelState]) -> Result<(usize, usize)> {
    let first = states.first().ok_or_else(|| invalid("ensemble needs at least one state"))?;
    let dims = first.dims();
    if let Some(bad) = states.iter().find(|s| s.dims() != dims) {
        return Err(Error::Dimension(format!(
            "ensemble states disagree on dimensions: {:?} vs {:?}",
            dims,
            bad.dims()
        )));
    }
    Ok(dims)
}

impl FadingEnsemble {
    pub fn rayleigh(n_rx: usize, n_tx: usize, scale: f64) -> Result<Self> {
        if n_rx == 0 || n_tx == 0 {
            return Err(Error::Dimension("antenna counts must be positive".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("Rayleigh scale must be positive, got {scale}")));
        }
        Ok(FadingEnsemble::RayleighIid { n_rx, n_tx, scale })
    }

    pub fn point_mass(state: ChannelState) -> Self {
        FadingEnsemble::PointMass(state)
    }

    pub fn finite_support(states: Vec<ChannelState>, probs: Vec<f64>) -> Result<Self> {
        check_shared_dims(&states)?;
        if states.len() != probs.len() {
            return Err(Error::Dimension("one probability per state is required".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("support probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("support probabilities sum to {total}, not 1")));
        }
        Ok(FadingEnsemble::FiniteSupport { states, probs })
    }

    pub fn uniform_support(states: Vec<ChannelState>) -> Result<Self> {
        let k = states.len();
        let mut probs = vec![1.0 / k as f64; k];
        // absorb rounding so the sum is 1 within the validation tolerance
        if k > 0 {
            let rest: f64 = probs[..k - 1].iter().sum();
            probs[k - 1] = 1.0 - rest;
        }
        Self::finite_support(states, probs)
    }

    pub fn empirical(samples: Vec<ChannelState>) -> Result<Self> {
        check_shared_dims(&samples)?;
        Ok(FadingEnsemble::Empirical { samples })
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            FadingEnsemble::RayleighIid { n_rx, n_tx, .. } => (*n_rx, *n_tx),
            FadingEnsemble::PointMass(g) => g.dims(),
            FadingEnsemble::FiniteSupport { states, .. } => states[0].dims(),
            FadingEnsemble::Empirical { samples } => samples[0].dims(),
        }
    }

    pub fn n_rx(&self) -> usize {
        self.dims().0
    }

    pub fn n_tx(&self) -> usize {
        self.dims().1
    }

    /// The support with exact probabilities, for ensembles that have one.
    pub fn exact_support(&self) -> Option<(Vec<ChannelState>, Vec<f64>)> {
        match self {
            FadingEnsemble::PointMass(g) => Some((vec![g.clone()], vec![1.0])),
            FadingEnsemble::FiniteSupport { states, probs } => Some((states.clone(), probs.clone())),
            _ => None,
        }
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelState {
        match self {
            FadingEnsemble::RayleighIid { n_rx, n_tx, scale } => {
                let var = scale * scale;
                let entries = CMatrix::from_fn(*n_rx, *n_tx, |_, _| sample_cn(rng, var));
                ChannelState { entries }
            }
            FadingEnsemble::PointMass(g) => g.clone(),
            FadingEnsemble::FiniteSupport { states, probs } => {
                if states.len() == 1 {
                    return states[0].clone();
                }
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (s, &p) in states.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return s.clone();
                    }
                }
                // u landed in the rounding gap at the top
                let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(states.len() - 1);
                states[last].clone()
            }
            FadingEnsemble::Empirical { samples } => samples[rng.random_range(0..samples.len())].clone(),
        }
    }

    /// Loads an empirical ensemble from CSV. The first record is the header
    /// `n_rx=<r>,n_tx=<t>`; every following record holds one state as
    /// `2*r*t` numbers, interleaved `re,im`, row-major.
    pub fn read_empirical_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records.next().ok_or_else(|| Error::Parse("empty ensemble file".into()))??;
        let mut n_rx = None;
        let mut n_tx = None;
        for field in header.iter() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value in header, got '{field}'")))?;
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad dimension '{value}'")))?;
            match key.trim() {
                "n_rx" => n_rx = Some(v),
                "n_tx" => n_tx = Some(v),
                other => return Err(Error::Parse(format!("unknown header key '{other}'"))),
            }
        }
        let (n_rx, n_tx) = match (n_rx, n_tx) {
            (Some(r), Some(t)) if r > 0 && t > 0 => (r, t),
            _ => return Err(Error::Parse("header must declare positive n_rx and n_tx".into())),
        };
        let mut samples = Vec::new();
        for (line, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != 2 * n_rx * n_tx {
                return Err(Error::Parse(format!(
                    "state {} has {} values, expected {}",
                    line + 1,
                    rec.len(),
                    2 * n_rx * n_tx
                )));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'"))))
                .collect::<Result<_>>()?;
            let m = CMatrix::from_fn(n_rx, n_tx, |r, c| {
                let k = 2 * (r * n_tx + c);
                C64::new(vals[k], vals[k + 1])
            });
            samples.push(ChannelState::new(m)?);
        }
        if samples.is_empty() {
            return Err(Error::Parse("ensemble file holds no states".into()));
        }
        Self::empirical(samples)
    }

    pub fn load_empirical_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_empirical_csv(std::fs::File::open(path)?)
    }
}

/// Writes states in the format read by [`FadingEnsemble::read_empirical_csv`].
pub fn write_states_csv<W: Write>(mut out: W, states: &[ChannelState]) -> Result<()> {
    let (n_rx, n_tx) = check_shared_dims(states)?;
    writeln!(out, "n_rx={n_rx},n_tx={n_tx}")?;
    for s in states {
        let row: Vec<String> = (0..n_rx)
            .flat_map(|r| (0..n_tx).map(move |c| (r, c)))
            .flat_map(|(r, c)| {
                let z = s.matrix()[(r, c)];
                [format!("{:e}", z.re), format!("{:e}", z.im)]
            })
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Per-antenna complex noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma_sq: f64,
    /// When set, [`apply_channel`] adds no noise (the `sigma^2 -> 0` limit);
    /// `sigma_sq` is still used by the information functionals.
    noiseless: bool,
}

impl NoiseSpec {
    pub fn new(sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(invalid(format!("noise variance must be positive, got {sigma_sq}")));
        }
        Ok(NoiseSpec { sigma_sq, noiseless: false })
    }

    pub fn noiseless(self) -> Self {
        NoiseSpec { noiseless: true, ..self }
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }
}

/// An element of `Q_P`: Hermitian, PSD, trace at most `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputCovariance {
    matrix: CMatrix,
    power_budget: f64,
}

impl InputCovariance {
    pub fn new(matrix: CMatrix, power_budget: f64) -> Result<Self> {
        if !(power_budget > 0.0 && power_budget.is_finite()) {
            return Err(invalid(format!("power budget must be positive, got {power_budget}")));
        }
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension("input covariance must be square and non-empty".into()));
        }
        if !all_finite(&matrix) {
            return Err(Error::InvalidCovariance("non-finite entries".into()));
        }
        if !is_hermitian(&matrix, MATRIX_TOL) {
            return Err(Error::InvalidCovariance("not Hermitian".into()));
        }
        let (vals, _) = hermitian_eigen(&matrix);
        if vals[0] < -MATRIX_TOL {
            return Err(Error::InvalidCovariance(format!("negative eigenvalue {}", vals[0])));
        }
        let tr = trace_re(&matrix);
        if tr > power_budget + MATRIX_TOL {
            return Err(Error::InvalidCovariance(format!("trace {tr} exceeds power budget {power_budget}")));
        }
        Ok(InputCovariance { matrix, power_budget })
    }

    /// `(P / n) I`.
    pub fn isotropic(n_tx: usize, power: f64) -> Result<Self> {
        Self::new(CMatrix::identity(n_tx, n_tx).scale(power / n_tx as f64), power)
    }

    pub fn from_diag(diag: &[f64], power: f64) -> Result<Self> {
        let n = diag.len();
        Self::new(
            CMatrix::from_fn(n, n, |r, c| if r == c { C64::new(diag[r], 0.0) } else { C64::new(0.0, 0.0) }),
            power,
        )
    }

    /// `L L^H` rescaled to trace exactly `power`; the all-zero factor maps to
    /// the isotropic matrix.
    pub fn from_factor(factor: &CMatrix, power: f64) -> Result<Self> {
        let n = factor.nrows();
        let q = factor * factor.adjoint();
        let tr = trace_re(&q);
        if !(tr > 1e-300) || !tr.is_finite() {
            return Self::isotropic(n, power);
        }
        let mut m = q.scale(power / tr);
        // exact Hermitian symmetry and real diagonal
        for i in 0..n {
            m[(i, i)].im = 0.0;
            for j in 0..i {
                m[(j, i)] = m[(i, j)].conj();
            }
        }
        Self::new(m, power)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn n_tx(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace_re(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.matrix).0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_nonsingular(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// The same matrix scaled to a new trace, under a new budget.
    pub fn rescaled(&self, trace: f64, power_budget: f64) -> Result<Self> {
        let tr = self.trace();
        if tr <= 0.0 {
            return Self::isotropic(self.n_tx(), trace.min(power_budget));
        }
        Self::new(self.matrix.scale(trace / tr), power_budget)
    }

    /// A Cholesky-type factor `L` with `L L^H = Q` (eigen square root for
    /// singular matrices).
    pub fn factor(&self) -> CMatrix {
        if let Some(ch) = self.matrix.clone().cholesky() {
            return ch.unpack();
        }
        let (vals, vecs) = hermitian_eigen(&self.matrix);
        let n = vals.len();
        CMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * vals[c].max(0.0).sqrt())
    }
}

/// Columns are time instants; rows are antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    data: CMatrix,
}

impl SignalBlock {
    pub fn new(data: CMatrix) -> Self {
        SignalBlock { data }
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        SignalBlock { data: CMatrix::zeros(dim, len) }
    }

    pub fn from_real_columns(dim: usize, values: &[f64]) -> Self {
        let len = values.len() / dim;
        SignalBlock { data: CMatrix::from_fn(dim, len, |r, c| C64::new(values[c * dim + r], 0.0)) }
    }

    /// `n` i.i.d. `CN(0, Q)` columns.
    pub fn gaussian<R: Rng + ?Sized>(q: &InputCovariance, n: usize, rng: &mut R) -> Self {
        let l = q.factor();
        let d = q.n_tx();
        let w = CMatrix::from_fn(d, n, |_, _| sample_cn(rng, 1.0));
        SignalBlock { data: l * w }
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// `sum_i ||t_i||^2`.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `(1/n) sum_i ||t_i||^2`.
    pub fn average_power(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.energy() / self.len() as f64
        }
    }

    pub fn satisfies_power(&self, power: f64) -> bool {
        self.average_power() <= power
    }
}

/// `z_i = g t_i + xi_i` with `xi_i ~ CN(0, sigma^2 I)` i.i.d.
pub fn apply_channel<R: Rng + ?Sized>(
    g: &ChannelState,
    t: &SignalBlock,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<SignalBlock> {
    if t.dim() != g.n_tx() {
        return Err(Error::Dimension(format!(
            "signal has {} rows but the channel has {} transmit antennas",
            t.dim(),
            g.n_tx()
        )));
    }
    let mut z = g.matrix() * t.data();
    if !noise.is_noiseless() {
        let var = noise.sigma_sq();
        // column-major traversal: noise for symbol 1, then symbol 2, ...
        for v in z.iter_mut() {
            *v += sample_cn(rng, var);
        }
    }
    Ok(SignalBlock { data: z })
}

/// `log2 det(I + g Q g^H / sigma^2)` in bits per channel use.
pub fn log_det_mi(g: &ChannelState, q: &InputCovariance, noise: &NoiseSpec) -> Result<f64> {
    if q.n_tx() != g.n_tx() {
        return Err(Error::Dimension(format!(
            "covariance is {0}x{0} but the channel has {1} transmit antennas",
            q.n_tx(),
            g.n_tx()
        )));
    }
    let gm = g.matrix();
    let m = CMatrix::identity(g.n_rx(), g.n_rx()) + (gm * q.matrix() * gm.adjoint()).scale(1.0 / noise.sigma_sq());
    Ok(log2_det_hpd(&m).max(0.0))
}

/// Largest singular value.
pub fn operator_norm(g: &ChannelState) -> f64 {
    spectral_norm(g.matrix())
}

/// Water-filling over the eigenmodes of `g^H g`. Returns the optimal
/// covariance (trace `P`) and `max_Q f(g, Q)`.
pub fn waterfilling_capacity(g: &ChannelState, power: f64, noise: &NoiseSpec) -> Result<(InputCovariance, f64)> {
    waterfilling_gram(&g.gram(), power, noise)
}

/// Water-filling against a Gram matrix `A` directly, maximizing
/// `log2 det(I + A Q / sigma^2)`. With `A` the average of `g^H g` over an
/// ensemble this is the usual ergodic-style starting point.
pub fn waterfilling_gram(gram: &CMatrix, power: f64, noise: &NoiseSpec) -> Result<(InputCovariance, f64)> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(invalid(format!("power must be positive, got {power}")));
    }
    if !gram.is_square() || gram.nrows() == 0 {
        return Err(Error::Dimension("Gram matrix must be square and non-empty".into()));
    }
    let n = gram.nrows();
    let (vals, vecs) = hermitian_eigen(gram);
    let gains: Vec<f64> = vals.iter().map(|v| v.max(0.0) / noise.sigma_sq()).collect();
    // strongest first
    let mut order: Vec<usize> = (0..n).filter(|&i| gains[i] > 1e-300).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    if order.is_empty() {
        return Ok((InputCovariance::isotropic(n, power)?, 0.0));
    }
    let mut alloc = vec![0.0; n];
    let mut active = order.len();
    loop {
        let inv_sum: f64 = order[..active].iter().map(|&i| 1.0 / gains[i]).sum();
        let level = (power + inv_sum) / active as f64;
        let weakest = order[active - 1];
        if level - 1.0 / gains[weakest] > 0.0 || active == 1 {
            for &i in &order[..active] {
                alloc[i] = (level - 1.0 / gains[i]).max(0.0);
            }
            break;
        }
        active -= 1;
    }
    // renormalize against rounding so the trace is exactly `power`
    let total: f64 = alloc.iter().sum();
    for a in alloc.iter_mut() {
        *a *= power / total;
    }
    let capacity: f64 = (0..n).map(|i| (1.0 + alloc[i] * gains[i]).log2()).sum();
    let mut q = CMatrix::zeros(n, n);
    for (i, &p) in alloc.iter().enumerate() {
        if p > 0.0 {
            let v = vecs.column(i);
            q += (v * v.adjoint()).scale(p);
        }
    }
    let q = crate::linalg::hermitian_part(&q);
    let tr = trace_re(&q);
    let q = if tr > power { q.scale(power / tr) } else { q };
    Ok((InputCovariance::new(q, power)?, capacity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::rng::stream;

    fn noise(s: f64) -> NoiseSpec {
        NoiseSpec::new(s).unwrap()
    }

    #[test]
    fn point_mass_and_degenerate_support_sample_their_state() {
        let g = ChannelState::from_real(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = stream(1, "t");
        let pm = FadingEnsemble::point_mass(g.clone());
        let fs = FadingEnsemble::finite_support(vec![g.clone()], vec![1.0]).unwrap();
        for _ in 0..5 {
            assert_eq!(pm.sample_state(&mut rng), g);
            assert_eq!(fs.sample_state(&mut rng), g);
        }
    }

    #[test]
    fn rayleigh_second_moment() {
        let ens = FadingEnsemble::rayleigh(1, 1, 1.0).unwrap();
        let mut rng = stream(2, "rayleigh");
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| ens.sample_state(&mut rng).matrix()[(0, 0)].norm_sqr()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn finite_support_rejects_bad_probs() {
        let g = ChannelState::scalar(1.0);
        assert!(FadingEnsemble::finite_support(vec![g.clone(), g.clone()], vec![0.5, 0.6]).is_err());
        assert!(FadingEnsemble::finite_support(vec![g.clone(), g.clone()], vec![-0.1, 1.1]).is_err());
        let h = ChannelState::zeros(2, 1);
        assert!(FadingEnsemble::finite_support(vec![g, h], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn noiseless_channel_is_linear_map() {
        let g = ChannelState::scalar(2.0);
        let t = SignalBlock::from_real_columns(1, &[1.0, 1.0, 1.0]);
        let mut rng = stream(3, "t");
        let z = apply_channel(&g, &t, &noise(1.0).noiseless(), &mut rng).unwrap();
        assert_eq!(z, SignalBlock::from_real_columns(1, &[2.0, 2.0, 2.0]));
    }

    #[test]
    fn apply_channel_rejects_dimension_mismatch() {
        let g = ChannelState::zeros(2, 3);
        let t = SignalBlock::zeros(2, 4);
        let mut rng = stream(3, "t");
        assert!(matches!(apply_channel(&g, &t, &noise(1.0), &mut rng), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_channel_outputs_pure_noise() {
        let g = ChannelState::zeros(3, 2);
        let t = SignalBlock::from_real_columns(2, &vec![1.0; 2 * 50_000]);
        let mut rng = stream(4, "t");
        let z = apply_channel(&g, &t, &noise(0.5), &mut rng).unwrap();
        let powers: Vec<f64> = (0..z.len()).map(|i| z.data().column(i).norm_squared()).collect();
        let n = powers.len() as f64;
        let mean = powers.iter().sum::<f64>() / n;
        let var = powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.5).abs() < 3.0 * (var / n).sqrt(), "mean {mean}");
    }

    #[test]
    fn noise_covariance_is_sigma_sq_identity() {
        let g = ChannelState::from_real(2, 1, &[1.0, -0.5]).unwrap();
        let t = SignalBlock::from_real_columns(1, &vec![0.7; 40_000]);
        let mut rng = stream(5, "t");
        let sigma_sq = 0.8;
        let z = apply_channel(&g, &t, &noise(sigma_sq), &mut rng).unwrap();
        let resid = z.data() - g.matrix() * t.data();
        let n = resid.ncols() as f64;
        let cov = (&resid * resid.adjoint()).scale(1.0 / n);
        // each entry of the sample covariance has standard error ~ sigma^2/sqrt(n)
        let tol = 3.0 * sigma_sq / n.sqrt();
        assert!((cov[(0, 0)].re - sigma_sq).abs() < tol);
        assert!((cov[(1, 1)].re - sigma_sq).abs() < tol);
        assert!(cov[(0, 1)].norm() < tol * 1.5);
    }

    #[test]
    fn log_det_examples() {
        let q1 = InputCovariance::from_diag(&[1.0], 1.0).unwrap();
        assert!((log_det_mi(&ChannelState::scalar(1.0), &q1, &noise(1.0)).unwrap() - 1.0).abs() < 1e-12);
        let q2 = InputCovariance::from_diag(&[1.0, 1.0], 2.0).unwrap();
        assert!((log_det_mi(&ChannelState::identity(2), &q2, &noise(1.0)).unwrap() - 2.0).abs() < 1e-12);
        let q3 = InputCovariance::from_diag(&[0.875, 0.125], 1.0).unwrap();
        let f = log_det_mi(&ChannelState::diag(&[2.0, 1.0]), &q3, &noise(1.0)).unwrap();
        let expected = 4.5_f64.log2() + 1.125_f64.log2();
        assert!((f - expected).abs() < 1e-12);
        assert!((f - 2.3399).abs() < 1e-4);
    }

    #[test]
    fn input_covariance_validation() {
        let p = 1.0;
        let not_herm = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.0, 0.0), c(0.5, 0.0)]);
        assert!(InputCovariance::new(not_herm, p).is_err());
        let neg = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.1, 0.0)]);
        assert!(InputCovariance::new(neg, 2.0).is_err());
        assert!(InputCovariance::from_diag(&[0.6, 0.6], 1.0).is_err());
        assert!(InputCovariance::from_diag(&[0.5, 0.5 + 1e-11], 1.0).is_ok());
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&ChannelState::identity(2)) - 1.0).abs() < 1e-12);
        assert!((operator_norm(&ChannelState::diag(&[3.0, 1.0])) - 3.0).abs() < 1e-12);
        let mut rng = stream(6, "t");
        let ens = FadingEnsemble::rayleigh(2, 3, 1.0).unwrap();
        for _ in 0..20 {
            let g = ens.sample_state(&mut rng);
            // independent route: top eigenvalue of g g^H
            let (vals, _) = hermitian_eigen(&(g.matrix() * g.matrix().adjoint()));
            let oracle = vals.last().unwrap().sqrt();
            assert!((operator_norm(&g) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn waterfilling_examples() {
        let (q, cap) = waterfilling_capacity(&ChannelState::diag(&[2.0, 1.0]), 1.0, &noise(1.0)).unwrap();
        let d = q.matrix().diagonal();
        assert!((d[0].re - 0.875).abs() < 1e-12 && (d[1].re - 0.125).abs() < 1e-12);
        assert!((cap - (4.5_f64.log2() + 1.125_f64.log2())).abs() < 1e-12);
        assert!((q.trace() - 1.0).abs() < 1e-12);

        let gamma = 1.7;
        let (q, cap) = waterfilling_capacity(&ChannelState::scalar(gamma), 3.0, &noise(0.5)).unwrap();
        assert!((q.matrix()[(0, 0)].re - 3.0).abs() < 1e-12);
        assert!((cap - (1.0 + 3.0 * gamma * gamma / 0.5).log2()).abs() < 1e-12);

        let (q, cap) = waterfilling_capacity(&ChannelState::zeros(2, 2), 1.0, &noise(1.0)).unwrap();
        assert_eq!(cap, 0.0);
        assert!((q.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn waterfilling_matches_diagonal_grid_search() {
        let g = ChannelState::diag(&[2.0, 1.0]);
        let (_, cap) = waterfilling_capacity(&g, 1.0, &noise(1.0)).unwrap();
        let best = (0..=10_000)
            .map(|k| {
                let a = k as f64 / 10_000.0;
                (1.0 + 4.0 * a).log2() + (1.0 + (1.0 - a)).log2()
            })
            .fold(f64::MIN, f64::max);
        assert!(cap >= best - 1e-12);
        assert!(cap - best < 1e-6);
    }

    #[test]
    fn empirical_csv_roundtrip_and_errors() {
        let states = vec![
            ChannelState::new(CMatrix::from_row_slice(1, 2, &[c(1.0, -0.5), c(0.25, 2.0)])).unwrap(),
            ChannelState::new(CMatrix::from_row_slice(1, 2, &[c(0.0, 0.0), c(-3.0, 1e-3)])).unwrap(),
        ];
        let mut buf = Vec::new();
        write_states_csv(&mut buf, &states).unwrap();
        let ens = FadingEnsemble::read_empirical_csv(&buf[..]).unwrap();
        match ens {
            FadingEnsemble::Empirical { samples } => assert_eq!(samples, states),
            _ => unreachable!(),
        }
        assert!(FadingEnsemble::read_empirical_csv("n_rx=1,n_tx=2\n1,2,3\n".as_bytes()).is_err());
        assert!(FadingEnsemble::read_empirical_csv("rows=1\n1,2\n".as_bytes()).is_err());
        assert!(FadingEnsemble::read_empirical_csv("".as_bytes()).is_err());
    }
}
