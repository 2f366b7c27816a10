//! η-outage common-randomness capacity for finite correlated sources:
//! `max I(U;X)` over channels `P_{U|X}` (so `U - X - Y` holds by
//! construction) subject to `I(U;X) - I(U;Y) <= C`.
//!
//! The objective is convex in `P_{U|X}` and so is the constraint function
//! (`I(U;X) - I(U;Y) = I(U;X|Y)` under the Markov chain). The optimizer
//! therefore works on the boundary: any candidate channel is pulled toward a
//! constant channel (where both quantities vanish) until the constraint
//! holds. Along that segment the constraint is convex with value 0 at the
//! anchor, so the feasible part is an interval found by bisection, and the
//! objective is nondecreasing, so its far end is the best point on the ray.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::FadingEnsemble;
use crate::error::{invalid, Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::outage::{eta_outage_capacity, CapacityEstimate, OutageSpec, SearchOptions};
use crate::rng::SeedTree;

/// Tolerance on probability vectors summing to one.
pub const PMF_TOL: f64 = 1e-12;
/// Slack allowed on the rate constraint of a returned channel.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// Binary entropy `h2(p)` in bits.
pub fn binary_entropy(p: f64) -> f64 {
    entropy(&[p, 1.0 - p])
}

fn check_pmf_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Joint pmf `P_XY`; rows index X, columns index Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSource {
    pmf: Vec<Vec<f64>>,
    x_labels: Vec<String>,
    y_labels: Vec<String>,
}

impl JointSource {
    pub fn new(pmf: Vec<Vec<f64>>) -> Result<Self> {
        let nx = pmf.len();
        let ny = pmf.first().map_or(0, |r| r.len());
        let x_labels = (0..nx).map(|i| format!("x{i}")).collect();
        let y_labels = (0..ny).map(|j| format!("y{j}")).collect();
        Self::with_labels(pmf, x_labels, y_labels)
    }

    pub fn with_labels(pmf: Vec<Vec<f64>>, x_labels: Vec<String>, y_labels: Vec<String>) -> Result<Self> {
        let nx = pmf.len();
        if nx == 0 || pmf[0].is_empty() {
            return Err(invalid("joint pmf must be non-empty"));
        }
        let ny = pmf[0].len();
        if pmf.iter().any(|r| r.len() != ny) {
            return Err(Error::Dimension("joint pmf rows differ in length".into()));
        }
        if x_labels.len() != nx || y_labels.len() != ny {
            return Err(Error::Dimension("label count does not match the pmf shape".into()));
        }
        let flat: Vec<f64> = pmf.iter().flatten().copied().collect();
        check_pmf_row(&flat, "joint pmf")?;
        if pmf.iter().any(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(invalid("joint pmf has an all-zero row"));
        }
        if (0..ny).any(|j| pmf.iter().all(|r| r[j] == 0.0)) {
            return Err(invalid("joint pmf has an all-zero column"));
        }
        Ok(JointSource { pmf, x_labels, y_labels })
    }

    /// Doubly symmetric binary source: uniform X, Y = X flipped w.p. `p`.
    pub fn dsbs(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("crossover must lie in (0, 1), got {p}")));
        }
        Self::new(vec![vec![(1.0 - p) / 2.0, p / 2.0], vec![p / 2.0, (1.0 - p) / 2.0]])
    }

    /// `P_X x P_Y`.
    pub fn independent(px: &[f64], py: &[f64]) -> Result<Self> {
        Self::new(px.iter().map(|a| py.iter().map(|b| a * b).collect()).collect())
    }

    /// `Y = X` with `X ~ px`.
    pub fn identical(px: &[f64]) -> Result<Self> {
        let n = px.len();
        Self::new((0..n).map(|i| (0..n).map(|j| if i == j { px[i] } else { 0.0 }).collect()).collect())
    }

    /// Reads a labelled matrix: the header holds a corner cell and the Y
    /// labels, each following row an X label and its probabilities.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Parse("source header needs a corner cell and at least one Y label".into()));
        }
        let y_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut x_labels = Vec::new();
        let mut pmf = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse(format!("row {} has {} cells, expected {}", line + 1, rec.len(), header.len())));
            }
            x_labels.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {s:?}: {e}", line + 1))))
                .collect::<Result<Vec<_>>>()?;
            pmf.push(row);
        }
        Self::with_labels(pmf, x_labels, y_labels)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn pmf(&self) -> &[Vec<f64>] {
        &self.pmf
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn y_labels(&self) -> &[String] {
        &self.y_labels
    }

    pub fn nx(&self) -> usize {
        self.pmf.len()
    }

    pub fn ny(&self) -> usize {
        self.pmf[0].len()
    }

    pub fn px(&self) -> Vec<f64> {
        self.pmf.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn py(&self) -> Vec<f64> {
        (0..self.ny()).map(|j| self.pmf.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn h_x(&self) -> f64 {
        entropy(&self.px())
    }

    /// `H(X|Y) = H(X,Y) - H(Y)`.
    pub fn h_x_given_y(&self) -> f64 {
        let flat: Vec<f64> = self.pmf.iter().flatten().copied().collect();
        entropy(&flat) - entropy(&self.py())
    }
}

/// `P_{U|X}`: one pmf over the U alphabet per X symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestChannel {
    rows: Vec<Vec<f64>>,
}

impl TestChannel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || m == 0 {
            return Err(invalid("test channel must be non-empty"));
        }
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("test channel rows differ in length".into()));
        }
        for r in &rows {
            check_pmf_row(r, "test channel row")?;
        }
        Ok(TestChannel { rows })
    }

    /// `U = X`, padded with unused symbols up to `u_card`.
    pub fn identity(nx: usize, u_card: usize) -> Result<Self> {
        if u_card < nx {
            return Err(invalid("identity channel needs u_card >= |X|"));
        }
        Self::new((0..nx).map(|i| (0..u_card).map(|u| if u == i { 1.0 } else { 0.0 }).collect()).collect())
    }

    /// Every row equal to `row`, so `U` is independent of `X`.
    pub fn constant(nx: usize, row: &[f64]) -> Result<Self> {
        Self::new(vec![row.to_vec(); nx])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn u_card(&self) -> usize {
        self.rows[0].len()
    }

    pub fn nx(&self) -> usize {
        self.rows.len()
    }

    /// Row-major flattening.
    pub fn flattened(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    /// Same channel with U symbols relabeled: new symbol `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.u_card() {
            return Err(Error::Dimension("permutation length differs from u_card".into()));
        }
        Self::new(self.rows.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect())
    }
}

/// `(I(U;X), I(U;Y))` in bits.
pub fn induced_quantities(source: &JointSource, channel: &TestChannel) -> Result<(f64, f64)> {
    if channel.nx() != source.nx() {
        return Err(Error::Dimension(format!("channel has {} rows, source has |X| = {}", channel.nx(), source.nx())));
    }
    Ok(mutual_informations(source.pmf(), channel.rows()))
}

fn mutual_informations(pmf: &[Vec<f64>], rows: &[Vec<f64>]) -> (f64, f64) {
    let m = rows[0].len();
    let ny = pmf[0].len();
    let px: Vec<f64> = pmf.iter().map(|r| r.iter().sum()).collect();
    let mut pu = vec![0.0; m];
    let mut puy = vec![0.0; m * ny];
    let mut h_u_given_x = 0.0;
    for (x, w) in rows.iter().enumerate() {
        for u in 0..m {
            pu[u] += px[x] * w[u];
            for y in 0..ny {
                puy[u * ny + y] += w[u] * pmf[x][y];
            }
        }
        h_u_given_x += px[x] * entropy(w);
    }
    let py: Vec<f64> = (0..ny).map(|y| pmf.iter().map(|r| r[y]).sum()).collect();
    let hu = entropy(&pu);
    let iux = (hu - h_u_given_x).max(0.0);
    let iuy = (hu + entropy(&py) - entropy(&puy)).max(0.0);
    (iux, iuy)
}

/// Optimal point for one communication budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrPoint {
    pub comm_rate_c: f64,
    pub cr_rate: f64,
    /// `I(U;X) - I(U;Y)` at the returned channel.
    pub constraint_value: f64,
    pub channel: TestChannel,
}

impl CrPoint {
    fn from_channel(source: &JointSource, c: f64, channel: TestChannel) -> Self {
        let (iux, iuy) = mutual_informations(source.pmf(), channel.rows());
        CrPoint { comm_rate_c: c, cr_rate: iux, constraint_value: iux - iuy, channel }
    }

    /// The feasibility certificate: recomputed quantities satisfy the
    /// budget within [`FEASIBILITY_TOL`].
    pub fn is_feasible(&self, source: &JointSource) -> bool {
        match induced_quantities(source, &self.channel) {
            Ok((iux, iuy)) => iux - iuy <= self.comm_rate_c + FEASIBILITY_TOL,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrOptions {
    /// Size of the U alphabet; `None` uses `|X| + 1`.
    pub u_card: Option<usize>,
    /// Random starts in addition to every deterministic channel.
    pub restarts: usize,
    /// Number of best starts that are refined by local search.
    pub refined_starts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for CrOptions {
    fn default() -> Self {
        CrOptions { u_card: None, restarts: 16, refined_starts: 6, max_evals: 1500, seed: 0 }
    }
}

/// Most deterministic channels enumerated as starts.
const MAX_VERTEX_STARTS: usize = 4096;

struct Problem<'a> {
    pmf: &'a [Vec<f64>],
    nx: usize,
    m: usize,
    c: f64,
}

impl Problem<'_> {
    fn slack(&self, rows: &[Vec<f64>]) -> (f64, f64) {
        let (iux, iuy) = mutual_informations(self.pmf, rows);
        (iux, iux - iuy)
    }

    /// Best feasible point on the segment from the uniform constant channel
    /// to `rows`.
    fn project(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (_, g) = self.slack(rows);
        if g <= self.c + FEASIBILITY_TOL {
            return rows.to_vec();
        }
        let anchor = 1.0 / self.m as f64;
        let mix = |t: f64| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().map(|&v| (1.0 - t) * anchor + t * v).collect()).collect()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.slack(&mix(mid)).1 <= self.c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mix(lo)
    }

    fn value(&self, rows: &[Vec<f64>]) -> f64 {
        self.slack(&self.project(rows)).0
    }

    /// Rows from squared coordinates, so exact zeros (vertices) are reachable.
    fn decode(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        (0..self.nx)
            .map(|x| {
                let seg = &theta[x * self.m..(x + 1) * self.m];
                let s: f64 = seg.iter().map(|v| v * v).sum();
                if s > 0.0 {
                    seg.iter().map(|v| v * v / s).collect()
                } else {
                    vec![1.0 / self.m as f64; self.m]
                }
            })
            .collect()
    }

    fn encode(rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().flatten().map(|v| v.sqrt()).collect()
    }
}

fn vertex_channels(nx: usize, m: usize) -> Vec<Vec<Vec<f64>>> {
    let count = (m as f64).powi(nx as i32);
    if count > MAX_VERTEX_STARTS as f64 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; nx];
    loop {
        out.push(idx.iter().map(|&k| (0..m).map(|u| if u == k { 1.0 } else { 0.0 }).collect()).collect());
        let mut d = 0;
        loop {
            if d == nx {
                return out;
            }
            idx[d] += 1;
            if idx[d] == m {
                idx[d] = 0;
                d += 1;
            } else {
                break;
            }
        }
    }
}

fn random_channel<R: Rng + ?Sized>(nx: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..nx)
        .map(|_| {
            // exponential weights give a uniform point on the simplex; the
            // squaring biases mass toward vertices
            let w: Vec<f64> = (0..m).map(|_| -(1.0 - rng.random::<f64>()).ln()).map(|v| v * v).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn resolve_u_card(source: &JointSource, opts: &CrOptions) -> Result<usize> {
    let m = opts.u_card.unwrap_or(source.nx() + 1);
    if m == 0 {
        return Err(invalid("u_card must be positive"));
    }
    Ok(m)
}

/// Maximizes `I(U;X)` subject to `I(U;X) - I(U;Y) <= c_budget`.
pub fn cr_capacity(source: &JointSource, c_budget: f64, opts: &CrOptions) -> Result<CrPoint> {
    cr_capacity_from(source, c_budget, opts, &[])
}

fn cr_capacity_from(source: &JointSource, c_budget: f64, opts: &CrOptions, warm: &[TestChannel]) -> Result<CrPoint> {
    if !(c_budget >= 0.0 && c_budget.is_finite()) {
        return Err(invalid(format!("communication budget must be a finite nonnegative number, got {c_budget}")));
    }
    let m = resolve_u_card(source, opts)?;
    let nx = source.nx();
    if warm.iter().any(|w| w.u_card() != m || w.nx() != nx) {
        return Err(Error::Dimension("warm start does not match the problem shape".into()));
    }
    let prob = Problem { pmf: source.pmf(), nx, m, c: c_budget };

    // U = X saturates the objective whenever it is feasible
    if m >= nx {
        let id = TestChannel::identity(nx, m)?;
        let (iux, g) = prob.slack(id.rows());
        if g <= c_budget + FEASIBILITY_TOL && (iux - source.h_x()).abs() < 1e-12 {
            return Ok(CrPoint::from_channel(source, c_budget, id));
        }
    }

    let mut starts: Vec<Vec<Vec<f64>>> = warm.iter().map(|w| w.rows().to_vec()).collect();
    starts.extend(vertex_channels(nx, m));
    let mut rng = SeedTree::new(opts.seed).label("cr-starts").rng();
    for _ in 0..opts.restarts {
        starts.push(random_channel(nx, m, &mut rng));
    }

    let mut scored: Vec<(f64, Vec<Vec<f64>>)> = starts
        .par_iter()
        .map(|s| {
            let p = prob.project(s);
            (prob.slack(&p).0, p)
        })
        .collect();
    // stable, so ties keep start order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let refine = opts.refined_starts.max(1).min(scored.len());

    let nm = NelderMeadOptions { max_evals: opts.max_evals, f_tol: 1e-12, x_tol: 1e-9, initial_step: 0.2 };
    let refined: Vec<(f64, Vec<Vec<f64>>)> = scored[..refine]
        .par_iter()
        .map(|(v0, rows)| {
            let x0 = Problem::encode(rows);
            let res = nelder_mead(|th| -prob.value(&prob.decode(th)), &x0, &nm, None);
            let cand = prob.project(&prob.decode(&res.x));
            let v = prob.slack(&cand).0;
            if v > *v0 {
                (v, cand)
            } else {
                (*v0, rows.clone())
            }
        })
        .collect();
    let best = refined
        .into_iter()
        .chain(scored.into_iter().skip(refine).take(1))
        .fold(None::<(f64, Vec<Vec<f64>>)>, |acc, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        })
        .expect("at least one start");
    let point = CrPoint::from_channel(source, c_budget, TestChannel::new(normalize_rows(best.1))?);
    if !point.is_feasible(source) {
        return Err(invalid("optimizer returned a point that fails the feasibility certificate"));
    }
    Ok(point)
}

/// Renormalizes rows against rounding drift from the mixing step.
fn normalize_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Largest number of channels the oracle will enumerate.
pub const BRUTEFORCE_CAP: f64 = 5e7;

fn simplex_grid(m: usize, k: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == m - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / k as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(m, left - c, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, k, k, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Exact maximum over channels whose rows lie on the simplex grid with step
/// `1/round(1/resolution)`. Halving the resolution refines the grid, so the
/// result cannot decrease.
pub fn cr_capacity_bruteforce(source: &JointSource, c_budget: f64, grid_resolution: f64, u_card: Option<usize>) -> Result<CrPoint> {
    let nx = source.nx();
    let m = u_card.unwrap_or(nx + 1);
    if nx > 3 || m > 4 {
        return Err(Error::TooLarge(format!("oracle handles |X| <= 3 and u_card <= 4, got {nx} and {m}")));
    }
    if !(0.01..=1.0).contains(&grid_resolution) {
        return Err(Error::TooLarge(format!("grid resolution must lie in [0.01, 1], got {grid_resolution}")));
    }
    if !(c_budget >= 0.0 && c_budget.is_finite()) {
        return Err(invalid("communication budget must be a finite nonnegative number"));
    }
    let k = (1.0 / grid_resolution).round() as usize;
    let grid = simplex_grid(m, k);
    let total = (grid.len() as f64).powi(nx as i32);
    if total > BRUTEFORCE_CAP {
        return Err(Error::TooLarge(format!("oracle would enumerate {total:.3e} channels")));
    }
    let pmf = source.pmf();
    let g = grid.len();
    // first row fixed per task; the remaining rows are an odometer
    let best = (0..g)
        .into_par_iter()
        .map(|first| {
            let mut idx = vec![0usize; nx];
            idx[0] = first;
            let mut best: Option<(f64, Vec<usize>)> = None;
            loop {
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| grid[i].clone()).collect();
                let (iux, iuy) = mutual_informations(pmf, &rows);
                if iux - iuy <= c_budget + FEASIBILITY_TOL && best.as_ref().is_none_or(|b| iux > b.0) {
                    best = Some((iux, idx.clone()));
                }
                let mut d = 1;
                loop {
                    if d >= nx {
                        return best;
                    }
                    idx[d] += 1;
                    if idx[d] == g {
                        idx[d] = 0;
                        d += 1;
                    } else {
                        break;
                    }
                }
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .fold(None::<(f64, Vec<usize>)>, |acc, cur| match acc {
            Some(a) if a.0 >= cur.0 => Some(a),
            _ => Some(cur),
        })
        .expect("constant channels are always feasible");
    let rows = best.1.iter().map(|&i| grid[i].clone()).collect();
    Ok(CrPoint::from_channel(source, c_budget, TestChannel::new(rows)?))
}

/// Upper bound on the optimum for binary X by weak duality: for every
/// `lambda >= 0` and feasible channel,
/// `I(U;X) <= lambda c + (1 - lambda) I(U;X) + lambda I(U;Y)`, and the right
/// side is at most `lambda c + (1 - lambda) H(X) + lambda H(Y)` plus the
/// upper concave envelope at `P_X(0)` of
/// `psi(q) = -(1 - lambda) h2(q) - lambda H(q P_{Y|X=0} + (1-q) P_{Y|X=1})`.
/// The envelope is taken over `grid_points` values of `q`, so the bound is
/// exact up to that discretization. Needs `u_card >= 2`.
pub fn cr_dual_bound_binary(source: &JointSource, c_budget: f64, grid_points: usize) -> Result<f64> {
    if source.nx() != 2 {
        return Err(invalid("dual bound is implemented for binary X only"));
    }
    if grid_points < 3 {
        return Err(invalid("dual bound needs at least 3 grid points"));
    }
    let px = source.px();
    let py = source.py();
    let cond: Vec<Vec<f64>> = source.pmf().iter().zip(&px).map(|(r, p)| r.iter().map(|v| v / p).collect()).collect();
    let qs: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let hq: Vec<f64> = qs.iter().map(|&q| binary_entropy(q)).collect();
    let hy: Vec<f64> = qs
        .iter()
        .map(|&q| entropy(&cond[0].iter().zip(&cond[1]).map(|(a, b)| q * a + (1.0 - q) * b).collect::<Vec<_>>()))
        .collect();
    let target = px[0];
    let (h_x, h_y) = (entropy(&px), entropy(&py));
    let dual = |lambda: f64| -> f64 {
        let psi: Vec<f64> = hq.iter().zip(&hy).map(|(a, b)| -(1.0 - lambda) * a - lambda * b).collect();
        lambda * c_budget + (1.0 - lambda) * h_x + lambda * h_y + upper_envelope_at(&qs, &psi, target)
    };
    // convex in lambda: coarse scan, then golden-section refinement
    let lambdas: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
    let vals: Vec<f64> = lambdas.iter().map(|&l| dual(l)).collect();
    let k = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (mut a, mut b) = (lambdas[k.saturating_sub(1)], lambdas[(k + 1).min(lambdas.len() - 1)]);
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = vals[k];
    for _ in 0..60 {
        let x1 = b - gr * (b - a);
        let x2 = a + gr * (b - a);
        let (f1, f2) = (dual(x1), dual(x2));
        best = best.min(f1).min(f2);
        if f1 < f2 {
            b = x2;
        } else {
            a = x1;
        }
    }
    Ok(best.min(h_x))
}

/// Upper concave envelope of the points `(xs[i], ys[i])` (xs ascending)
/// evaluated at `x`.
fn upper_envelope_at(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[a] - xs[o]) * (ys[i] - ys[o]) - (ys[a] - ys[o]) * (xs[i] - xs[o]);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    for w in hull.windows(2) {
        let (l, r) = (w[0], w[1]);
        if xs[l] <= x && x <= xs[r] {
            let t = (x - xs[l]) / (xs[r] - xs[l]);
            return ys[l] + t * (ys[r] - ys[l]);
        }
    }
    ys[*hull.last().unwrap()]
}

/// One solve per budget, each warm-started from every earlier solution, so
/// the rates are nondecreasing along an ascending grid.
pub fn cr_curve(source: &JointSource, c_grid: &[f64], opts: &CrOptions) -> Result<Vec<CrPoint>> {
    if c_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("budget grid must be sorted ascending"));
    }
    let mut warm: Vec<TestChannel> = Vec::new();
    let mut out: Vec<CrPoint> = Vec::with_capacity(c_grid.len());
    for (i, &c) in c_grid.iter().enumerate() {
        let o = CrOptions { seed: SeedTree::new(opts.seed).index(i as u64).value(), ..*opts };
        let mut p = cr_capacity_from(source, c, &o, &warm)?;
        if let Some(prev) = out.last() {
            if prev.cr_rate > p.cr_rate {
                // a channel feasible at a smaller budget stays feasible
                p = CrPoint::from_channel(source, c, prev.channel.clone());
            }
        }
        warm.push(p.channel.clone());
        out.push(p);
    }
    Ok(out)
}

/// Outage capacity of the ensemble followed by the CR optimization at that
/// budget.
#[derive(Debug, Clone)]
pub struct EtaCrResult {
    pub capacity: CapacityEstimate,
    pub point: CrPoint,
}

pub fn eta_outage_cr_capacity(
    source: &JointSource,
    ensemble: &FadingEnsemble,
    spec: &OutageSpec,
    search: &SearchOptions,
    opts: &CrOptions,
    seed: SeedTree,
) -> Result<EtaCrResult> {
    let capacity = eta_outage_capacity(ensemble, spec, search, seed.label("outage"))?;
    let point = cr_capacity(source, capacity.value_bits.max(0.0), opts)?;
    Ok(EtaCrResult { capacity, point })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bern_half() -> Vec<f64> {
        vec![0.5, 0.5]
    }

    #[test]
    fn entropy_conventions() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        let s = JointSource::dsbs(0.1).unwrap();
        assert!((s.h_x_given_y() - binary_entropy(0.1)).abs() < 1e-12);
    }

    #[test]
    fn source_validation() {
        assert!(JointSource::new(vec![vec![0.5, 0.5], vec![0.0, 0.0]]).is_err());
        assert!(JointSource::new(vec![vec![0.5, 0.0], vec![0.5, 0.0]]).is_err());
        assert!(JointSource::new(vec![vec![0.5, 0.6]]).is_err());
        let csv = "x\\y,a,b\n# comment\nx0,0.45,0.05\nx1,0.05,0.45\n";
        let s = JointSource::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(s, JointSource::with_labels(JointSource::dsbs(0.1).unwrap().pmf, vec!["x0".into(), "x1".into()], vec!["a".into(), "b".into()]).unwrap());
        assert!(JointSource::read_csv("x,a\nx0,zz\n".as_bytes()).is_err());
    }

    #[test]
    fn induced_examples() {
        let p = 0.1;
        let s = JointSource::dsbs(p).unwrap();
        let (iux, iuy) = induced_quantities(&s, &TestChannel::identity(2, 3).unwrap()).unwrap();
        assert!((iux - 1.0).abs() < 1e-12);
        assert!((iuy - (1.0 - binary_entropy(p))).abs() < 1e-12);
        let (a, b) = induced_quantities(&s, &TestChannel::constant(2, &[0.2, 0.3, 0.5]).unwrap()).unwrap();
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
        let same = JointSource::identical(&[0.3, 0.7]).unwrap();
        let ch = TestChannel::new(vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6]]).unwrap();
        let (a, b) = induced_quantities(&same, &ch).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(induced_quantities(&s, &TestChannel::identity(3, 4).unwrap()).is_err());
    }

    #[test]
    fn special_cases() {
        let opts = CrOptions::default();
        let ind = JointSource::independent(&bern_half(), &bern_half()).unwrap();
        let p = cr_capacity(&ind, 0.3, &opts).unwrap();
        assert!((p.cr_rate - 0.3).abs() < 1e-3, "{}", p.cr_rate);
        let same = JointSource::identical(&bern_half()).unwrap();
        assert!((cr_capacity(&same, 0.0, &opts).unwrap().cr_rate - 1.0).abs() < 1e-3);
        let d = JointSource::dsbs(0.1).unwrap();
        let p = cr_capacity(&d, d.h_x_given_y(), &opts).unwrap();
        assert!((p.cr_rate - 1.0).abs() < 1e-2);
        assert!(cr_capacity(&d, -0.1, &opts).is_err());
    }

    #[test]
    fn bruteforce_cases_and_refinement() {
        let ind = JointSource::independent(&bern_half(), &bern_half()).unwrap();
        assert!((cr_capacity_bruteforce(&ind, 0.3, 0.05, None).unwrap().cr_rate - 0.3).abs() < 0.05);
        let d = JointSource::dsbs(0.1).unwrap();
        let coarse = cr_capacity_bruteforce(&d, 0.2, 0.1, None).unwrap();
        let fine = cr_capacity_bruteforce(&d, 0.2, 0.05, None).unwrap();
        assert!(fine.cr_rate >= coarse.cr_rate);
        assert!(matches!(cr_capacity_bruteforce(&d, 0.2, 0.001, None), Err(Error::TooLarge(_))));
        let big = JointSource::independent(&[0.25; 4], &bern_half()).unwrap();
        assert!(matches!(cr_capacity_bruteforce(&big, 0.2, 0.1, None), Err(Error::TooLarge(_))));
    }

    #[test]
    fn optimizer_matches_oracle_on_dsbs() {
        let d = JointSource::dsbs(0.1).unwrap();
        let oracle = cr_capacity_bruteforce(&d, 0.2, 0.02, None).unwrap();
        let opt = cr_capacity(&d, 0.2, &CrOptions::default()).unwrap();
        assert!(opt.cr_rate >= oracle.cr_rate - 0.02, "{} vs {}", opt.cr_rate, oracle.cr_rate);
        assert!(opt.is_feasible(&d));
    }

    #[test]
    fn dual_bound_dominates_and_is_tight() {
        let ind = JointSource::independent(&bern_half(), &bern_half()).unwrap();
        assert!((cr_dual_bound_binary(&ind, 0.3, 20_001).unwrap() - 0.3).abs() < 1e-6);
        let d = JointSource::dsbs(0.1).unwrap();
        let ub = cr_dual_bound_binary(&d, 0.2, 20_001).unwrap();
        let oracle = cr_capacity_bruteforce(&d, 0.2, 0.05, None).unwrap();
        let opt = cr_capacity(&d, 0.2, &CrOptions::default()).unwrap();
        assert!(ub >= oracle.cr_rate - 1e-12);
        assert!(opt.cr_rate <= ub + 1e-6 && opt.cr_rate >= ub - 1e-4, "{} {}", opt.cr_rate, ub);
    }

    #[test]
    fn relabeling_symmetry() {
        let d = JointSource::dsbs(0.2).unwrap();
        let p = cr_capacity(&d, 0.3, &CrOptions::default()).unwrap();
        let q = p.channel.permuted(&[2, 0, 1]).unwrap();
        let (a, b) = induced_quantities(&d, &p.channel).unwrap();
        let (a2, b2) = induced_quantities(&d, &q).unwrap();
        assert!((a - a2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
    }

    #[test]
    fn curve_is_monotone() {
        let d = JointSource::dsbs(0.1).unwrap();
        let grid: Vec<f64> = (0..=5).map(|i| i as f64 * d.h_x_given_y() / 5.0).collect();
        let curve = cr_curve(&d, &grid, &CrOptions::default()).unwrap();
        assert!(curve.windows(2).all(|w| w[1].cr_rate >= w[0].cr_rate - 1e-12));
        assert!(curve[0].cr_rate.abs() < 1e-6);
        assert!((curve.last().unwrap().cr_rate - 1.0).abs() < 1e-9);
        assert!(cr_curve(&d, &[0.2, 0.1], &CrOptions::default()).is_err());
    }
}
