//! Interference matrices and the sufficient conditions for a unique Nash
//! equilibrium, with the Z/P/K matrix tests behind them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::channel::NormalizedGame;
use crate::error::{GameError, Result};

/// Relative slack around the threshold inside which a verdict is a tie.
pub const VERDICT_SLACK: f64 = 1e-9;

const PERRON_TOL: f64 = 1e-13;
const PERRON_MAX_ITER: usize = 2_000_000;
const IS_P_MAX_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqMode {
    All,
    VirtualInterferer,
}

/// Carriers user `q` may ever use as a best response.
///
/// In virtual-interferer mode all opponents are merged into one node with
/// gain `max_r gain2[r][q][j]` and budget `N (Q-1)`, their masks dropped.
/// Carrier `k` is dropped only when even the most depressing such
/// allocation (nothing on `k`) leaves `q` no power on it. The per-carrier
/// fill is bounded below by a convex piece, so the worst case reduces to a
/// fractional knapsack; the bound keeps every carrier that could be used.
pub fn estimate_dq(game: &NormalizedGame, q: usize, mode: DqMode) -> Vec<usize> {
    let n = game.carriers;
    if mode == DqMode::All {
        return (0..n).collect();
    }
    let gap = game.gap[q];
    let g = &game.gain2[q][q];
    let mask = &game.mask[q];
    let virtual_gain: Vec<f64> = (0..n)
        .map(|j| {
            (0..game.users)
                .filter(|&r| r != q)
                .map(|r| game.gain2[r][q][j])
                .fold(0.0, f64::max)
        })
        .collect();
    let budget = n as f64 * (game.users as f64 - 1.0);
    let target = n as f64;

    (0..n)
        .filter(|&k| {
            if g[k] <= 0.0 || mask[k] <= 0.0 {
                return false;
            }
            let level = gap / g[k];
            // (reducible amount, reduction per unit of virtual power)
            let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(n);
            let mut fill = 0.0;
            for j in (0..n).filter(|&j| j != k && g[j] > 0.0) {
                let a = (level - gap / g[j]).min(mask[j]).max(0.0);
                if a > 0.0 {
                    fill += a;
                    pieces.push((a, gap * virtual_gain[j] / g[j]));
                }
            }
            pieces.sort_by(|x, y| y.1.total_cmp(&x.1));
            let mut left = budget;
            for (a, s) in pieces {
                if left <= 0.0 || s <= 0.0 {
                    break;
                }
                let cut = a.min(s * left);
                fill -= cut;
                left -= cut / s;
            }
            fill < target * (1.0 + 1e-12)
        })
        .collect()
}

pub fn estimate_all_dq(game: &NormalizedGame, mode: DqMode) -> Vec<Vec<usize>> {
    (0..game.users).map(|q| estimate_dq(game, q, mode)).collect()
}

fn membership(game: &NormalizedGame, dsets: &[Vec<usize>]) -> Result<Vec<Vec<bool>>> {
    if dsets.len() != game.users {
        return Err(GameError::InvalidInput("one carrier set per user".into()));
    }
    dsets
        .iter()
        .map(|set| {
            let mut m = vec![false; game.carriers];
            for &k in set {
                *m.get_mut(k)
                    .ok_or_else(|| GameError::InvalidInput(format!("carrier {k} out of range")))? =
                    true;
            }
            Ok(m)
        })
        .collect()
}

fn h_entries(game: &NormalizedGame, inside: &[Vec<bool>], k: usize) -> Result<DMatrix<f64>> {
    let users = game.users;
    let mut h = DMatrix::zeros(users, users);
    for q in 0..users {
        for r in 0..users {
            if r == q || !(inside[q][k] && inside[r][k]) {
                continue;
            }
            let direct = game.gain2[q][q][k];
            if direct <= 0.0 {
                return Err(GameError::Numeric(format!(
                    "zero direct gain of user {q} on kept carrier {k}"
                )));
            }
            h[(q, r)] = game.gap[q] * game.gain2[r][q][k] / direct;
        }
    }
    Ok(h)
}

/// `H(k)`: `[H]_qr = G_q gain2[r][q][k] / gain2[q][q][k]` on `D_q ∩ D_r`.
pub fn build_h(game: &NormalizedGame, dsets: &[Vec<usize>], k: usize) -> Result<DMatrix<f64>> {
    if k >= game.carriers {
        return Err(GameError::InvalidInput(format!("carrier {k} out of range")));
    }
    h_entries(game, &membership(game, dsets)?, k)
}

/// Entrywise maximum of `H(k)` over all carriers.
pub fn build_hmax(game: &NormalizedGame, dsets: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let inside = membership(game, dsets)?;
    let mut out = DMatrix::zeros(game.users, game.users);
    for k in 0..game.carriers {
        out = out.zip_map(&h_entries(game, &inside, k)?, f64::max);
    }
    Ok(out)
}

fn check_nonnegative_square(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(GameError::InvalidInput("matrix must be square".into()));
    }
    if m.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(GameError::InvalidInput(
            "matrix must have finite nonnegative entries".into(),
        ));
    }
    Ok(())
}

/// Strongly connected components of the support graph of `m`.
fn components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || m[(i, j)] > 0.0).collect())
        .collect();
    for via in 0..n {
        for i in 0..n {
            if reach[i][via] {
                for j in 0..n {
                    if reach[via][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if seen[i] {
            continue;
        }
        let comp: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            seen[j] = true;
        }
        out.push(comp);
    }
    out
}

/// Perron root and vector of an irreducible nonnegative matrix by power
/// iteration on `sI + m`, stopped on the Collatz-Wielandt bracket.
fn perron_irreducible(m: &DMatrix<f64>, tol: f64) -> Result<(f64, Vec<f64>)> {
    let n = m.nrows();
    if n == 1 {
        return Ok((m[(0, 0)], vec![1.0]));
    }
    let row_max = (0..n).map(|i| m.row(i).sum()).fold(0.0, f64::max);
    let shift = 0.5 * row_max;
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..PERRON_MAX_ITER {
        for i in 0..n {
            y[i] = shift * x[i] + (0..n).map(|j| m[(i, j)] * x[j]).sum::<f64>();
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let ratio = y[i] / x[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        let norm = y.iter().cloned().fold(0.0, f64::max);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GameError::Numeric("power iteration collapsed".into()));
        }
        for i in 0..n {
            x[i] = y[i] / norm;
        }
        if hi - lo <= tol * hi.max(1.0) {
            return Ok(((0.5 * (lo + hi) - shift).max(0.0), x));
        }
    }
    Err(GameError::Numeric(format!(
        "power iteration did not reach tolerance {tol}"
    )))
}

/// Spectral radius of a nonnegative matrix.
pub fn spectral_radius(m: &DMatrix<f64>, tol: f64) -> Result<f64> {
    check_nonnegative_square(m)?;
    if !(tol > 0.0) {
        return Err(GameError::InvalidInput("tolerance must be positive".into()));
    }
    let mut rho = 0.0f64;
    for comp in components(m) {
        let block = DMatrix::from_fn(comp.len(), comp.len(), |i, j| m[(comp[i], comp[j])]);
        if block.iter().all(|&x| x == 0.0) {
            continue;
        }
        rho = rho.max(perron_irreducible(&block, tol)?.0);
    }
    Ok(rho)
}

/// Positive weights that nearly minimize the weighted row sums of `m`: the
/// Perron vector of `m` plus a tiny positive perturbation.
pub fn perron_weights(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_nonnegative_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = m.iter().cloned().fold(0.0, f64::max).max(1.0);
    let perturbed = m.map(|x| x + 1e-10 * scale);
    let (_, v) = perron_irreducible(&perturbed, PERRON_TOL)?;
    let top = v.iter().cloned().fold(0.0, f64::max);
    Ok(v.iter().map(|x| x / top).collect())
}

pub fn is_z(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] <= 0.0))
}

/// Every principal minor positive, by exhaustive enumeration.
pub fn is_p(m: &DMatrix<f64>) -> Result<bool> {
    if !m.is_square() {
        return Err(GameError::InvalidInput("matrix must be square".into()));
    }
    let n = m.nrows();
    if n > IS_P_MAX_DIM {
        return Err(GameError::SizeGuard(format!(
            "principal minor enumeration limited to dimension {IS_P_MAX_DIM}"
        )));
    }
    for subset in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|&i| subset & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
        if !(sub.determinant() > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn is_k(m: &DMatrix<f64>) -> Result<bool> {
    Ok(is_z(m) && is_p(m)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Boundary,
    Unknown,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Outcome of one condition: `value` is compared against `threshold`
/// (`value < threshold` passes, except C7 where `value > threshold` passes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub verdict: Verdict,
    pub value: Option<f64>,
    pub threshold: f64,
    pub note: Option<String>,
}

impl ConditionResult {
    fn below(value: f64, threshold: f64) -> Self {
        let verdict = if value.is_nan() {
            Verdict::Unknown
        } else if threshold.is_infinite() {
            if value.is_finite() { Verdict::Pass } else { Verdict::Boundary }
        } else {
            let margin = value - threshold;
            let slack = VERDICT_SLACK * threshold.abs().max(1.0);
            if margin < -slack {
                Verdict::Pass
            } else if margin > slack {
                Verdict::Fail
            } else {
                Verdict::Boundary
            }
        };
        Self { verdict, value: Some(value), threshold, note: None }
    }

    fn above(value: f64, threshold: f64) -> Self {
        let mut r = Self::below(-value, -threshold);
        r.value = Some(value);
        r.threshold = threshold;
        r
    }

    fn unknown(threshold: f64, err: GameError) -> Self {
        Self { verdict: Verdict::Unknown, value: None, threshold, note: Some(err.to_string()) }
    }

    fn from_result(r: Result<f64>, threshold: f64, build: fn(f64, f64) -> Self) -> Self {
        match r {
            Ok(v) => build(v, threshold),
            Err(e) => Self::unknown(threshold, e),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// Weighted row or column sum condition, with unit and Perron weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCondition {
    pub unit: ConditionResult,
    pub perron: ConditionResult,
    /// Better of the two.
    pub best: ConditionResult,
    /// Weights behind `best`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub dq_mode: DqMode,
    pub dsets: Vec<Vec<usize>>,
    /// `max_k rho(H(k))`.
    pub c1: ConditionResult,
    /// `rho(H^max)`.
    pub c2: ConditionResult,
    /// Weighted row sums.
    pub c3: WeightedCondition,
    /// Weighted column sums.
    pub c4: WeightedCondition,
    /// Largest pairwise coupling against `1/(Q-1)`.
    pub c5: ConditionResult,
    /// Largest pairwise coupling against `1/(2Q-3)`.
    pub c6: ConditionResult,
    /// Smallest eigenvalue of the symmetric part of `I + H(k)` over `k`.
    pub c7: ConditionResult,
}

impl UniquenessReport {
    /// At least one sufficient condition holds.
    pub fn unique(&self) -> bool {
        [&self.c1, &self.c2, &self.c3.best, &self.c4.best, &self.c5, &self.c6, &self.c7]
            .iter()
            .any(|c| c.passed())
    }
}

fn weighted_sums(hs: &[DMatrix<f64>], w: &[f64], rows: bool) -> f64 {
    let mut worst = 0.0f64;
    for h in hs {
        let n = h.nrows();
        for a in 0..n {
            let s: f64 = (0..n)
                .map(|b| if rows { h[(a, b)] * w[b] } else { h[(b, a)] * w[b] })
                .sum();
            worst = worst.max(s / w[a]);
        }
    }
    worst
}

fn weighted_condition(hs: &[DMatrix<f64>], hmax: &DMatrix<f64>, rows: bool) -> WeightedCondition {
    let users = hmax.nrows();
    let ones = vec![1.0; users];
    let unit = ConditionResult::below(weighted_sums(hs, &ones, rows), 1.0);
    let oriented = if rows { hmax.clone() } else { hmax.transpose() };
    let (perron, w) = match perron_weights(&oriented) {
        Ok(w) => (ConditionResult::below(weighted_sums(hs, &w, rows), 1.0), w),
        Err(e) => (ConditionResult::unknown(1.0, e), ones.clone()),
    };
    let perron_better = match (perron.value, unit.value) {
        (Some(p), Some(u)) => p < u,
        (Some(_), None) => true,
        _ => false,
    };
    let (best, weights) = if perron_better { (perron.clone(), w) } else { (unit.clone(), ones) };
    WeightedCondition { unit, perron, best, weights }
}

fn per_carrier(game: &NormalizedGame, dsets: &[Vec<usize>]) -> Result<Vec<DMatrix<f64>>> {
    let inside = membership(game, dsets)?;
    (0..game.carriers).map(|k| h_entries(game, &inside, k)).collect()
}

fn spectral_tol() -> f64 {
    1e-12
}

/// Evaluates C1 through C7. C5, C6 and C7 always use every carrier.
pub fn check_conditions(game: &NormalizedGame, mode: DqMode) -> Result<UniquenessReport> {
    let users = game.users;
    let dsets = estimate_all_dq(game, mode);
    let all = estimate_all_dq(game, DqMode::All);
    let hs = per_carrier(game, &dsets);
    let hmax = hs.as_ref().map_err(Clone::clone).and_then(|hs| {
        Ok(hs.iter().fold(DMatrix::zeros(users, users), |acc, h| acc.zip_map(h, f64::max)))
    });

    let c1 = ConditionResult::from_result(
        hs.as_ref().map_err(Clone::clone).and_then(|hs| {
            hs.iter().try_fold(0.0f64, |acc, h| Ok(acc.max(spectral_radius(h, spectral_tol())?)))
        }),
        1.0,
        ConditionResult::below,
    );
    let c2 = ConditionResult::from_result(
        hmax.as_ref().map_err(Clone::clone).and_then(|m| spectral_radius(m, spectral_tol())),
        1.0,
        ConditionResult::below,
    );
    let (c3, c4) = match (&hs, &hmax) {
        (Ok(hs), Ok(hmax)) => (weighted_condition(hs, hmax, true), weighted_condition(hs, hmax, false)),
        (Err(e), _) | (_, Err(e)) => {
            let u = ConditionResult::unknown(1.0, e.clone());
            let w = WeightedCondition {
                unit: u.clone(),
                perron: u.clone(),
                best: u,
                weights: vec![1.0; users],
            };
            (w.clone(), w)
        }
    };

    let hs_all = per_carrier(game, &all);
    let coupling = hs_all.as_ref().map_err(Clone::clone).map(|hs| {
        hs.iter().flat_map(|h| h.iter().cloned()).fold(0.0, f64::max)
    });
    let q = users as f64;
    let t5 = if users > 1 { 1.0 / (q - 1.0) } else { f64::INFINITY };
    let t6 = if users > 1 { 1.0 / (2.0 * q - 3.0) } else { f64::INFINITY };
    let c5 = ConditionResult::from_result(coupling.clone(), t5, ConditionResult::below);
    let c6 = ConditionResult::from_result(coupling, t6, ConditionResult::below);
    let c7 = ConditionResult::from_result(
        hs_all.map(|hs| {
            hs.iter()
                .map(|h| {
                    let sym = DMatrix::identity(users, users) + (h + h.transpose()) * 0.5;
                    sym.symmetric_eigen().eigenvalues.min()
                })
                .fold(f64::INFINITY, f64::min)
        }),
        0.0,
        ConditionResult::above,
    );

    Ok(UniquenessReport { dq_mode: mode, dsets, c1, c2, c3, c4, c5, c6, c7 })
}
