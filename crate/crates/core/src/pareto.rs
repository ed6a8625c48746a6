//! Rates, rate regions and Pareto comparisons: the weighted-sum problem, the
//! modified game whose equilibria contain its optima, and the max-min bound
//! that every equilibrium rate dominates.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::NormalizedGame;
use crate::equilibrium::{
    classify_profile, solve, EquilibriumResult, Init, PowerProfile, Schedule, SolveOptions,
    DEFAULT_SUPPORT_EPS,
};
use crate::error::{GameError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::waterfill::{waterfill, WaterfillInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    #[default]
    Bits,
    Nats,
}

impl RateUnit {
    pub fn from_nats(self, x: f64) -> f64 {
        match self {
            RateUnit::Bits => x / LN_2,
            RateUnit::Nats => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ne,
    Scalarized,
    Grid,
    ModifiedGame,
    LowInterference,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Ne => "ne",
            Provenance::Scalarized => "scalarized",
            Provenance::Grid => "grid",
            Provenance::ModifiedGame => "modified_game",
            Provenance::LowInterference => "low_interference",
        }
    }
}

/// Per-user rates with where they came from. `label` carries the weights,
/// seed or power split that produced the point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub provenance: Provenance,
    pub label: String,
    pub rates: Vec<f64>,
}

impl RatePoint {
    pub fn sum(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// Strictly positive user weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(GameError::InvalidInput("weights must be positive".into()));
        }
        Ok(Self(w))
    }

    pub fn uniform(users: usize) -> Self {
        Self(vec![1.0; users])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn label(&self) -> String {
        self.0.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
    }
}

fn rate_nats(game: &NormalizedGame, q: usize, p: &[Vec<f64>]) -> f64 {
    (0..game.carriers)
        .map(|k| (1.0 + game.sinr(q, k, p) / game.gap[q]).ln())
        .sum::<f64>()
        / game.carriers as f64
}

fn rates_nats(game: &NormalizedGame, p: &[Vec<f64>]) -> Vec<f64> {
    (0..game.users).map(|q| rate_nats(game, q, p)).collect()
}

pub fn rates_in(p: &PowerProfile, game: &NormalizedGame, unit: RateUnit) -> Vec<f64> {
    rates_nats(game, &p.power).into_iter().map(|x| unit.from_nats(x)).collect()
}

/// `R_q = (1/N) sum_k log2(1 + sinr_q(k) / G_q)` for every user.
pub fn rate_vector(p: &PowerProfile, game: &NormalizedGame) -> RatePoint {
    RatePoint {
        provenance: Provenance::Ne,
        label: String::new(),
        rates: rates_in(p, game, RateUnit::Bits),
    }
}

/// Accumulates `sum_q w_q dR_q/dp` (nats) into `out[r][k]`.
fn weighted_gradient_nats(game: &NormalizedGame, p: &[Vec<f64>], w: &[f64], out: &mut [Vec<f64>]) {
    let n = game.carriers as f64;
    out.iter_mut().for_each(|row| row.iter_mut().for_each(|x| *x = 0.0));
    for (q, &wq) in w.iter().enumerate() {
        if wq == 0.0 {
            continue;
        }
        let gap = game.gap[q];
        for k in 0..game.carriers {
            let floor = gap * game.interference(q, k, p);
            let total = floor + game.gain2[q][q][k] * p[q][k];
            out[q][k] += wq * game.gain2[q][q][k] / total / n;
            let cross = 1.0 / total - 1.0 / floor;
            for r in (0..game.users).filter(|&r| r != q) {
                out[r][k] += wq * gap * game.gain2[r][q][k] * cross / n;
            }
        }
    }
}

/// Gradient of `R_q` (bits) with respect to every `p_r(k)`, indexed `[r][k]`.
pub fn gradient_rq(p: &PowerProfile, game: &NormalizedGame, q: usize) -> Vec<Vec<f64>> {
    let mut w = vec![0.0; game.users];
    w[q] = 1.0 / LN_2;
    let mut out = vec![vec![0.0; game.carriers]; game.users];
    weighted_gradient_nats(game, &p.power, &w, &mut out);
    out
}

/// Euclidean projection onto `{0 <= x <= mask, sum x <= total}`.
pub fn project_box_budget(y: &[f64], mask: &[f64], total: f64) -> Vec<f64> {
    let clip = |tau: f64| -> Vec<f64> {
        y.iter().zip(mask).map(|(&v, &m)| (v - tau).clamp(0.0, m)).collect()
    };
    let first = clip(0.0);
    if first.iter().sum::<f64>() <= total {
        return first;
    }
    let (mut lo, mut hi) = (0.0, y.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clip(mid).iter().sum::<f64>() > total {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    clip(hi)
}

fn project_profile(game: &NormalizedGame, y: &[Vec<f64>], users: &[usize]) -> Vec<Vec<f64>> {
    let mut out = y.to_vec();
    for &q in users {
        out[q] = project_box_budget(&y[q], &game.mask[q], game.carriers as f64);
    }
    out
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>], users: &[usize]) -> f64 {
    users
        .iter()
        .flat_map(|&q| a[q].iter().zip(&b[q]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn axpy(p: &[Vec<f64>], t: f64, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    p.iter()
        .zip(d)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + t * y).collect())
        .collect()
}

fn inner(a: &[Vec<f64>], b: &[Vec<f64>], users: &[usize]) -> f64 {
    users
        .iter()
        .map(|&q| a[q].iter().zip(&b[q]).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

/// Outcome of a projected-gradient run.
struct Ascent {
    p: Vec<Vec<f64>>,
    value: f64,
    /// Sup-norm move of a unit projected step at `p`.
    stationarity: f64,
    iterations: usize,
    trace: Vec<f64>,
}

/// Projected gradient ascent of `value` over the coordinates of `users` with
/// Armijo backtracking. The step is measured on the `N`-scaled gradient so a
/// unit step moves power by O(1) per carrier; it starts at `t0`, halves on
/// failed ascent and doubles after a step accepted outright.
#[allow(clippy::too_many_arguments)]
fn projected_ascent(
    game: &NormalizedGame,
    start: Vec<Vec<f64>>,
    users: &[usize],
    t0: f64,
    tol: f64,
    max_iter: usize,
    value: &dyn Fn(&[Vec<f64>]) -> f64,
    gradient: &dyn Fn(&[Vec<f64>], &mut [Vec<f64>]),
) -> Ascent {
    let n = game.carriers as f64;
    let mut p = project_profile(game, &start, users);
    let mut f = value(&p);
    let mut g = vec![vec![0.0; game.carriers]; game.users];
    let mut t = t0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let stationarity = loop {
        gradient(&p, &mut g);
        for q in 0..game.users {
            if users.contains(&q) {
                g[q].iter_mut().for_each(|x| *x *= n);
            } else {
                g[q].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let stationarity = sup_diff(&p, &project_profile(game, &axpy(&p, 1.0, &g), users), users);
        if stationarity <= tol || iterations >= max_iter {
            break stationarity;
        }
        iterations += 1;
        let mut backtracked = false;
        let accepted = loop {
            let y = project_profile(game, &axpy(&p, t, &g), users);
            let step: Vec<Vec<f64>> = y
                .iter()
                .zip(&p)
                .map(|(a, b)| a.iter().zip(b).map(|(x, z)| x - z).collect())
                .collect();
            let gain = inner(&g, &step, users) / n;
            let fy = value(&y);
            if gain > 0.0 && fy >= f + 1e-4 * gain {
                trace.push(sup_diff(&y, &p, users));
                p = y;
                f = fy;
                break true;
            }
            t *= 0.5;
            backtracked = true;
            if t < 1e-18 {
                break false;
            }
        };
        if !accepted {
            // no ascent left above rounding noise
            break stationarity;
        }
        if !backtracked {
            t = (2.0 * t).min(1e8);
        }
    };
    Ascent { p, value: f, stationarity, iterations, trace }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizedOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Additional starting profiles tried before the seeded restarts.
    #[serde(default)]
    pub extra_starts: Vec<PowerProfile>,
}

impl Default for ScalarizedOptions {
    fn default() -> Self {
        Self { restarts: 8, tol: 1e-6, max_iter: 20_000, seed: 0, extra_starts: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarizedResult {
    pub profile: PowerProfile,
    /// `sum_q lambda_q R_q` in bits.
    pub value: f64,
    pub rates: RatePoint,
    /// Objective reached by every start, in order.
    pub restart_values: Vec<f64>,
    /// The best start met the stationarity tolerance.
    pub converged: bool,
}

/// Restart `i`: uniform first, then alternately spread and concentrated draws.
fn start_profile(game: &NormalizedGame, seed: u64, i: usize) -> PowerProfile {
    if i == 0 {
        return PowerProfile::uniform(game);
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
    let sharp = i % 2 == 0;
    let n = game.carriers;
    let power = (0..game.users)
        .map(|_| {
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    let e = -rng.random::<f64>().max(1e-300).ln();
                    if sharp { e.powi(4) } else { e }
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s * n as f64).collect()
        })
        .collect();
    PowerProfile::new(power)
}

/// Local maximization of `sum_q lambda_q R_q` over all admissible profiles
/// from several starts; the best local optimum is returned.
pub fn solve_scalarized(
    game: &NormalizedGame,
    lambda: &Weights,
    opts: &ScalarizedOptions,
) -> Result<ScalarizedResult> {
    let w = lambda.as_slice();
    if w.len() != game.users {
        return Err(GameError::InvalidInput("one weight per user".into()));
    }
    let users: Vec<usize> = (0..game.users).collect();
    let value = |p: &[Vec<f64>]| -> f64 {
        rates_nats(game, p).iter().zip(w).map(|(r, l)| r * l).sum()
    };
    let gradient = |p: &[Vec<f64>], out: &mut [Vec<f64>]| weighted_gradient_nats(game, p, w, out);

    let starts = opts
        .extra_starts
        .iter()
        .cloned()
        .chain((0..opts.restarts.max(1)).map(|i| start_profile(game, opts.seed, i)));
    let mut best: Option<Ascent> = None;
    let mut restart_values = Vec::new();
    for start in starts {
        if start.users() != game.users || start.carriers() != game.carriers {
            return Err(GameError::InvalidInput("start profile has the wrong shape".into()));
        }
        let run =
            projected_ascent(game, start.power, &users, 1.0, opts.tol, opts.max_iter, &value, &gradient);
        if !run.value.is_finite() {
            return Err(GameError::Numeric("non-finite objective".into()));
        }
        restart_values.push(run.value / LN_2);
        if best.as_ref().map_or(true, |b| run.value > b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let profile = PowerProfile::new(best.p);
    let rates = RatePoint {
        provenance: Provenance::Scalarized,
        label: lambda.label(),
        rates: rates_in(&profile, game, RateUnit::Bits),
    };
    Ok(ScalarizedResult {
        profile,
        value: best.value / LN_2,
        rates,
        restart_values,
        converged: best.stationarity <= opts.tol,
    })
}

/// `R_q + (1/lambda_q) sum_{r != q} lambda_r R_r`, in bits.
pub fn modified_payoff(p: &PowerProfile, game: &NormalizedGame, lambda: &Weights, q: usize) -> f64 {
    let r = rates_in(p, game, RateUnit::Bits);
    let w = lambda.as_slice();
    r[q] + (0..game.users).filter(|&s| s != q).map(|s| w[s] * r[s]).sum::<f64>() / w[q]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedGameOptions {
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for ModifiedGameOptions {
    fn default() -> Self {
        Self { step: 1.0, tol: 1e-6, max_iter: 100_000, init: Init::Uniform }
    }
}

/// Simultaneous projected-gradient play of the modified game: each user
/// steps along the gradient of its own modified payoff with a weight
/// proportional to `lambda_q`. All payoffs are multiples of the weighted sum
/// rate, so the common step is backtracked until that sum increases.
pub fn solve_modified_game(
    game: &NormalizedGame,
    lambda: &Weights,
    opts: &ModifiedGameOptions,
) -> Result<EquilibriumResult> {
    let w = lambda.as_slice();
    if w.len() != game.users {
        return Err(GameError::InvalidInput("one weight per user".into()));
    }
    if !(opts.step > 0.0 && opts.tol > 0.0) {
        return Err(GameError::InvalidInput("step and tolerance must be positive".into()));
    }
    let users: Vec<usize> = (0..game.users).collect();
    let w_max = w.iter().cloned().fold(0.0, f64::max);
    let start = match &opts.init {
        Init::Uniform => PowerProfile::uniform(game),
        Init::Random { seed } => PowerProfile::random(game, *seed),
        Init::Profile(p) => p.clone(),
    };
    if start.users() != game.users || start.carriers() != game.carriers {
        return Err(GameError::InvalidInput("initial profile has the wrong shape".into()));
    }
    // player q moves along (lambda_q / lambda_max) grad_q Phi_q = grad_q F / lambda_max,
    // where F = sum_r lambda_r R_r is a common potential for all players
    let value = |p: &[Vec<f64>]| -> f64 {
        rates_nats(game, p).iter().zip(w).map(|(r, l)| r * l).sum::<f64>() / w_max
    };
    let gradient = |p: &[Vec<f64>], out: &mut [Vec<f64>]| {
        weighted_gradient_nats(game, p, w, out);
        out.iter_mut().for_each(|row| row.iter_mut().for_each(|x| *x /= w_max));
    };
    let run = projected_ascent(game, start.power, &users, opts.step, opts.tol, opts.max_iter, &value, &gradient);
    if !run.value.is_finite() {
        return Err(GameError::Numeric("non-finite iterate in modified game".into()));
    }
    let (p, residual, iterations, trace) = (run.p, run.stationarity, run.iterations, run.trace);
    let profile = PowerProfile::new(p);
    let converged = residual <= opts.tol;
    let classification = converged.then(|| classify_profile(&profile, DEFAULT_SUPPORT_EPS));
    Ok(EquilibriumResult {
        profile,
        residual,
        iterations,
        schedule: Schedule::Simultaneous,
        converged,
        trace,
        classification,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinmaxMethod {
    /// Projected gradient descent of the best-response rate over opponents.
    Saddle,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinmaxOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Points per carrier of the fallback grid.
    pub grid: usize,
    pub force_grid: bool,
}

impl Default for MinmaxOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 20_000, grid: 64, force_grid: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinmaxResult {
    /// `max_{p_q} min_{p_-q} R_q` in bits.
    pub value: f64,
    pub method: MinmaxMethod,
    /// Worst-case opponents found (row `q` holds the matching best response).
    pub profile: PowerProfile,
    pub converged: bool,
}

/// Best response of `q` and its rate (nats) against `p`.
fn best_rate(game: &NormalizedGame, q: usize, p: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let input = WaterfillInput {
        gain: game.gain2[q][q].clone(),
        interference: (0..game.carriers).map(|k| game.interference(q, k, p)).collect(),
        gap: game.gap[q],
        mask: game.mask[q].clone(),
        budget: 1.0,
    };
    let br = waterfill(&input)?;
    let mut full = p.to_vec();
    full[q] = br.clone();
    let r = rate_nats(game, q, &full);
    Ok((br, r))
}

/// Compositions of `units` into `parts` nonnegative parts.
fn compositions(parts: usize, units: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k + 1 == cur.len() {
            cur[k] = left;
            out.push(cur.clone());
            return;
        }
        for c in 0..=left {
            cur[k] = c;
            rec(k + 1, left - c, cur, out);
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(0, units, &mut vec![0; parts], &mut out);
    }
    out
}

fn minmax_grid(game: &NormalizedGame, q: usize, grid: usize) -> Result<MinmaxResult> {
    if game.users * game.carriers > 6 {
        return Err(GameError::SizeGuard("grid min-max needs Q*N <= 6".into()));
    }
    let n = game.carriers;
    let units = grid.max(2) - 1;
    let step = n as f64 / units as f64;
    let per_user: Vec<Vec<Vec<f64>>> = (0..game.users)
        .map(|r| {
            compositions(n, units)
                .into_iter()
                .map(|c| c.iter().map(|&x| x as f64 * step).collect::<Vec<f64>>())
                .filter(|v| v.iter().zip(&game.mask[r]).all(|(&x, &m)| x <= m + 1e-12))
                .collect()
        })
        .collect();
    let opponents: Vec<usize> = (0..game.users).filter(|&r| r != q).collect();
    if opponents.iter().any(|&r| per_user[r].is_empty()) {
        return Err(GameError::Precondition("masks leave no gridded opponent strategy".into()));
    }
    let mut idx = vec![0usize; opponents.len()];
    let mut p = vec![vec![0.0; n]; game.users];
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    loop {
        for (slot, &r) in opponents.iter().enumerate() {
            p[r] = per_user[r][idx[slot]].clone();
        }
        let (br, v) = best_rate(game, q, &p)?;
        if best.as_ref().map_or(true, |b| v < b.0) {
            let mut full = p.clone();
            full[q] = br;
            best = Some((v, full));
        }
        // odometer
        let mut slot = 0;
        loop {
            if slot == opponents.len() {
                let (v, prof) = best.expect("nonempty grid");
                return Ok(MinmaxResult {
                    value: v / LN_2,
                    method: MinmaxMethod::Grid,
                    profile: PowerProfile::new(prof),
                    converged: true,
                });
            }
            idx[slot] += 1;
            if idx[slot] < per_user[opponents[slot]].len() {
                break;
            }
            idx[slot] = 0;
            slot += 1;
        }
    }
}

/// Worst-case rate of user `q`. The best-response rate is convex in the
/// opponents' powers, so it is minimized by projected gradient descent with
/// the gradient taken at the best response. Small games fall back to a grid
/// when the descent stalls.
pub fn minmax_bound(game: &NormalizedGame, q: usize, opts: &MinmaxOptions) -> Result<MinmaxResult> {
    if q >= game.users {
        return Err(GameError::InvalidInput(format!("no user {q}")));
    }
    let n = game.carriers;
    if game.users == 1 {
        let (br, v) = best_rate(game, q, &[vec![0.0; n]])?;
        return Ok(MinmaxResult {
            value: v / LN_2,
            method: MinmaxMethod::Saddle,
            profile: PowerProfile::new(vec![br]),
            converged: true,
        });
    }
    let small = game.users * n <= 6;
    if opts.force_grid {
        return minmax_grid(game, q, opts.grid);
    }
    let opponents: Vec<usize> = (0..game.users).filter(|&r| r != q).collect();
    let start = PowerProfile::uniform(game).power;
    let failure = std::cell::RefCell::new(None);
    let value = |p: &[Vec<f64>]| -> f64 {
        match best_rate(game, q, p) {
            Ok((_, v)) => -v,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                f64::NAN
            }
        }
    };
    let gradient = |p: &[Vec<f64>], out: &mut [Vec<f64>]| {
        let mut full = p.to_vec();
        if let Ok((br, _)) = best_rate(game, q, p) {
            full[q] = br;
        }
        let mut w = vec![0.0; game.users];
        w[q] = -1.0;
        weighted_gradient_nats(game, &full, &w, out);
    };
    let run = projected_ascent(game, start, &opponents, 1.0, opts.tol, opts.max_iter, &value, &gradient);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let converged = run.stationarity <= opts.tol;
    if !converged && small {
        return minmax_grid(game, q, opts.grid);
    }
    let (br, v) = best_rate(game, q, &run.p)?;
    let mut prof = run.p;
    prof[q] = br;
    Ok(MinmaxResult {
        value: v / LN_2,
        method: MinmaxMethod::Saddle,
        profile: PowerProfile::new(prof),
        converged,
    })
}

/// High-snr, low-interference rate approximation
/// `(1/N) sum_k log2(G_qq p_q / (1 + sum_{r != q} G_rq p_r))` with
/// `G_qq = gain2[q][q] / G_q` and `G_rq = gain2[r][q]`.
pub fn low_interference_rate(p: &PowerProfile, game: &NormalizedGame) -> Result<RatePoint> {
    if p.power.iter().flatten().any(|&x| !(x > 0.0)) {
        return Err(GameError::Domain(
            "approximation needs positive power on every carrier".into(),
        ));
    }
    let n = game.carriers;
    let rates = (0..game.users)
        .map(|q| {
            (0..n)
                .map(|k| {
                    let signal = game.gain2[q][q][k] / game.gap[q] * p.power[q][k];
                    (signal / game.interference(q, k, &p.power)).log2()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(RatePoint { provenance: Provenance::LowInterference, label: String::new(), rates })
}

/// `p(k) = a(k)^alpha b(k)^(1 - alpha)` carrier by carrier.
pub fn geometric_combination(a: &PowerProfile, b: &PowerProfile, alpha: f64) -> PowerProfile {
    let beta = 1.0 - alpha;
    PowerProfile::new(
        a.power
            .iter()
            .zip(&b.power)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.powf(alpha) * v.powf(beta)).collect())
            .collect(),
    )
}

/// Indices of the points not strictly dominated by any other point.
/// Duplicates are all kept.
pub fn pareto_filter(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .iter()
            .zip(&points[a])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let dominates = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
    };
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| dominates(&points[f], &points[i])) {
            front.push(i);
        }
    }
    front.sort_unstable();
    front
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every user keeps its own budget; profiles are gridded directly.
    PerUser,
    /// The total budget is split among users and each split is played to a
    /// Nash equilibrium.
    TotalPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRegion {
    pub points: Vec<RatePoint>,
    /// Indices into `points` of the Pareto subset.
    pub pareto: Vec<usize>,
    /// Splits whose equilibrium iteration did not converge (total-power mode).
    pub skipped: usize,
}

impl RateRegion {
    pub fn frontier(&self) -> impl Iterator<Item = &RatePoint> {
        self.pareto.iter().map(|&i| &self.points[i])
    }
}

const REGION_MAX_PROFILES: usize = 4_000_000;

/// Samples the rate region on a grid of `resolution` steps per budget.
pub fn sample_rate_region(
    game: &NormalizedGame,
    resolution: usize,
    mode: BudgetMode,
) -> Result<RateRegion> {
    if resolution < 2 {
        return Err(GameError::SizeGuard("resolution must be at least 2".into()));
    }
    let users = game.users;
    let n = game.carriers;
    let mut points = Vec::new();
    let mut skipped = 0;
    match mode {
        BudgetMode::PerUser => {
            if users > 3 {
                return Err(GameError::SizeGuard("grid region limited to Q <= 3".into()));
            }
            let step = n as f64 / resolution as f64;
            // a slack part lets users spend less than the budget
            let per_user: Vec<Vec<Vec<f64>>> = (0..users)
                .map(|q| {
                    compositions(n + 1, resolution)
                        .into_iter()
                        .map(|c| c[..n].iter().map(|&x| x as f64 * step).collect::<Vec<f64>>())
                        .filter(|v| v.iter().zip(&game.mask[q]).all(|(&x, &m)| x <= m + 1e-12))
                        .collect()
                })
                .collect();
            let total = per_user
                .iter()
                .try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
                .filter(|&t| t <= REGION_MAX_PROFILES)
                .ok_or_else(|| GameError::SizeGuard("grid region too large".into()))?;
            let mut p = vec![vec![0.0; n]; users];
            for idx in 0..total {
                let mut rest = idx;
                for q in (0..users).rev() {
                    let s = per_user[q].len();
                    p[q].clone_from(&per_user[q][rest % s]);
                    rest /= s;
                }
                points.push(RatePoint {
                    provenance: Provenance::Grid,
                    label: idx.to_string(),
                    rates: rates_nats(game, &p).into_iter().map(|x| x / LN_2).collect(),
                });
            }
        }
        BudgetMode::TotalPower => {
            for split in compositions(users, resolution) {
                if split.contains(&0) {
                    continue;
                }
                let scale: Vec<f64> = split
                    .iter()
                    .map(|&c| users as f64 * c as f64 / resolution as f64)
                    .collect();
                let scaled = game.with_power_scaling(&scale)?;
                let res = solve(&scaled, &SolveOptions::default())?;
                if !res.converged {
                    skipped += 1;
                    continue;
                }
                let label = scale.iter().map(|s| format!("{s}")).collect::<Vec<_>>().join(";");
                points.push(RatePoint {
                    provenance: Provenance::Ne,
                    label,
                    rates: rates_in(&res.profile, &scaled, RateUnit::Bits),
                });
            }
        }
    }
    let raw: Vec<Vec<f64>> = points.iter().map(|p| p.rates.clone()).collect();
    let pareto = pareto_filter(&raw);
    Ok(RateRegion { points, pareto, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game2() -> NormalizedGame {
        NormalizedGame::from_gains(
            vec![
                vec![vec![3.0, 1.0], vec![0.5, 0.2]],
                vec![vec![0.4, 0.1], vec![2.0, 4.0]],
            ],
            vec![1.0, 1.5],
        )
        .unwrap()
    }

    #[test]
    fn single_flat_unit_rate_is_one_bit() {
        let g = NormalizedGame::from_gains(vec![vec![vec![1.0; 4]]], vec![1.0]).unwrap();
        let r = rate_vector(&PowerProfile::new(vec![vec![1.0; 4]]), &g);
        assert!((r.rates[0] - 1.0).abs() < 1e-15);
        let z = rate_vector(&PowerProfile::zeros(1, 4), &g);
        assert_eq!(z.rates[0], 0.0);
    }

    #[test]
    fn hand_evaluated_two_user_rates() {
        let g = game2();
        let p = PowerProfile::new(vec![vec![1.5, 0.5], vec![0.5, 1.5]]);
        let r = rate_vector(&p, &g);
        // user 0: k0 sinr 3*1.5/(1+0.4*0.5)=3.75, k1 1*0.5/(1+0.1*1.5)=0.4348
        let r0 = ((1.0f64 + 4.5 / 1.2).log2() + (1.0f64 + 0.5 / 1.15).log2()) / 2.0;
        // user 1 (gap 1.5): k0 2*0.5/(1+0.5*1.5), k1 4*1.5/(1+0.2*0.5)
        let r1 = ((1.0f64 + 1.0 / 1.75 / 1.5).log2() + (1.0f64 + 6.0 / 1.1 / 1.5).log2()) / 2.0;
        assert!((r.rates[0] - r0).abs() < 1e-14);
        assert!((r.rates[1] - r1).abs() < 1e-14);
    }

    #[test]
    fn gradient_signs() {
        let g = game2();
        let p = PowerProfile::new(vec![vec![1.0, 1.0], vec![0.3, 1.7]]);
        for q in 0..2 {
            let d = gradient_rq(&p, &g, q);
            for k in 0..2 {
                assert!(d[q][k] > 0.0);
                assert!(d[1 - q][k] <= 0.0);
            }
        }
    }

    #[test]
    fn projection_cases() {
        let inf = f64::INFINITY;
        assert_eq!(project_box_budget(&[0.5, -1.0], &[inf, inf], 2.0), vec![0.5, 0.0]);
        let p = project_box_budget(&[3.0, 1.0], &[inf, inf], 2.0);
        assert!((p[0] - 2.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = project_box_budget(&[3.0, 2.0, 0.0], &[1.0, inf, inf], 2.0);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2] == 0.0);
    }

    #[test]
    fn pareto_filter_drops_dominated() {
        let pts = vec![
            vec![1.0, 1.0],
            vec![2.0, 0.5],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.9, 1.0],
            vec![0.0, 2.0],
        ];
        assert_eq!(pareto_filter(&pts), vec![0, 1, 3, 5]);
    }

    #[test]
    fn single_user_scalarized_is_waterfill() {
        let g = NormalizedGame::from_gains(vec![vec![vec![4.0, 1.0]]], vec![1.0]).unwrap();
        let res = solve_scalarized(&g, &Weights::new(vec![2.5]).unwrap(), &Default::default()).unwrap();
        assert!(res.converged);
        assert!((res.profile.power[0][0] - 1.375).abs() < 1e-8);
        assert!((res.profile.power[0][1] - 0.625).abs() < 1e-8);
    }

    #[test]
    fn single_user_region_and_minmax() {
        let g = NormalizedGame::from_gains(vec![vec![vec![4.0, 1.0]]], vec![1.0]).unwrap();
        let wf = rate_vector(&PowerProfile::new(vec![vec![1.375, 0.625]]), &g).rates[0];
        let m = minmax_bound(&g, 0, &Default::default()).unwrap();
        assert!((m.value - wf).abs() < 1e-12);
        let region = sample_rate_region(&g, 40, BudgetMode::PerUser).unwrap();
        // the grid straddles the optimum symmetrically, so the top may be tied
        let top = region.points[region.pareto[0]].rates[0];
        assert!(region.frontier().all(|p| (p.rates[0] - top).abs() < 1e-14));
        assert!(top <= wf + 1e-12 && wf - top < 1e-3);
    }

    #[test]
    fn zero_cross_gain_minmax_is_single_user_rate() {
        let g = NormalizedGame::from_gains(
            vec![
                vec![vec![4.0, 1.0], vec![1.0, 1.0]],
                vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            ],
            vec![1.0, 1.0],
        )
        .unwrap();
        let m = minmax_bound(&g, 0, &Default::default()).unwrap();
        let wf = rate_vector(&PowerProfile::new(vec![vec![1.375, 0.625], vec![0.0; 2]]), &g).rates[0];
        assert!((m.value - wf).abs() < 1e-10);
    }

    #[test]
    fn low_interference_domain_and_identity() {
        let g = game2();
        let bad = PowerProfile::new(vec![vec![2.0, 0.0], vec![1.0, 1.0]]);
        assert!(matches!(low_interference_rate(&bad, &g), Err(GameError::Domain(_))));
        let a = PowerProfile::new(vec![vec![1.2, 0.8], vec![0.5, 1.5]]);
        let b = PowerProfile::new(vec![vec![0.3, 1.7], vec![1.0, 1.0]]);
        assert_eq!(geometric_combination(&a, &b, 1.0), a);
        let c = geometric_combination(&a, &b, 0.5);
        assert!(c.is_feasible(&g, 1e-12));
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(Weights::new(vec![1.0, 0.0]).is_err());
        assert!(Weights::new(vec![]).is_err());
    }
}
