//! Nash equilibria of the vector game: fixed-point iteration of the
//! waterfilling map, regime classification, the subcarrier allocation rule
//! of orthogonal equilibria, and a gridded brute-force oracle for small games.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::NormalizedGame;
use crate::error::{GameError, Result};
use crate::rng::rng_from_seed;
use crate::waterfill::{waterfill, WaterfillInput};

/// Support threshold used to decide whether a user is active on a carrier.
pub const DEFAULT_SUPPORT_EPS: f64 = 1e-6;

/// Stacked per-user power allocation `power[q][k]`, relative to each budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    pub power: Vec<Vec<f64>>,
}

impl PowerProfile {
    pub fn new(power: Vec<Vec<f64>>) -> Self {
        Self { power }
    }

    pub fn zeros(users: usize, carriers: usize) -> Self {
        Self::new(vec![vec![0.0; carriers]; users])
    }

    /// `p_q(k) = 1` clipped to the mask.
    pub fn uniform(game: &NormalizedGame) -> Self {
        Self::new(
            game.mask
                .iter()
                .map(|m| m.iter().map(|&x| x.min(1.0)).collect())
                .collect(),
        )
    }

    /// Random point of each user's feasible set with the budget spent
    /// (Dirichlet-like draw, then clipped to the mask).
    pub fn random(game: &NormalizedGame, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let n = game.carriers;
        let power = (0..game.users)
            .map(|q| {
                let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let s: f64 = w.iter().sum();
                w.iter()
                    .zip(&game.mask[q])
                    .map(|(&x, &m)| (x / s * n as f64).min(m))
                    .collect()
            })
            .collect();
        Self::new(power)
    }

    pub fn users(&self) -> usize {
        self.power.len()
    }

    pub fn carriers(&self) -> usize {
        self.power.first().map_or(0, Vec::len)
    }

    /// Membership in every user's admissible set, up to `tol`.
    pub fn is_feasible(&self, game: &NormalizedGame, tol: f64) -> bool {
        self.users() == game.users
            && self.power.iter().zip(&game.mask).all(|(p, m)| {
                p.len() == game.carriers
                    && p.iter().zip(m).all(|(&x, &cap)| x >= -tol && x <= cap + tol)
                    && p.iter().sum::<f64>() / game.carriers as f64 <= 1.0 + tol
            })
    }

    pub fn sup_distance(&self, other: &PowerProfile) -> f64 {
        self.power
            .iter()
            .flatten()
            .zip(other.power.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_shape(&self, game: &NormalizedGame) -> Result<()> {
        if self.users() != game.users || self.power.iter().any(|p| p.len() != game.carriers) {
            return Err(GameError::InvalidInput(format!(
                "profile must be {}x{}",
                game.users, game.carriers
            )));
        }
        Ok(())
    }
}

/// Waterfill input of user `q` against the opponents in `p`.
pub fn best_response_input(q: usize, p: &PowerProfile, game: &NormalizedGame) -> WaterfillInput {
    let n = game.carriers;
    WaterfillInput {
        gain: game.gain2[q][q].clone(),
        interference: (0..n).map(|k| game.interference(q, k, &p.power)).collect(),
        gap: game.gap[q],
        mask: game.mask[q].clone(),
        budget: 1.0,
    }
}

/// Masked waterfill of user `q` against the opponents in `p`.
pub fn best_response(q: usize, p: &PowerProfile, game: &NormalizedGame) -> Result<Vec<f64>> {
    p.check_shape(game)?;
    if q >= game.users {
        return Err(GameError::InvalidInput(format!("no user {q}")));
    }
    waterfill(&best_response_input(q, p, game))
}

/// Sup-norm of `p - WF(p)` stacked over users.
pub fn fixed_point_residual(p: &PowerProfile, game: &NormalizedGame) -> Result<f64> {
    let mut worst = 0.0f64;
    for q in 0..game.users {
        let br = best_response(q, p, game)?;
        for (a, b) in br.iter().zip(&p.power[q]) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Gauss-Seidel: users update in order `0..Q` within a sweep.
    Sequential,
    /// Jacobi: all users respond to the previous iterate.
    Simultaneous,
    /// Gauss-Seidel with a fresh random user order every sweep.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Uniform,
    Random { seed: u64 },
    Profile(PowerProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub schedule: Schedule,
    pub init: Init,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            schedule: Schedule::Sequential,
            init: Init::Uniform,
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

/// Regime record of an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// `exclusive[q]`: carriers where only `q` is active.
    pub exclusive: Vec<Vec<usize>>,
    /// Carriers with at least two active users.
    pub shared_carriers: usize,
    /// Carriers with at least one active user.
    pub active_carriers: usize,
    /// Every active carrier is exclusive to one user.
    pub orthogonal: bool,
    /// Coefficient of variation of each user's PSD over its support.
    pub flatness: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub profile: PowerProfile,
    pub residual: f64,
    pub iterations: usize,
    pub schedule: Schedule,
    pub converged: bool,
    /// Sup-norm change of the iterate at every sweep.
    pub trace: Vec<f64>,
    pub classification: Option<Classification>,
}

/// Iterated best responses until the fixed-point residual drops below `tol`.
/// Non-convergence is reported through `converged = false`.
pub fn solve(game: &NormalizedGame, opts: &SolveOptions) -> Result<EquilibriumResult> {
    if !(opts.tol > 0.0) {
        return Err(GameError::InvalidInput("tolerance must be positive".into()));
    }
    let mut p = match &opts.init {
        Init::Uniform => PowerProfile::uniform(game),
        Init::Random { seed } => PowerProfile::random(game, *seed),
        Init::Profile(p) => {
            p.check_shape(game)?;
            p.clone()
        }
    };
    let users = game.users;
    let mut order: Vec<usize> = (0..users).collect();
    let mut shuffle_rng = match opts.schedule {
        Schedule::Shuffled { seed } => Some(rng_from_seed(seed)),
        _ => None,
    };

    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let change = match opts.schedule {
            Schedule::Simultaneous => {
                let next = (0..users)
                    .map(|q| best_response(q, &p, game))
                    .collect::<Result<Vec<_>>>()?;
                let next = PowerProfile::new(next);
                let change = next.sup_distance(&p);
                p = next;
                change
            }
            Schedule::Sequential | Schedule::Shuffled { .. } => {
                if let Some(rng) = shuffle_rng.as_mut() {
                    order.shuffle(rng);
                }
                let mut change = 0.0f64;
                for &q in &order {
                    let br = best_response(q, &p, game)?;
                    for (a, b) in br.iter().zip(&p.power[q]) {
                        change = change.max((a - b).abs());
                    }
                    p.power[q] = br;
                }
                change
            }
        };
        if !change.is_finite() || p.power.iter().flatten().any(|x| !x.is_finite()) {
            return Err(GameError::Numeric(format!(
                "non-finite iterate at sweep {iterations}"
            )));
        }
        trace.push(change);
        if change <= opts.tol {
            residual = fixed_point_residual(&p, game)?;
            if residual <= opts.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        residual = fixed_point_residual(&p, game)?;
        converged = residual <= opts.tol;
    }
    let mut result = EquilibriumResult {
        profile: p,
        residual,
        iterations,
        schedule: opts.schedule,
        converged,
        trace,
        classification: None,
    };
    if converged {
        result.classification = Some(classify_equilibrium(&result, game, DEFAULT_SUPPORT_EPS)?);
    }
    Ok(result)
}

/// Coefficient of variation (population) of the entries above `eps`.
pub fn flatness_index(p: &[f64], eps: f64) -> f64 {
    let support: Vec<f64> = p.iter().cloned().filter(|&x| x > eps).collect();
    if support.len() < 2 {
        return 0.0;
    }
    let n = support.len() as f64;
    let mean = support.iter().sum::<f64>() / n;
    let var = support.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

pub fn classify_profile(p: &PowerProfile, eps: f64) -> Classification {
    let users = p.users();
    let n = p.carriers();
    let mut exclusive = vec![Vec::new(); users];
    let mut shared = 0;
    let mut active = 0;
    for k in 0..n {
        let on: Vec<usize> = (0..users).filter(|&q| p.power[q][k] > eps).collect();
        match on.len() {
            0 => {}
            1 => {
                active += 1;
                exclusive[on[0]].push(k);
            }
            _ => {
                active += 1;
                shared += 1;
            }
        }
    }
    Classification {
        exclusive,
        shared_carriers: shared,
        active_carriers: active,
        orthogonal: shared == 0 && active > 0,
        flatness: p.power.iter().map(|row| flatness_index(row, eps)).collect(),
        eps,
    }
}

pub fn classify_equilibrium(
    res: &EquilibriumResult,
    game: &NormalizedGame,
    eps: f64,
) -> Result<Classification> {
    if !res.converged {
        return Err(GameError::Precondition(
            "classification needs a converged equilibrium".into(),
        ));
    }
    res.profile.check_shape(game)?;
    Ok(classify_profile(&res.profile, eps))
}

/// A pair of carriers contradicting the allocation rule of orthogonal
/// equilibria: `k_r` held by `r`, `k_q` held by `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub r: usize,
    pub q: usize,
    pub k_r: usize,
    pub k_q: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Medium-interference premise for the allocation rule: for every `q`, every
/// `k` in its exclusive set and every `r != q`,
/// `G_q gain2[q][r][k] / gain2[q][q][k] <= 1`.
pub fn allocation_premise_holds(game: &NormalizedGame, exclusive: &[Vec<usize>]) -> bool {
    exclusive.iter().enumerate().all(|(q, set)| {
        set.iter().all(|&k| {
            (0..game.users).filter(|&r| r != q).all(|r| {
                game.gap[q] * game.gain2[q][r][k] <= game.gain2[q][q][k]
            })
        })
    })
}

/// Checks `|H_rr(k_r)|^2/|H_qq(k_r)|^2 >= |H_rr(k_q)|^2/|H_qq(k_q)|^2` over all
/// user pairs and exclusive carriers of an assignment. The snr factors of the
/// normalized gains cancel between both sides.
pub fn allocation_rule_violations(
    game: &NormalizedGame,
    exclusive: &[Vec<usize>],
) -> Vec<RuleViolation> {
    let ratio = |r: usize, q: usize, k: usize| game.gain2[r][r][k] / game.gain2[q][q][k];
    let mut out = Vec::new();
    for r in 0..exclusive.len() {
        for q in 0..exclusive.len() {
            if r == q {
                continue;
            }
            for &k_r in &exclusive[r] {
                for &k_q in &exclusive[q] {
                    let lhs = ratio(r, q, k_r);
                    let rhs = ratio(r, q, k_q);
                    if lhs < rhs * (1.0 - 1e-12) {
                        out.push(RuleViolation { r, q, k_r, k_q, lhs, rhs });
                    }
                }
            }
        }
    }
    out
}

/// Allocation rule verdicts for an orthogonal equilibrium.
pub fn check_allocation_rule(
    res: &EquilibriumResult,
    game: &NormalizedGame,
) -> Result<Vec<RuleViolation>> {
    let class = classify_equilibrium(res, game, DEFAULT_SUPPORT_EPS)?;
    if !class.orthogonal {
        return Err(GameError::Precondition("equilibrium is not orthogonal".into()));
    }
    if !allocation_premise_holds(game, &class.exclusive) {
        return Err(GameError::Precondition(
            "medium-interference premise does not hold".into(),
        ));
    }
    Ok(allocation_rule_violations(game, &class.exclusive))
}

/// Orthogonal candidate for a carrier partition: each user waterfills over its
/// own carriers only. Returns the profile when it is a Nash equilibrium of
/// the unrestricted game (fixed-point residual `<= tol`).
pub fn orthogonal_equilibrium(
    game: &NormalizedGame,
    partition: &[Vec<usize>],
    tol: f64,
) -> Result<Option<PowerProfile>> {
    if partition.len() != game.users {
        return Err(GameError::InvalidInput("one carrier set per user".into()));
    }
    let n = game.carriers;
    let mut owner = vec![None; n];
    for (q, set) in partition.iter().enumerate() {
        for &k in set {
            if k >= n || owner[k].is_some() {
                return Err(GameError::InvalidInput("partition sets must be disjoint".into()));
            }
            owner[k] = Some(q);
        }
    }
    let mut power = Vec::with_capacity(game.users);
    for (q, set) in partition.iter().enumerate() {
        if set.is_empty() {
            return Err(GameError::InvalidInput(format!("user {q} owns no carrier")));
        }
        let mask = (0..n)
            .map(|k| if owner[k] == Some(q) { game.mask[q][k] } else { 0.0 })
            .collect();
        let input = WaterfillInput {
            gain: game.gain2[q][q].clone(),
            interference: vec![1.0; n],
            gap: game.gap[q],
            mask,
            budget: 1.0,
        };
        power.push(waterfill(&input)?);
    }
    let profile = PowerProfile::new(power);
    let residual = fixed_point_residual(&profile, game)?;
    Ok((residual <= tol).then_some(profile))
}

/// One approximate equilibrium cluster found on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeCluster {
    /// Member with the smallest regret.
    pub representative: PowerProfile,
    pub members: Vec<PowerProfile>,
    pub min_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceReport {
    pub clusters: Vec<NeCluster>,
    /// Grid step in normalized power units.
    pub step: f64,
    /// Largest slack used to accept a gridded profile.
    pub slack: f64,
    pub profiles_scanned: usize,
}

const BRUTE_FORCE_MAX_PROFILES: usize = 20_000_000;

/// Gridded strategies of one user: compositions of `units` steps of size
/// `N/units` over the carriers that respect the mask.
fn gridded_strategies(n: usize, units: usize, mask: &[f64]) -> Vec<(Vec<usize>, Vec<f64>)> {
    let step = n as f64 / units as f64;
    let mut out = Vec::new();
    let mut counts = vec![0usize; n];
    fn rec(
        k: usize,
        left: usize,
        counts: &mut Vec<usize>,
        step: f64,
        mask: &[f64],
        out: &mut Vec<(Vec<usize>, Vec<f64>)>,
    ) {
        let n = counts.len();
        if k == n - 1 {
            counts[k] = left;
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 * step).collect();
            if p.iter().zip(mask).all(|(&x, &m)| x <= m + 1e-12) {
                out.push((counts.clone(), p));
            }
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            rec(k + 1, left - c, counts, step, mask, out);
        }
    }
    rec(0, units, &mut counts, step, mask, &mut out);
    out
}

fn rate_nats(game: &NormalizedGame, q: usize, p: &[&[f64]]) -> f64 {
    let n = game.carriers;
    (0..n)
        .map(|k| {
            let i = 1.0
                + (0..game.users)
                    .filter(|&r| r != q)
                    .map(|r| game.gain2[r][q][k] * p[r][k])
                    .sum::<f64>();
            (1.0 + game.gain2[q][q][k] * p[q][k] / (game.gap[q] * i)).ln()
        })
        .sum::<f64>()
        / n as f64
}

/// Enumerates gridded profiles and keeps those where no user gains more than
/// the local grid slack by a gridded unilateral deviation. Accepted profiles
/// are grouped into clusters of grid-adjacent members.
///
/// The slack of user `q` at a profile is its own single-step payoff variation
/// plus twice the variation caused by single steps of each opponent: the
/// nearest grid point of a true equilibrium lies within one step per user.
pub fn brute_force_ne(game: &NormalizedGame, grid: usize) -> Result<BruteForceReport> {
    let users = game.users;
    let n = game.carriers;
    if users * n > 6 {
        return Err(GameError::SizeGuard(format!("Q*N = {} exceeds 6", users * n)));
    }
    if grid < 16 {
        return Err(GameError::SizeGuard("grid must have at least 16 points".into()));
    }
    let units = grid - 1;
    let strategies: Vec<Vec<(Vec<usize>, Vec<f64>)>> = (0..users)
        .map(|q| gridded_strategies(n, units, &game.mask[q]))
        .collect();
    if strategies.iter().any(Vec::is_empty) {
        return Err(GameError::Precondition(
            "masks leave no gridded strategy spending the budget".into(),
        ));
    }
    let sizes: Vec<usize> = strategies.iter().map(Vec::len).collect();
    let total = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .filter(|&t| t <= BRUTE_FORCE_MAX_PROFILES)
        .ok_or_else(|| GameError::SizeGuard("too many gridded profiles".into()))?;
    let step = n as f64 / units as f64;

    // index of each strategy by its composition, for neighbour lookups
    let lookup: Vec<std::collections::HashMap<Vec<usize>, usize>> = strategies
        .iter()
        .map(|s| s.iter().enumerate().map(|(i, (c, _))| (c.clone(), i)).collect())
        .collect();

    let decode = |mut idx: usize| -> Vec<usize> {
        let mut v = vec![0; users];
        for q in (0..users).rev() {
            v[q] = idx % sizes[q];
            idx /= sizes[q];
        }
        v
    };
    let encode = |v: &[usize]| v.iter().zip(&sizes).fold(0usize, |acc, (&i, &s)| acc * s + i);

    // payoff[q][profile]
    let mut payoff = vec![vec![0.0; total]; users];
    for idx in 0..total {
        let v = decode(idx);
        let rows: Vec<&[f64]> = (0..users).map(|q| strategies[q][v[q]].1.as_slice()).collect();
        for q in 0..users {
            payoff[q][idx] = rate_nats(game, q, &rows);
        }
    }

    let neighbours = |q: usize, i: usize| -> Vec<usize> {
        let counts = &strategies[q][i].0;
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && counts[a] > 0 {
                    let mut c = counts.clone();
                    c[a] -= 1;
                    c[b] += 1;
                    if let Some(&j) = lookup[q].get(&c) {
                        out.push(j);
                    }
                }
            }
        }
        out
    };

    let mut accepted: Vec<(usize, f64)> = Vec::new();
    let mut slack_max = 0.0f64;
    for idx in 0..total {
        let v = decode(idx);
        let mut worst_regret = 0.0f64;
        let mut ok = true;
        for q in 0..users {
            let here = payoff[q][idx];
            let mut w = v.clone();
            let mut best = f64::NEG_INFINITY;
            for s in 0..sizes[q] {
                w[q] = s;
                best = best.max(payoff[q][encode(&w)]);
            }
            let regret = best - here;
            let mut slack = 0.0;
            for r in 0..users {
                let mut var = 0.0f64;
                let mut w = v.clone();
                for j in neighbours(r, v[r]) {
                    w[r] = j;
                    var = var.max((payoff[q][encode(&w)] - here).abs());
                }
                slack += if r == q { var } else { 2.0 * var };
            }
            if regret > slack + 1e-12 {
                ok = false;
                break;
            }
            slack_max = slack_max.max(slack);
            worst_regret = worst_regret.max(regret);
        }
        if ok {
            accepted.push((idx, worst_regret));
        }
    }

    // single-linkage clustering over grid adjacency
    let adjacent = |a: usize, b: usize| -> bool {
        let (va, vb) = (decode(a), decode(b));
        (0..users).all(|q| {
            strategies[q][va[q]]
                .0
                .iter()
                .zip(&strategies[q][vb[q]].0)
                .all(|(&x, &y)| x.abs_diff(y) <= 1)
        })
    };
    let m = accepted.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for a in 0..m {
        for b in (a + 1)..m {
            if adjacent(accepted[a].0, accepted[b].0) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for a in 0..m {
        let root = find(&mut parent, a);
        groups.entry(root).or_default().push(a);
    }
    let to_profile = |idx: usize| {
        let v = decode(idx);
        PowerProfile::new((0..users).map(|q| strategies[q][v[q]].1.clone()).collect())
    };
    let mut clusters: Vec<NeCluster> = groups
        .into_values()
        .map(|members| {
            let best = members
                .iter()
                .cloned()
                .min_by(|&a, &b| accepted[a].1.total_cmp(&accepted[b].1))
                .expect("nonempty group");
            NeCluster {
                representative: to_profile(accepted[best].0),
                members: members.iter().map(|&a| to_profile(accepted[a].0)).collect(),
                min_regret: accepted[best].1,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.min_regret.total_cmp(&b.min_regret));
    Ok(BruteForceReport {
        clusters,
        step,
        slack: slack_max,
        profiles_scanned: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waterfill::kkt_residual;

    fn two_user(direct: [[f64; 2]; 2], cross: [[f64; 2]; 2]) -> NormalizedGame {
        // direct[q] = gain2[q][q], cross[q] = gain2[r][q] (r != q)
        let g = vec![
            vec![direct[0].to_vec(), cross[1].to_vec()],
            vec![cross[0].to_vec(), direct[1].to_vec()],
        ];
        NormalizedGame::from_gains(g, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn single_user_is_plain_waterfill() {
        let g = NormalizedGame::from_gains(vec![vec![vec![4.0, 1.0]]], vec![1.0]).unwrap();
        let res = solve(&g, &SolveOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        let p = &res.profile.power[0];
        assert!((p[0] - 1.375).abs() < 1e-12 && (p[1] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn symmetric_flat_response_is_uniform() {
        let g = two_user([[2.0, 2.0], [2.0, 2.0]], [[0.5, 0.5], [0.5, 0.5]]);
        let br = best_response(0, &PowerProfile::uniform(&g), &g).unwrap();
        assert!(br.iter().all(|&x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn shifted_prices_best_response() {
        // i = [1 + 1*2, 1 + 1*0] = [3, 1]; floors [3/4, 1]; mu - 3/4 + mu - 1 = 2
        let g = two_user([[4.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]]);
        let p = PowerProfile::new(vec![vec![1.0, 1.0], vec![2.0, 0.0]]);
        let br = best_response(0, &p, &g).unwrap();
        let mu = (2.0 + 0.75 + 1.0) / 2.0;
        assert!((br[0] - (mu - 0.75)).abs() < 1e-14);
        assert!((br[1] - (mu - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn schedules_agree_in_low_interference() {
        let g = two_user([[3.0, 1.5], [1.0, 2.5]], [[0.2, 0.1], [0.15, 0.3]]);
        let opts = |schedule| SolveOptions { schedule, ..Default::default() };
        let a = solve(&g, &opts(Schedule::Sequential)).unwrap();
        let b = solve(&g, &opts(Schedule::Simultaneous)).unwrap();
        let c = solve(&g, &opts(Schedule::Shuffled { seed: 3 })).unwrap();
        assert!(a.converged && b.converged && c.converged);
        assert!(a.profile.sup_distance(&b.profile) < 1e-8);
        assert!(a.profile.sup_distance(&c.profile) < 1e-8);
        for q in 0..2 {
            let inp = best_response_input(q, &a.profile, &g);
            assert!(kkt_residual(&a.profile.power[q], &inp).unwrap() <= 1e-7);
        }
    }

    #[test]
    fn non_convergence_is_data() {
        let g = two_user([[3.0, 1.5], [1.0, 2.5]], [[0.2, 0.1], [0.15, 0.3]]);
        let res = solve(
            &g,
            &SolveOptions { max_iter: 1, tol: 1e-14, ..Default::default() },
        )
        .unwrap();
        assert!(!res.converged);
        assert!(res.classification.is_none());
        assert!(classify_equilibrium(&res, &g, 1e-6).is_err());
    }

    #[test]
    fn classification_cases() {
        let disjoint = PowerProfile::new(vec![vec![2.0, 0.0, 0.0], vec![0.0, 1.5, 1.5]]);
        let c = classify_profile(&disjoint, 1e-6);
        assert!(c.orthogonal);
        assert_eq!(c.exclusive, vec![vec![0], vec![1, 2]]);
        assert_eq!(c.shared_carriers, 0);
        let full = PowerProfile::new(vec![vec![1.0, 1.0, 1.0], vec![0.5, 1.0, 1.5]]);
        let c = classify_profile(&full, 1e-6);
        assert!(!c.orthogonal);
        assert_eq!(c.shared_carriers, 3);
        assert_eq!(c.flatness[0], 0.0);
        assert!(c.flatness[1] > 0.3);
    }

    #[test]
    fn allocation_rule_matching_vs_swapped() {
        // user 0 is relatively stronger on carrier 0
        let g = two_user([[4.0, 1.0], [1.0, 4.0]], [[0.5, 0.5], [0.5, 0.5]]);
        assert!(allocation_rule_violations(&g, &[vec![0], vec![1]]).is_empty());
        assert!(!allocation_rule_violations(&g, &[vec![1], vec![0]]).is_empty());
    }

    #[test]
    fn allocation_rule_single_user_is_vacuous() {
        let g = NormalizedGame::from_gains(vec![vec![vec![2.0]]], vec![1.0]).unwrap();
        let res = solve(&g, &SolveOptions::default()).unwrap();
        assert!(check_allocation_rule(&res, &g).unwrap().is_empty());
    }

    #[test]
    fn allocation_rule_guards() {
        // premise fails: cross gain larger than direct gain on the owned carrier
        let g = two_user([[1.0, 0.01], [0.01, 1.0]], [[50.0, 50.0], [50.0, 50.0]]);
        let p = orthogonal_equilibrium(&g, &[vec![0], vec![1]], 1e-9).unwrap().unwrap();
        let res = solve(
            &g,
            &SolveOptions { init: Init::Profile(p), ..Default::default() },
        )
        .unwrap();
        assert!(res.classification.as_ref().unwrap().orthogonal);
        assert!(matches!(check_allocation_rule(&res, &g), Err(GameError::Precondition(_))));
        // non-orthogonal equilibrium
        let low = two_user([[3.0, 1.5], [1.0, 2.5]], [[0.2, 0.1], [0.15, 0.3]]);
        let res = solve(&low, &SolveOptions::default()).unwrap();
        assert!(matches!(check_allocation_rule(&res, &low), Err(GameError::Precondition(_))));
    }

    #[test]
    fn brute_force_single_user() {
        let g = NormalizedGame::from_gains(vec![vec![vec![4.0, 1.0]]], vec![1.0]).unwrap();
        let rep = brute_force_ne(&g, 32).unwrap();
        assert_eq!(rep.clusters.len(), 1);
        let analytic = PowerProfile::new(vec![vec![1.375, 0.625]]);
        let d = rep.clusters[0].representative.sup_distance(&analytic);
        assert!(d <= rep.step / 2.0 + 1e-12, "distance {d}, step {}", rep.step);
    }

    #[test]
    fn brute_force_guards() {
        let g = NormalizedGame::from_gains(vec![vec![vec![1.0; 7]]], vec![1.0]).unwrap();
        assert!(matches!(brute_force_ne(&g, 16), Err(GameError::SizeGuard(_))));
        let g = NormalizedGame::from_gains(vec![vec![vec![1.0; 2]]], vec![1.0]).unwrap();
        assert!(matches!(brute_force_ne(&g, 8), Err(GameError::SizeGuard(_))));
    }

    #[test]
    fn brute_force_contains_solver_output() {
        let g = two_user([[3.0, 1.5], [1.0, 2.5]], [[0.2, 0.1], [0.15, 0.3]]);
        let res = solve(&g, &SolveOptions::default()).unwrap();
        let rep = brute_force_ne(&g, 64).unwrap();
        assert_eq!(rep.clusters.len(), 1, "{} clusters", rep.clusters.len());
        let near = rep.clusters[0]
            .members
            .iter()
            .map(|m| m.sup_distance(&res.profile))
            .fold(f64::INFINITY, f64::min);
        assert!(near <= rep.step, "nearest member {near}");
    }

    #[test]
    fn random_init_is_feasible() {
        let g = two_user([[3.0, 1.5], [1.0, 2.5]], [[0.2, 0.1], [0.15, 0.3]]);
        let p = PowerProfile::random(&g, 9);
        assert!(p.is_feasible(&g, 1e-12));
        for row in &p.power {
            assert!((row.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
    }
}
