//! Masked single-user waterfilling, the best response of every player.
//!
//! For a user with direct gains `g`, interference-plus-noise factors `i`, gap
//! `G` and relative mask `m`, the best response is
//! `p[k] = clip(mu - G i[k] / g[k], 0, m[k])` with the water level `mu` set so
//! that the average power equals the budget. When the masks cannot absorb
//! the budget the mask itself is returned.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};

/// Absolute tolerance on the average-power budget.
pub const BUDGET_TOL: f64 = 1e-12;

/// Tolerance used to treat a power as sitting on a bound in KKT checks.
const BOUND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillInput {
    /// Direct squared gain per carrier.
    pub gain: Vec<f64>,
    /// Interference-plus-noise factor per carrier (>= 1).
    pub interference: Vec<f64>,
    pub gap: f64,
    /// Per-carrier cap, `f64::INFINITY` when unbounded.
    pub mask: Vec<f64>,
    /// Target average power over carriers (1 for the normalized game).
    pub budget: f64,
}

impl WaterfillInput {
    /// Flat-noise input with unbounded masks and unit budget.
    pub fn unmasked(gain: Vec<f64>, interference: Vec<f64>, gap: f64) -> Self {
        let n = gain.len();
        Self {
            gain,
            interference,
            gap,
            mask: vec![f64::INFINITY; n],
            budget: 1.0,
        }
    }

    pub fn carriers(&self) -> usize {
        self.gain.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gain.len();
        let bad = |m: &str| Err(GameError::InvalidInput(m.to_string()));
        if n == 0 {
            return bad("waterfill needs at least one carrier");
        }
        if self.interference.len() != n || self.mask.len() != n {
            return bad("gain, interference and mask lengths differ");
        }
        if self.gain.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return bad("gains must be finite and >= 0");
        }
        if self.interference.iter().any(|&i| !(i >= 1.0 && i.is_finite())) {
            return bad("interference factors must be finite and >= 1");
        }
        if !(self.gap >= 1.0 && self.gap.is_finite()) {
            return bad("gap must be >= 1");
        }
        if self.mask.iter().any(|&m| m.is_nan() || m < 0.0) {
            return bad("mask entries must be >= 0");
        }
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return bad("budget must be positive");
        }
        Ok(())
    }

    /// Price of carrier `k` (the water floor), infinite for dead carriers.
    #[inline]
    fn floor(&self, k: usize) -> f64 {
        if self.gain[k] > 0.0 {
            self.gap * self.interference[k] / self.gain[k]
        } else {
            f64::INFINITY
        }
    }

    fn mask_average(&self) -> f64 {
        self.mask.iter().sum::<f64>() / self.carriers() as f64
    }

    fn is_trivial(&self) -> bool {
        self.mask_average() < self.budget - 1e-15
    }

    fn fill(&self, level: f64) -> Vec<f64> {
        (0..self.carriers())
            .map(|k| {
                let f = self.floor(k);
                if f.is_finite() {
                    (level - f).clamp(0.0, self.mask[k])
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Outcome of the water-level solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill {
    pub power: Vec<f64>,
    /// `None` when the mask is returned (budget not binding).
    pub level: Option<f64>,
}

/// Sort-based exact solve of the piecewise-linear budget equation.
pub fn solve(input: &WaterfillInput) -> Result<Waterfill> {
    input.validate()?;
    let n = input.carriers();
    let live: Vec<usize> = (0..n)
        .filter(|&k| input.gain[k] > 0.0 && input.mask[k] > 0.0)
        .collect();

    if input.is_trivial() {
        let power = (0..n)
            .map(|k| if input.gain[k] > 0.0 { input.mask[k] } else { 0.0 })
            .collect();
        return Ok(Waterfill { power, level: None });
    }
    if live.is_empty() {
        return Err(GameError::InfeasibleWaterfill(
            "no carrier with positive gain can hold power".into(),
        ));
    }
    let target = n as f64 * input.budget;
    let live_capacity: f64 = live.iter().map(|&k| input.mask[k]).sum();
    if live_capacity < target {
        // the rest of the budget could only go to carriers with zero gain
        let power = (0..n)
            .map(|k| if input.gain[k] > 0.0 { input.mask[k] } else { 0.0 })
            .collect();
        return Ok(Waterfill { power, level: None });
    }

    // +1 slope where a carrier starts filling, -1 where it hits its mask
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * live.len());
    for &k in &live {
        let f = input.floor(k);
        events.push((f, 1));
        if input.mask[k].is_finite() {
            events.push((f + input.mask[k], -1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut pos = events[0].0;
    let mut filled = 0.0;
    let mut slope = 0i64;
    let mut level = None;
    for &(x, d) in &events {
        let at_x = filled + slope as f64 * (x - pos);
        if at_x >= target && slope > 0 {
            level = Some(pos + (target - filled) / slope as f64);
            break;
        }
        filled = at_x;
        pos = x;
        slope += d as i64;
    }
    let mut mu = match level {
        Some(mu) => mu,
        None if slope > 0 => pos + (target - filled) / slope as f64,
        // every live carrier saturated exactly at the budget
        None => pos,
    };

    // Newton polish on the interior set absorbs rounding from the sweep
    for _ in 0..3 {
        let p = input.fill(mu);
        let excess = p.iter().sum::<f64>() - target;
        if excess.abs() <= 1e-3 * BUDGET_TOL * n as f64 {
            break;
        }
        let interior = live
            .iter()
            .filter(|&&k| p[k] > 0.0 && p[k] < input.mask[k])
            .count();
        if interior == 0 {
            break;
        }
        mu -= excess / interior as f64;
    }
    Ok(Waterfill {
        power: input.fill(mu),
        level: Some(mu),
    })
}

/// Best-response power vector.
pub fn waterfill(input: &WaterfillInput) -> Result<Vec<f64>> {
    solve(input).map(|w| w.power)
}

/// Water level `mu`; requires the masks to be able to absorb the budget.
pub fn water_level(input: &WaterfillInput) -> Result<f64> {
    input.validate()?;
    if input.is_trivial() {
        return Err(GameError::Precondition(
            "mask total is below the budget, no water level exists".into(),
        ));
    }
    solve(input)?
        .level
        .ok_or_else(|| GameError::InfeasibleWaterfill("budget cannot bind".into()))
}

/// Bisection on the water level, kept as an independent cross-check of
/// [`water_level`].
pub fn water_level_bisection(input: &WaterfillInput) -> Result<f64> {
    input.validate()?;
    if input.is_trivial() {
        return Err(GameError::Precondition(
            "mask total is below the budget, no water level exists".into(),
        ));
    }
    let n = input.carriers();
    let target = n as f64 * input.budget;
    let floors: Vec<f64> = (0..n)
        .map(|k| input.floor(k))
        .filter(|f| f.is_finite())
        .collect();
    if floors.is_empty() {
        return Err(GameError::InfeasibleWaterfill("all gains are zero".into()));
    }
    let total = |mu: f64| input.fill(mu).iter().sum::<f64>();
    let mut lo = floors.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = floors.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0 * target;
    if total(hi) < target {
        return Err(GameError::InfeasibleWaterfill("budget cannot bind".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// KKT violation of `p` for the single-user rate problem.
///
/// With marginal utilities `u[k] = g / (G i + g p)` the conditions are
/// `u = nu` on interior carriers, `u <= nu` on carriers at zero, `u >= nu` on
/// carriers at their mask, and `nu = 0` unless the budget binds. The residual
/// is the smallest achievable worst-case violation over `nu`.
pub fn kkt_residual(p: &[f64], input: &WaterfillInput) -> Result<f64> {
    input.validate()?;
    let n = input.carriers();
    if p.len() != n {
        return Err(GameError::InvalidInput("power vector length mismatch".into()));
    }
    for k in 0..n {
        if !p[k].is_finite() || p[k] < -BOUND_TOL || p[k] > input.mask[k] + BOUND_TOL {
            return Err(GameError::Precondition(format!(
                "p[{k}] = {} violates [0, {}]",
                p[k], input.mask[k]
            )));
        }
    }
    let avg = p.iter().sum::<f64>() / n as f64;
    if avg > input.budget + 1e-9 {
        return Err(GameError::Precondition(format!(
            "average power {avg} exceeds budget {}",
            input.budget
        )));
    }

    let mut lower = f64::NEG_INFINITY; // max u over interior and zero carriers
    let mut upper = f64::INFINITY; // min u over interior and masked carriers
    let mut slack_violation = 0.0f64;
    for k in 0..n {
        let u = input.gain[k] / (input.gap * input.interference[k] + input.gain[k] * p[k]);
        let at_zero = p[k] <= BOUND_TOL;
        let at_mask = input.mask[k].is_finite() && p[k] >= input.mask[k] - BOUND_TOL;
        if !at_mask {
            lower = lower.max(u);
            slack_violation = slack_violation.max(u);
        }
        if !at_zero {
            upper = upper.min(u);
        }
    }
    let stationarity = if lower.is_finite() && upper.is_finite() {
        (0.5 * (lower - upper)).max(0.0)
    } else {
        0.0
    };
    let binding = avg >= input.budget - BUDGET_TOL;
    Ok(if binding {
        stationarity
    } else {
        stationarity.max(slack_violation)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn input(g: &[f64], i: &[f64], mask: &[f64]) -> WaterfillInput {
        WaterfillInput {
            gain: g.to_vec(),
            interference: i.to_vec(),
            gap: 1.0,
            mask: mask.to_vec(),
            budget: 1.0,
        }
    }

    fn assert_vec(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn flat_channel_is_uniform() {
        let inp = input(&[1.0, 1.0], &[1.0, 1.0], &[INF, INF]);
        assert_vec(&waterfill(&inp).unwrap(), &[1.0, 1.0], 1e-15);
        assert!((water_level(&inp).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_bin_closed_form() {
        // mu - 1/4 + mu - 1 = 2  =>  mu = 1.625
        let inp = input(&[4.0, 1.0], &[1.0, 1.0], &[INF, INF]);
        assert!((water_level(&inp).unwrap() - 1.625).abs() < 1e-14);
        assert_vec(&waterfill(&inp).unwrap(), &[1.375, 0.625], 1e-14);
    }

    #[test]
    fn trivial_branch_returns_mask() {
        let inp = input(&[4.0, 1.0], &[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(waterfill(&inp).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(water_level(&inp), Err(GameError::Precondition(_))));
    }

    #[test]
    fn mask_clipped_bin() {
        // 0.2 + (mu - 1) = 2  =>  mu = 2.8
        let inp = input(&[10.0, 1.0], &[1.0, 1.0], &[0.2, INF]);
        assert!((water_level(&inp).unwrap() - 2.8).abs() < 1e-14);
        assert_vec(&waterfill(&inp).unwrap(), &[0.2, 1.8], 1e-14);
    }

    #[test]
    fn zero_gain_carriers_get_nothing() {
        let inp = input(&[0.0, 2.0, 1.0], &[1.0, 1.0, 1.0], &[INF, INF, INF]);
        let p = waterfill(&inp).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_gains_unbounded_is_infeasible() {
        let inp = input(&[0.0, 0.0], &[1.0, 1.0], &[INF, INF]);
        assert!(matches!(waterfill(&inp), Err(GameError::InfeasibleWaterfill(_))));
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(waterfill(&input(&[1.0], &[0.5], &[INF])).is_err());
        assert!(waterfill(&input(&[1.0, 1.0], &[1.0], &[INF])).is_err());
        let mut inp = input(&[1.0], &[1.0], &[INF]);
        inp.gap = 0.9;
        assert!(waterfill(&inp).is_err());
    }

    #[test]
    fn kkt_zero_at_optimum_and_positive_off_it() {
        let inp = input(&[4.0, 1.0], &[1.0, 1.0], &[INF, INF]);
        let p = waterfill(&inp).unwrap();
        assert!(kkt_residual(&p, &inp).unwrap() <= 1e-9);
        // uniform: u = [4/5, 1/2], gap of the interior set = 0.15
        let r = kkt_residual(&[1.0, 1.0], &inp).unwrap();
        assert!(r > 0.1, "residual {r}");
        assert!((r - 0.15).abs() < 1e-12);
    }

    #[test]
    fn kkt_rejects_infeasible_point() {
        let inp = input(&[10.0, 1.0], &[1.0, 1.0], &[0.2, INF]);
        assert!(matches!(kkt_residual(&[0.5, 1.5], &inp), Err(GameError::Precondition(_))));
        assert!(matches!(kkt_residual(&[0.2, 2.5], &inp), Err(GameError::Precondition(_))));
    }

    #[test]
    fn kkt_flags_unspent_budget() {
        let inp = input(&[1.0, 1.0], &[1.0, 1.0], &[INF, INF]);
        assert!(kkt_residual(&[0.5, 0.5], &inp).unwrap() > 0.1);
    }

    fn arb_input() -> impl Strategy<Value = WaterfillInput> {
        (1usize..=64).prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![Just(0.0), 1e-3f64..1e3], n),
                prop::collection::vec(1.0f64..50.0, n),
                1.0f64..10.0,
                prop::collection::vec(prop_oneof![Just(INF), 0.0f64..4.0], n),
            )
                .prop_filter("need a live carrier", |(g, _, _, m)| {
                    g.iter().zip(m).any(|(&g, &m)| g > 0.0 && m > 0.0)
                })
                .prop_map(|(gain, interference, gap, mask)| WaterfillInput {
                    gain,
                    interference,
                    gap,
                    mask,
                    budget: 1.0,
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn output_is_feasible_and_optimal(inp in arb_input()) {
            let n = inp.carriers() as f64;
            let sol = solve(&inp).unwrap();
            for (k, &p) in sol.power.iter().enumerate() {
                prop_assert!(p >= 0.0 && p <= inp.mask[k]);
            }
            let avg = sol.power.iter().sum::<f64>() / n;
            if sol.level.is_some() {
                prop_assert!((avg - 1.0).abs() <= BUDGET_TOL, "avg {}", avg);
            } else {
                prop_assert!(avg <= 1.0 + BUDGET_TOL);
            }
            prop_assert!(kkt_residual(&sol.power, &inp).unwrap() <= 1e-9);
        }

        #[test]
        fn equal_marginal_on_interior(inp in arb_input()) {
            let sol = solve(&inp).unwrap();
            if let Some(mu) = sol.level {
                for k in 0..inp.carriers() {
                    let p = sol.power[k];
                    if p > 0.0 && p < inp.mask[k] {
                        let level = inp.gap * inp.interference[k] / inp.gain[k] + p;
                        prop_assert!((level - mu).abs() <= 1e-9 * mu.max(1.0));
                    }
                }
            }
        }

        #[test]
        fn sort_and_bisection_agree(inp in arb_input()) {
            if let Ok(mu) = water_level(&inp) {
                let mb = water_level_bisection(&inp).unwrap();
                // levels may differ where the budget function is flat; compare fills
                let a = inp.fill(mu);
                let b = inp.fill(mb);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-9 * mu.max(1.0));
                }
            }
        }

        #[test]
        fn more_interference_never_adds_power(inp in arb_input(), k in 0usize..64, bump in 0.0f64..20.0) {
            let k = k % inp.carriers();
            let before = waterfill(&inp).unwrap()[k];
            let mut louder = inp.clone();
            louder.interference[k] += bump;
            let after = waterfill(&louder).unwrap()[k];
            prop_assert!(after <= before + 1e-12);
        }
    }
}
