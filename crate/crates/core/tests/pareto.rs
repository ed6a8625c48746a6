use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wfgame::channel::{CrossDistance, ScenarioParams};
use wfgame::equilibrium::{brute_force_ne, solve, Init, PowerProfile, SolveOptions};
use wfgame::pareto::*;
use wfgame::waterfill::{waterfill, WaterfillInput};
use wfgame::{build_game, NormalizedGame};

fn scenario(users: usize, carriers: usize, ratio: f64, snr_db: f64) -> ScenarioParams {
    ScenarioParams {
        users,
        carriers,
        channel_order: 3,
        tap_variance: None,
        path_loss_exponent: 2.5,
        cross: CrossDistance::Ratio(ratio),
        snr_db,
        gap: 1.0,
    }
}

fn two_carriers(ratio: f64, seed: u64) -> NormalizedGame {
    let params = ScenarioParams { channel_order: 1, ..scenario(2, 2, ratio, 10.0) };
    build_game(&params.realize(seed, 0).unwrap()).unwrap()
}

fn low_interference(seed: u64) -> NormalizedGame {
    build_game(&scenario(2, 8, 6.0, 20.0).realize(seed, 0).unwrap()).unwrap()
}

fn random_game(rng: &mut ChaCha8Rng, users: usize, carriers: usize, coupling: f64) -> NormalizedGame {
    let gain2 = (0..users)
        .map(|r| {
            (0..users)
                .map(|q| {
                    (0..carriers)
                        .map(|_| {
                            let x: f64 = rng.random::<f64>();
                            if r == q { 0.1 + 4.0 * x } else { coupling * x }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let gap = (0..users).map(|_| 1.0 + rng.random::<f64>()).collect();
    NormalizedGame::from_gains(gain2, gap).unwrap()
}

fn interior_profile(rng: &mut ChaCha8Rng, users: usize, carriers: usize) -> PowerProfile {
    PowerProfile::new(
        (0..users)
            .map(|_| {
                let w: Vec<f64> = (0..carriers).map(|_| 0.2 + rng.random::<f64>()).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| 0.9 * x / s * carriers as f64).collect()
            })
            .collect(),
    )
}

fn single_user_rate(g: &NormalizedGame, q: usize) -> f64 {
    let input = WaterfillInput {
        gain: g.gain2[q][q].clone(),
        interference: vec![1.0; g.carriers],
        mask: g.mask[q].clone(),
        gap: g.gap[q],
        budget: 1.0,
    };
    let p = waterfill(&input).unwrap();
    (0..g.carriers)
        .map(|k| (1.0 + g.gain2[q][q][k] * p[k] / g.gap[q]).log2())
        .sum::<f64>()
        / g.carriers as f64
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let h = 1e-6;
    for _ in 0..100 {
        let users = rng.random_range(1..4);
        let g = random_game(&mut rng, users, 5, 1.0);
        let p = interior_profile(&mut rng, users, 5);
        for q in 0..users {
            let grad = gradient_rq(&p, &g, q);
            let scale = grad.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for r in 0..users {
                for k in 0..5 {
                    let mut up = p.clone();
                    let mut down = p.clone();
                    up.power[r][k] += h;
                    down.power[r][k] -= h;
                    let fd = (rates_in(&up, &g, RateUnit::Bits)[q] - rates_in(&down, &g, RateUnit::Bits)[q])
                        / (2.0 * h);
                    let err = (grad[r][k] - fd).abs();
                    assert!(
                        err <= 1e-5 * fd.abs().max(1e-3 * scale),
                        "q {q} r {r} k {k}: analytic {} fd {fd}",
                        grad[r][k]
                    );
                }
            }
        }
    }
}

#[test]
fn modified_game_matches_scalarized_optimum() {
    for seed in 0..3 {
        let g = low_interference(seed);
        for lam in [[1.0, 1.0], [1.0, 3.0], [3.0, 1.0], [1.0, 0.2]] {
            let w = Weights::new(lam.to_vec()).unwrap();
            let s = solve_scalarized(&g, &w, &ScalarizedOptions::default()).unwrap();
            let m = solve_modified_game(&g, &w, &ModifiedGameOptions::default()).unwrap();
            let rm = rate_vector(&m.profile, &g).rates;
            for q in 0..2 {
                assert!((rm[q] - s.rates.rates[q]).abs() <= 1e-3, "{lam:?}: {rm:?} vs {:?}", s.rates.rates);
            }
            // the scalarized optimum is a fixed point of the modified game
            let at = ModifiedGameOptions { init: Init::Profile(s.profile.clone()), max_iter: 0, ..Default::default() };
            let fixed = solve_modified_game(&g, &w, &at).unwrap();
            assert!(fixed.residual <= 1e-6, "{lam:?} residual {}", fixed.residual);
        }
    }
}

#[test]
fn modified_game_equilibrium_is_unique_across_inits() {
    let g = build_game(&scenario(2, 8, 15.0, 20.0).realize(7, 0).unwrap()).unwrap();
    let w = Weights::new(vec![2.0, 1.0]).unwrap();
    let runs: Vec<Vec<f64>> = (0..10)
        .map(|i| {
            let init = if i == 0 { Init::Uniform } else { Init::Random { seed: i } };
            let m = solve_modified_game(&g, &w, &ModifiedGameOptions { init, ..Default::default() }).unwrap();
            assert!(m.converged);
            rate_vector(&m.profile, &g).rates
        })
        .collect();
    for r in &runs {
        for q in 0..2 {
            assert!((r[q] - runs[0][q]).abs() <= 1e-4, "{runs:?}");
        }
    }
}

#[test]
fn dominant_weight_recovers_single_user_optimum() {
    for seed in 0..3 {
        let g = low_interference(seed);
        for q in 0..2 {
            let mut lam = vec![1.0; 2];
            lam[q] = 1e4;
            let m = solve_modified_game(&g, &Weights::new(lam).unwrap(), &ModifiedGameOptions::default()).unwrap();
            let got = rate_vector(&m.profile, &g).rates[q];
            let want = single_user_rate(&g, q);
            assert!(got <= want + 1e-9);
            assert!(got >= 0.97 * want, "user {q}: {got} vs single-user {want}");
        }
    }
}

#[test]
fn single_user_scalarization_degenerates_to_waterfill() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = random_game(&mut rng, 1, 6, 0.0);
    for lam in [0.3, 1.0, 7.0] {
        let s = solve_scalarized(&g, &Weights::new(vec![lam]).unwrap(), &Default::default()).unwrap();
        assert!((s.rates.rates[0] - single_user_rate(&g, 0)).abs() <= 1e-6);
    }
}

#[test]
fn symmetric_scalarization_beats_equilibrium_sum_rate() {
    let gain2 = vec![
        vec![vec![3.0, 1.0, 2.0], vec![1.5, 1.5, 1.5]],
        vec![vec![1.5, 1.5, 1.5], vec![3.0, 1.0, 2.0]],
    ];
    let g = NormalizedGame::from_gains(gain2, vec![1.0, 1.0]).unwrap();
    let ne = solve(&g, &SolveOptions::default()).unwrap();
    let s = solve_scalarized(&g, &Weights::uniform(2), &Default::default()).unwrap();
    assert!(s.value >= rate_vector(&ne.profile, &g).sum() - 1e-9);
}

#[test]
fn minmax_never_exceeds_equilibrium_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..50 {
        let g = random_game(&mut rng, 2, 4, [0.2, 1.0, 5.0][trial % 3]);
        let ne = solve(&g, &SolveOptions::default()).unwrap();
        assert!(ne.converged || trial % 3 == 2);
        let rates = rate_vector(&ne.profile, &g).rates;
        for q in 0..2 {
            let mm = minmax_bound(&g, q, &MinmaxOptions::default()).unwrap();
            assert!(mm.value <= rates[q] + 1e-6, "trial {trial} user {q}: {} > {}", mm.value, rates[q]);
        }
    }
}

#[test]
fn grid_minmax_is_below_every_brute_force_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for trial in 0..10 {
        let g = random_game(&mut rng, 2, 2, [0.3, 3.0][trial % 2]);
        let rep = brute_force_ne(&g, 64).unwrap();
        for q in 0..2 {
            let grid = minmax_bound(&g, q, &MinmaxOptions { force_grid: true, ..Default::default() }).unwrap();
            let saddle = minmax_bound(&g, q, &MinmaxOptions::default()).unwrap();
            assert_eq!(grid.method, MinmaxMethod::Grid);
            assert!((grid.value - saddle.value).abs() <= 0.02 * saddle.value.max(1e-3));
            for c in &rep.clusters {
                let r = rate_vector(&c.representative, &g).rates[q];
                // the cluster representative is only a grid-accurate equilibrium
                let bound = c.members.iter().map(|m| rate_vector(m, &g).rates[q]).fold(r, f64::max);
                assert!(saddle.value <= bound + 1e-6);
            }
        }
    }
}

/// Largest jump in each coordinate between neighbouring frontier points.
fn frontier_spacing(points: &[Vec<f64>]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    pts.windows(2)
        .map(|w| (w[1][0] - w[0][0]).abs().max((w[1][1] - w[0][1]).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn equilibria_do_not_dominate_the_sampled_frontier() {
    for seed in 0..5 {
        let g = two_carriers(4.0, seed);
        let region = sample_rate_region(&g, 48, BudgetMode::PerUser).unwrap();
        let front: Vec<Vec<f64>> = region.frontier().map(|p| p.rates.clone()).collect();
        let slack = frontier_spacing(&front);
        let ne = rate_vector(&solve(&g, &SolveOptions::default()).unwrap().profile, &g).rates;
        for f in &front {
            assert!(!(ne[0] > f[0] + slack && ne[1] > f[1] + slack), "{ne:?} dominates {f:?}");
        }
    }
}

#[test]
fn scalarized_optimum_supports_the_sampled_region() {
    for seed in 0..3 {
        let g = two_carriers(2.0, seed);
        let region = sample_rate_region(&g, 56, BudgetMode::PerUser).unwrap();
        for lam in [[1.0, 1.0], [1.0, 4.0], [4.0, 1.0]] {
            let s = solve_scalarized(&g, &Weights::new(lam.to_vec()).unwrap(), &Default::default()).unwrap();
            let best_grid = region
                .points
                .iter()
                .map(|p| lam[0] * p.rates[0] + lam[1] * p.rates[1])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(best_grid <= s.value + 1e-9, "{lam:?}: grid {best_grid} > {}", s.value);
            assert!(s.value - best_grid <= 0.05 * s.value);
        }
    }
}

#[test]
fn low_interference_approximation_is_accurate_at_high_snr() {
    for seed in 0..5 {
        let g = build_game(&scenario(2, 8, 20.0, 40.0).realize(seed, 0).unwrap()).unwrap();
        let p = PowerProfile::uniform(&g);
        let exact = rate_vector(&p, &g).rates;
        let approx = low_interference_rate(&p, &g).unwrap().rates;
        for q in 0..2 {
            assert!((exact[q] - approx[q]).abs() <= 0.01 * exact[q], "{exact:?} vs {approx:?}");
        }
    }
}

#[test]
fn geometric_combination_is_convex_in_the_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for seed in 0..10 {
        let g = low_interference(seed);
        for _ in 0..10 {
            let a = interior_profile(&mut rng, 2, 8);
            let b = interior_profile(&mut rng, 2, 8);
            let ra = low_interference_rate(&a, &g).unwrap().rates;
            let rb = low_interference_rate(&b, &g).unwrap().rates;
            for alpha in [0.25, 0.5, 0.75] {
                let c = geometric_combination(&a, &b, alpha);
                assert!(c.is_feasible(&g, 1e-9));
                let rc = low_interference_rate(&c, &g).unwrap().rates;
                for q in 0..2 {
                    assert!(rc[q] >= alpha * ra[q] + (1.0 - alpha) * rb[q] - 1e-12);
                }
            }
            let same = low_interference_rate(&geometric_combination(&a, &b, 1.0), &g).unwrap().rates;
            assert_eq!(same, ra);
        }
    }
}

#[test]
fn approximation_rejects_silent_carriers() {
    let g = low_interference(0);
    let mut p = PowerProfile::uniform(&g);
    p.power[1][3] = 0.0;
    assert!(low_interference_rate(&p, &g).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn projection_is_feasible_and_optimal(
        y in prop::collection::vec(-3.0f64..5.0, 6),
        mask in prop::collection::vec(0.0f64..3.0, 6),
        z in prop::collection::vec(0.0f64..1.0, 6),
        total in 0.5f64..8.0,
    ) {
        let x = project_box_budget(&y, &mask, total);
        prop_assert!(x.iter().sum::<f64>() <= total * (1.0 + 1e-12) + 1e-12);
        for (xi, mi) in x.iter().zip(&mask) {
            prop_assert!(*xi >= 0.0 && *xi <= *mi);
        }
        // a feasible competitor: scale z into the box, then under the budget
        let mut w: Vec<f64> = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let s: f64 = w.iter().sum();
        if s > total {
            w.iter_mut().for_each(|v| *v *= total / s);
        }
        let vi: f64 = y.iter().zip(&x).zip(&w).map(|((yi, xi), wi)| (yi - xi) * (wi - xi)).sum();
        prop_assert!(vi <= 1e-9, "variational inequality violated: {}", vi);
    }
}
