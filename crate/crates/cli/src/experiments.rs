use serde::Serialize;
use serde_json::json;
use wfgame::equilibrium::{
    allocation_premise_holds, allocation_rule_violations, classify_equilibrium, solve, PowerProfile,
};
use wfgame::matrix_oracle::{verify_diagonal_optimality, DiagonalOptimalityReport, LinkMatrices, Payoff};
use wfgame::pareto::{
    rates_in, sample_rate_region, solve_modified_game, solve_scalarized, BudgetMode,
    ModifiedGameOptions, RateUnit, ScalarizedOptions, Weights,
};
use wfgame::rng::derive_seed;
use wfgame::uniqueness::{check_conditions, DqMode, UniquenessReport, Verdict};
use wfgame::{build_game, NormalizedGame};

use crate::config::{ExperimentConfig, ExperimentKind, Opponents};
use crate::error::{CliError, Result};
use crate::output::{fmt, par_map, to_json, Report, Table};

pub const CONDITIONS: [&str; 7] = ["C1", "C2", "C3", "C4", "C5", "C6", "C7"];

/// Condition label in the uniqueness CSV: bare for the virtual-interferer
/// carrier sets, `@all` when every carrier is kept.
pub fn condition_label(c: &str, mode: DqMode) -> String {
    match mode {
        DqMode::VirtualInterferer => c.to_string(),
        DqMode::All => format!("{c}@all"),
    }
}

fn verdicts(r: &UniquenessReport) -> [Verdict; 7] {
    [
        r.c1.verdict,
        r.c2.verdict,
        r.c3.best.verdict,
        r.c4.best.verdict,
        r.c5.verdict,
        r.c6.verdict,
        r.c7.verdict,
    ]
}

const MODES: [DqMode; 2] = [DqMode::VirtualInterferer, DqMode::All];

/// Work items of a sweep, ratio-major.
fn items(cfg: &ExperimentConfig) -> Vec<(usize, Option<f64>, u64)> {
    let trials = cfg.effective_trials() as u64;
    cfg.sweep()
        .into_iter()
        .enumerate()
        .flat_map(|(i, r)| (0..trials).map(move |t| (i, r, t)))
        .collect()
}

fn game_for(cfg: &ExperimentConfig, ratio: Option<f64>, trial: u64) -> Result<NormalizedGame> {
    Ok(build_game(&cfg.channels(ratio, trial)?)?)
}

#[derive(Debug, Clone, Default, Serialize)]
struct Tally {
    passed: usize,
    boundary: usize,
    unknown: usize,
}

/// Monte Carlo probabilities that each uniqueness condition holds, per ratio.
pub fn run_uniqueness_mc(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report> {
    cfg.expect_kind(ExperimentKind::UniquenessMc)?;
    let work = items(cfg);
    let outcomes = par_map(workers, work.len(), |i| {
        let (_, ratio, trial) = work[i];
        let game = game_for(cfg, ratio, trial)?;
        MODES
            .iter()
            .map(|&m| Ok(verdicts(&check_conditions(&game, m)?)))
            .collect::<Result<Vec<_>>>()
    })?;

    let sweep = cfg.sweep();
    let trials = cfg.effective_trials();
    let mut tallies = vec![vec![vec![Tally::default(); CONDITIONS.len()]; MODES.len()]; sweep.len()];
    for (&(ri, _, _), verdicts) in work.iter().zip(&outcomes) {
        for (m, row) in verdicts.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let t = &mut tallies[ri][m][c];
                match v {
                    Verdict::Pass => t.passed += 1,
                    Verdict::Boundary => t.boundary += 1,
                    Verdict::Unknown => t.unknown += 1,
                    Verdict::Fail => {}
                }
            }
        }
    }

    let mut table = Table::new(["d_ratio", "condition", "prob", "trials"]);
    let mut detail = Vec::new();
    for (ri, &ratio) in sweep.iter().enumerate() {
        let label = cfg.ratio_label(ratio);
        for (m, &mode) in MODES.iter().enumerate() {
            for (c, name) in CONDITIONS.iter().enumerate() {
                let t = &tallies[ri][m][c];
                let prob = t.passed as f64 / trials as f64;
                let cond = condition_label(name, mode);
                table.push(vec![label.clone(), cond.clone(), fmt(prob), trials.to_string()]);
                detail.push(json!({
                    "d_ratio": label,
                    "condition": cond,
                    "prob": prob,
                    "stderr": (prob * (1.0 - prob) / trials as f64).sqrt(),
                    "passed": t.passed,
                    "boundary": t.boundary,
                    "unknown": t.unknown,
                }));
            }
        }
    }
    let summary = json!({
        "kind": ExperimentKind::UniquenessMc.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "trials": trials,
        "d_ratios": sweep.iter().map(|&r| cfg.ratio_label(r)).collect::<Vec<_>>(),
        "scenario": to_json(&cfg.scenario)?,
        "conditions": detail,
    });
    Ok(Report { table: Some(table), summary, violation: None })
}

/// Full condition reports for every realization, in both carrier-set modes.
pub fn run_check_uniqueness(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report> {
    cfg.expect_kind(ExperimentKind::CheckUniqueness)?;
    let work = items(cfg);
    let results = par_map(workers, work.len(), |i| {
        let (_, ratio, trial) = work[i];
        let game = game_for(cfg, ratio, trial)?;
        let vi = check_conditions(&game, DqMode::VirtualInterferer)?;
        let all = check_conditions(&game, DqMode::All)?;
        Ok(json!({
            "d_ratio": cfg.ratio_label(ratio),
            "trial": trial,
            "unique": vi.unique() || all.unique(),
            "virtual_interferer": to_json(&vi)?,
            "all": to_json(&all)?,
        }))
    })?;
    let summary = json!({
        "kind": ExperimentKind::CheckUniqueness.as_str(),
        "seed": cfg.seed,
        "results": results,
    });
    Ok(Report { table: None, summary, violation: None })
}

/// Equilibrium spectra per realization, with regime classification.
pub fn run_psd(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report> {
    cfg.expect_kind(ExperimentKind::Psd)?;
    let work = items(cfg);
    let results = par_map(workers, work.len(), |i| {
        let (_, ratio, trial) = work[i];
        let game = game_for(cfg, ratio, trial)?;
        let res = solve(&game, &cfg.solver.options(cfg.seed, trial))?;
        let mut info = json!({
            "d_ratio": cfg.ratio_label(ratio),
            "trial": trial,
            "converged": res.converged,
            "residual": res.residual,
            "iterations": res.iterations,
            "rates": rates_in(&res.profile, &game, RateUnit::Bits),
        });
        if res.converged {
            let class = classify_equilibrium(&res, &game, cfg.psd.eps)?;
            let max_flat = class.flatness.iter().cloned().fold(0.0, f64::max);
            let regime = if class.orthogonal {
                "orthogonal"
            } else if max_flat < cfg.psd.flat_threshold && class.shared_carriers == game.carriers {
                "flat"
            } else {
                "partial"
            };
            let rule = class.orthogonal.then(|| {
                let premise = allocation_premise_holds(&game, &class.exclusive);
                let violations =
                    if premise { allocation_rule_violations(&game, &class.exclusive).len() } else { 0 };
                json!({ "premise": premise, "violations": violations })
            });
            info["regime"] = json!(regime);
            info["orthogonal"] = json!(class.orthogonal);
            info["flatness"] = json!(class.flatness);
            info["max_flatness"] = json!(max_flat);
            info["shared_carriers"] = json!(class.shared_carriers);
            info["active_carriers"] = json!(class.active_carriers);
            info["rule"] = json!(rule);
        }
        Ok((res.profile, info))
    })?;

    let mut table = Table::new(["d_ratio", "trial", "user", "carrier", "power"]);
    for (&(_, ratio, trial), (profile, _)) in work.iter().zip(&results) {
        let label = cfg.ratio_label(ratio);
        for (q, row) in profile.power.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                table.push(vec![
                    label.clone(),
                    trial.to_string(),
                    (q + 1).to_string(),
                    (k + 1).to_string(),
                    fmt(p),
                ]);
            }
        }
    }
    let infos: Vec<_> = results.into_iter().map(|(_, i)| i).collect();
    let unconverged = infos.iter().filter(|i| i["converged"] == json!(false)).count();
    let rule_violations: u64 =
        infos.iter().filter_map(|i| i["rule"]["violations"].as_u64()).sum();
    let summary = json!({
        "kind": ExperimentKind::Psd.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "trials": cfg.effective_trials(),
        "solver": to_json(&cfg.solver)?,
        "scenario": to_json(&cfg.scenario)?,
        "unconverged": unconverged,
        "rule_violations": rule_violations,
        "results": infos,
    });
    Ok(Report { table: Some(table), summary, violation: None })
}

fn region_row(rows: &mut Vec<Vec<String>>, ratio: &str, trial: u64, provenance: &str, label: &str, rates: &[f64]) {
    let mut row = vec![ratio.to_string(), trial.to_string(), provenance.to_string(), label.to_string()];
    row.extend(rates.iter().map(|&r| fmt(r)));
    rows.push(row);
}

/// Rate-region samples: grid frontier, equilibria, scalarized optima and
/// modified-game equilibria, plus the sum-rate loss of the equilibrium.
pub fn run_rate_region(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report> {
    cfg.expect_kind(ExperimentKind::RateRegion)?;
    let users = cfg.users();
    let rc = &cfg.region;
    let uniform = vec![1.0; users];
    let mut lambdas = rc.lambdas.clone();
    if !lambdas.contains(&uniform) {
        lambdas.insert(0, uniform.clone());
    }
    let weights = lambdas
        .iter()
        .map(|l| {
            if l.len() != users {
                return Err(CliError::Config("each lambda needs one weight per user".into()));
            }
            Ok(Weights::new(l.clone())?)
        })
        .collect::<Result<Vec<_>>>()?;

    let work = items(cfg);
    let results = par_map(workers, work.len(), |i| {
        let (_, ratio, trial) = work[i];
        let label = cfg.ratio_label(ratio);
        let game = game_for(cfg, ratio, trial)?;
        let mut table = Vec::new();
        let ne = solve(&game, &cfg.solver.options(cfg.seed, trial))?;
        let ne_rates = rates_in(&ne.profile, &game, RateUnit::Bits);
        region_row(&mut table, &label, trial, "ne", &trial.to_string(), &ne_rates);

        let mut frontier_max = f64::NEG_INFINITY;
        if let Some(res) = rc.resolution {
            let region = sample_rate_region(&game, res, BudgetMode::PerUser)?;
            for p in region.frontier() {
                frontier_max = frontier_max.max(p.sum());
                region_row(&mut table, &label, trial, "grid", &p.label, &p.rates);
            }
        }
        let mut total_power_skipped = 0;
        if let Some(res) = rc.total_power_resolution {
            let region = sample_rate_region(&game, res, BudgetMode::TotalPower)?;
            total_power_skipped = region.skipped;
            for p in &region.points {
                region_row(&mut table, &label, trial, "ne_total_power", &p.label, &p.rates);
            }
        }

        let opts = ScalarizedOptions {
            restarts: rc.restarts,
            tol: rc.tol,
            seed: derive_seed(cfg.seed, &[trial, 2]),
            extra_starts: vec![ne.profile.clone()],
            ..Default::default()
        };
        let mut scalarized_sum = f64::NEG_INFINITY;
        let mut unconverged = 0;
        for w in &weights {
            let s = solve_scalarized(&game, w, &opts)?;
            if w.as_slice() == uniform.as_slice() {
                scalarized_sum = s.rates.sum();
            }
            unconverged += usize::from(!s.converged);
            region_row(&mut table, &label, trial, "scalarized", &w.label(), &s.rates.rates);
            if rc.modified_game {
                let m = solve_modified_game(
                    &game,
                    w,
                    &ModifiedGameOptions { tol: rc.tol, ..Default::default() },
                )?;
                unconverged += usize::from(!m.converged);
                let r = rates_in(&m.profile, &game, RateUnit::Bits);
                region_row(&mut table, &label, trial, "modified_game", &w.label(), &r);
            }
        }
        let ne_sum: f64 = ne_rates.iter().sum();
        let opt = scalarized_sum.max(frontier_max).max(ne_sum);
        let info = json!({
            "d_ratio": label,
            "trial": trial,
            "ne_converged": ne.converged,
            "ne_rates": ne_rates,
            "ne_sum": ne_sum,
            "opt_sum": opt,
            "sum_rate_loss": if opt > 0.0 { (opt - ne_sum) / opt } else { 0.0 },
            "unconverged_solves": unconverged,
            "total_power_skipped": total_power_skipped,
        });
        Ok((table, info))
    })?;

    let mut header: Vec<String> = ["d_ratio", "trial", "provenance", "label"].map(String::from).to_vec();
    header.extend((1..=users).map(|q| format!("r{q}")));
    let mut table = Table::new(header);
    let mut infos = Vec::new();
    for (rows, info) in results {
        rows.into_iter().for_each(|r| table.push(r));
        infos.push(info);
    }
    let losses: Vec<f64> = infos.iter().filter_map(|i| i["sum_rate_loss"].as_f64()).collect();
    let mut mean_ne = vec![0.0; users];
    for i in &infos {
        for (m, r) in mean_ne.iter_mut().zip(i["ne_rates"].as_array().into_iter().flatten()) {
            *m += r.as_f64().unwrap_or(f64::NAN) / infos.len() as f64;
        }
    }
    let summary = json!({
        "kind": ExperimentKind::RateRegion.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "trials": cfg.effective_trials(),
        "region": to_json(rc)?,
        "scenario": to_json(&cfg.scenario)?,
        "max_sum_rate_loss": losses.iter().cloned().fold(0.0, f64::max),
        "mean_sum_rate_loss": losses.iter().sum::<f64>() / losses.len().max(1) as f64,
        "mean_ne_rates": mean_ne,
        "results": infos,
    });
    Ok(Report { table: Some(table), summary, violation: None })
}

fn payoff_gap(p: Payoff) -> f64 {
    match p {
        Payoff::MutualInformation => 1.0,
        Payoff::GapRate { gap } => gap,
    }
}

#[derive(Serialize)]
struct InstanceReport {
    trial: u64,
    reports: Vec<DiagonalOptimalityReport>,
}

/// Diagonal precoding against random feasible precoders on every trial;
/// any sample beating the diagonal best response is a violation.
pub fn run_verify_theorem1(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<Report> {
    cfg.expect_kind(ExperimentKind::VerifyTheorem1)?;
    let tc = &cfg.theorem1;
    let n = cfg.effective_trials();
    let instances = par_map(workers, n, |i| {
        let trial = i as u64;
        let links = LinkMatrices::from_channels(&cfg.channels(None, trial)?)?;
        let mut reports = Vec::new();
        for (j, &payoff) in tc.payoffs.iter().enumerate() {
            let game = links.normalized_game(vec![payoff_gap(payoff); links.users()])?;
            let others = match tc.opponents {
                Opponents::Equilibrium => solve(&game, &cfg.solver.options(cfg.seed, trial))?.profile,
                Opponents::Random => PowerProfile::random(&game, derive_seed(cfg.seed, &[trial, 3])),
            };
            let seed = derive_seed(cfg.seed, &[trial, 4, j as u64]);
            for q in 0..links.users() {
                reports.push(verify_diagonal_optimality(&links, &others, q, payoff, tc.samples, seed)?);
            }
        }
        Ok(InstanceReport { trial, reports })
    })?;
    let all = instances.iter().flat_map(|r| &r.reports);
    let violations: usize = all.clone().map(|r| r.violations).sum();
    let max_gap = all.map(|r| r.max_gap).fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "kind": ExperimentKind::VerifyTheorem1.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "instances": n,
        "samples": tc.samples,
        "opponents": to_json(&tc.opponents)?,
        "violations": violations,
        "max_gap": max_gap,
        "results": to_json(&instances)?,
    });
    let violation = (violations > 0)
        .then(|| format!("{violations} sampled precoders beat the diagonal best response"));
    Ok(Report { table: None, summary, violation })
}
