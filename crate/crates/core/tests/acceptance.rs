//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criteria marked `reported` are empirical properties of a single seeded
//! run; they print their verdict but do not fail the target.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use lqmdp::analysis;
use lqmdp::config::ExperimentConfig;
use lqmdp::experiment::{self, RunOptions};
use lqmdp::linalg::{self, Mat, Vector};
use lqmdp::linctl;
use lqmdp::lsvi::{self, Dataset, ThetaStack, UpdateMode};
use lqmdp::oracle;
use lqmdp::plot::Table;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SLOPE_BAND: (f64, f64) = (0.35, 0.65);
const AVG_REGRET_RATIO: f64 = 0.5;
const PARAM_ERROR_RATIO: f64 = 0.5;
const MOVING_WINDOW: usize = 20;
const TRACKING_RATIO: f64 = 0.2;
const RICCATI_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const STATIONARITY_TOL: f64 = 1e-6;
const STATIONARITY_PROBES: usize = 100;
const ORACLE_SIGMAS: f64 = 3.0;
const ORACLE_SAMPLES: usize = 100_000;
const VALUE_SIGMAS: f64 = 3.0;
const VALUE_ROLLOUTS: usize = 10_000;
const NORMAL_EQ_TOL: f64 = 1e-8;
const INCREMENTAL_TOL: f64 = 1e-8;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    reported: bool,
    detail: String,
}

fn column(dir: &Path, file: &str, col: &str) -> Vec<f64> {
    Table::read(dir, file).unwrap().column(col).unwrap()
}

fn instance(cfg: &ExperimentConfig) -> lqmdp::config::Instance {
    cfg.instance().unwrap()
}

fn slope(dir: &Path) -> Outcome {
    let cum = column(dir, experiment::REGRET_CSV, "regret_cum");
    let s = experiment::loglog_slope(&cum, 100, 1000).unwrap_or(f64::NAN);
    Outcome {
        id: "1",
        name: "cumulative regret log-log slope over L in [100, 1000]",
        pass: s >= SLOPE_BAND.0 && s <= SLOPE_BAND.1,
        reported: true,
        detail: format!("slope {s:.4}, band [{}, {}]", SLOPE_BAND.0, SLOPE_BAND.1),
    }
}

fn average_regret(dir: &Path) -> Outcome {
    let avg = column(dir, experiment::REGRET_CSV, "regret_avg");
    let (a100, a1000) = (avg[99], avg[999]);
    Outcome {
        id: "2",
        name: "average regret R(1000)/1000 <= 0.5 R(100)/100",
        pass: a1000 <= AVG_REGRET_RATIO * a100,
        reported: false,
        detail: format!("R(100)/100 = {a100:.4}, R(1000)/1000 = {a1000:.4}"),
    }
}

fn parameter_error(dir: &Path) -> Outcome {
    let e = column(dir, experiment::PARAM_ERROR_CSV, "error");
    let drop = e[999] <= PARAM_ERROR_RATIO * e[9];
    let ma: Vec<f64> =
        (MOVING_WINDOW..=e.len()).map(|k| e[k - MOVING_WINDOW..k].iter().sum::<f64>() / MOVING_WINDOW as f64).collect();
    // ma[j] averages episodes j+1..=j+20; keep windows ending in the final half.
    let start = e.len() / 2 - MOVING_WINDOW;
    let rises: Vec<usize> =
        (start + 1..ma.len()).filter(|&j| ma[j] > ma[j - 1]).map(|j| j + MOVING_WINDOW).collect();
    let worst = (start + 1..ma.len()).map(|j| ma[j] - ma[j - 1]).fold(f64::NEG_INFINITY, f64::max);
    Outcome {
        id: "3",
        name: "parameter error decreases (L=1000 vs L=10; moving average over final half)",
        pass: drop && rises.is_empty(),
        reported: true,
        detail: format!(
            "error(10) = {:.4}, error(1000) = {:.4} [{}]; 20-episode moving average rises at {} of {} steps, largest rise {worst:.3e} [{}]",
            e[9],
            e[999],
            if drop { "ok" } else { "not halved" },
            rises.len(),
            ma.len() - start - 1,
            if rises.is_empty() { "ok" } else { "not monotone" }
        ),
    }
}

fn tracking(dir: &Path) -> Outcome {
    let xl = column(dir, experiment::TRAJECTORY_CSV, "x1_learned");
    let xo = column(dir, experiment::TRAJECTORY_CSV, "x1_optimal");
    let k = xl.len() as f64;
    let gap = xl.iter().zip(&xo).map(|(a, b)| (a - b).abs()).sum::<f64>() / k;
    let rms = (xo.iter().map(|b| b * b).sum::<f64>() / k).sqrt();
    Outcome {
        id: "4",
        name: "learned trajectory tracks the optimal one",
        pass: gap <= TRACKING_RATIO * rms,
        reported: false,
        detail: format!("mean |gap| {gap:.4}, 0.2 * RMS(optimal) {:.4}", TRACKING_RATIO * rms),
    }
}

fn riccati(cfg: &ExperimentConfig) -> Outcome {
    let inst = instance(cfg);
    let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).unwrap();
    let res = sol.riccati_residuals(&inst.sys, &inst.cost).into_iter().fold(0.0, f64::max);
    let mut sym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for t in 0..=sol.horizon() {
        let g = sol.g(t);
        sym = sym.max(linalg::max_abs(&(g - g.transpose())));
        min_eig = min_eig.min(linalg::min_sym_eigenvalue(g));
    }
    let fm = inst.kern.feature();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..STATIONARITY_PROBES {
        let t = rng.random_range(0..sol.horizon());
        let x = Vector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
        let s = Vector::from_element(1, rng.random_range(-15.0..15.0));
        let theta = Vector::from_fn(6, |_, _| rng.random_range(-500.0..500.0));
        let mut stack = ThetaStack::zeros(2, 2, sol.horizon());
        stack.set(t + 1, theta);
        let u = lsvi::greedy_action(&x, &s, t, &stack, &sol, fm).unwrap();
        let q = |du: f64| {
            let u = Vector::from_element(1, u[0] + du);
            lsvi::q_value(&x, &s, &u, t, stack.get(t + 1), &inst.sys, &inst.cost, &sol, fm).unwrap()
        };
        let h = 1e-4 * (1.0 + u[0].abs());
        let grad = (q(h) - q(-h)) / (2.0 * h);
        worst = worst.max(grad.abs() / (1.0 + q(0.0).abs()));
    }
    Outcome {
        id: "5",
        name: "Riccati residual, symmetry, PSD, greedy stationarity",
        pass: res <= RICCATI_TOL && sym <= 1e-12 && min_eig >= -PSD_TOL && worst <= STATIONARITY_TOL,
        reported: false,
        detail: format!(
            "max residual {res:.2e}, max asymmetry {sym:.2e}, min eigenvalue {min_eig:.3e}, worst relative gradient {worst:.2e}"
        ),
    }
}

fn oracle_equivalence(cfg: &ExperimentConfig) -> Outcome {
    let t0 = Instant::now();
    let inst = instance(cfg);
    let sol = linctl::riccati_backward(&inst.sys, &inst.cost, 3).unwrap();
    let tt = oracle::true_theta_backward(&inst.kern, &inst.cost, &sol, ORACLE_SAMPLES, 11).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=3 {
        let (mc, se) = common::nested_mc_theta(t, &tt.theta, &sol, &inst.sys, &inst.cost, &inst.kern, ORACLE_SAMPLES, 23);
        for k in 0..mc.len() {
            let diff = (tt.theta.get(t)[k] - mc[k]).abs();
            let comb = (tt.std_errors.get(t)[k].powi(2) + se[k].powi(2)).sqrt();
            let z = if comb > 0.0 { diff / comb } else if diff <= 1e-9 * (1.0 + mc[k].abs()) { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        id: "6",
        name: "recursion theta* matches nested Monte Carlo (T = 3)",
        pass: worst <= ORACLE_SIGMAS && secs < 120.0,
        reported: false,
        detail: format!("largest deviation {worst:.2} combined standard errors, {secs:.1} s"),
    }
}

fn value_consistency(cfg: &ExperimentConfig) -> Outcome {
    let inst = instance(cfg);
    let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).unwrap();
    let tt = oracle::true_theta_backward(&inst.kern, &inst.cost, &sol, cfg.evaluation.mc_samples, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for k in 0..5 {
        let x = inst.learner.x0.sample(&mut rng);
        let s = lsvi::sample_exo_initial(&inst.learner.s0, inst.kern.feature(), &mut rng, 1000).unwrap();
        let pv = oracle::policy_value_mc(&tt.theta, &x, &s, &inst.sys, &inst.kern, &inst.cost, &sol, VALUE_ROLLOUTS, 19, &[k])
            .unwrap();
        let v = oracle::optimal_value(&x, &s, 0, &tt, &sol, &inst.cost, &inst.kern).unwrap();
        worst = worst.max((pv.mean - v).abs() / pv.std_error);
    }
    Outcome {
        id: "7",
        name: "Monte-Carlo value of the optimal policy matches the closed form",
        pass: worst <= VALUE_SIGMAS,
        reported: false,
        detail: format!("largest deviation {worst:.2} standard errors over 5 initial states"),
    }
}

fn iss(cfg: &ExperimentConfig, dir: &Path) -> Outcome {
    let inst = instance(cfg);
    let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).unwrap();
    let c = analysis::iss_constants(&sol);
    let horizon = sol.horizon();
    let mut envelope: f64 = 0.0;
    for t1 in 0..=horizon {
        let mut prod = Mat::identity(2, 2);
        for t2 in t1..=horizon {
            if t2 > t1 {
                prod = sol.closed_loop(t2 - 1) * prod;
            }
            envelope = envelope.max(linalg::spectral_norm(&prod) / (c.alpha * c.rho.powi((t2 - t1) as i32)));
        }
    }
    let ratio = column(dir, experiment::ISS_CSV, "ratio");
    let rows = ratio.len();
    let held = ratio.iter().filter(|&&r| r <= 1.0).count();
    let expected = inst.learner.episodes * (horizon + 1);
    Outcome {
        id: "8",
        name: "trajectory bound holds at every (episode, t) with certified envelope",
        pass: envelope <= 1.0 + 1e-12 && held == rows && rows == expected && c.rho < 1.0,
        reported: false,
        detail: format!(
            "alpha {:.4}, rho {:.4}, envelope ratio {envelope:.6}, {held}/{rows} pairs, max ratio {:.3e}",
            c.alpha,
            c.rho,
            ratio.iter().cloned().fold(0.0, f64::max)
        ),
    }
}

fn learner_identities(cfg: &ExperimentConfig) -> Outcome {
    let inst = instance(cfg);
    let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).unwrap();
    let fm = inst.kern.feature();
    let (empty, _) =
        lsvi::backward_update(&Dataset::new(inst.learner.horizon), &inst.learner, &sol, &inst.cost, fm).unwrap();
    let zero = empty.as_slice().iter().all(|v| v.iter().all(|&x| x == 0.0));

    let mut small = inst.learner.clone();
    small.episodes = 60;
    small.mode = UpdateMode::FullResum;
    let full = lsvi::run_lsvi(&small, &inst.sys, &inst.cost, &inst.kern, &sol).unwrap();
    small.mode = UpdateMode::Incremental;
    let inc = lsvi::run_lsvi(&small, &inst.sys, &inst.cost, &inst.kern, &sol).unwrap();
    let mut lam_gap: f64 = 0.0;
    for (a, b) in full.design.lambda.iter().zip(&inc.design.lambda) {
        lam_gap = lam_gap.max(linalg::max_abs(&(a - b)) / (1.0 + linalg::max_abs(a)));
    }
    let radius = full.records.iter().chain(&inc.records).all(|r| r.theta.max_norm() <= small.r_theta);

    let mut data = Dataset::new(inst.learner.horizon);
    for r in &full.records {
        data.push(r.episode.transitions.clone()).unwrap();
    }
    let mut big = inst.learner.clone();
    big.r_theta = 1e12;
    let (theta, design) = lsvi::backward_update(&data, &big, &sol, &inst.cost, fm).unwrap();
    let mut ne: f64 = 0.0;
    for t in 0..inst.learner.horizon {
        if design.projected[t] {
            continue;
        }
        let r = &design.lambda[t] * theta.get(t + 1) - &design.rhs[t];
        ne = ne.max(r.norm() / design.rhs[t].norm().max(f64::MIN_POSITIVE));
    }
    Outcome {
        id: "9",
        name: "learner identities (empty data, radius, normal equations, incremental design)",
        pass: zero && radius && ne <= NORMAL_EQ_TOL && lam_gap <= INCREMENTAL_TOL,
        reported: false,
        detail: format!(
            "empty update zero: {zero}, radius respected: {radius}, normal-equation residual {ne:.2e}, design gap {lam_gap:.2e}"
        ),
    }
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".svg"))
        .collect();
    names.sort();
    let differ: Vec<&String> = names.iter().filter(|n| fs::read(a.join(n)).ok() != fs::read(b.join(n)).ok()).collect();
    Outcome {
        id: "10",
        name: "identical config and seed give byte-identical outputs",
        pass: differ.is_empty() && names.len() >= 7,
        reported: false,
        detail: format!("{} files compared, {} differ", names.len(), differ.len()),
    }
}

fn overlay(dir: &Path) -> Outcome {
    let bound = column(dir, experiment::BOUND_CSV, "theoretical_bound");
    let cum = column(dir, experiment::REGRET_CSV, "regret_cum");
    let below = bound.iter().zip(&cum).filter(|(b, r)| b < r).count();
    Outcome {
        id: "bound",
        name: "regret bound curve dominates empirical regret",
        pass: below == 0 && bound.len() == cum.len(),
        reported: false,
        detail: format!("{below} of {} episodes above the bound; bound at L=1000 {:.3e}", bound.len(), bound[bound.len() - 1]),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let cfg = common::shipped_config();
    let tmp = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let opts = RunOptions { quiet: true };
    let t0 = Instant::now();
    experiment::run_experiment(&cfg, &run_a, &opts).unwrap();
    let first = t0.elapsed().as_secs_f64();
    experiment::run_experiment(&cfg, &run_b, &opts).unwrap();
    println!("shipped configuration: {first:.1} s per run");

    let outcomes = vec![
        slope(&run_a),
        average_regret(&run_a),
        parameter_error(&run_a),
        tracking(&run_a),
        riccati(&cfg),
        oracle_equivalence(&cfg),
        value_consistency(&cfg),
        iss(&cfg, &run_a),
        learner_identities(&cfg),
        determinism(&run_a, &run_b),
        overlay(&run_a),
    ];
    let mut hard = 0;
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let kind = if o.reported { " (reported)" } else { "" };
        println!("{tag} [{}] {}{kind}: {}", o.id, o.name, o.detail);
        if !o.pass && !o.reported {
            hard += 1;
        }
    }
    if hard > 0 {
        eprintln!("{hard} acceptance criteria failed");
        std::process::exit(1);
    }
}
