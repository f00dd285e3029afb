#![allow(dead_code)]

use std::path::Path;

use lqmdp::config::ExperimentConfig;
use lqmdp::envmodel::MixtureKernel;
use lqmdp::linalg::Vector;
use lqmdp::linctl::{self, CostMatrices, LinearSystem, RiccatiSolution};
use lqmdp::lsvi::{self, ThetaStack};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap()
}

pub fn shipped_config() -> ExperimentConfig {
    lqmdp::config::load_config(&workspace_root().join("configs/tracking.toml")).unwrap()
}

pub fn smoke_config() -> ExperimentConfig {
    lqmdp::config::load_config(&workspace_root().join("configs/smoke.toml")).unwrap()
}

/// Cost-to-go from `(x, s)` at time `t` under the greedy policy of `theta`,
/// along one sampled exogenous path.
#[allow(clippy::too_many_arguments)]
fn cost_to_go(
    x: &Vector,
    s: &Vector,
    t: usize,
    theta: &ThetaStack,
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (mut x, mut s) = (x.clone(), s.clone());
    let mut total = 0.0;
    for k in t..sol.horizon() {
        let u = lsvi::greedy_action(&x, &s, k, theta, sol, kern.feature()).unwrap();
        total += linctl::stage_cost(&x, &s, &u, cost).unwrap();
        x = sys.step(&x, &u);
        s = kern.sample_next(&s, k, rng).unwrap();
    }
    total + linctl::stage_cost(&x, &s, &Vector::zeros(sys.m()), cost).unwrap()
}

/// Brute-force `θ*_t`: for each component `i`, draw `s ~ μ_i` and read
/// `q_t(s) = V_t(0, s)` and `h_t(s)_k = (V_t(e_k, s) − V_t(−e_k, s))/4` off
/// simulated cost-to-go values that share one exogenous path. Returns means
/// and standard errors in the stacked layout.
pub fn nested_mc_theta(
    t: usize,
    theta: &ThetaStack,
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    samples: usize,
    seed: u64,
) -> (Vector, Vector) {
    let n = sys.n();
    let d = kern.d();
    let mut mean = Vector::zeros(d * (n + 1));
    let mut se = Vector::zeros(d * (n + 1));
    for i in 0..d {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32) ^ t as u64);
        let mut acc = vec![Vec::with_capacity(samples); n + 1];
        for _ in 0..samples {
            let s = kern.sample_component(i, t - 1, &mut rng).unwrap();
            let path_seed = rand::Rng::random::<u64>(&mut rng);
            let value = |x: &Vector| {
                let mut r = ChaCha8Rng::seed_from_u64(path_seed);
                cost_to_go(x, &s, t, theta, sol, sys, cost, kern, &mut r)
            };
            for k in 0..n {
                let mut e = Vector::zeros(n);
                e[k] = 1.0;
                acc[k].push((value(&e) - value(&(-&e))) / 4.0);
            }
            acc[n].push(value(&Vector::zeros(n)));
        }
        for (k, xs) in acc.iter().enumerate() {
            let (m, e) = lqmdp::linalg::mean_and_stderr(xs);
            mean[i * (n + 1) + k] = m;
            se[i * (n + 1) + k] = e;
        }
    }
    (mean, se)
}
