//! Ground truth: the true weight stacks `θ*` from the moment recursion, the
//! optimal value function, Monte-Carlo policy evaluation and regret.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::envmodel::{ComponentSamples, EnvError, KernelMoments, MixtureKernel, MIN_MC_SAMPLES};
use crate::linalg::{self, Mat, Vector};
use crate::linctl::{self, ControlError, CostMatrices, LinearSystem, RiccatiSolution};
use crate::lsvi::{self, History, LearnError, ThetaStack};
use crate::rng::{self, StreamRng};

/// Smallest rollout count accepted by [`policy_value_mc`].
pub const MIN_EVAL: usize = 100;
/// Number of disjoint batches used for the `θ*` standard errors.
pub const THETA_BATCHES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("horizon mismatch: {0}")]
    Horizon(String),
    #[error("time {t} outside 0..={horizon}")]
    TimeRange { t: usize, horizon: usize },
    #[error("need at least {min} evaluation rollouts, got {got}")]
    TooFewRollouts { min: usize, got: usize },
    #[error("need at least {min} Monte-Carlo samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// `θ*_t` for `t = 1..=T` with batch-means standard errors and the moments
/// behind each step.
#[derive(Debug, Clone)]
pub struct TrueTheta {
    pub theta: ThetaStack,
    pub std_errors: ThetaStack,
    /// `moments[t-1]` feeds `θ*_t`.
    pub moments: Vec<KernelMoments>,
    pub mc_samples: usize,
}

impl TrueTheta {
    pub fn horizon(&self) -> usize {
        self.theta.horizon()
    }

    /// Max over `t` of `‖SE(θ*_t)‖`.
    pub fn max_error_norm(&self) -> f64 {
        self.std_errors.max_norm()
    }
}

/// Backward pass `t = T..1` of the moment recursion on one set of samples.
fn recursion(
    samples: &[&ComponentSamples],
    range: (usize, usize),
    cost: &CostMatrices,
    sol: &RiccatiSolution,
) -> Result<(ThetaStack, Vec<KernelMoments>), OracleError> {
    let horizon = sol.horizon();
    let (n, p) = (cost.n(), cost.p());
    let d = samples[0].feature(0, 0).len();
    let w = n + 1;
    let mut theta = ThetaStack::zeros(d, n, horizon);
    let mut moments = vec![None; horizon];
    for t in (1..=horizon).rev() {
        let smp = samples[t - 1];
        let mut next = Vector::zeros(d * w);
        if t == horizon {
            let m = smp.moments_range(range.0, range.1, &cost.m, &Mat::zeros(p, n))?;
            for i in 0..d {
                let mi = m.m_bar.rows(i * p, p).into_owned();
                next.rows_mut(i * w, n).copy_from(&(&cost.f * mi));
                next[i * w + n] = m.quad_y1[i];
            }
            moments[t - 1] = Some(m);
        } else {
            let terms = sol.terms(t);
            let m = smp.moments_range(range.0, range.1, &terms.y1, &terms.y3)?;
            let prev = theta.get(t + 1);
            let hs: Vec<Vector> = (0..d).map(|j| prev.rows(j * w, n).into_owned()).collect();
            let h_flat = Vector::from_iterator(d * n, hs.iter().flat_map(|h| h.iter().copied()));
            let y2h: Vec<Vector> = hs.iter().map(|h| &terms.y2 * h).collect();
            for i in 0..d {
                let mut h = &terms.x2 * m.m_bar.rows(i * p, p);
                let mut q = m.quad_y1[i];
                for j in 0..d {
                    let phi_ij = m.phi[(i, j)];
                    h += &terms.x1 * &hs[j] * phi_ij;
                    q += phi_ij * prev[j * w + n];
                    for (k, y2hk) in y2h.iter().enumerate() {
                        q += m.phi_outer[i][(j, k)] * hs[j].dot(y2hk);
                    }
                }
                q += 2.0 * m.cross_y3.row(i).transpose().dot(&h_flat);
                next.rows_mut(i * w, n).copy_from(&h);
                next[i * w + n] = q;
            }
            moments[t - 1] = Some(m);
        }
        theta.set(t, next);
    }
    Ok((theta, moments.into_iter().map(|m| m.expect("every step filled")).collect()))
}

/// `θ*` from the closed-form recursions with Monte-Carlo moments.
///
/// The samples behind `θ*_t` follow the law of `s_t`, i.e. the components of
/// step `t−1`. A time-invariant kernel is sampled once and reused.
pub fn true_theta_backward(
    kern: &MixtureKernel,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    mc_samples: usize,
    seed: u64,
) -> Result<TrueTheta, OracleError> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(OracleError::TooFewSamples { min: MIN_MC_SAMPLES, got: mc_samples });
    }
    if kern.p() != cost.p() {
        return Err(OracleError::Horizon(format!(
            "kernel state dimension {} vs cost dimension {}",
            kern.p(),
            cost.p()
        )));
    }
    let horizon = sol.horizon();
    let owned: Vec<ComponentSamples> = if kern.is_time_invariant() {
        vec![ComponentSamples::draw(kern, 0, mc_samples, seed)?]
    } else {
        (0..horizon)
            .map(|t| ComponentSamples::draw(kern, t, mc_samples, seed))
            .collect::<Result<_, _>>()?
    };
    let per_t: Vec<&ComponentSamples> =
        (0..horizon).map(|t| if owned.len() == 1 { &owned[0] } else { &owned[t] }).collect();
    let (theta, moments) = recursion(&per_t, (0, mc_samples), cost, sol)?;

    let batch = mc_samples / THETA_BATCHES;
    let batches: Vec<ThetaStack> = (0..THETA_BATCHES)
        .into_par_iter()
        .map(|b| recursion(&per_t, (b * batch, (b + 1) * batch), cost, sol).map(|r| r.0))
        .collect::<Result<_, _>>()?;
    let (d, n) = (theta.d(), theta.n());
    let bf = THETA_BATCHES as f64;
    let se: Vec<Vector> = (1..=horizon)
        .map(|t| {
            let mean = batches.iter().fold(Vector::zeros(theta.width()), |acc, b| acc + b.get(t)) / bf;
            let var = batches
                .iter()
                .fold(Vector::zeros(theta.width()), |acc, b| acc + (b.get(t) - &mean).map(|v| v * v))
                / (bf - 1.0);
            // Variance of a batch estimate over the batch count.
            (var / bf).map(f64::sqrt)
        })
        .collect();
    Ok(TrueTheta { theta, std_errors: ThetaStack::from_vecs(d, n, se)?, moments, mc_samples })
}

/// `V*_t(x,s) = xᵀG_t x + 2h_t(s)ᵀx + q_t(s)`; at `t = T` this is `c(x,s,0)`.
pub fn optimal_value(
    x: &Vector,
    s: &Vector,
    t: usize,
    tt: &TrueTheta,
    sol: &RiccatiSolution,
    cost: &CostMatrices,
    kern: &MixtureKernel,
) -> Result<f64, OracleError> {
    let horizon = sol.horizon();
    if t > horizon {
        return Err(OracleError::TimeRange { t, horizon });
    }
    if tt.horizon() != horizon {
        return Err(OracleError::Horizon(format!("theta* horizon {} vs {horizon}", tt.horizon())));
    }
    if t == horizon {
        return Ok(linctl::stage_cost(x, s, &Vector::zeros(cost.input_dim()), cost)?);
    }
    let phi = kern.feature().eval(s)?;
    let (h, q) = lsvi::value_forms(s, &phi, tt.theta.get(t + 1), sol.terms(t));
    Ok(x.dot(&(sol.g(t) * x)) + 2.0 * h.dot(x) + q)
}

/// Monte-Carlo estimate of a policy's expected cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValue {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
}

/// Total cost of one rollout of the greedy policy of `theta`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_cost<R: Rng + ?Sized>(
    theta: &ThetaStack,
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    x0: &Vector,
    s0: &Vector,
    rng: &mut R,
) -> Result<f64, LearnError> {
    let fm = kern.feature();
    let mut x = x0.clone();
    let mut s = s0.clone();
    let mut total = 0.0;
    for t in 0..sol.horizon() {
        let phi = fm.eval(&s)?;
        let u = lsvi::greedy_action_with_phi(&x, &s, &phi, t, theta.get(t + 1), sol)?;
        total += linctl::stage_cost(&x, &s, &u, cost)?;
        x = sys.step(&x, &u);
        if !linalg::vec_is_finite(&x) {
            return Err(LearnError::Diverged { t: t + 1 });
        }
        s = kern.sample_next(&s, t, rng)?;
    }
    Ok(total + linctl::stage_cost(&x, &s, &Vector::zeros(sys.m()), cost)?)
}

fn check_horizons(theta: &ThetaStack, sol: &RiccatiSolution) -> Result<(), OracleError> {
    if theta.horizon() != sol.horizon() {
        return Err(OracleError::Horizon(format!(
            "policy horizon {} vs Riccati horizon {}",
            theta.horizon(),
            sol.horizon()
        )));
    }
    Ok(())
}

/// Rollout costs on streams `(seed, path…, r)` for `r < n_eval`.
#[allow(clippy::too_many_arguments)]
fn rollout_costs(
    policy: &ThetaStack,
    x0: &Vector,
    s0: &Vector,
    sys: &LinearSystem,
    kern: &MixtureKernel,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    n_eval: usize,
    seed: u64,
    path: &[u64],
) -> Result<Vec<f64>, OracleError> {
    (0..n_eval)
        .into_par_iter()
        .map(|r| {
            let mut full = path.to_vec();
            full.push(r as u64);
            let mut rng: StreamRng = rng::stream(seed, &full);
            rollout_cost(policy, sol, sys, cost, kern, x0, s0, &mut rng).map_err(OracleError::from)
        })
        .collect()
}

/// Mean total cost of `n_eval` independent rollouts from `(x0, s0)`.
#[allow(clippy::too_many_arguments)]
pub fn policy_value_mc(
    policy: &ThetaStack,
    x0: &Vector,
    s0: &Vector,
    sys: &LinearSystem,
    kern: &MixtureKernel,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    n_eval: usize,
    seed: u64,
    path: &[u64],
) -> Result<PolicyValue, OracleError> {
    if n_eval < MIN_EVAL {
        return Err(OracleError::TooFewRollouts { min: MIN_EVAL, got: n_eval });
    }
    check_horizons(policy, sol)?;
    let costs = rollout_costs(policy, x0, s0, sys, kern, cost, sol, n_eval, seed, path)?;
    let (mean, std_error) = linalg::mean_and_stderr(&costs);
    Ok(PolicyValue { mean, std_error, rollouts: n_eval })
}

/// One row of the regret report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretRow {
    pub episode: usize,
    pub v_learned: f64,
    pub v_learned_stderr: f64,
    pub v_opt: f64,
    /// `V^ℓ_0 − V*_0` at the episode's initial states.
    pub regret: f64,
    pub regret_stderr: f64,
    pub regret_cum: f64,
    pub regret_cum_stderr: f64,
    pub regret_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub rows: Vec<RegretRow>,
    pub n_eval: usize,
    pub common_random_numbers: bool,
}

impl RegretReport {
    pub fn cumulative(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.regret_cum).collect()
    }
}

/// Per-episode regret of the learning history against `θ*`.
///
/// With `crn` the learned and optimal policies are rolled out on the same
/// environment noise and the regret term is the mean paired difference;
/// otherwise the learned value is estimated alone and compared with the exact
/// optimal value.
#[allow(clippy::too_many_arguments)]
pub fn regret_curve(
    history: &History,
    tt: &TrueTheta,
    sys: &LinearSystem,
    kern: &MixtureKernel,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    n_eval: usize,
    seed: u64,
    crn: bool,
) -> Result<RegretReport, OracleError> {
    regret_curve_with(history, tt, sys, kern, cost, sol, n_eval, seed, crn, |_, _| {})
}

/// [`regret_curve`] with a per-episode callback `(ℓ, L)`.
#[allow(clippy::too_many_arguments)]
pub fn regret_curve_with<F: FnMut(usize, usize)>(
    history: &History,
    tt: &TrueTheta,
    sys: &LinearSystem,
    kern: &MixtureKernel,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    n_eval: usize,
    seed: u64,
    crn: bool,
    mut progress: F,
) -> Result<RegretReport, OracleError> {
    if n_eval < MIN_EVAL {
        return Err(OracleError::TooFewRollouts { min: MIN_EVAL, got: n_eval });
    }
    if tt.horizon() != sol.horizon() {
        return Err(OracleError::Horizon(format!("theta* horizon {} vs {}", tt.horizon(), sol.horizon())));
    }
    let total = history.records.len();
    let mut rows = Vec::with_capacity(total);
    let (mut cum, mut cum_var) = (0.0, 0.0);
    for rec in &history.records {
        check_horizons(&rec.theta, sol)?;
        let path = [rng::tag::EVALUATION, rec.index as u64];
        let v_opt = optimal_value(&rec.x0, &rec.s0, 0, tt, sol, cost, kern)?;
        let learned = rollout_costs(&rec.theta, &rec.x0, &rec.s0, sys, kern, cost, sol, n_eval, seed, &path)?;
        let (v_learned, v_learned_stderr) = linalg::mean_and_stderr(&learned);
        let (regret, regret_stderr) = if crn {
            let opt = rollout_costs(&tt.theta, &rec.x0, &rec.s0, sys, kern, cost, sol, n_eval, seed, &path)?;
            let diff: Vec<f64> = learned.iter().zip(&opt).map(|(a, b)| a - b).collect();
            linalg::mean_and_stderr(&diff)
        } else {
            (v_learned - v_opt, v_learned_stderr)
        };
        cum += regret;
        cum_var += regret_stderr * regret_stderr;
        rows.push(RegretRow {
            episode: rec.index,
            v_learned,
            v_learned_stderr,
            v_opt,
            regret,
            regret_stderr,
            regret_cum: cum,
            regret_cum_stderr: cum_var.sqrt(),
            regret_avg: cum / rec.index as f64,
        });
        progress(rec.index, total);
    }
    Ok(RegretReport { rows, n_eval, common_random_numbers: crn })
}

/// Maxima over `t < T` of the operator norms used by the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormCaps {
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub ks: f64,
    pub kh: f64,
}

impl NormCaps {
    pub fn from_solution(sol: &RiccatiSolution) -> Self {
        let mut caps = NormCaps { x1: 0.0, x2: 0.0, y1: 0.0, y2: 0.0, y3: 0.0, ks: 0.0, kh: 0.0 };
        for t in 0..sol.horizon() {
            let v = sol.terms(t);
            caps.x1 = caps.x1.max(linalg::spectral_norm(&v.x1));
            caps.x2 = caps.x2.max(linalg::spectral_norm(&v.x2));
            caps.y1 = caps.y1.max(linalg::spectral_norm(&v.y1));
            caps.y2 = caps.y2.max(linalg::spectral_norm(&v.y2));
            caps.y3 = caps.y3.max(linalg::spectral_norm(&v.y3));
            caps.ks = caps.ks.max(linalg::spectral_norm(sol.ks(t)));
            caps.kh = caps.kh.max(linalg::spectral_norm(sol.kh(t)));
        }
        caps
    }
}

/// Evaluated parameter bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaNormBound {
    /// `‖θ*_t‖ ≤ c_θ√d` for all `t`.
    pub c_theta: f64,
    /// Bound on `‖h̄_t‖`, `t = 0..=T`.
    pub h_bound: Vec<f64>,
    /// Bound on `‖q̄_t‖`, `t = 0..=T`.
    pub q_bound: Vec<f64>,
    pub caps: NormCaps,
    /// `ρ ≥ 1`: the geometric series diverges and every bound is infinite.
    pub vacuous: bool,
}

/// Evaluates
/// `‖h̄_t‖ ≤ ‖F‖δ_sαρ^{T−t} + X̄₂δ_sα√d/(1−ρ)` and
/// `‖q̄_t‖ ≤ δ_s²‖M‖ + δ_s²Ȳ₁√d + Ȳ₂‖h̄_{t+1}‖²/√d + δ_sȲ₃‖h̄_{t+1}‖`
/// with `‖h̄_{T+1}‖ = 0`, and `c_θ = max_t (‖h̄_t‖ + ‖q̄_t‖)/√d`.
pub fn theta_norm_bound(
    sol: &RiccatiSolution,
    cost: &CostMatrices,
    d: usize,
    delta_s: f64,
    alpha: f64,
    rho: f64,
) -> ThetaNormBound {
    let caps = NormCaps::from_solution(sol);
    let horizon = sol.horizon();
    let sd = (d as f64).sqrt();
    let vacuous = !(rho < 1.0);
    if vacuous {
        let inf = vec![f64::INFINITY; horizon + 1];
        return ThetaNormBound { c_theta: f64::INFINITY, h_bound: inf.clone(), q_bound: inf, caps, vacuous };
    }
    let f_norm = linalg::spectral_norm(&cost.f);
    let m_norm = linalg::spectral_norm(&cost.m);
    let h_bound: Vec<f64> = (0..=horizon)
        .map(|t| {
            f_norm * delta_s * alpha * rho.powi((horizon - t) as i32) + caps.x2 * delta_s * alpha * sd / (1.0 - rho)
        })
        .collect();
    let q_bound: Vec<f64> = (0..=horizon)
        .map(|t| {
            let hn = if t < horizon { h_bound[t + 1] } else { 0.0 };
            delta_s * delta_s * m_norm
                + delta_s * delta_s * caps.y1 * sd
                + caps.y2 * hn * hn / sd
                + delta_s * caps.y3 * hn
        })
        .collect();
    let c_theta = h_bound.iter().zip(&q_bound).map(|(h, q)| (h + q) / sd).fold(0.0, f64::max);
    ThetaNormBound { c_theta, h_bound, q_bound, caps, vacuous }
}
