//! Stability and theory-side diagnostics: envelope constants `(α, ρ)` for the
//! closed-loop transition matrices, the input-to-state bound on trajectories,
//! the regret-bound constants and curve, and the parameter-error metric.

use rayon::prelude::*;
use thiserror::Error;

use crate::envmodel::MixtureKernel;
use crate::linalg::{self, Mat, Vector};
use crate::linctl::{CostMatrices, LinearSystem, RiccatiSolution};
use crate::lsvi::{self, InitialDistribution, LearnError, ThetaStack, INITIAL_STATE_CAP};
use crate::oracle::{NormCaps, TrueTheta};
use crate::rng::{self, StreamRng};

/// Largest `ρ` accepted from the spectral construction.
pub const RHO_CEILING: f64 = 1.0 - 1e-9;
/// Relative slack on the exhaustive envelope certification.
pub const ENVELOPE_TOL: f64 = 1e-12;
const RHO_GRID: usize = 999;
const GAMMA_BATCHES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("rho = {0} is not below one; the inequality is unusable")]
    RhoNotBelowOne(f64),
    #[error("delta must lie in (0, 1/3], got {0}")]
    InvalidDelta(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// How `(α, ρ)` were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeMode {
    /// `ρ = max_k ‖Π A_c‖^{1/k}` was below one.
    Spectral,
    /// The spectral rate was not below one; `ρ` minimizes `α(ρ)/(1−ρ)` over a
    /// grid in `(0,1)`, with `α(ρ)` the smallest certified constant.
    FiniteHorizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssConstants {
    pub alpha: f64,
    pub rho: f64,
    /// `max over windows of ‖Π A_c‖^{1/k}`, never clamped.
    pub spectral_rate: f64,
    pub mode: EnvelopeMode,
    pub horizon: usize,
    /// `max ‖Π A_c‖ / (αρ^k)` over all windows.
    pub max_envelope_ratio: f64,
}

impl IssConstants {
    pub fn certified(&self) -> bool {
        self.max_envelope_ratio <= 1.0 + ENVELOPE_TOL
    }
}

/// `norms[t1][k] = ‖A_c(t1+k−1) ⋯ A_c(t1)‖` for `0 ≤ k ≤ T − t1`.
pub fn window_norms(sol: &RiccatiSolution) -> Vec<Vec<f64>> {
    let horizon = sol.horizon();
    let n = sol.g(0).nrows();
    (0..=horizon)
        .map(|t1| {
            let mut prod = Mat::identity(n, n);
            let mut out = vec![1.0];
            for i in t1..horizon {
                prod = sol.closed_loop(i) * prod;
                out.push(linalg::spectral_norm(&prod));
            }
            out
        })
        .collect()
}

fn alpha_for(norms: &[Vec<f64>], rho: f64) -> f64 {
    norms
        .iter()
        .flat_map(|row| row.iter().enumerate().map(move |(k, &v)| v / rho.powi(k as i32)))
        .fold(1.0, f64::max)
}

fn envelope_ratio(norms: &[Vec<f64>], alpha: f64, rho: f64) -> f64 {
    norms
        .iter()
        .flat_map(|row| row.iter().enumerate().map(move |(k, &v)| v / (alpha * rho.powi(k as i32))))
        .fold(0.0, f64::max)
}

/// Constructs `(α, ρ)` with `‖Π_{i=t1}^{t2−1} A_c(i)‖ ≤ αρ^{t2−t1}` on every
/// window of the horizon, certified exhaustively.
pub fn iss_constants(sol: &RiccatiSolution) -> IssConstants {
    let norms = window_norms(sol);
    let spectral_rate = norms
        .iter()
        .flat_map(|row| row.iter().enumerate().skip(1).map(|(k, &v)| v.powf(1.0 / k as f64)))
        .fold(0.0, f64::max);
    let (alpha, rho, mode) = if spectral_rate < 1.0 {
        let rho = spectral_rate.clamp(1e-12, RHO_CEILING);
        (alpha_for(&norms, rho), rho, EnvelopeMode::Spectral)
    } else {
        let (mut best, mut best_cost) = (0.5, f64::INFINITY);
        for k in 1..=RHO_GRID {
            let rho = k as f64 / (RHO_GRID + 1) as f64;
            let cost = alpha_for(&norms, rho) / (1.0 - rho);
            if cost < best_cost {
                best_cost = cost;
                best = rho;
            }
        }
        (alpha_for(&norms, best), best, EnvelopeMode::FiniteHorizon)
    };
    let max_envelope_ratio = envelope_ratio(&norms, alpha, rho);
    IssConstants { alpha, rho, spectral_rate, mode, horizon: sol.horizon(), max_envelope_ratio }
}

/// `‖x_t‖` against the input-to-state bound at one `(episode, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssRow {
    pub episode: usize,
    pub t: usize,
    pub state_norm: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IssReport {
    pub rows: Vec<IssRow>,
    pub max_ratio: f64,
    /// `α‖B‖/(1−ρ)·(K̄_sδ_s + K̄_hR_θ/√d)`.
    pub offset: f64,
}

impl IssReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.ratio <= 1.0)
    }

    pub fn fraction_satisfied(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.rows.iter().filter(|r| r.ratio <= 1.0).count() as f64 / self.rows.len() as f64
    }
}

/// Constant term of the input-to-state bound.
pub fn iss_offset(consts: &IssConstants, sys: &LinearSystem, sol: &RiccatiSolution, r_theta: f64, delta_s: f64, d: usize) -> f64 {
    let caps = NormCaps::from_solution(sol);
    consts.alpha * linalg::spectral_norm(sys.b()) / (1.0 - consts.rho)
        * (caps.ks * delta_s + caps.kh * r_theta / (d as f64).sqrt())
}

/// Evaluates `‖x_t‖ ≤ αρᵗ‖x_0‖ + α‖B‖/(1−ρ)(K̄_sδ_s + K̄_hR_θ/√d)` along each
/// trajectory `(episode, [x_0, …, x_T])`.
pub fn iss_check(
    trajectories: &[(usize, Vec<Vector>)],
    consts: &IssConstants,
    sys: &LinearSystem,
    sol: &RiccatiSolution,
    r_theta: f64,
    delta_s: f64,
    d: usize,
) -> Result<IssReport, AnalysisError> {
    if !(consts.rho < 1.0) {
        return Err(AnalysisError::RhoNotBelowOne(consts.rho));
    }
    let offset = iss_offset(consts, sys, sol, r_theta, delta_s, d);
    let mut rows = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for (episode, xs) in trajectories {
        let x0 = xs.first().map_or(0.0, |x| x.norm());
        for (t, x) in xs.iter().enumerate() {
            let bound = consts.alpha * consts.rho.powi(t as i32) * x0 + offset;
            let state_norm = x.norm();
            let ratio = if bound > 0.0 {
                state_norm / bound
            } else if state_norm == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
            rows.push(IssRow { episode: *episode, t, state_norm, bound, ratio });
        }
    }
    Ok(IssReport { rows, max_ratio, offset })
}

/// Constants of the regret bound for one `R_θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub sigma: f64,
    pub delta_psi: f64,
    pub delta_v: f64,
    pub gamma: f64,
    pub gamma_stderr: f64,
    pub x_bar: f64,
    pub r_theta: f64,
    pub d: usize,
    pub n: usize,
}

impl BoundConstants {
    /// `β = log(1 + Lδ_ψ²/λ)`.
    pub fn beta(&self, episodes: usize, lambda: f64) -> f64 {
        (1.0 + episodes as f64 * self.delta_psi * self.delta_psi / lambda).ln()
    }
}

/// Instance quantities the constants are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub caps: NormCaps,
    pub b_norm: f64,
    pub alpha: f64,
    pub rho: f64,
    pub delta_s: f64,
    pub d: usize,
    pub n: usize,
    /// `max_ℓ ‖x_0^ℓ‖`.
    pub x0_max_norm: f64,
    pub gamma: f64,
    pub gamma_stderr: f64,
}

impl BoundInputs {
    /// `x̄ = α·max‖x_0‖ + α‖B‖/(1−ρ)(K̄_sδ_s + K̄_hR_θ/√d)`.
    pub fn x_bar(&self, r_theta: f64) -> f64 {
        let sd = (self.d as f64).sqrt();
        self.alpha * self.x0_max_norm
            + self.alpha * self.b_norm / (1.0 - self.rho) * (self.caps.ks * self.delta_s + self.caps.kh * r_theta / sd)
    }

    /// Constants for radius `r_theta`; `x_bar` overrides the theoretical
    /// state bound (e.g. with the realized maximum).
    pub fn constants(&self, r_theta: f64, x_bar: Option<f64>) -> BoundConstants {
        let c = &self.caps;
        let d = self.d as f64;
        let sd = d.sqrt();
        let ds = self.delta_s;
        let x_bar = x_bar.unwrap_or_else(|| self.x_bar(r_theta));
        let sigma = (2.0 * x_bar * c.x1 + 1.0 + 2.0 * ds * c.y3) / sd * r_theta
            + c.y2 / d * r_theta * r_theta
            + 2.0 * c.x2 * x_bar * ds
            + c.y1 * ds * ds;
        let delta_psi = ((4.0 * x_bar * x_bar + 1.0) / d).sqrt();
        let hb = c.x1 * r_theta / sd + c.x2 * ds;
        let qb = r_theta / sd + ds * ds * c.y1 + r_theta * r_theta * c.y2 / d + 2.0 * ds * c.y3 * r_theta / sd;
        BoundConstants {
            sigma,
            delta_psi,
            delta_v: (hb * hb + qb * qb).sqrt(),
            gamma: self.gamma,
            gamma_stderr: self.gamma_stderr,
            x_bar,
            r_theta,
            d: self.d,
            n: self.n,
        }
    }
}

/// Monte-Carlo estimate of `γ = min_t λ_min(E[ψ_tψ_tᵀ])` under the optimal
/// policy, with a batch-means standard error.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gamma(
    tt: &TrueTheta,
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    x0: &InitialDistribution,
    s0: &InitialDistribution,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    if samples < 10 * GAMMA_BATCHES {
        return Err(AnalysisError::TooFewSamples { min: 10 * GAMMA_BATCHES, got: samples });
    }
    let horizon = sol.horizon();
    let k = tt.theta.width();
    let fm = kern.feature();
    let psis: Vec<Vec<Vector>> = (0..samples)
        .into_par_iter()
        .map(|r| {
            let mut rng: StreamRng = rng::stream(seed, &[rng::tag::GAMMA, r as u64]);
            let x = x0.sample(&mut rng);
            let s = lsvi::sample_exo_initial(s0, fm, &mut rng, INITIAL_STATE_CAP)?;
            let ep = lsvi::run_episode(&tt.theta, sol, sys, cost, kern, &x, &s, &mut rng)?;
            Ok(ep.transitions.iter().map(|tr| lsvi::psi(&tr.phi, &tr.x_next)).collect())
        })
        .collect::<Result<_, LearnError>>()?;
    let gamma_of = |range: std::ops::Range<usize>| -> f64 {
        let count = range.len() as f64;
        (0..horizon)
            .map(|t| {
                let mut acc = Mat::zeros(k, k);
                for r in range.clone() {
                    acc.ger(1.0, &psis[r][t], &psis[r][t], 1.0);
                }
                linalg::min_sym_eigenvalue(&(acc / count))
            })
            .fold(f64::INFINITY, f64::min)
    };
    let gamma = gamma_of(0..samples);
    let b = samples / GAMMA_BATCHES;
    let per: Vec<f64> = (0..GAMMA_BATCHES).map(|i| gamma_of(i * b..(i + 1) * b)).collect();
    let (_, se) = linalg::mean_and_stderr(&per);
    Ok((gamma, se))
}

/// The regret bound at each `L` in `grid`:
/// `σ√(2TL log(1/δ)) + δ_ψT(1/√λ + 4√L/√γ)(σ√(2dnβ + 2log(1/δ)) + (R_θ + 2δ_v)√λ)`.
pub fn regret_bound_eval(
    consts: &BoundConstants,
    horizon: usize,
    grid: &[usize],
    lambda: f64,
    delta: f64,
) -> Result<Vec<f64>, AnalysisError> {
    if !(delta > 0.0 && delta <= 1.0 / 3.0) {
        return Err(AnalysisError::InvalidDelta(delta));
    }
    let t = horizon as f64;
    let log_inv = (1.0 / delta).ln();
    let dn = (consts.d * consts.n) as f64;
    Ok(grid
        .iter()
        .map(|&l| {
            let lf = l as f64;
            let beta = consts.beta(l, lambda);
            consts.sigma * (2.0 * t * lf * log_inv).sqrt()
                + consts.delta_psi
                    * t
                    * (1.0 / lambda.sqrt() + 4.0 * lf.sqrt() / consts.gamma.sqrt())
                    * (consts.sigma * (2.0 * dn * beta + 2.0 * log_inv).sqrt()
                        + (consts.r_theta + 2.0 * consts.delta_v) * lambda.sqrt())
        })
        .collect())
}

/// `‖θ^ℓ_{1:T} − θ*_{1:T}‖_F / T` for each stack in `history`.
pub fn param_error_curve<'a, I>(history: I, tt: &ThetaStack) -> Result<Vec<f64>, AnalysisError>
where
    I: IntoIterator<Item = &'a ThetaStack>,
{
    let horizon = tt.horizon();
    history
        .into_iter()
        .map(|th| {
            if th.horizon() != horizon || th.width() != tt.width() {
                return Err(AnalysisError::Shape(format!(
                    "stack is {}x{}, truth is {}x{}",
                    th.horizon(),
                    th.width(),
                    horizon,
                    tt.width()
                )));
            }
            let sq: f64 = (1..=horizon).map(|t| (th.get(t) - tt.get(t)).norm_squared()).sum();
            Ok(sq.sqrt() / horizon as f64)
        })
        .collect()
}

/// Smallest singular value of `φ(t, 0)` for `t = 0..=T`.
pub fn transition_min_singular_values(sol: &RiccatiSolution) -> Vec<f64> {
    (0..=sol.horizon())
        .map(|t| linalg::min_singular_value(&sol.transition(0, t).expect("t within horizon")))
        .collect()
}
