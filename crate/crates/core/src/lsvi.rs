//! Least-squares value iteration: parameter stacking, Bellman targets, the
//! ridge backward update with projection, the greedy policy, rollouts and the
//! episodic outer loop.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::envmodel::{EnvError, FeatureMap, MixtureKernel};
use crate::linalg::{self, Mat, Vector};
use crate::linctl::{self, ControlError, CostMatrices, LinearSystem, RiccatiSolution, ValueTerms};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("theta_(t+2) required for the target at t = {t}")]
    MissingTheta { t: usize },
    #[error("design matrix not positive definite at t = {t}")]
    SingularDesign { t: usize },
    #[error("non-finite Bellman target at t = {t}")]
    NonFiniteTarget { t: usize },
    #[error("rollout diverged at t = {t}")]
    Diverged { t: usize },
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("initial exogenous state not found inside the delta_s ball after {0} draws")]
    InitialState(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Per-step weights `θ_t ∈ R^{d(n+1)}` for `t = 1..=T`; block `i` is `[h̄_{i,t}; q̄_{i,t}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaStack {
    d: usize,
    n: usize,
    theta: Vec<Vector>,
}

impl ThetaStack {
    pub fn zeros(d: usize, n: usize, horizon: usize) -> Self {
        Self { d, n, theta: vec![Vector::zeros(d * (n + 1)); horizon] }
    }

    /// `theta[k]` holds `θ_{k+1}`.
    pub fn from_vecs(d: usize, n: usize, theta: Vec<Vector>) -> Result<Self, LearnError> {
        let k = d * (n + 1);
        if let Some(bad) = theta.iter().position(|v| v.len() != k) {
            return Err(LearnError::Dimension(format!("theta_{} has length {}, expected {k}", bad + 1, theta[bad].len())));
        }
        Ok(Self { d, n, theta })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.theta.len()
    }

    pub fn width(&self) -> usize {
        self.d * (self.n + 1)
    }

    /// `θ_t`, `1 ≤ t ≤ T`.
    pub fn get(&self, t: usize) -> &Vector {
        assert!(t >= 1 && t <= self.theta.len(), "theta index {t} outside 1..={}", self.theta.len());
        &self.theta[t - 1]
    }

    pub fn set(&mut self, t: usize, v: Vector) {
        assert_eq!(v.len(), self.width());
        self.theta[t - 1] = v;
    }

    pub fn as_slice(&self) -> &[Vector] {
        &self.theta
    }

    /// `h̄_{i,t}`.
    pub fn h_block(&self, t: usize, i: usize) -> Vector {
        let o = i * (self.n + 1);
        self.get(t).rows(o, self.n).into_owned()
    }

    /// `q̄_{i,t}`.
    pub fn q_entry(&self, t: usize, i: usize) -> f64 {
        self.get(t)[i * (self.n + 1) + self.n]
    }

    pub fn norm(&self, t: usize) -> f64 {
        self.get(t).norm()
    }

    pub fn max_norm(&self) -> f64 {
        self.theta.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `‖θ_{1:T}‖_F`.
    pub fn frobenius(&self) -> f64 {
        self.theta.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
    }
}

/// `y = [2xᵀ, 1]ᵀ`.
pub fn y_vec(x: &Vector) -> Vector {
    let n = x.len();
    Vector::from_fn(n + 1, |k, _| if k < n { 2.0 * x[k] } else { 1.0 })
}

/// `Z = [I_n, 0]`.
pub fn z_mat(n: usize) -> Mat {
    Mat::from_fn(n, n + 1, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// `Z̄ = [0, 1]`.
pub fn zbar_mat(n: usize) -> Mat {
    Mat::from_fn(1, n + 1, |_, j| if j == n { 1.0 } else { 0.0 })
}

/// `Y(x,u) = I_d ⊗ [2(Ax+Bu)ᵀ, 1]`.
pub fn build_y(sys: &LinearSystem, d: usize, x: &Vector, u: &Vector) -> Result<Mat, LearnError> {
    if x.len() != sys.n() || u.len() != sys.m() {
        return Err(LearnError::Dimension(format!(
            "build_Y expects x in R^{} and u in R^{}, got {} and {}",
            sys.n(),
            sys.m(),
            x.len(),
            u.len()
        )));
    }
    let row = y_vec(&sys.step(x, u)).transpose();
    Ok(linalg::kron(&Mat::identity(d, d), &Mat::from_row_slice(1, row.len(), row.as_slice())))
}

/// `ψ = Y(x,u)ᵀφ(s) = φ ⊗ [2x'; 1]` with `x' = Ax + Bu`.
pub fn psi(phi: &Vector, x_next: &Vector) -> Vector {
    let y = y_vec(x_next);
    let w = y.len();
    Vector::from_fn(phi.len() * w, |k, _| phi[k / w] * y[k % w])
}

/// `(φᵀ ⊗ Z)θ = Σ_i φ_i h̄_i`.
pub fn h_theta(phi: &Vector, theta: &Vector, n: usize) -> Vector {
    let mut out = Vector::zeros(n);
    for (i, &w) in phi.iter().enumerate() {
        out += theta.rows(i * (n + 1), n) * w;
    }
    out
}

/// `(φᵀ ⊗ Z̄)θ = Σ_i φ_i q̄_i`.
pub fn q_theta(phi: &Vector, theta: &Vector, n: usize) -> f64 {
    phi.iter().enumerate().map(|(i, &w)| w * theta[i * (n + 1) + n]).sum()
}

/// Which gain step feeds the value forms inside the target at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetGainIndex {
    /// Gains of step `t+1`, matching the value recursion for `h_{t+1}, q_{t+1}`.
    #[default]
    Successor,
    /// Gains of step `t` inside `h_{t+1}, q_{t+1}`.
    AsPrinted,
}

impl TargetGainIndex {
    fn step(self, t: usize) -> usize {
        match self {
            Self::Successor => t + 1,
            Self::AsPrinted => t,
        }
    }
}

/// `(h_t(s), q_t(s))` from `θ_{t+1}` and the value terms of one step.
pub fn value_forms(s: &Vector, phi: &Vector, theta_next: &Vector, terms: &ValueTerms) -> (Vector, f64) {
    let n = terms.x1.nrows();
    let ht = h_theta(phi, theta_next, n);
    let h = &terms.x1 * &ht + &terms.x2 * s;
    let q = q_theta(phi, theta_next, n)
        + s.dot(&(&terms.y1 * s))
        + ht.dot(&(&terms.y2 * &ht))
        + 2.0 * s.dot(&(&terms.y3 * &ht));
    (h, q)
}

/// Terminal forms `h_T(s) = Fs`, `q_T(s) = sᵀMs`.
pub fn terminal_forms(s: &Vector, cost: &CostMatrices) -> (Vector, f64) {
    (&cost.f * s, s.dot(&(&cost.m * s)))
}

/// `ε_{t+1} = 2x'ᵀh_{t+1}(s') + q_{t+1}(s')`; `theta_next2` is `θ_{t+2}` and
/// is ignored at `t = T−1`, where the terminal forms apply.
#[allow(clippy::too_many_arguments)]
pub fn bellman_target(
    x_next: &Vector,
    s_next: &Vector,
    t: usize,
    theta_next2: Option<&Vector>,
    sol: &RiccatiSolution,
    cost: &CostMatrices,
    fm: &FeatureMap,
    gain_index: TargetGainIndex,
) -> Result<f64, LearnError> {
    let horizon = sol.horizon();
    if t >= horizon {
        return Err(LearnError::Dimension(format!("target time {t} outside 0..{horizon}")));
    }
    let (h, q) = if t + 1 == horizon {
        terminal_forms(s_next, cost)
    } else {
        let th = theta_next2.ok_or(LearnError::MissingTheta { t })?;
        let phi = fm.eval(s_next)?;
        value_forms(s_next, &phi, th, sol.terms(gain_index.step(t)))
    };
    let eps = 2.0 * x_next.dot(&h) + q;
    if !eps.is_finite() {
        return Err(LearnError::NonFiniteTarget { t });
    }
    Ok(eps)
}

/// `u_t = K_{t,x}x + K_{t,s}s + K_{t,h}(φ(s)ᵀ ⊗ Z)θ_{t+1}`.
pub fn greedy_action(
    x: &Vector,
    s: &Vector,
    t: usize,
    theta: &ThetaStack,
    sol: &RiccatiSolution,
    fm: &FeatureMap,
) -> Result<Vector, LearnError> {
    let phi = fm.eval(s)?;
    greedy_action_with_phi(x, s, &phi, t, theta.get(t + 1), sol)
}

pub(crate) fn greedy_action_with_phi(
    x: &Vector,
    s: &Vector,
    phi: &Vector,
    t: usize,
    theta_next: &Vector,
    sol: &RiccatiSolution,
) -> Result<Vector, LearnError> {
    if t >= sol.horizon() {
        return Err(LearnError::Dimension(format!("action time {t} outside 0..{}", sol.horizon())));
    }
    let g = sol.gains(t);
    if x.len() != g.kx.ncols() || s.len() != g.ks.ncols() {
        return Err(LearnError::Dimension("state sizes do not match the gains".into()));
    }
    let ht = h_theta(phi, theta_next, x.len());
    Ok(&g.kx * x + &g.ks * s + &g.kh * ht)
}

/// `Q_t(x,s,u) = c(x,s,u) + x'ᵀG_{t+1}x' + φ(s)ᵀY(x,u)θ_{t+1}`.
#[allow(clippy::too_many_arguments)]
pub fn q_value(
    x: &Vector,
    s: &Vector,
    u: &Vector,
    t: usize,
    theta_next: &Vector,
    sys: &LinearSystem,
    cost: &CostMatrices,
    sol: &RiccatiSolution,
    fm: &FeatureMap,
) -> Result<f64, LearnError> {
    let phi = fm.eval(s)?;
    let xn = sys.step(x, u);
    let c = linctl::stage_cost(x, s, u, cost)?;
    Ok(c + xn.dot(&(sol.g(t + 1) * &xn)) + psi(&phi, &xn).dot(theta_next))
}

/// One recorded step `(x_t, s_t, u_t, x_{t+1}, s_{t+1})` with cached features.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vector,
    pub s: Vector,
    pub u: Vector,
    pub x_next: Vector,
    pub s_next: Vector,
    pub phi: Vector,
    pub phi_next: Vector,
}

/// Completed episodes; each holds exactly `T` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    horizon: usize,
    episodes: Vec<Vec<Transition>>,
}

impl Dataset {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, episodes: Vec::new() }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn push(&mut self, episode: Vec<Transition>) -> Result<(), LearnError> {
        if episode.len() != self.horizon {
            return Err(LearnError::Dimension(format!(
                "episode has {} transitions, horizon is {}",
                episode.len(),
                self.horizon
            )));
        }
        let finite = episode.iter().all(|tr| {
            linalg::vec_is_finite(&tr.x)
                && linalg::vec_is_finite(&tr.s)
                && linalg::vec_is_finite(&tr.x_next)
                && linalg::vec_is_finite(&tr.s_next)
        });
        if !finite {
            return Err(LearnError::Dimension("non-finite state in episode".into()));
        }
        self.episodes.push(episode);
        Ok(())
    }
}

/// Gaussian law for an initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution {
    mean: Vector,
    chol: Mat,
}

impl InitialDistribution {
    pub fn new(mean: Vector, cov: Mat) -> Result<Self, LearnError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(LearnError::InvalidConfig("covariance shape does not match mean".into()));
        }
        let chol = if linalg::max_abs(&cov) == 0.0 {
            Mat::zeros(mean.len(), mean.len())
        } else {
            linalg::symmetrize(&cov)
                .cholesky()
                .ok_or_else(|| LearnError::InvalidConfig("covariance must be positive definite or zero".into()))?
                .l()
        };
        Ok(Self { mean, chol })
    }

    pub fn point(mean: Vector) -> Self {
        let k = mean.len();
        Self { mean, chol: Mat::zeros(k, k) }
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

/// How the backward pass assembles its regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Re-sum every stored transition each episode.
    #[default]
    FullResum,
    /// Rank-one sufficient statistics kept across episodes.
    Incremental,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub r_theta: f64,
    pub episodes: usize,
    pub horizon: usize,
    pub x0: InitialDistribution,
    pub s0: InitialDistribution,
    pub seed: u64,
    pub mode: UpdateMode,
    pub gain_index: TargetGainIndex,
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(LearnError::InvalidConfig(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.r_theta.is_finite() && self.r_theta > 0.0) {
            return Err(LearnError::InvalidConfig(format!("R_theta must be positive, got {}", self.r_theta)));
        }
        if self.horizon == 0 {
            return Err(LearnError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Normal-equation state of the last backward pass, for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState {
    /// `Λ_t = Σψψᵀ + λI`.
    pub lambda: Vec<Mat>,
    /// `Σψ·ε_{t+1}`.
    pub rhs: Vec<Vector>,
    /// Whether the projection fired for `θ_{t+1}`.
    pub projected: Vec<bool>,
    pub episodes: usize,
}

/// Scales `θ` onto the `R_θ` ball when outside; returns whether it fired.
pub fn project(theta: &mut Vector, r_theta: f64) -> bool {
    let norm = theta.norm();
    if norm <= r_theta {
        return false;
    }
    *theta *= r_theta / norm;
    while theta.norm() > r_theta {
        *theta *= 1.0 - f64::EPSILON;
    }
    true
}

fn solve_step(lambda: &Mat, rhs: &Vector, t: usize) -> Result<Vector, LearnError> {
    let chol = lambda.clone().cholesky().ok_or(LearnError::SingularDesign { t })?;
    Ok(chol.solve(rhs))
}

fn check_shapes(d: usize, sol: &RiccatiSolution, cfg: &LearnerConfig, horizon: usize) -> Result<(), LearnError> {
    if sol.horizon() != horizon || cfg.horizon != horizon {
        return Err(LearnError::Dimension(format!(
            "horizons differ: data {horizon}, Riccati {}, config {}",
            sol.horizon(),
            cfg.horizon
        )));
    }
    if d == 0 {
        return Err(LearnError::Dimension("feature dimension must be positive".into()));
    }
    Ok(())
}

/// Backward ridge regression over every stored transition, `t = T−1..0`.
pub fn backward_update(
    data: &Dataset,
    cfg: &LearnerConfig,
    sol: &RiccatiSolution,
    cost: &CostMatrices,
    fm: &FeatureMap,
) -> Result<(ThetaStack, DesignState), LearnError> {
    cfg.validate()?;
    let horizon = data.horizon();
    let d = fm.d();
    let n = cost.n();
    check_shapes(d, sol, cfg, horizon)?;
    let k = d * (n + 1);
    let mut theta = ThetaStack::zeros(d, n, horizon);
    let mut lambdas = vec![Mat::zeros(k, k); horizon];
    let mut rhss = vec![Vector::zeros(k); horizon];
    let mut projected = vec![false; horizon];
    for t in (0..horizon).rev() {
        let mut lam = Mat::identity(k, k) * cfg.lambda;
        let mut rhs = Vector::zeros(k);
        if !data.is_empty() {
            let next2 = (t + 2 <= horizon).then(|| theta.get(t + 2).clone());
            let terms = (t + 1 < horizon).then(|| sol.terms(cfg.gain_index.step(t)));
            for ep in data.episodes() {
                let tr = &ep[t];
                let ps = psi(&tr.phi, &tr.x_next);
                let (h, q) = match (&next2, terms) {
                    (Some(th), Some(terms)) => value_forms(&tr.s_next, &tr.phi_next, th, terms),
                    _ => terminal_forms(&tr.s_next, cost),
                };
                let eps = 2.0 * tr.x_next.dot(&h) + q;
                if !eps.is_finite() {
                    return Err(LearnError::NonFiniteTarget { t });
                }
                lam.ger(1.0, &ps, &ps, 1.0);
                rhs.axpy(eps, &ps, 1.0);
            }
        }
        lam = linalg::symmetrize(&lam);
        let mut th = if data.is_empty() { Vector::zeros(k) } else { solve_step(&lam, &rhs, t)? };
        projected[t] = project(&mut th, cfg.r_theta);
        theta.set(t + 1, th);
        lambdas[t] = lam;
        rhss[t] = rhs;
    }
    Ok((theta, DesignState { lambda: lambdas, rhs: rhss, projected, episodes: data.len() }))
}

/// Sufficient statistics of one step's regression.
///
/// The target is `ε = a + bᵀθ_{t+2} + Σ_{a,b} φ'_a φ'_b h̄_aᵀY₂h̄_b`, so the
/// right-hand side is affine in these accumulators for any `θ_{t+2}`.
#[derive(Debug, Clone)]
struct StepStats {
    gram: Mat,
    lin0: Vector,
    lin1: Mat,
    quad: Mat,
}

/// Incremental counterpart of [`backward_update`].
#[derive(Debug, Clone)]
pub struct IncrementalLearner {
    d: usize,
    n: usize,
    horizon: usize,
    gain_index: TargetGainIndex,
    episodes: usize,
    stats: Vec<StepStats>,
}

impl IncrementalLearner {
    pub fn new(d: usize, n: usize, horizon: usize, gain_index: TargetGainIndex) -> Self {
        let k = d * (n + 1);
        let stats = (0..horizon)
            .map(|_| StepStats {
                gram: Mat::zeros(k, k),
                lin0: Vector::zeros(k),
                lin1: Mat::zeros(k, k),
                quad: Mat::zeros(k, d * d),
            })
            .collect();
        Self { d, n, horizon, gain_index, episodes: 0, stats }
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn absorb(&mut self, episode: &[Transition], sol: &RiccatiSolution, cost: &CostMatrices) -> Result<(), LearnError> {
        if episode.len() != self.horizon || sol.horizon() != self.horizon {
            return Err(LearnError::Dimension("episode length or Riccati horizon mismatch".into()));
        }
        let (d, n) = (self.d, self.n);
        let w = n + 1;
        for (t, tr) in episode.iter().enumerate() {
            let ps = psi(&tr.phi, &tr.x_next);
            let st = &mut self.stats[t];
            st.gram.ger(1.0, &ps, &ps, 1.0);
            if t + 1 == self.horizon {
                let (h, q) = terminal_forms(&tr.s_next, cost);
                st.lin0.axpy(2.0 * tr.x_next.dot(&h) + q, &ps, 1.0);
                continue;
            }
            let terms = sol.terms(self.gain_index.step(t));
            let s = &tr.s_next;
            let a = 2.0 * tr.x_next.dot(&(&terms.x2 * s)) + s.dot(&(&terms.y1 * s));
            st.lin0.axpy(a, &ps, 1.0);
            let g = (terms.x1.transpose() * &tr.x_next + terms.y3.transpose() * s) * 2.0;
            let b = Vector::from_fn(d * w, |k, _| {
                let (i, j) = (k / w, k % w);
                tr.phi_next[i] * if j < n { g[j] } else { 1.0 }
            });
            st.lin1.ger(1.0, &ps, &b, 1.0);
            let pp = Vector::from_fn(d * d, |k, _| tr.phi_next[k / d] * tr.phi_next[k % d]);
            st.quad.ger(1.0, &ps, &pp, 1.0);
        }
        self.episodes += 1;
        Ok(())
    }

    pub fn solve(
        &self,
        cfg: &LearnerConfig,
        sol: &RiccatiSolution,
    ) -> Result<(ThetaStack, DesignState), LearnError> {
        cfg.validate()?;
        check_shapes(self.d, sol, cfg, self.horizon)?;
        let (d, n) = (self.d, self.n);
        let k = d * (n + 1);
        let mut theta = ThetaStack::zeros(d, n, self.horizon);
        let mut lambdas = Vec::with_capacity(self.horizon);
        let mut rhss = Vec::with_capacity(self.horizon);
        let mut projected = vec![false; self.horizon];
        for t in (0..self.horizon).rev() {
            let st = &self.stats[t];
            let lam = linalg::symmetrize(&(&st.gram + Mat::identity(k, k) * cfg.lambda));
            let mut rhs = st.lin0.clone();
            if t + 1 < self.horizon {
                let th = theta.get(t + 2);
                let y2 = &sol.terms(self.gain_index.step(t)).y2;
                rhs += &st.lin1 * th;
                let hs: Vec<Vector> = (0..d).map(|i| th.rows(i * (n + 1), n).into_owned()).collect();
                let wq = Vector::from_fn(d * d, |kk, _| hs[kk / d].dot(&(y2 * &hs[kk % d])));
                rhs += &st.quad * wq;
            }
            let mut th = if self.episodes == 0 { Vector::zeros(k) } else { solve_step(&lam, &rhs, t)? };
            projected[t] = project(&mut th, cfg.r_theta);
            theta.set(t + 1, th);
            lambdas.push(lam);
            rhss.push(rhs);
        }
        lambdas.reverse();
        rhss.reverse();
        Ok((theta, DesignState { lambda: lambdas, rhs: rhss, projected, episodes: self.episodes }))
    }
}

/// Forward rollout of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// `c(x_t, s_t, u_t)` for `t < T`.
    pub stage_costs: Vec<f64>,
    /// `c(x_T, s_T, 0)`.
    pub terminal_cost: f64,
}

impl Episode {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum::<f64>() + self.terminal_cost
    }

    /// `x_0, …, x_T`.
    pub fn states(&self) -> Vec<Vector> {
        let mut out: Vec<Vector> = self.transitions.iter().map(|tr| tr.x.clone()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(last.x_next.clone());
        }
        out
    }

    /// `s_0, …, s_T`.
    pub fn exo_states(&self) -> Vec<Vector> {
        let mut out: Vec<Vector> = self.transitions.iter().map(|tr| tr.s.clone()).collect();
        if let Some(last) = self.transitions.last() {
            out.push(last.s_next.clone());
        }
        out
    }
}

/// Simulates the greedy policy of `theta` from `(x0, s0)`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    theta: &ThetaStack,
    sol: &RiccatiSolution,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    x0: &Vector,
    s0: &Vector,
    rng: &mut R,
) -> Result<Episode, LearnError> {
    let horizon = sol.horizon();
    if theta.horizon() != horizon {
        return Err(LearnError::Dimension(format!("theta horizon {} vs {horizon}", theta.horizon())));
    }
    let fm = kern.feature();
    let mut x = x0.clone();
    let mut s = s0.clone();
    let mut phi = fm.eval(&s)?;
    let mut transitions = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let u = greedy_action_with_phi(&x, &s, &phi, t, theta.get(t + 1), sol)?;
        stage_costs.push(linctl::stage_cost(&x, &s, &u, cost)?);
        let x_next = sys.step(&x, &u);
        if !linalg::vec_is_finite(&x_next) {
            return Err(LearnError::Diverged { t: t + 1 });
        }
        let s_next = kern.sample_next(&s, t, rng)?;
        let phi_next = fm.eval(&s_next)?;
        transitions.push(Transition {
            x: x.clone(),
            s: s.clone(),
            u,
            x_next: x_next.clone(),
            s_next: s_next.clone(),
            phi: phi.clone(),
            phi_next: phi_next.clone(),
        });
        x = x_next;
        s = s_next;
        phi = phi_next;
    }
    let terminal_cost = linctl::stage_cost(&x, &s, &Vector::zeros(sys.m()), cost)?;
    Ok(Episode { transitions, stage_costs, terminal_cost })
}

/// Draws `s_0` until it lies in the ball.
pub fn sample_exo_initial<R: Rng + ?Sized>(
    dist: &InitialDistribution,
    fm: &FeatureMap,
    rng: &mut R,
    cap: usize,
) -> Result<Vector, LearnError> {
    for _ in 0..cap.max(1) {
        let s = dist.sample(rng);
        if fm.in_ball(&s) {
            return Ok(s);
        }
    }
    Err(LearnError::InitialState(cap))
}

/// Initial states of episode `ell` (1-based).
pub fn episode_initial_states(
    cfg: &LearnerConfig,
    fm: &FeatureMap,
    ell: usize,
    cap: usize,
) -> Result<(Vector, Vector), LearnError> {
    let mut rng: StreamRng = rng::stream(cfg.seed, &[rng::tag::INITIAL_STATE, ell as u64]);
    let x0 = cfg.x0.sample(&mut rng);
    let s0 = sample_exo_initial(&cfg.s0, fm, &mut rng, cap)?;
    Ok((x0, s0))
}

/// One episode of the learning history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub index: usize,
    /// Weights used for this episode's rollout.
    pub theta: ThetaStack,
    pub x0: Vector,
    pub s0: Vector,
    pub episode: Episode,
    /// Whether projection fired at any step of this episode's update.
    pub projected: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub records: Vec<EpisodeRecord>,
    /// Design state of the final backward pass.
    pub design: DesignState,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Rejection cap for drawing initial exogenous states.
pub const INITIAL_STATE_CAP: usize = 1_000_000;

/// The episodic loop: update on all prior data, roll out, append.
pub fn run_lsvi(
    cfg: &LearnerConfig,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    sol: &RiccatiSolution,
) -> Result<History, LearnError> {
    run_lsvi_with(cfg, sys, cost, kern, sol, |_, _| {})
}

/// [`run_lsvi`] with a per-episode callback `(ℓ, L)`.
pub fn run_lsvi_with<F: FnMut(usize, usize)>(
    cfg: &LearnerConfig,
    sys: &LinearSystem,
    cost: &CostMatrices,
    kern: &MixtureKernel,
    sol: &RiccatiSolution,
    mut progress: F,
) -> Result<History, LearnError> {
    cfg.validate()?;
    let fm = kern.feature();
    if cfg.x0.dim() != sys.n() || cfg.s0.dim() != fm.p() {
        return Err(LearnError::InvalidConfig("initial-state dimensions do not match the model".into()));
    }
    let mut data = Dataset::new(cfg.horizon);
    let mut inc = IncrementalLearner::new(fm.d(), sys.n(), cfg.horizon, cfg.gain_index);
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut design = None;
    for ell in 1..=cfg.episodes {
        let start = Instant::now();
        let (theta, ds) = match cfg.mode {
            UpdateMode::FullResum => backward_update(&data, cfg, sol, cost, fm)?,
            UpdateMode::Incremental => inc.solve(cfg, sol)?,
        };
        let (x0, s0) = episode_initial_states(cfg, fm, ell, INITIAL_STATE_CAP)?;
        let mut rng: StreamRng = rng::stream(cfg.seed, &[rng::tag::ROLLOUT, ell as u64]);
        let episode = run_episode(&theta, sol, sys, cost, kern, &x0, &s0, &mut rng)?;
        match cfg.mode {
            UpdateMode::FullResum => data.push(episode.transitions.clone())?,
            UpdateMode::Incremental => inc.absorb(&episode.transitions, sol, cost)?,
        }
        records.push(EpisodeRecord {
            index: ell,
            theta,
            x0,
            s0,
            episode,
            projected: ds.projected.iter().any(|&p| p),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        design = Some(ds);
        progress(ell, cfg.episodes);
    }
    let design = match design {
        Some(ds) => ds,
        None => {
            let k = fm.d() * (sys.n() + 1);
            DesignState {
                lambda: vec![Mat::identity(k, k) * cfg.lambda; cfg.horizon],
                rhs: vec![Vector::zeros(k); cfg.horizon],
                projected: vec![false; cfg.horizon],
                episodes: 0,
            }
        }
    };
    Ok(History { records, design })
}
