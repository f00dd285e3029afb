//! Deterministic linear-control core: system and cost representation, the
//! finite-horizon Riccati backward pass, feedback gains and structural checks.
//!
//! The plant is `x_{t+1} = A x_t + B u_t` and the stage cost is the quadratic
//! form `[x; s; u]ᵀ P [x; s; u]` with
//!
//! ```text
//!     | W   F   D |
//! P = | Fᵀ  M   H |
//!     | Dᵀ  Hᵀ  R |
//! ```
//!
//! where `s ∈ R^p` is the exogenous state.

use thiserror::Error;

use crate::linalg::{self, Mat, Vector};

/// Singular-value threshold (relative to σ_max) for Kalman rank tests.
pub const RANK_TOL: f64 = 1e-8;
/// Slack for PSD checks on `G_t` and `P`.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("R + BᵀG_(t+1)B is not positive definite at t = {t}")]
    NotPositiveDefinite { t: usize },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("time index out of range: {0}")]
    TimeIndex(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
}

fn dim_err(msg: impl Into<String>) -> ControlError {
    ControlError::Dimension(msg.into())
}

/// Discrete-time LTI plant `x_{t+1} = A x_t + B u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: Mat,
    b: Mat,
}

impl LinearSystem {
    pub fn new(a: Mat, b: Mat) -> Result<Self, ControlError> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(dim_err(format!("A must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(dim_err(format!("B must be {}xm with m >= 1, got {}x{}", a.nrows(), b.nrows(), b.ncols())));
        }
        if !linalg::is_finite(&a) || !linalg::is_finite(&b) {
            return Err(ControlError::NonFinite("system matrices"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }

    /// `[B, AB, …, A^{n−1}B]`.
    pub fn controllability_matrix(&self) -> Mat {
        let n = self.n();
        let m = self.m();
        let mut out = Mat::zeros(n, n * m);
        let mut blk = self.b.clone();
        for k in 0..n {
            out.view_mut((0, k * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    /// `[C; CA; …; CA^{n−1}]` for an output map `C`.
    pub fn observability_matrix(&self, c: &Mat) -> Mat {
        let n = self.n();
        let r = c.nrows();
        let mut out = Mat::zeros(n * r, n);
        let mut blk = c.clone();
        for k in 0..n {
            out.view_mut((k * r, 0), (r, n)).copy_from(&blk);
            blk = blk * &self.a;
        }
        out
    }
}

/// Block weights of the quadratic stage cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub w: Mat,
    pub f: Mat,
    pub d: Mat,
    pub m: Mat,
    pub h: Mat,
    pub r: Mat,
}

impl CostMatrices {
    /// Checks block shapes only; definiteness is reported by
    /// [`validate_assumptions`] and enforced where a solve needs it.
    pub fn new(w: Mat, f: Mat, d: Mat, m: Mat, h: Mat, r: Mat) -> Result<Self, ControlError> {
        let n = w.nrows();
        let p = m.nrows();
        let mu = r.nrows();
        let shapes = [
            ("W", &w, n, n),
            ("F", &f, n, p),
            ("D", &d, n, mu),
            ("M", &m, p, p),
            ("H", &h, p, mu),
            ("R", &r, mu, mu),
        ];
        for (name, mat, rows, cols) in shapes {
            if mat.nrows() != rows || mat.ncols() != cols {
                return Err(dim_err(format!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if !linalg::is_finite(mat) {
                return Err(ControlError::NonFinite("cost matrices"));
            }
        }
        if n == 0 || mu == 0 {
            return Err(dim_err("state and input dimensions must be positive"));
        }
        Ok(Self { w, f, d, m, h, r })
    }

    /// Tracking cost `(Cx − s)ᵀM(Cx − s) + uᵀRu`, i.e. `W = CᵀMC`, `F = −CᵀM`,
    /// `D = 0`, `H = 0`.
    pub fn tracking(c: &Mat, m: Mat, r: Mat) -> Result<Self, ControlError> {
        if c.nrows() != m.nrows() {
            return Err(dim_err(format!("C has {} rows but M is {}x{}", c.nrows(), m.nrows(), m.ncols())));
        }
        let n = c.ncols();
        let p = c.nrows();
        let mu = r.nrows();
        let w = c.transpose() * &m * c;
        let f = -(c.transpose() * &m);
        Self::new(w, f, Mat::zeros(n, mu), m, Mat::zeros(p, mu), r)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Exogenous-state dimension.
    pub fn p(&self) -> usize {
        self.m.nrows()
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// The assembled `(n+p+m)×(n+p+m)` weight `P`.
    pub fn assembled(&self) -> Mat {
        let (n, p, mu) = (self.n(), self.p(), self.input_dim());
        let k = n + p + mu;
        let mut out = Mat::zeros(k, k);
        out.view_mut((0, 0), (n, n)).copy_from(&self.w);
        out.view_mut((0, n), (n, p)).copy_from(&self.f);
        out.view_mut((0, n + p), (n, mu)).copy_from(&self.d);
        out.view_mut((n, 0), (p, n)).copy_from(&self.f.transpose());
        out.view_mut((n, n), (p, p)).copy_from(&self.m);
        out.view_mut((n, n + p), (p, mu)).copy_from(&self.h);
        out.view_mut((n + p, 0), (mu, n)).copy_from(&self.d.transpose());
        out.view_mut((n + p, n), (mu, p)).copy_from(&self.h.transpose());
        out.view_mut((n + p, n + p), (mu, mu)).copy_from(&self.r);
        out
    }

    fn check_system(&self, sys: &LinearSystem) -> Result<(), ControlError> {
        if sys.n() != self.n() || sys.m() != self.input_dim() {
            return Err(dim_err(format!(
                "system is n={}, m={} but cost is n={}, m={}",
                sys.n(),
                sys.m(),
                self.n(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// `c(x, s, u) = [x; s; u]ᵀ P [x; s; u]`.
///
/// Negative values within round-off of zero are returned as zero.
pub fn stage_cost(x: &Vector, s: &Vector, u: &Vector, cost: &CostMatrices) -> Result<f64, ControlError> {
    if x.len() != cost.n() || s.len() != cost.p() || u.len() != cost.input_dim() {
        return Err(dim_err(format!(
            "stage cost expects (n, p, m) = ({}, {}, {}), got ({}, {}, {})",
            cost.n(),
            cost.p(),
            cost.input_dim(),
            x.len(),
            s.len(),
            u.len()
        )));
    }
    let v = x.dot(&(&cost.w * x))
        + 2.0 * x.dot(&(&cost.f * s))
        + 2.0 * x.dot(&(&cost.d * u))
        + s.dot(&(&cost.m * s))
        + 2.0 * s.dot(&(&cost.h * u))
        + u.dot(&(&cost.r * u));
    let scale = (x.norm_squared() + s.norm_squared() + u.norm_squared()) * linalg::max_abs(&cost.assembled()).max(1.0);
    if v < 0.0 && v > -1e-12 * scale {
        return Ok(0.0);
    }
    Ok(v)
}

/// Gain triple at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub kx: Mat,
    pub ks: Mat,
    pub kh: Mat,
}

/// `Kx = −S⁻¹(BᵀGA + Dᵀ)`, `Ks = −S⁻¹Hᵀ`, `Kh = −S⁻¹Bᵀ` with `S = R + BᵀGB`,
/// computed by a Cholesky solve.
pub fn feedback_gains(g_next: &Mat, sys: &LinearSystem, cost: &CostMatrices) -> Result<Gains, ControlError> {
    cost.check_system(sys)?;
    if g_next.nrows() != sys.n() || g_next.ncols() != sys.n() {
        return Err(dim_err("G_next must be n×n"));
    }
    gains_at(g_next, sys, cost, 0)
}

fn gains_at(g_next: &Mat, sys: &LinearSystem, cost: &CostMatrices, t: usize) -> Result<Gains, ControlError> {
    let a = sys.a();
    let b = sys.b();
    let bt_g = b.transpose() * g_next;
    let s = linalg::symmetrize(&(&cost.r + &bt_g * b));
    let chol = s.cholesky().ok_or(ControlError::NotPositiveDefinite { t })?;
    let kx = -chol.solve(&(&bt_g * a + cost.d.transpose()));
    let ks = -chol.solve(&cost.h.transpose());
    let kh = -chol.solve(&b.transpose());
    if !linalg::is_finite(&kx) || !linalg::is_finite(&kh) || !linalg::is_finite(&ks) {
        return Err(ControlError::NonFinite("feedback gains"));
    }
    Ok(Gains { kx, ks, kh })
}

/// Per-step matrices of the value recursions:
/// `X₁ = Aᵀ + KxᵀBᵀ`, `X₂ = F + KxᵀHᵀ`, `Y₁ = M + H Ks`, `Y₂ = B Kh`, `Y₃ = H Kh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTerms {
    pub x1: Mat,
    pub x2: Mat,
    pub y1: Mat,
    pub y2: Mat,
    pub y3: Mat,
}

impl ValueTerms {
    fn new(sys: &LinearSystem, cost: &CostMatrices, g: &Gains) -> Self {
        Self {
            x1: sys.a().transpose() + g.kx.transpose() * sys.b().transpose(),
            x2: &cost.f + g.kx.transpose() * cost.h.transpose(),
            y1: &cost.m + &cost.h * &g.ks,
            y2: sys.b() * &g.kh,
            y3: &cost.h * &g.kh,
        }
    }
}

/// Output of the finite-horizon backward pass.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    horizon: usize,
    g: Vec<Mat>,
    gains: Vec<Gains>,
    closed_loop: Vec<Mat>,
    terms: Vec<ValueTerms>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `G_t` for `t = 0..=T`.
    pub fn g(&self, t: usize) -> &Mat {
        &self.g[t]
    }

    pub fn g_all(&self) -> &[Mat] {
        &self.g
    }

    /// Gains for `t = 0..T`.
    pub fn gains(&self, t: usize) -> &Gains {
        &self.gains[t]
    }

    pub fn kx(&self, t: usize) -> &Mat {
        &self.gains[t].kx
    }

    pub fn ks(&self, t: usize) -> &Mat {
        &self.gains[t].ks
    }

    pub fn kh(&self, t: usize) -> &Mat {
        &self.gains[t].kh
    }

    /// `A_c(t) = A + B K_{t,x}`.
    pub fn closed_loop(&self, t: usize) -> &Mat {
        &self.closed_loop[t]
    }

    pub fn terms(&self, t: usize) -> &ValueTerms {
        &self.terms[t]
    }

    /// State-transition matrix `A_c(t2−1) ⋯ A_c(t1)`; identity when `t1 == t2`.
    pub fn transition(&self, t1: usize, t2: usize) -> Result<Mat, ControlError> {
        if t1 > t2 || t2 > self.horizon {
            return Err(ControlError::TimeIndex(format!(
                "need 0 <= t1 <= t2 <= {}, got t1={t1}, t2={t2}",
                self.horizon
            )));
        }
        let n = self.g[0].nrows();
        Ok((t1..t2).fold(Mat::identity(n, n), |acc, i| &self.closed_loop[i] * acc))
    }

    /// Max-abs residual of the Riccati identity at every `t < T`, where the
    /// right-hand side is recomputed with an explicit inverse.
    pub fn riccati_residuals(&self, sys: &LinearSystem, cost: &CostMatrices) -> Vec<f64> {
        let a = sys.a();
        let b = sys.b();
        (0..self.horizon)
            .map(|t| {
                let gn = &self.g[t + 1];
                let cross = a.transpose() * gn * b + &cost.d;
                let s_inv = (&cost.r + b.transpose() * gn * b)
                    .try_inverse()
                    .unwrap_or_else(|| Mat::from_element(cost.input_dim(), cost.input_dim(), f64::NAN));
                let rhs = a.transpose() * gn * a + &cost.w - &cross * s_inv * cross.transpose();
                linalg::max_abs(&(&self.g[t] - rhs))
            })
            .collect()
    }
}

/// Finite-horizon backward pass from `G_T = W`.
///
/// Each `G_t` is symmetrized after its update.
pub fn riccati_backward(sys: &LinearSystem, cost: &CostMatrices, horizon: usize) -> Result<RiccatiSolution, ControlError> {
    if horizon == 0 {
        return Err(ControlError::EmptyHorizon);
    }
    cost.check_system(sys)?;
    let a = sys.a();
    let b = sys.b();
    let mut g = vec![Mat::zeros(sys.n(), sys.n()); horizon + 1];
    let mut gains = Vec::with_capacity(horizon);
    g[horizon] = cost.w.clone();
    for t in (0..horizon).rev() {
        let gn = &g[t + 1];
        let k = gains_at(gn, sys, cost, t)?;
        // G_t = AᵀGA + W + (AᵀGB + D) Kx
        let gt = a.transpose() * gn * a + &cost.w + (a.transpose() * gn * b + &cost.d) * &k.kx;
        if !linalg::is_finite(&gt) {
            return Err(ControlError::NonFinite("Riccati iterate"));
        }
        g[t] = linalg::symmetrize(&gt);
        gains.push(k);
    }
    gains.reverse();
    let closed_loop = gains.iter().map(|k| a + b * &k.kx).collect();
    let terms = gains.iter().map(|k| ValueTerms::new(sys, cost, k)).collect();
    Ok(RiccatiSolution { horizon, g, gains, closed_loop, terms })
}

/// Diagnostic report on the structural assumptions. Never fails.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub controllability_rank: usize,
    pub controllable: bool,
    pub observability_rank: usize,
    pub observable: bool,
    pub p_eigenvalues: Vec<f64>,
    pub p_psd: bool,
    pub p_symmetric: bool,
    pub r_eigenvalues: Vec<f64>,
    pub r_pd: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.controllable && self.observable && self.p_psd && self.p_symmetric && self.r_pd
    }
}

pub fn validate_assumptions(sys: &LinearSystem, cost: &CostMatrices) -> AssumptionReport {
    let n = sys.n();
    let controllability_rank = linalg::rank(&sys.controllability_matrix(), RANK_TOL);
    let (observability_rank, observable) = if cost.n() == n {
        let c = linalg::psd_sqrt(&cost.w);
        let r = linalg::rank(&sys.observability_matrix(&c), RANK_TOL);
        (r, r == n)
    } else {
        (0, false)
    };
    let p = cost.assembled();
    let p_scale = linalg::max_abs(&p).max(1.0);
    let p_symmetric = linalg::max_abs(&(&p - p.transpose())) <= 1e-12 * p_scale;
    let p_eigenvalues = linalg::sym_eigenvalues(&p);
    let p_psd = p_eigenvalues.first().is_none_or(|&l| l >= -PSD_TOL * p_scale);
    let r_eigenvalues = linalg::sym_eigenvalues(&cost.r);
    let r_pd = r_eigenvalues.first().is_some_and(|&l| l > 0.0)
        && linalg::max_abs(&(&cost.r - cost.r.transpose())) <= 1e-12 * linalg::max_abs(&cost.r).max(1.0);
    AssumptionReport {
        controllability_rank,
        controllable: controllability_rank == n,
        observability_rank,
        observable,
        p_eigenvalues,
        p_psd,
        p_symmetric,
        r_eigenvalues,
        r_pd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example_system() -> (LinearSystem, CostMatrices) {
        let a = Mat::from_row_slice(2, 2, &[1.8, 1.2, 0.0, 1.19]);
        let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let cost = CostMatrices::tracking(&c, Mat::identity(1, 1), Mat::identity(1, 1)).unwrap();
        (LinearSystem::new(a, b).unwrap(), cost)
    }

    #[test]
    fn terminal_weight_is_w() {
        let (sys, cost) = example_system();
        for horizon in [1, 5, 30] {
            let sol = riccati_backward(&sys, &cost, horizon).unwrap();
            assert_eq!(sol.g(horizon), &Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        }
    }

    #[test]
    fn one_step_back_from_terminal() {
        // WB = 0 so the correction term vanishes: G_{T-1} = AᵀWA + W.
        let (sys, cost) = example_system();
        let sol = riccati_backward(&sys, &cost, 4).unwrap();
        let expected = Mat::from_row_slice(2, 2, &[4.24, 2.16, 2.16, 1.44]);
        assert_abs_diff_eq!(sol.g(3), &expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_input_reduces_to_lyapunov_step() {
        let a = Mat::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.7]);
        let sys = LinearSystem::new(a.clone(), Mat::zeros(2, 1)).unwrap();
        let w = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cost = CostMatrices::new(
            w.clone(),
            Mat::zeros(2, 1),
            Mat::zeros(2, 1),
            Mat::identity(1, 1),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        let sol = riccati_backward(&sys, &cost, 6).unwrap();
        for t in 0..6 {
            let expected = a.transpose() * sol.g(t + 1) * &a + &w;
            assert_abs_diff_eq!(sol.g(t), &expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn gains_with_terminal_g() {
        let (sys, cost) = example_system();
        let k = feedback_gains(&cost.w, &sys, &cost).unwrap();
        assert_abs_diff_eq!(k.kh, Mat::from_row_slice(1, 2, &[0.0, -1.0]), epsilon = 1e-15);
        assert_abs_diff_eq!(k.kx, Mat::zeros(1, 2), epsilon = 1e-15);
        assert_eq!(k.ks, Mat::zeros(1, 1));
    }

    #[test]
    fn zero_cross_weight_gives_zero_ks() {
        let (sys, cost) = example_system();
        let g = Mat::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let k = feedback_gains(&g, &sys, &cost).unwrap();
        assert_eq!(k.ks, Mat::zeros(1, 1));
    }

    #[test]
    fn no_actuation_gains() {
        let sys = LinearSystem::new(Mat::identity(2, 2), Mat::zeros(2, 1)).unwrap();
        let d = Mat::from_row_slice(2, 1, &[0.4, -0.2]);
        let r = Mat::from_element(1, 1, 2.0);
        let cost = CostMatrices::new(
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            d.clone(),
            Mat::identity(1, 1),
            Mat::zeros(1, 1),
            r,
        )
        .unwrap();
        let g = Mat::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 4.0]);
        let k = feedback_gains(&g, &sys, &cost).unwrap();
        assert_eq!(k.kh, Mat::zeros(1, 2));
        assert_abs_diff_eq!(k.kx, -(d.transpose() * 0.5), epsilon = 1e-15);
    }

    #[test]
    fn indefinite_r_is_rejected() {
        let (sys, mut cost) = example_system();
        cost.r = Mat::from_element(1, 1, -1.0);
        assert_eq!(
            riccati_backward(&sys, &cost, 3).unwrap_err(),
            ControlError::NotPositiveDefinite { t: 2 }
        );
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (sys, _) = example_system();
        let cost = CostMatrices::tracking(
            &Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            Mat::identity(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        assert!(matches!(riccati_backward(&sys, &cost, 3), Err(ControlError::Dimension(_))));
        assert_eq!(riccati_backward(&sys, &example_system().1, 0).unwrap_err(), ControlError::EmptyHorizon);
    }

    #[test]
    fn transition_products() {
        let (sys, cost) = example_system();
        let sol = riccati_backward(&sys, &cost, 6).unwrap();
        assert_eq!(sol.transition(2, 2).unwrap(), Mat::identity(2, 2));
        assert_eq!(&sol.transition(3, 4).unwrap(), sol.closed_loop(3));
        let two = sol.closed_loop(2) * sol.closed_loop(1);
        assert_abs_diff_eq!(sol.transition(1, 3).unwrap(), two, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.closed_loop(4), &(sys.a() + sys.b() * sol.kx(4)), epsilon = 0.0);
        assert!(sol.transition(4, 3).is_err());
        assert!(sol.transition(0, 7).is_err());
    }

    #[test]
    fn stage_cost_values() {
        let (_, cost) = example_system();
        let zero = |k| Vector::zeros(k);
        assert_eq!(stage_cost(&zero(2), &zero(1), &zero(1), &cost).unwrap(), 0.0);
        let x = Vector::from_vec(vec![2.0, 0.0]);
        let s = Vector::from_vec(vec![1.0]);
        assert_abs_diff_eq!(stage_cost(&x, &s, &zero(1), &cost).unwrap(), 1.0, epsilon = 1e-14);
        let cost_u = CostMatrices::new(
            Mat::zeros(2, 2),
            Mat::zeros(2, 1),
            Mat::zeros(2, 2),
            Mat::zeros(1, 1),
            Mat::zeros(1, 2),
            Mat::identity(2, 2),
        )
        .unwrap();
        let u = Vector::from_vec(vec![1.0, 0.0]);
        assert_eq!(stage_cost(&zero(2), &zero(1), &u, &cost_u).unwrap(), 1.0);
        assert!(stage_cost(&zero(3), &zero(1), &zero(1), &cost).is_err());
    }

    #[test]
    fn assumption_diagnostics() {
        let (sys, cost) = example_system();
        let kalman = sys.controllability_matrix();
        assert_abs_diff_eq!(kalman, Mat::from_row_slice(2, 2, &[0.0, 1.2, 1.0, 1.19]), epsilon = 1e-15);
        let rep = validate_assumptions(&sys, &cost);
        assert_eq!(rep.controllability_rank, 2);
        assert!(rep.controllable && rep.observable && rep.p_psd && rep.r_pd);

        let stuck = LinearSystem::new(Mat::identity(2, 2), Mat::zeros(2, 1)).unwrap();
        assert!(!validate_assumptions(&stuck, &cost).controllable);

        let a = Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        let sys0 = LinearSystem::new(a, Mat::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
        let full_w = CostMatrices::new(
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Mat::zeros(2, 1),
            Mat::identity(1, 1),
            Mat::zeros(1, 1),
            Mat::identity(1, 1),
        )
        .unwrap();
        assert!(validate_assumptions(&sys0, &full_w).observable);
    }

    #[test]
    fn residual_symmetry_and_psd_on_example() {
        let (sys, cost) = example_system();
        let sol = riccati_backward(&sys, &cost, 30).unwrap();
        assert!(sol.riccati_residuals(&sys, &cost).iter().all(|&r| r <= 1e-10));
        for g in sol.g_all() {
            assert!(linalg::max_abs(&(g - g.transpose())) <= 1e-12);
            assert!(linalg::min_sym_eigenvalue(g) >= -1e-10);
        }
    }
}
