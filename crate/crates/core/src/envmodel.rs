//! The exogenous environment: feature map, ground-truth mixture kernel
//! `P(s'|s) = φ(s)ᵀμ(s')`, truncated sampling, and Monte-Carlo moment
//! estimation under each component measure.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{Mat, Vector};
use crate::rng::{self, StreamRng};

/// Rejection attempts allowed per truncated draw.
pub const DEFAULT_REJECTION_CAP: usize = 1_000_000;
/// Smallest sample count accepted by the moment estimator.
pub const MIN_MC_SAMPLES: usize = 1_000;
/// Draws per deterministic sub-stream in parallel sampling.
pub const SAMPLE_CHUNK: usize = 8_192;
const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("state norm {norm} exceeds delta_s = {delta_s}")]
    OutOfBall { norm: f64, delta_s: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite feature output at s = {0:?}")]
    NonFinite(Vec<f64>),
    #[error("feature norm {norm} exceeds 1/sqrt(d) = {bound}")]
    FeatureNormBound { norm: f64, bound: f64 },
    #[error("mixture weights {0:?} are not a probability vector")]
    NotConvex(Vec<f64>),
    #[error("rejection sampling exceeded {cap} attempts for component {component}")]
    RejectionCap { cap: usize, component: usize },
    #[error("invalid component: {0}")]
    InvalidComponent(String),
    #[error("need at least {min} Monte-Carlo samples, got {got}")]
    InsufficientSamples { min: usize, got: usize },
    #[error("non-finite moment estimate")]
    NonFiniteMoments,
}

type FeatureFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;

#[derive(Clone)]
enum FeatureKind {
    /// `φ_i ∝ exp(−‖s − ν_i‖² / (2ρ_i²))`, normalized to sum to one.
    NormalizedGaussian { centers: Vec<Vector>, widths: Vec<f64> },
    Custom(FeatureFn),
}

/// Known feature map `φ: R^p → R^d` on the ball `‖s‖ ≤ δ_s`.
#[derive(Clone)]
pub struct FeatureMap {
    d: usize,
    p: usize,
    delta_s: f64,
    norm_bound_enforced: bool,
    kind: FeatureKind,
}

impl fmt::Debug for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            FeatureKind::NormalizedGaussian { centers, widths } => {
                format!("NormalizedGaussian {{ centers: {centers:?}, widths: {widths:?} }}")
            }
            FeatureKind::Custom(_) => "Custom".to_string(),
        };
        f.debug_struct("FeatureMap")
            .field("d", &self.d)
            .field("p", &self.p)
            .field("delta_s", &self.delta_s)
            .field("norm_bound_enforced", &self.norm_bound_enforced)
            .field("kind", &kind)
            .finish()
    }
}

impl FeatureMap {
    pub fn normalized_gaussian(centers: Vec<Vector>, widths: Vec<f64>, delta_s: f64) -> Result<Self, EnvError> {
        if centers.is_empty() || centers.len() != widths.len() {
            return Err(EnvError::Dimension(format!(
                "{} centers but {} widths",
                centers.len(),
                widths.len()
            )));
        }
        let p = centers[0].len();
        if p == 0 || centers.iter().any(|c| c.len() != p) {
            return Err(EnvError::Dimension("centers must share a positive dimension".into()));
        }
        if widths.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(EnvError::InvalidComponent("widths must be positive".into()));
        }
        check_delta(delta_s)?;
        Ok(Self {
            d: centers.len(),
            p,
            delta_s,
            norm_bound_enforced: false,
            kind: FeatureKind::NormalizedGaussian { centers, widths },
        })
    }

    /// Arbitrary evaluator returning a `d`-vector for each `p`-vector.
    pub fn custom<F>(d: usize, p: usize, delta_s: f64, f: F) -> Result<Self, EnvError>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if d == 0 || p == 0 {
            return Err(EnvError::Dimension("d and p must be positive".into()));
        }
        check_delta(delta_s)?;
        Ok(Self { d, p, delta_s, norm_bound_enforced: false, kind: FeatureKind::Custom(Arc::new(f)) })
    }

    /// Reject evaluations whose norm exceeds `1/√d`.
    pub fn with_norm_bound_enforced(mut self, on: bool) -> Self {
        self.norm_bound_enforced = on;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn delta_s(&self) -> f64 {
        self.delta_s
    }

    pub fn norm_bound_enforced(&self) -> bool {
        self.norm_bound_enforced
    }

    pub fn in_ball(&self, s: &Vector) -> bool {
        s.norm() <= self.delta_s
    }

    /// `φ(s)`, checked against the ball, dimension and norm constraints.
    pub fn eval(&self, s: &Vector) -> Result<Vector, EnvError> {
        if s.len() != self.p {
            return Err(EnvError::Dimension(format!("state has length {}, expected {}", s.len(), self.p)));
        }
        let norm = s.norm();
        if !(norm <= self.delta_s) {
            return Err(EnvError::OutOfBall { norm, delta_s: self.delta_s });
        }
        let phi = self.eval_unchecked(s);
        if phi.len() != self.d {
            return Err(EnvError::Dimension(format!("feature has length {}, expected {}", phi.len(), self.d)));
        }
        if !phi.iter().all(|v| v.is_finite()) {
            return Err(EnvError::NonFinite(s.iter().copied().collect()));
        }
        if self.norm_bound_enforced {
            let bound = 1.0 / (self.d as f64).sqrt();
            let pn = phi.norm();
            if pn > bound + NORMALIZATION_TOL {
                return Err(EnvError::FeatureNormBound { norm: pn, bound });
            }
        }
        Ok(phi)
    }

    /// `φ(s)` without any checks.
    pub fn eval_unchecked(&self, s: &Vector) -> Vector {
        match &self.kind {
            FeatureKind::NormalizedGaussian { centers, widths } => {
                let logs: Vec<f64> = centers
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| -(s - c).norm_squared() / (2.0 * w * w))
                    .collect();
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let f: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
                let total: f64 = f.iter().sum();
                Vector::from_iterator(f.len(), f.iter().map(|v| v / total))
            }
            FeatureKind::Custom(f) => f(s),
        }
    }
}

fn check_delta(delta_s: f64) -> Result<(), EnvError> {
    if !(delta_s.is_finite() && delta_s > 0.0) {
        return Err(EnvError::InvalidComponent(format!("delta_s must be positive, got {delta_s}")));
    }
    Ok(())
}

/// Probability measure `μ_i` over `R^p`.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentMeasure {
    /// Independent normal coordinates with the given means and standard deviations.
    Gaussian { mean: Vector, std: Vector },
    PointMass(Vector),
}

impl ComponentMeasure {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::PointMass(v) => v.len(),
        }
    }

    fn validate(&self, delta_s: f64) -> Result<(), EnvError> {
        match self {
            Self::Gaussian { mean, std } => {
                if mean.len() != std.len() {
                    return Err(EnvError::InvalidComponent("mean and std lengths differ".into()));
                }
                if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(EnvError::InvalidComponent("gaussian needs finite mean and positive std".into()));
                }
            }
            Self::PointMass(v) => {
                let norm = v.norm();
                if !(norm <= delta_s) {
                    return Err(EnvError::OutOfBall { norm, delta_s });
                }
            }
        }
        Ok(())
    }

    /// One untruncated draw.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            Self::Gaussian { mean, std } => Vector::from_fn(mean.len(), |k, _| {
                let z: f64 = rng.sample(StandardNormal);
                mean[k] + std[k] * z
            }),
            Self::PointMass(v) => v.clone(),
        }
    }
}

/// Convex mixture kernel `P_t(s'|s) = Σ_i φ_i(s) μ_{i,t}(s')` truncated to the
/// `δ_s` ball.
#[derive(Debug, Clone)]
pub struct MixtureKernel {
    feature: FeatureMap,
    components: Vec<ComponentMeasure>,
    schedule: Option<Vec<Vec<ComponentMeasure>>>,
    rejection_cap: usize,
}

impl MixtureKernel {
    pub fn new(feature: FeatureMap, components: Vec<ComponentMeasure>) -> Result<Self, EnvError> {
        Self::check_components(&feature, &components)?;
        Ok(Self { feature, components, schedule: None, rejection_cap: DEFAULT_REJECTION_CAP })
    }

    fn check_components(feature: &FeatureMap, components: &[ComponentMeasure]) -> Result<(), EnvError> {
        if components.len() != feature.d() {
            return Err(EnvError::Dimension(format!(
                "{} components for feature dimension {}",
                components.len(),
                feature.d()
            )));
        }
        for c in components {
            if c.dim() != feature.p() {
                return Err(EnvError::Dimension(format!("component dimension {} != p = {}", c.dim(), feature.p())));
            }
            c.validate(feature.delta_s())?;
        }
        Ok(())
    }

    /// Time-varying components: entry `t` is the law of `s_{t+1}` given the
    /// weights at `s_t`. Steps past the end reuse the last entry.
    pub fn with_schedule(mut self, schedule: Vec<Vec<ComponentMeasure>>) -> Result<Self, EnvError> {
        if schedule.is_empty() {
            return Err(EnvError::InvalidComponent("empty schedule".into()));
        }
        for step in &schedule {
            Self::check_components(&self.feature, step)?;
        }
        self.schedule = Some(schedule);
        Ok(self)
    }

    pub fn with_rejection_cap(mut self, cap: usize) -> Self {
        self.rejection_cap = cap.max(1);
        self
    }

    pub fn feature(&self) -> &FeatureMap {
        &self.feature
    }

    pub fn d(&self) -> usize {
        self.feature.d()
    }

    pub fn p(&self) -> usize {
        self.feature.p()
    }

    pub fn delta_s(&self) -> f64 {
        self.feature.delta_s()
    }

    pub fn is_time_invariant(&self) -> bool {
        self.schedule.is_none()
    }

    /// Components governing the step `t → t+1`.
    pub fn components_at(&self, t: usize) -> &[ComponentMeasure] {
        match &self.schedule {
            Some(s) => &s[t.min(s.len() - 1)],
            None => &self.components,
        }
    }

    /// Draw from component `i` of step `t`, resampling until inside the ball.
    pub fn sample_component<R: Rng + ?Sized>(&self, i: usize, t: usize, rng: &mut R) -> Result<Vector, EnvError> {
        let comp = self
            .components_at(t)
            .get(i)
            .ok_or_else(|| EnvError::Dimension(format!("component {i} out of range")))?;
        for _ in 0..self.rejection_cap {
            let s = comp.sample_raw(rng);
            if self.feature.in_ball(&s) {
                return Ok(s);
            }
        }
        Err(EnvError::RejectionCap { cap: self.rejection_cap, component: i })
    }

    /// Mixture weights at `s`, checked to be a probability vector.
    pub fn weights(&self, s: &Vector) -> Result<Vector, EnvError> {
        let w = self.feature.eval(s)?;
        let total: f64 = w.iter().sum();
        if w.iter().any(|&v| v < 0.0) || (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(EnvError::NotConvex(w.iter().copied().collect()));
        }
        Ok(w)
    }

    /// Component index drawn with probabilities `w`.
    pub fn pick_component<R: Rng + ?Sized>(w: &Vector, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                return i;
            }
        }
        // u landed in the round-off gap above the last partial sum.
        w.iter().rposition(|&v| v > 0.0).unwrap_or(w.len() - 1)
    }

    /// `s' ~ P_t(·|s)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: &Vector, t: usize, rng: &mut R) -> Result<Vector, EnvError> {
        let w = self.weights(s)?;
        let i = Self::pick_component(&w, rng);
        self.sample_component(i, t, rng)
    }
}

/// Cached truncated draws from each component of one step, with their
/// feature evaluations.
#[derive(Debug, Clone)]
pub struct ComponentSamples {
    p: usize,
    d: usize,
    n: usize,
    /// Per component, `n·p` coordinates, sample-major.
    states: Vec<Vec<f64>>,
    /// Per component, `n·d` feature values, sample-major.
    features: Vec<Vec<f64>>,
}

impl ComponentSamples {
    /// Draws `n` samples per component for step `t`. Sample `k` of component
    /// `i` comes from sub-stream `(seed, MOMENTS, t, i, k / SAMPLE_CHUNK)`, so
    /// the result does not depend on the thread pool.
    pub fn draw(kern: &MixtureKernel, t: usize, n: usize, seed: u64) -> Result<Self, EnvError> {
        let d = kern.d();
        let p = kern.p();
        let mut states = Vec::with_capacity(d);
        let mut features = Vec::with_capacity(d);
        for i in 0..d {
            let chunks = n.div_ceil(SAMPLE_CHUNK);
            let parts: Result<Vec<(Vec<f64>, Vec<f64>)>, EnvError> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng: StreamRng = rng::stream(seed, &[rng::tag::MOMENTS, t as u64, i as u64, c as u64]);
                    let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
                    let mut xs = Vec::with_capacity(len * p);
                    let mut fs = Vec::with_capacity(len * d);
                    for _ in 0..len {
                        let s = kern.sample_component(i, t, &mut rng)?;
                        let phi = kern.feature().eval(&s)?;
                        xs.extend(s.iter());
                        fs.extend(phi.iter());
                    }
                    Ok((xs, fs))
                })
                .collect();
            let (xs, fs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = parts?.into_iter().unzip();
            states.push(xs.concat());
            features.push(fs.concat());
        }
        Ok(Self { p, d, n, states, features })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn state(&self, i: usize, k: usize) -> Vector {
        Vector::from_column_slice(&self.states[i][k * self.p..(k + 1) * self.p])
    }

    pub fn feature(&self, i: usize, k: usize) -> Vector {
        Vector::from_column_slice(&self.features[i][k * self.d..(k + 1) * self.d])
    }

    /// Max of `√d·‖φ(s)‖` over every cached sample.
    pub fn max_scaled_feature_norm(&self) -> f64 {
        let sd = (self.d as f64).sqrt();
        self.features
            .iter()
            .flat_map(|f| f.chunks(self.d))
            .map(|phi| sd * phi.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Moments over all cached samples.
    pub fn moments(&self, y1: &Mat, y3: &Mat) -> Result<KernelMoments, EnvError> {
        self.moments_range(0, self.n, y1, y3)
    }

    /// Moments over samples `start..end` of every component.
    pub fn moments_range(&self, start: usize, end: usize, y1: &Mat, y3: &Mat) -> Result<KernelMoments, EnvError> {
        let (d, p) = (self.d, self.p);
        if y1.nrows() != p || y1.ncols() != p || y3.nrows() != p {
            return Err(EnvError::Dimension(format!(
                "Y1 must be {p}x{p} and Y3 must have {p} rows, got {}x{} and {}x{}",
                y1.nrows(),
                y1.ncols(),
                y3.nrows(),
                y3.ncols()
            )));
        }
        if end > self.n || start >= end {
            return Err(EnvError::InsufficientSamples { min: 1, got: end.saturating_sub(start) });
        }
        let n_h = y3.ncols();
        let layout = Layout { d, p, n_h };
        let width = layout.width();
        let mut means = Vec::with_capacity(d);
        let mut errs = Vec::with_capacity(d);
        for i in 0..d {
            let stats = (start..end)
                .step_by(SAMPLE_CHUNK)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|lo| {
                    let hi = (lo + SAMPLE_CHUNK).min(end);
                    let mut acc = Welford::new(width);
                    let mut row = vec![0.0; width];
                    for k in lo..hi {
                        let s = &self.states[i][k * p..(k + 1) * p];
                        let phi = &self.features[i][k * d..(k + 1) * d];
                        layout.fill(&mut row, s, phi, y1, y3);
                        acc.push(&row);
                    }
                    acc
                })
                .collect::<Vec<_>>();
            let acc = merge_ordered(stats);
            let (mean, se) = acc.mean_and_stderr();
            means.push(mean);
            errs.push(se);
        }
        let out = layout.assemble(&means, &errs, end - start);
        if !out.is_finite() {
            return Err(EnvError::NonFiniteMoments);
        }
        Ok(out)
    }
}

/// Index layout of the per-sample moment row.
struct Layout {
    d: usize,
    p: usize,
    n_h: usize,
}

impl Layout {
    fn width(&self) -> usize {
        self.d + self.p + self.d * self.d + 1 + self.d * self.n_h
    }

    fn fill(&self, row: &mut [f64], s: &[f64], phi: &[f64], y1: &Mat, y3: &Mat) {
        let (d, p, n_h) = (self.d, self.p, self.n_h);
        row[..d].copy_from_slice(phi);
        row[d..d + p].copy_from_slice(s);
        let mut o = d + p;
        for a in 0..d {
            for b in 0..d {
                row[o + a * d + b] = phi[a] * phi[b];
            }
        }
        o += d * d;
        let mut quad = 0.0;
        for a in 0..p {
            for b in 0..p {
                quad += s[a] * y1[(a, b)] * s[b];
            }
        }
        row[o] = quad;
        o += 1;
        for c in 0..n_h {
            let sy3: f64 = (0..p).map(|a| s[a] * y3[(a, c)]).sum();
            for a in 0..d {
                row[o + a * n_h + c] = phi[a] * sy3;
            }
        }
    }

    fn assemble(&self, means: &[Vec<f64>], errs: &[Vec<f64>], n: usize) -> KernelMoments {
        let (d, p, n_h) = (self.d, self.p, self.n_h);
        let build = |src: &[Vec<f64>]| {
            let phi = Mat::from_fn(d, d, |i, j| src[i][j]);
            let m_bar = Vector::from_fn(d * p, |k, _| src[k / p][d + k % p]);
            let o = d + p;
            let phi_outer = (0..d).map(|i| Mat::from_fn(d, d, |a, b| src[i][o + a * d + b])).collect();
            let quad_y1 = Vector::from_fn(d, |i, _| src[i][o + d * d]);
            let oc = o + d * d + 1;
            let cross_y3 = Mat::from_fn(d, d * n_h, |i, j| src[i][oc + j]);
            MomentBlock { phi, m_bar, phi_outer, quad_y1, cross_y3 }
        };
        let m = build(means);
        KernelMoments {
            phi: m.phi,
            m_bar: m.m_bar,
            phi_outer: m.phi_outer,
            quad_y1: m.quad_y1,
            cross_y3: m.cross_y3,
            mc_samples: n,
            std_errors: build(errs),
        }
    }
}

/// Running mean and centered second moment per entry (Chan et al. merge).
#[derive(Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(width: usize) -> Self {
        Self { n: 0, mean: vec![0.0; width], m2: vec![0.0; width] }
    }

    fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let nf = self.n as f64;
        for (k, &v) in row.iter().enumerate() {
            let delta = v - self.mean[k];
            self.mean[k] += delta / nf;
            self.m2[k] += delta * (v - self.mean[k]);
        }
    }

    fn merge(mut self, other: Welford) -> Welford {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.n += other.n;
        self
    }

    fn mean_and_stderr(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let se = if self.n > 1 {
            self.m2.iter().map(|m2| (m2.max(0.0) / (n - 1.0) / n).sqrt()).collect()
        } else {
            vec![0.0; self.m2.len()]
        };
        (self.mean.clone(), se)
    }
}

/// Pairwise merge in a fixed order.
fn merge_ordered(mut parts: Vec<Welford>) -> Welford {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().unwrap_or_else(|| Welford::new(0))
}

/// One block of moment values (or their standard errors).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentBlock {
    pub phi: Mat,
    pub m_bar: Vector,
    pub phi_outer: Vec<Mat>,
    pub quad_y1: Vector,
    pub cross_y3: Mat,
}

/// Component-wise expectations feeding the true-parameter recursion.
///
/// Row `i` of `phi` is `E_{μ_i}[φ(s)ᵀ]`; `m_bar` stacks `E_{μ_i}[s]`;
/// `phi_outer[i] = E_{μ_i}[φφᵀ]`; `quad_y1[i] = E_{μ_i}[sᵀY₁s]`; row `i` of
/// `cross_y3` is `E_{μ_i}[φ(s)ᵀ ⊗ sᵀY₃]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    pub phi: Mat,
    pub m_bar: Vector,
    pub phi_outer: Vec<Mat>,
    pub quad_y1: Vector,
    pub cross_y3: Mat,
    pub mc_samples: usize,
    pub std_errors: MomentBlock,
}

impl KernelMoments {
    pub fn is_finite(&self) -> bool {
        crate::linalg::is_finite(&self.phi)
            && crate::linalg::vec_is_finite(&self.m_bar)
            && self.phi_outer.iter().all(crate::linalg::is_finite)
            && crate::linalg::vec_is_finite(&self.quad_y1)
            && crate::linalg::is_finite(&self.cross_y3)
    }

    /// Rows of `Φ` whose norm exceeds `1 + 3·(row std error)`.
    pub fn phi_row_violations(&self) -> Vec<usize> {
        (0..self.phi.nrows())
            .filter(|&i| {
                let norm = self.phi.row(i).norm();
                let se = self.std_errors.phi.row(i).norm();
                norm > 1.0 + 3.0 * se
            })
            .collect()
    }
}

/// Draws fresh samples for step `t` and estimates the moments for the given
/// `Y₁ (p×p)` and `Y₃ (p×n)`.
pub fn estimate_moments(
    kern: &MixtureKernel,
    t: usize,
    y1: &Mat,
    y3: &Mat,
    mc_samples: usize,
    seed: u64,
) -> Result<KernelMoments, EnvError> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(EnvError::InsufficientSamples { min: MIN_MC_SAMPLES, got: mc_samples });
    }
    ComponentSamples::draw(kern, t, mc_samples, seed)?.moments(y1, y3)
}

/// Result of checking `‖φ(s)‖ ≤ 1/√d` on sampled states.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAudit {
    pub samples: usize,
    /// Max of `√d·‖φ(s)‖`.
    pub max_scaled_norm: f64,
    pub violated: bool,
}

/// Evaluates `√d·‖φ(s)‖` over `states`; flags but never fails on values above one.
pub fn audit_feature_norm<'a, I>(fm: &FeatureMap, states: I) -> NormAudit
where
    I: IntoIterator<Item = &'a Vector>,
{
    let sd = (fm.d() as f64).sqrt();
    let mut samples = 0;
    let mut max_scaled_norm: f64 = 0.0;
    for s in states {
        samples += 1;
        max_scaled_norm = max_scaled_norm.max(sd * fm.eval_unchecked(s).norm());
    }
    NormAudit { samples, max_scaled_norm, violated: max_scaled_norm > 1.0 + NORMALIZATION_TOL }
}

/// The two-bump scalar map: centers 7 and −1, widths 5 and 3, `δ_s = 15`.
pub fn example_feature_map() -> FeatureMap {
    FeatureMap::normalized_gaussian(
        vec![Vector::from_element(1, 7.0), Vector::from_element(1, -1.0)],
        vec![5.0, 3.0],
        15.0,
    )
    .expect("valid built-in feature map")
}

/// Mixture of `N(7, 1²)` and `N(−1, 1.5²)` over the example feature map.
pub fn example_kernel() -> MixtureKernel {
    MixtureKernel::new(
        example_feature_map(),
        vec![
            ComponentMeasure::Gaussian { mean: Vector::from_element(1, 7.0), std: Vector::from_element(1, 1.0) },
            ComponentMeasure::Gaussian { mean: Vector::from_element(1, -1.0), std: Vector::from_element(1, 1.5) },
        ],
    )
    .expect("valid built-in kernel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sv(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn example_map_at_first_center() {
        let phi = example_feature_map().eval(&sv(7.0)).unwrap();
        // f1 = 1, f2 = exp(-64/18).
        let f2 = (-64.0_f64 / 18.0).exp();
        assert!((phi[0] - 1.0 / (1.0 + f2)).abs() < 1e-15);
        assert!((phi[0] - 0.9722).abs() < 1e-4);
        assert!((phi[1] - 0.0278).abs() < 1e-4);
    }

    #[test]
    fn equal_bumps_give_equal_weights() {
        let fm = FeatureMap::normalized_gaussian(vec![sv(-2.0), sv(2.0)], vec![1.0, 1.0], 10.0).unwrap();
        let phi = fm.eval(&sv(0.0)).unwrap();
        assert_eq!(phi[0], 0.5);
        assert_eq!(phi[1], 0.5);
    }

    #[test]
    fn out_of_ball_is_rejected() {
        let fm = example_feature_map();
        assert!(matches!(fm.eval(&sv(15.5)), Err(EnvError::OutOfBall { .. })));
        assert!(fm.eval(&sv(-15.0)).is_ok());
        assert!(matches!(fm.eval(&Vector::zeros(2)), Err(EnvError::Dimension(_))));
    }

    #[test]
    fn enforced_norm_bound_rejects_example_map() {
        let fm = example_feature_map().with_norm_bound_enforced(true);
        assert!(matches!(fm.eval(&sv(7.0)), Err(EnvError::FeatureNormBound { .. })));
    }

    #[test]
    fn audit_flags_example_map() {
        let fm = example_feature_map();
        let states: Vec<Vector> = (-15..=15).map(|k| sv(k as f64)).collect();
        let audit = audit_feature_norm(&fm, &states);
        assert_eq!(audit.samples, 31);
        assert!(audit.violated);
        assert!(audit.max_scaled_norm > 1.3);
    }

    fn degenerate_kernel(first: bool) -> MixtureKernel {
        let w = if first { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        let fm = FeatureMap::custom(2, 1, 15.0, move |_| Vector::from_vec(w.clone())).unwrap();
        MixtureKernel::new(fm, example_kernel().components_at(0).to_vec()).unwrap()
    }

    #[test]
    fn degenerate_weights_pick_one_component() {
        for (first, target, tol) in [(true, 7.0, 0.02), (false, -1.0, 0.03)] {
            let kern = degenerate_kernel(first);
            let mut rng = StreamRng::seed_from_u64(11);
            let n = 100_000;
            let mut sum = 0.0;
            for _ in 0..n {
                let s = kern.sample_next(&sv(0.0), 0, &mut rng).unwrap();
                assert!(s[0].abs() <= 15.0);
                sum += s[0];
            }
            assert!((sum / n as f64 - target).abs() < tol);
        }
    }

    #[test]
    fn rejection_cap_triggers() {
        let fm = FeatureMap::custom(1, 1, 1.0, |_| Vector::from_element(1, 1.0)).unwrap();
        let kern = MixtureKernel::new(
            fm,
            vec![ComponentMeasure::Gaussian { mean: sv(100.0), std: sv(0.1) }],
        )
        .unwrap()
        .with_rejection_cap(50);
        let mut rng = StreamRng::seed_from_u64(1);
        assert_eq!(
            kern.sample_next(&sv(0.0), 0, &mut rng).unwrap_err(),
            EnvError::RejectionCap { cap: 50, component: 0 }
        );
    }

    #[test]
    fn signed_weights_are_not_sampled() {
        let fm = FeatureMap::custom(2, 1, 15.0, |_| Vector::from_vec(vec![1.5, -0.5])).unwrap();
        let kern = MixtureKernel::new(fm, example_kernel().components_at(0).to_vec()).unwrap();
        let mut rng = StreamRng::seed_from_u64(1);
        assert!(matches!(kern.sample_next(&sv(0.0), 0, &mut rng), Err(EnvError::NotConvex(_))));
    }

    #[test]
    fn point_mass_moments_are_exact() {
        let fm = example_feature_map();
        let kern = MixtureKernel::new(
            fm.clone(),
            vec![ComponentMeasure::PointMass(sv(2.0)), ComponentMeasure::PointMass(sv(-3.0))],
        )
        .unwrap();
        let y1 = Mat::from_element(1, 1, 1.5);
        let y3 = Mat::from_row_slice(1, 2, &[1.0, -1.0]);
        let m = estimate_moments(&kern, 0, &y1, &y3, 2_000, 9).unwrap();
        assert_eq!(m.m_bar[0], 2.0);
        assert_eq!(m.m_bar[1], -3.0);
        assert_eq!(m.std_errors.m_bar, Vector::zeros(2));
        assert!((m.quad_y1[0] - 6.0).abs() < 1e-12);
        let phi = fm.eval(&sv(2.0)).unwrap();
        assert!((m.phi.row(0).transpose() - &phi).norm() < 1e-12);
        // Row 1 of cross_y3 = φ(-3)ᵀ ⊗ (-3·[1, -1]).
        let phi_b = fm.eval(&sv(-3.0)).unwrap();
        assert!((m.cross_y3[(1, 0)] - phi_b[0] * -3.0).abs() < 1e-12);
        assert!((m.cross_y3[(1, 3)] - phi_b[1] * 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_y1_gives_zero_quadratic() {
        let m = estimate_moments(&example_kernel(), 0, &Mat::zeros(1, 1), &Mat::zeros(1, 2), 1_000, 3).unwrap();
        assert_eq!(m.quad_y1, Vector::zeros(2));
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            estimate_moments(&example_kernel(), 0, &Mat::zeros(1, 1), &Mat::zeros(1, 2), 999, 3),
            Err(EnvError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn truncated_mean_matches_independent_estimate() {
        let kern = example_kernel();
        let m = estimate_moments(&kern, 0, &Mat::zeros(1, 1), &Mat::zeros(1, 2), 50_000, 17).unwrap();
        let mut rng = StreamRng::seed_from_u64(991);
        let draws: Vec<f64> = (0..50_000).map(|_| kern.sample_component(0, 0, &mut rng).unwrap()[0]).collect();
        let (mean, se) = crate::linalg::mean_and_stderr(&draws);
        let combined = (se * se + m.std_errors.m_bar[0].powi(2)).sqrt();
        assert!((m.m_bar[0] - mean).abs() <= 3.0 * combined);
        assert!((m.m_bar[0] - 7.0).abs() <= 3.0 * m.std_errors.m_bar[0]);
        assert!(m.phi_row_violations().is_empty());
    }

    #[test]
    fn moments_independent_of_thread_count() {
        let kern = example_kernel();
        let y1 = Mat::identity(1, 1);
        let y3 = Mat::from_row_slice(1, 2, &[0.3, 0.2]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| estimate_moments(&kern, 0, &y1, &y3, 30_000, 5).unwrap());
        let b = four.install(|| estimate_moments(&kern, 0, &y1, &y3, 30_000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_selects_step_components() {
        let kern = degenerate_kernel(true)
            .with_schedule(vec![
                vec![ComponentMeasure::PointMass(sv(1.0)), ComponentMeasure::PointMass(sv(2.0))],
                vec![ComponentMeasure::PointMass(sv(3.0)), ComponentMeasure::PointMass(sv(4.0))],
            ])
            .unwrap();
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(kern.sample_next(&sv(0.0), 0, &mut rng).unwrap()[0], 1.0);
        assert_eq!(kern.sample_next(&sv(0.0), 1, &mut rng).unwrap()[0], 3.0);
        assert_eq!(kern.sample_next(&sv(0.0), 9, &mut rng).unwrap()[0], 3.0);
        assert!(!kern.is_time_invariant());
    }
}
