//! The end-to-end pipeline: Riccati synthesis, learning, the true-parameter
//! oracle, regret, stability and bound diagnostics, CSV and manifest output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{self, BoundInputs, IssConstants, IssReport};
use crate::config::{ConfigError, ExperimentConfig, Instance, XBarSpec};
use crate::envmodel;
use crate::linalg::{self, Vector};
use crate::linctl::{self, RiccatiSolution};
use crate::lsvi::{self, Episode, History, ThetaStack};
use crate::oracle::{self, NormCaps, RegretReport, TrueTheta};
use crate::plot;
use crate::rng::{self, StreamRng};

pub const MANIFEST: &str = "manifest.toml";
pub const REGRET_CSV: &str = "regret.csv";
pub const PARAM_ERROR_CSV: &str = "param_error.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const ISS_CSV: &str = "iss_report.csv";
pub const BOUND_CSV: &str = "bound_curve.csv";
pub const THETA_HISTORY_CSV: &str = "theta_history.csv";
pub const THETA_TRUE_CSV: &str = "theta_true.csv";
const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl ExperimentError {
    /// Process exit code: 1 for configuration problems, 2 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Stage { .. } => 2,
        }
    }
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError::Stage { stage, message: e.to_string() }
}

/// Formats a float losslessly.
pub fn fmt_f64(x: f64) -> String {
    // -0.0 and 0.0 print the same.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

/// Scalar results worth keeping next to the data files.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_certified: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_min_singular_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riccati_max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_true_max_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_true_max_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_norm_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_norm_max_scaled: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected_episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret_final_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret_loglog_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_error_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iss_max_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iss_pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_bar_realized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_dominates_regret: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_mean_abs_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_rms_optimal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub notes: Vec<String>,
    pub stages: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
    pub summary: Summary,
}

impl RunManifest {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks emitted files and stage timings for one output directory.
pub struct OutputDir {
    dir: PathBuf,
    manifest: RunManifest,
    quiet: bool,
}

impl OutputDir {
    pub fn create(dir: &Path, command: &str, cfg: &ExperimentConfig, quiet: bool) -> Result<Self, ExperimentError> {
        fs::create_dir_all(dir).map_err(stage_err("output"))?;
        let text = cfg.to_toml_string();
        let mut out = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256: sha256_hex(text.as_bytes()),
                seed: cfg.learner.seed,
                started: chrono::Utc::now().to_rfc3339(),
                finished: String::new(),
                partial: true,
                failed_stage: None,
                notes: Vec::new(),
                stages: Vec::new(),
                files: Vec::new(),
                summary: Summary::default(),
            },
            quiet,
        };
        out.write(CONFIG_COPY, text.as_bytes())?;
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn summary(&mut self) -> &mut Summary {
        &mut self.manifest.summary
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.manifest.notes.push(s.into());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), ExperimentError> {
        fs::write(self.dir.join(name), bytes).map_err(stage_err("output"))?;
        self.manifest.files.retain(|f| f.name != name);
        self.manifest.files.push(FileEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Runs one named stage, recording its wall time; a failure writes a
    /// partial manifest before returning.
    pub fn stage<T, F>(&mut self, name: &'static str, f: F) -> Result<T, ExperimentError>
    where
        F: FnOnce(&mut Self) -> Result<T, ExperimentError>,
    {
        if !self.quiet {
            eprintln!("[{name}]");
        }
        let t0 = Instant::now();
        let result = f(self);
        self.manifest.stages.push(StageTiming { name: name.to_string(), seconds: t0.elapsed().as_secs_f64() });
        if let Err(e) = &result {
            self.manifest.failed_stage = Some(name.to_string());
            let _ = self.write_manifest();
            if !self.quiet {
                eprintln!("{e}");
            }
        }
        result
    }

    fn write_manifest(&mut self) -> Result<(), ExperimentError> {
        self.manifest.finished = chrono::Utc::now().to_rfc3339();
        self.manifest.files.sort_by(|a, b| a.name.cmp(&b.name));
        let text = toml::to_string(&self.manifest).map_err(stage_err("manifest"))?;
        fs::write(self.dir.join(MANIFEST), text).map_err(stage_err("manifest"))
    }

    pub fn finish(mut self) -> Result<RunManifest, ExperimentError> {
        self.manifest.partial = false;
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

/// Options shared by every pipeline entry point.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub quiet: bool,
}

fn csv(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

pub fn regret_csv(rep: &RegretReport) -> String {
    let header: Vec<String> = [
        "episode",
        "v_learned",
        "v_learned_stderr",
        "v_opt",
        "regret",
        "regret_stderr",
        "regret_cum",
        "regret_cum_stderr",
        "regret_avg",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    csv(
        &header,
        rep.rows.iter().map(|r| {
            let mut v = vec![r.episode.to_string()];
            v.extend(
                [
                    r.v_learned,
                    r.v_learned_stderr,
                    r.v_opt,
                    r.regret,
                    r.regret_stderr,
                    r.regret_cum,
                    r.regret_cum_stderr,
                    r.regret_avg,
                ]
                .iter()
                .map(|&x| fmt_f64(x)),
            );
            v
        }),
    )
}

pub fn param_error_csv(errors: &[f64]) -> String {
    csv(
        &["episode".into(), "error".into()],
        errors.iter().enumerate().map(|(i, &e)| vec![(i + 1).to_string(), fmt_f64(e)]),
    )
}

pub fn iss_csv(rep: &IssReport) -> String {
    csv(
        &["episode", "t", "state_norm", "bound", "ratio"].map(String::from),
        rep.rows.iter().map(|r| {
            vec![r.episode.to_string(), r.t.to_string(), fmt_f64(r.state_norm), fmt_f64(r.bound), fmt_f64(r.ratio)]
        }),
    )
}

pub fn bound_csv(grid: &[usize], bound: &[f64]) -> String {
    csv(
        &["L".into(), "theoretical_bound".into()],
        grid.iter().zip(bound).map(|(l, b)| vec![l.to_string(), fmt_f64(*b)]),
    )
}

pub fn theta_history_csv(history: &History) -> String {
    let width = history.records.first().map_or(0, |r| r.theta.width());
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend(names("theta_", width));
    csv(
        &header,
        history.records.iter().flat_map(|rec| {
            (1..=rec.theta.horizon()).map(move |t| {
                let mut v = vec![rec.index.to_string(), t.to_string()];
                v.extend(rec.theta.get(t).iter().map(|&x| fmt_f64(x)));
                v
            })
        }),
    )
}

pub fn theta_true_csv(tt: &TrueTheta) -> String {
    let width = tt.theta.width();
    let mut header = vec!["t".to_string()];
    header.extend(names("theta_", width));
    header.extend(names("stderr_", width));
    csv(
        &header,
        (1..=tt.horizon()).map(|t| {
            let mut v = vec![t.to_string()];
            v.extend(tt.theta.get(t).iter().map(|&x| fmt_f64(x)));
            v.extend(tt.std_errors.get(t).iter().map(|&x| fmt_f64(x)));
            v
        }),
    )
}

/// Learned and optimal rollouts from the same initial states, driven by the
/// same environment noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub learned: Episode,
    pub optimal: Episode,
}

impl Comparison {
    /// `mean_t |x₁,learned − x₁,optimal|` and `RMS_t x₁,optimal` over `t = 0..=T`.
    pub fn tracking_stats(&self) -> (f64, f64) {
        let xl = self.learned.states();
        let xo = self.optimal.states();
        let k = xl.len() as f64;
        let gap = xl.iter().zip(&xo).map(|(a, b)| (a[0] - b[0]).abs()).sum::<f64>() / k;
        let rms = (xo.iter().map(|b| b[0] * b[0]).sum::<f64>() / k).sqrt();
        (gap, rms)
    }
}

pub fn comparison_rollout(
    inst: &Instance,
    sol: &RiccatiSolution,
    learned: &ThetaStack,
    truth: &ThetaStack,
) -> Result<Comparison, lsvi::LearnError> {
    let run = |theta: &ThetaStack| {
        let mut rng: StreamRng = rng::stream(inst.learner.seed, &[rng::tag::COMPARISON]);
        lsvi::run_episode(theta, sol, &inst.sys, &inst.cost, &inst.kern, &inst.comparison_x0, &inst.comparison_s0, &mut rng)
    };
    Ok(Comparison { learned: run(learned)?, optimal: run(truth)? })
}

pub fn trajectory_csv(cmp: &Comparison) -> String {
    let xl = cmp.learned.states();
    let xo = cmp.optimal.states();
    let sl = cmp.learned.exo_states();
    let n = xl[0].len();
    let p = sl[0].len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}_learned")));
    header.extend((1..=n).map(|i| format!("x{i}_optimal")));
    header.extend((1..=p).map(|i| format!("s{i}")));
    csv(
        &header,
        (0..xl.len()).map(|t| {
            let mut v = vec![t.to_string()];
            v.extend(xl[t].iter().map(|&x| fmt_f64(x)));
            v.extend(xo[t].iter().map(|&x| fmt_f64(x)));
            v.extend(sl[t].iter().map(|&x| fmt_f64(x)));
            v
        }),
    )
}

/// Least-squares slope of `log R(L)` against `log L` over `L ∈ [lo, hi]`.
pub fn loglog_slope(cumulative: &[f64], lo: usize, hi: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (lo.max(1)..=hi.min(cumulative.len()))
        .filter(|&l| cumulative[l - 1] > 0.0)
        .map(|l| ((l as f64).ln(), cumulative[l - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn envelope_note(c: &IssConstants) -> String {
    match c.mode {
        analysis::EnvelopeMode::Spectral => format!("envelope: spectral rate {} < 1 used as rho", c.spectral_rate),
        analysis::EnvelopeMode::FiniteHorizon => format!(
            "envelope: spectral rate {} >= 1; rho chosen on a grid to minimize alpha/(1-rho), certified on all windows",
            c.spectral_rate
        ),
    }
}

fn record_envelope(out: &mut OutputDir, sol: &RiccatiSolution, iss: &IssConstants) {
    let s = out.summary();
    s.alpha = Some(iss.alpha);
    s.rho = Some(iss.rho);
    s.spectral_rate = Some(iss.spectral_rate);
    s.envelope_mode = Some(format!("{:?}", iss.mode));
    s.envelope_certified = Some(iss.certified());
    s.transition_min_singular_value =
        analysis::transition_min_singular_values(sol).into_iter().reduce(f64::min);
    out.note(envelope_note(iss));
}

fn riccati_stage(out: &mut OutputDir, inst: &Instance) -> Result<(RiccatiSolution, IssConstants), ExperimentError> {
    out.stage("riccati", |out| {
        let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).map_err(stage_err("riccati"))?;
        let res = sol.riccati_residuals(&inst.sys, &inst.cost).into_iter().fold(0.0, f64::max);
        let iss = analysis::iss_constants(&sol);
        out.summary().riccati_max_residual = Some(res);
        record_envelope(out, &sol, &iss);
        Ok((sol, iss))
    })
}

fn oracle_stage(out: &mut OutputDir, cfg: &ExperimentConfig, inst: &Instance, sol: &RiccatiSolution, iss: &IssConstants) -> Result<TrueTheta, ExperimentError> {
    out.stage("oracle", |out| {
        let tt = oracle::true_theta_backward(&inst.kern, &inst.cost, sol, cfg.evaluation.mc_samples, inst.learner.seed)
            .map_err(stage_err("oracle"))?;
        out.write(THETA_TRUE_CSV, theta_true_csv(&tt).as_bytes())?;
        let fm = inst.kern.feature();
        let nb = oracle::theta_norm_bound(sol, &inst.cost, fm.d(), fm.delta_s(), iss.alpha, iss.rho);
        let s = out.summary();
        s.theta_true_max_norm = Some(tt.theta.max_norm());
        s.theta_true_max_stderr = Some(tt.max_error_norm());
        s.theta_norm_bound = Some(nb.c_theta * (fm.d() as f64).sqrt());
        Ok(tt)
    })
}

fn learn_stage(out: &mut OutputDir, inst: &Instance, sol: &RiccatiSolution, quiet: bool) -> Result<History, ExperimentError> {
    out.stage("learn", |out| {
        let history = lsvi::run_lsvi_with(&inst.learner, &inst.sys, &inst.cost, &inst.kern, sol, |l, total| {
            if !quiet && (l % 100 == 0 || l == total) {
                eprintln!("  episode {l}/{total}");
            }
        })
        .map_err(stage_err("learn"))?;
        out.write(THETA_HISTORY_CSV, theta_history_csv(&history).as_bytes())?;
        let visited: Vec<&Vector> =
            history.records.iter().flat_map(|r| r.episode.transitions.iter().map(|tr| &tr.s)).collect();
        let audit = envmodel::audit_feature_norm(inst.kern.feature(), visited);
        let s = out.summary();
        s.feature_norm_max_scaled = Some(audit.max_scaled_norm);
        s.projected_episodes = Some(history.records.iter().filter(|r| r.projected).count());
        if audit.violated {
            out.note(format!(
                "feature norm: sqrt(d)*|phi(s)| reaches {} on visited states (unit-norm condition not met)",
                audit.max_scaled_norm
            ));
        }
        Ok(history)
    })
}

fn trajectories(history: &History) -> Vec<(usize, Vec<Vector>)> {
    history.records.iter().map(|r| (r.index, r.episode.states())).collect()
}

fn realized_max_state(history: &History) -> f64 {
    history
        .records
        .iter()
        .flat_map(|r| r.episode.states())
        .map(|x| x.norm())
        .fold(0.0, f64::max)
}

fn iss_stage(out: &mut OutputDir, inst: &Instance, sol: &RiccatiSolution, iss: &IssConstants, history: &History) -> Result<IssReport, ExperimentError> {
    out.stage("iss", |out| {
        let fm = inst.kern.feature();
        let rep = analysis::iss_check(&trajectories(history), iss, &inst.sys, sol, inst.learner.r_theta, fm.delta_s(), fm.d())
            .map_err(stage_err("iss"))?;
        out.write(ISS_CSV, iss_csv(&rep).as_bytes())?;
        let s = out.summary();
        s.iss_max_ratio = Some(rep.max_ratio);
        s.iss_pass = Some(rep.pass());
        Ok(rep)
    })
}

#[allow(clippy::too_many_arguments)]
fn bound_stage(
    out: &mut OutputDir,
    cfg: &ExperimentConfig,
    inst: &Instance,
    sol: &RiccatiSolution,
    iss: &IssConstants,
    tt: &TrueTheta,
    history: Option<&History>,
) -> Result<Vec<f64>, ExperimentError> {
    out.stage("bound", |out| {
        let fm = inst.kern.feature();
        let lc = &inst.learner;
        let (gamma, gamma_stderr) = analysis::estimate_gamma(
            tt,
            sol,
            &inst.sys,
            &inst.cost,
            &inst.kern,
            &lc.x0,
            &lc.s0,
            cfg.evaluation.gamma_samples,
            lc.seed,
        )
        .map_err(stage_err("bound"))?;
        let x0_max_norm = match history {
            Some(h) => h.records.iter().map(|r| r.x0.norm()).fold(0.0, f64::max),
            None => (1..=lc.episodes)
                .map(|l| lsvi::episode_initial_states(lc, fm, l, lsvi::INITIAL_STATE_CAP).map(|(x, _)| x.norm()))
                .try_fold(0.0_f64, |m, r| r.map(|v| m.max(v)))
                .map_err(stage_err("bound"))?,
        };
        let inputs = BoundInputs {
            caps: NormCaps::from_solution(sol),
            b_norm: linalg::spectral_norm(inst.sys.b()),
            alpha: iss.alpha,
            rho: iss.rho,
            delta_s: fm.delta_s(),
            d: fm.d(),
            n: inst.sys.n(),
            x0_max_norm,
            gamma,
            gamma_stderr,
        };
        let realized = history.map(realized_max_state);
        let x_bar = match cfg.evaluation.x_bar {
            XBarSpec::Theoretical => None,
            XBarSpec::Realized => Some(realized.ok_or_else(|| ExperimentError::Stage {
                stage: "bound",
                message: "realized x_bar needs a learning run".into(),
            })?),
        };
        let consts = inputs.constants(lc.r_theta, x_bar);
        let grid: Vec<usize> = (1..=lc.episodes).collect();
        let bound = analysis::regret_bound_eval(&consts, lc.horizon, &grid, lc.lambda, cfg.evaluation.delta)
            .map_err(stage_err("bound"))?;
        out.write(BOUND_CSV, bound_csv(&grid, &bound).as_bytes())?;
        let s = out.summary();
        s.x_bar = Some(consts.x_bar);
        s.x_bar_realized = realized;
        s.sigma = Some(consts.sigma);
        s.delta_psi = Some(consts.delta_psi);
        s.delta_v = Some(consts.delta_v);
        s.gamma = Some(gamma);
        s.gamma_stderr = Some(gamma_stderr);
        s.beta = Some(consts.beta(lc.episodes, lc.lambda));
        Ok(bound)
    })
}

fn load_instance(cfg: &ExperimentConfig) -> Result<Instance, ExperimentError> {
    Ok(cfg.instance()?)
}

/// Full pipeline into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest, ExperimentError> {
    let inst = load_instance(cfg)?;
    let mut out = OutputDir::create(out_dir, "run", cfg, opts.quiet)?;
    let (sol, iss) = riccati_stage(&mut out, &inst)?;
    let history = learn_stage(&mut out, &inst, &sol, opts.quiet)?;
    let tt = oracle_stage(&mut out, cfg, &inst, &sol, &iss)?;
    let quiet = opts.quiet;
    let rep = out.stage("regret", |out| {
        let ev = &cfg.evaluation;
        let rep = oracle::regret_curve_with(&history, &tt, &inst.sys, &inst.kern, &inst.cost, &sol, ev.n_eval, inst.learner.seed, ev.crn, |l, total| {
            if !quiet && (l % 100 == 0 || l == total) {
                eprintln!("  evaluated {l}/{total}");
            }
        })
        .map_err(stage_err("regret"))?;
        out.write(REGRET_CSV, regret_csv(&rep).as_bytes())?;
        let last = rep.rows.last().expect("at least one episode");
        let s = out.summary();
        s.regret_final = Some(last.regret_cum);
        s.regret_final_stderr = Some(last.regret_cum_stderr);
        s.regret_loglog_slope = loglog_slope(&rep.cumulative(), 100, rep.rows.len());
        Ok(rep)
    })?;
    out.stage("param_error", |out| {
        let err = analysis::param_error_curve(history.records.iter().map(|r| &r.theta), &tt.theta)
            .map_err(stage_err("param_error"))?;
        out.write(PARAM_ERROR_CSV, param_error_csv(&err).as_bytes())?;
        out.summary().param_error_final = err.last().copied();
        Ok(())
    })?;
    out.stage("comparison", |out| {
        let last = &history.records.last().expect("at least one episode").theta;
        let cmp = comparison_rollout(&inst, &sol, last, &tt.theta).map_err(stage_err("comparison"))?;
        out.write(TRAJECTORY_CSV, trajectory_csv(&cmp).as_bytes())?;
        let (gap, rms) = cmp.tracking_stats();
        let s = out.summary();
        s.tracking_mean_abs_gap = Some(gap);
        s.tracking_rms_optimal = Some(rms);
        out.note(format!(
            "comparison rollout: final-episode weights vs true weights from x0 = {:?}, s0 = {:?}, sharing one environment noise stream",
            inst.comparison_x0.as_slice(),
            inst.comparison_s0.as_slice()
        ));
        Ok(())
    })?;
    iss_stage(&mut out, &inst, &sol, &iss, &history)?;
    let bound = bound_stage(&mut out, cfg, &inst, &sol, &iss, &tt, Some(&history))?;
    out.summary().bound_dominates_regret = Some(rep.rows.iter().zip(&bound).all(|(r, b)| *b >= r.regret_cum));
    if cfg.output.plots {
        out.stage("plots", |out| {
            let files = plot::render_plots(out.dir(), cfg.output.loglog).map_err(stage_err("plots"))?;
            for (name, svg) in files {
                out.write(&name, svg.as_bytes())?;
            }
            Ok(())
        })?;
    }
    out.finish()
}

/// True parameters only.
pub fn run_oracle(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest, ExperimentError> {
    let inst = load_instance(cfg)?;
    let mut out = OutputDir::create(out_dir, "oracle", cfg, opts.quiet)?;
    let (sol, iss) = riccati_stage(&mut out, &inst)?;
    oracle_stage(&mut out, cfg, &inst, &sol, &iss)?;
    out.finish()
}

/// Learning followed by the input-to-state check.
pub fn run_check_iss(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest, ExperimentError> {
    let inst = load_instance(cfg)?;
    let mut out = OutputDir::create(out_dir, "check-iss", cfg, opts.quiet)?;
    let (sol, iss) = riccati_stage(&mut out, &inst)?;
    let history = learn_stage(&mut out, &inst, &sol, opts.quiet)?;
    iss_stage(&mut out, &inst, &sol, &iss, &history)?;
    out.finish()
}

/// Regret-bound curve over `L = 1..=episodes`.
pub fn run_bound(cfg: &ExperimentConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest, ExperimentError> {
    let inst = load_instance(cfg)?;
    let mut out = OutputDir::create(out_dir, "bound", cfg, opts.quiet)?;
    let (sol, iss) = riccati_stage(&mut out, &inst)?;
    let tt = oracle_stage(&mut out, cfg, &inst, &sol, &iss)?;
    let history = match cfg.evaluation.x_bar {
        XBarSpec::Realized => Some(learn_stage(&mut out, &inst, &sol, opts.quiet)?),
        XBarSpec::Theoretical => None,
    };
    bound_stage(&mut out, cfg, &inst, &sol, &iss, &tt, history.as_ref())?;
    out.finish()
}

/// Renders the figure panels from CSVs already in `dir` and refreshes its
/// manifest inventory.
pub fn run_plots(dir: &Path, loglog: bool) -> Result<Vec<String>, ExperimentError> {
    let files = plot::render_plots(dir, loglog).map_err(stage_err("plots"))?;
    let mut names = Vec::new();
    for (name, svg) in &files {
        fs::write(dir.join(name), svg).map_err(stage_err("plots"))?;
        names.push(name.clone());
    }
    refresh_manifest(dir)?;
    Ok(names)
}

/// Re-inventories the files of `dir` into an existing manifest.
fn refresh_manifest(dir: &Path) -> Result<(), ExperimentError> {
    let path = dir.join(MANIFEST);
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(());
    };
    let mut doc: toml::Table = text.parse().map_err(stage_err("manifest"))?;
    let mut files = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(stage_err("manifest"))?.filter_map(Result::ok).collect();
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let name = e.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || !e.path().is_file() {
            continue;
        }
        let bytes = fs::read(e.path()).map_err(stage_err("manifest"))?;
        let mut t = toml::Table::new();
        t.insert("name".into(), name.into());
        t.insert("sha256".into(), sha256_hex(&bytes).into());
        t.insert("bytes".into(), (bytes.len() as i64).into());
        files.push(toml::Value::Table(t));
    }
    doc.insert("files".into(), toml::Value::Array(files));
    fs::write(&path, toml::to_string(&doc).map_err(stage_err("manifest"))?).map_err(stage_err("manifest"))
}
