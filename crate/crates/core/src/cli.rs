//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, ExperimentConfig};
use crate::experiment::{self, ExperimentError, RunManifest, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "lqmdp", version, about = "LQ control with an exogenous linear Markov environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: learning, regret, diagnostics, CSVs, plots.
    Run(Common),
    /// Render SVG panels from the CSVs of a finished run.
    Plot {
        /// Output directory of a previous run.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config whose output directory to use when --out is absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Log-log axes on the cumulative-regret panel.
        #[arg(long)]
        loglog: bool,
    },
    /// True parameters only.
    Oracle(Common),
    /// Learning run followed by the trajectory bound check.
    CheckIss(Common),
    /// Theoretical regret-bound curve.
    Bound(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of episodes L; overrides the config.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
        let mut cfg = config::load_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.learner.seed = seed;
        }
        if let Some(l) = self.episodes {
            cfg.learner.episodes = l;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.instance()?;
        let dir = cfg.output.dir.clone();
        Ok((cfg, dir))
    }
}

fn report(m: &RunManifest, dir: &Path, quiet: bool) {
    if quiet {
        return;
    }
    let s = &m.summary;
    eprintln!("wrote {} files to {}", m.files.len(), dir.display());
    if let Some(r) = s.regret_final {
        eprintln!("final cumulative regret {r:.6e}");
    }
    if let Some(p) = s.iss_pass {
        eprintln!("trajectory bound holds everywhere: {p}");
    }
}

fn dispatch(cli: Cli) -> Result<(), ExperimentError> {
    let run = |c: &Common, f: fn(&ExperimentConfig, &Path, &RunOptions) -> Result<RunManifest, ExperimentError>| {
        let (cfg, dir) = c.load()?;
        let m = f(&cfg, &dir, &RunOptions { quiet: c.quiet })?;
        report(&m, &dir, c.quiet);
        Ok(())
    };
    match &cli.command {
        Command::Run(c) => run(c, experiment::run_experiment),
        Command::Oracle(c) => run(c, experiment::run_oracle),
        Command::CheckIss(c) => run(c, experiment::run_check_iss),
        Command::Bound(c) => run(c, experiment::run_bound),
        Command::Plot { out, config, loglog } => {
            let (dir, loglog) = match (out, config) {
                (Some(d), _) => (d.clone(), *loglog),
                (None, Some(p)) => {
                    let cfg = config::load_config(p)?;
                    (cfg.output.dir, *loglog || cfg.output.loglog)
                }
                (None, None) => {
                    return Err(ExperimentError::Stage { stage: "plots", message: "pass --out or --config".into() })
                }
            };
            for name in experiment::run_plots(&dir, loglog)? {
                println!("{}", dir.join(name).display());
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
