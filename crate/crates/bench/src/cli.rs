//! `trrb` command line. Exit codes: 0 success, 2 validation error, 3 numerical
//! failure, 64 usage error, 1 I/O trouble.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::compare::compare_methods;
use crate::config::{build_problem, BuiltProblem, DesiredSpec, ProblemConfig};
use crate::error::{BenchError, Result};
use crate::plot::emit_plot_data;
use crate::runs::{experiment1, experiment2, fom_reference, random_start, run_method, seed_list, Method, PhasePlan, RunRecord};

pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "trrb", version, about = "Trust-region reduced-basis optimization benchmarks")]
pub struct Cli {
    /// Override the config's mesh cells in x.
    #[arg(long, global = true)]
    pub mesh_nx: Option<usize>,
    /// Override the config's mesh cells in y.
    #[arg(long, global = true)]
    pub mesh_ny: Option<usize>,
    /// Use the 400×200 mesh (80601 unknowns) unless --mesh-nx/--mesh-ny say otherwise.
    #[arg(long, global = true)]
    pub fine: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, check and assemble a problem config.
    Validate {
        /// Path to a config, or `experiment1` / `experiment2` for the shipped ones.
        config: String,
    },
    /// Solve the state equation at one parameter and report Ĵ and its gradient.
    SolveFom {
        config: String,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One optimization run.
    Optimize {
        config: String,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 1e-5)]
        tau_foc: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random starts with Δ_μ-controlled tolerance phases; errors against the FOM optimum.
    Experiment1 {
        #[command(flatten)]
        common: ExperimentArgs,
        #[arg(long, default_value_t = 5e-4)]
        tau_foc: f64,
        /// Target for Δ_μ; `inf` runs a single phase.
        #[arg(long, default_value_t = 1e-4)]
        tau_mu: f64,
        /// τ_FOC of the baseline run that provides the reference optimum.
        #[arg(long, default_value_t = 1e-9)]
        reference_tau: f64,
    },
    /// Random starts against a target generated at a known parameter.
    Experiment2 {
        #[command(flatten)]
        common: ExperimentArgs,
        #[arg(long, default_value_t = 1e-5)]
        tau_foc: f64,
    },
    /// Summary tables (and optionally plot data) from record files.
    Compare {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Config path or shipped name; defaults to the experiment's own.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Skip the SVG/series output.
    #[arg(long)]
    pub no_plots: bool,
}

fn load_config(spec: &str) -> Result<ProblemConfig> {
    let path = Path::new(spec);
    match spec {
        "experiment1" if !path.exists() => Ok(ProblemConfig::experiment1()),
        "experiment2" if !path.exists() => Ok(ProblemConfig::experiment2()),
        _ => ProblemConfig::load(path),
    }
}

impl Cli {
    fn mesh(&self, cfg: ProblemConfig) -> ProblemConfig {
        let cfg = if self.fine { cfg.with_mesh(Some(400), Some(200)) } else { cfg };
        cfg.with_mesh(self.mesh_nx, self.mesh_ny)
    }

    fn problem(&self, spec: &str) -> Result<(ProblemConfig, BuiltProblem)> {
        let cfg = self.mesh(load_config(spec)?);
        let built = build_problem(&cfg)?;
        Ok((cfg, built))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Output(format!("json: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| BenchError::io(path, e))
}

/// Reads a file holding one record or an array of them.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let json = |source| BenchError::Json { path: path.display().to_string(), source };
    match text.trim_start().chars().next() {
        Some('[') => serde_json::from_str(&text).map_err(json),
        _ => serde_json::from_str::<RunRecord>(&text).map(|r| vec![r]).map_err(json),
    }
}

fn write_outputs(records: &[RunRecord], out: &Path, plots: bool) -> Result<()> {
    write_json(&out.join("records.json"), &records)?;
    let table = compare_methods(records)?;
    let csv_path = out.join("comparison.csv");
    std::fs::write(&csv_path, table.to_csv()?).map_err(|e| BenchError::io(&csv_path, e))?;
    let text = table.to_text();
    let txt_path = out.join("comparison.txt");
    std::fs::write(&txt_path, &text).map_err(|e| BenchError::io(&txt_path, e))?;
    print!("{text}");
    if plots {
        emit_plot_data(records, &out.join("plots"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FomSolution<'a> {
    mu: &'a [f64],
    j_h: f64,
    gradient: Vec<f64>,
    g_h: f64,
    dofs: usize,
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate { config } => {
            let (_, built) = cli.problem(config)?;
            let s = &built.summary;
            println!(
                "{}: ok ({} unknowns, {} parameters: {} walls, {} doors, {} heaters; {} windows)",
                s.name, s.dofs, s.parameters, s.walls, s.doors, s.heaters, s.windows
            );
        }
        Command::SolveFom { config, mu, out } => {
            let (_, built) = cli.problem(config)?;
            let fom = &built.fom;
            if mu.len() != fom.dim() {
                return Err(BenchError::Validation(format!("--mu needs {} values, got {}", fom.dim(), mu.len())));
            }
            if !fom.problem().bx.contains(mu) {
                return Err(BenchError::Validation("--mu lies outside the parameter box".into()));
            }
            let point = fom.evaluate(mu)?;
            let gradient = fom.gradient(&point);
            let sol = FomSolution {
                mu,
                j_h: fom.objective(mu, &point.u),
                g_h: fom.foc_measure(mu, &gradient),
                gradient,
                dofs: fom.num_dofs(),
            };
            println!("J = {:.12e}, FOC = {:.6e}", sol.j_h, sol.g_h);
            if let Some(p) = out {
                write_json(p, &sol)?;
            }
        }
        Command::Optimize { config, method, tau_foc, seed, out } => {
            let (cfg, built) = cli.problem(config)?;
            let reference = match &cfg.objective.desired_state {
                DesiredSpec::FomAtParameter { mu } => Some(mu.clone()),
                DesiredSpec::ConstantOnD { .. } => None,
            };
            let mu0 = random_start(&built.fom, *seed);
            let rec = run_method(
                &built.fom,
                *method,
                *seed,
                &mu0,
                &PhasePlan::single(*tau_foc),
                reference.as_deref(),
                &cfg.name,
            )?;
            println!(
                "{}: {:?} after {} iterations, FOC = {:.3e}, {} FOM solves, {:.3} s",
                method, rec.summary.termination, rec.summary.iterations, rec.summary.g_h, rec.summary.fom_solves,
                rec.summary.total_seconds
            );
            if let Some(p) = out {
                write_json(p, &rec)?;
            }
            if !rec.summary.converged {
                return Err(BenchError::Numerical(trrb_core::Error::Aborted(format!(
                    "run stopped with {:?}",
                    rec.summary.termination
                ))));
            }
        }
        Command::Experiment1 { common, tau_foc, tau_mu, reference_tau } => {
            let (cfg, built) = cli.problem(common.config.as_deref().unwrap_or("experiment1"))?;
            let reference = fom_reference(&built.fom, *reference_tau)?;
            let methods = common.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
            let records = experiment1(
                &built.fom,
                &methods,
                &seed_list(common.seeds),
                *tau_foc,
                *tau_mu,
                &reference,
                &cfg.name,
            )?;
            write_outputs(&records, &common.out, !common.no_plots)?;
        }
        Command::Experiment2 { common, tau_foc } => {
            let (cfg, built) = cli.problem(common.config.as_deref().unwrap_or("experiment2"))?;
            let mu_d = match &cfg.objective.desired_state {
                DesiredSpec::FomAtParameter { mu } => mu.clone(),
                DesiredSpec::ConstantOnD { .. } => cfg.objective.mu_d.clone(),
            };
            let methods = common.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
            let records = experiment2(&built.fom, &methods, &seed_list(common.seeds), *tau_foc, &mu_d, &cfg.name)?;
            write_outputs(&records, &common.out, !common.no_plots)?;
        }
        Command::Compare { records, out, plots } => {
            let mut all = Vec::new();
            for p in records {
                all.extend(read_records(p)?);
            }
            let table = compare_methods(&all)?;
            print!("{}", table.to_text());
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
                let p = dir.join("comparison.csv");
                std::fs::write(&p, table.to_csv()?).map_err(|e| BenchError::io(&p, e))?;
                let p = dir.join("comparison.txt");
                std::fs::write(&p, table.to_text()).map_err(|e| BenchError::io(&p, e))?;
                if *plots {
                    emit_plot_data(&all, &dir.join("plots"))?;
                }
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("trrb: {e}");
            e.exit_code()
        }
    }
}
