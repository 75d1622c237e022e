//! `uavplan`: plan UAV-1 trajectories and schedules, positioning observation
//! points, and simulate positioning error. Writes CSV files to `--out`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use uavplan::bcd::{run_bcd, BcdOptions, Initializer};
use uavplan::model::straight_line_trajectory;
use uavplan::output::{self, fmt_sig, read_pops_csv, read_trajectory_csv, Table};
use uavplan::pipeline::{
    optimize_pops, pops_artifacts, sim_artifacts, simulate, sp1_artifacts, with_max_energy, with_period, Artifact,
    SimOptions,
};
use uavplan::pso::{PopSet, PsoParams};
use uavplan::tdoa::NoiseModel;
use uavplan::{Error, Execution, Scenario, Trajectory};

#[derive(Parser, Debug)]
#[command(name = "uavplan", version, about = "Multi-UAV data collection and TDoA positioning planner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON file (defaults to the built-in 5-sensor reference).
    #[arg(long, global = true, conflicts_with = "mini")]
    scenario: Option<PathBuf>,
    /// Use the single-sensor positioning scenario.
    #[arg(long, global = true)]
    mini: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Energy budget(s) in kJ; a comma list sweeps (optimize-sp1 only).
    #[arg(long, global = true, value_delimiter = ',')]
    emax: Vec<f64>,
    /// Mission period(s) in seconds; a comma list sweeps (optimize-sp1 only).
    #[arg(long, global = true, value_delimiter = ',')]
    period: Vec<f64>,
    /// Range-difference noise standard deviation (m).
    #[arg(long, global = true)]
    noise: Option<f64>,
    /// BCD rounds.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    no_early_stop: bool,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Init {
    Straight,
    Greedy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize UAV-1 trajectory and transmission schedule.
    OptimizeSp1 {
        #[arg(long, value_enum, default_value_t = Init::Straight)]
        init: Init,
    },
    /// Choose observation points and auxiliary-UAV trajectories.
    OptimizePops {
        /// UAV-1 trajectory CSV from optimize-sp1 (otherwise it is computed;
        /// with --mini the straight line is used).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        population: usize,
        #[arg(long, default_value_t = 200)]
        pso_iterations: usize,
    },
    /// Positioning error against distance and noise variance.
    Simulate {
        /// Observation points CSV from optimize-pops (otherwise computed).
        #[arg(long)]
        pops: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Noise variances in m^2.
        #[arg(long, value_delimiter = ',')]
        variances: Vec<f64>,
        /// UAV-1 distances in m for the distance sweep.
        #[arg(long, value_delimiter = ',')]
        distances: Vec<f64>,
    },
}

/// Failure with an exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_infeasibility() {
            2
        } else {
            match e {
                Error::InvalidScenario(_)
                | Error::InvalidArgument(_)
                | Error::DimensionMismatch(_)
                | Error::DuplicateKnotSlot(_)
                | Error::Io(_)
                | Error::Json(_) => 1,
                _ => 3,
            }
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

impl Common {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn bcd_options(&self, init: Initializer) -> BcdOptions {
        let mut o = BcdOptions { init, execution: self.execution(), ..Default::default() };
        if let Some(n) = self.iterations {
            o.max_iterations = n;
        }
        o.early_stop = !self.no_early_stop;
        o
    }

    fn single(&self, values: &[f64], flag: &str) -> Result<Option<f64>, Failure> {
        match values {
            [] => Ok(None),
            [v] => Ok(Some(*v)),
            _ => Err(usage(format!("--{flag} takes a single value for this command"))),
        }
    }

    /// Scenario with every single-valued override applied.
    fn scenario(&self, allow_sweeps: bool) -> Result<Scenario, Failure> {
        let mut sc = match (&self.scenario, self.mini) {
            (Some(path), _) => Scenario::from_json_file(path)?,
            (None, true) => Scenario::mini(),
            (None, false) => Scenario::reference(),
        };
        if let Some(delta) = self.noise {
            sc.noise = NoiseModel { delta, ..sc.noise };
        }
        if !allow_sweeps {
            if let Some(e) = self.single(&self.emax, "emax")? {
                sc = with_max_energy(&sc, e * 1e3);
            }
            if let Some(t) = self.single(&self.period, "period")? {
                sc = with_period(&sc, t)?;
            }
        }
        Ok(sc.validate()?)
    }
}

fn write_all(dir: &Path, files: &[Artifact]) -> Result<(), Failure> {
    for (name, text) in files {
        output::write_file(dir, name, text)?;
        info!("wrote {}", dir.join(name).display());
    }
    Ok(())
}

fn optimize_sp1(c: &Common, init: Init) -> Result<(), Failure> {
    let base = c.scenario(true)?;
    let init = match init {
        Init::Straight => Initializer::StraightLine,
        Init::Greedy => Initializer::GreedyVisit,
    };
    let opts = c.bcd_options(init);
    let periods: Vec<Option<f64>> = if c.period.is_empty() { vec![None] } else { c.period.iter().map(|&t| Some(t)).collect() };
    let budgets: Vec<Option<f64>> = if c.emax.is_empty() { vec![None] } else { c.emax.iter().map(|&e| Some(e)).collect() };
    let sweep = periods.len() * budgets.len() > 1;
    let mut summary = Table::new(&["period_s", "emax_kj", "lambda", "min_bits", "avg_bits", "length_m", "energy_j"]);
    for &t in &periods {
        for &e in &budgets {
            let mut sc = base.clone();
            if let Some(t) = t {
                sc = with_period(&sc, t)?;
            }
            if let Some(e) = e {
                sc = with_max_energy(&sc, e * 1e3);
            }
            let sc = sc.validate()?;
            let report = run_bcd(&sc, &opts)?;
            let lam = report.final_lambda();
            if lam < 1.0 {
                warn!("lambda {lam:.4} < 1: the data requirement is not met");
            }
            let suffix = if sweep {
                let mut s = String::new();
                if periods.len() > 1 {
                    s += &format!("_t{}", fmt_sig(sc.grid.period));
                }
                if budgets.len() > 1 {
                    s += &format!("_e{}", fmt_sig(sc.fleet.max_energy / 1e3));
                }
                s
            } else {
                String::new()
            };
            write_all(&c.out, &sp1_artifacts(&report, &sc, &suffix))?;
            let bits = &report.uploaded_bits;
            summary.row([
                fmt_sig(sc.grid.period),
                fmt_sig(sc.fleet.max_energy / 1e3),
                fmt_sig(lam),
                fmt_sig(bits.iter().cloned().fold(f64::INFINITY, f64::min)),
                fmt_sig(bits.iter().sum::<f64>() / bits.len() as f64),
                fmt_sig(report.trajectory.length()),
                fmt_sig(report.energy),
            ]);
            println!(
                "T = {} s, E_max = {} kJ: lambda {:.6}, length {:.1} m, energy {:.1} kJ",
                sc.grid.period,
                sc.fleet.max_energy / 1e3,
                lam,
                report.trajectory.length(),
                report.energy / 1e3
            );
        }
    }
    if sweep {
        write_all(&c.out, &[("sweep_summary.csv".into(), summary.finish())])?;
    }
    Ok(())
}

fn main_trajectory(c: &Common, sc: &Scenario, path: Option<&Path>) -> Result<Trajectory, Failure> {
    if let Some(p) = path {
        let t = read_trajectory_csv(&std::fs::read_to_string(p).map_err(Error::from)?)?;
        if t.slot_count() != sc.grid.slot_count {
            return Err(usage(format!(
                "{} has {} slots but the scenario has {}",
                p.display(),
                t.slot_count(),
                sc.grid.slot_count
            )));
        }
        return Ok(t);
    }
    if c.mini {
        return Ok(straight_line_trajectory(&sc.fleet, &sc.grid)?);
    }
    Ok(run_bcd(sc, &c.bcd_options(Initializer::StraightLine))?.trajectory)
}

fn compute_pops(c: &Common, sc: &Scenario, params: &PsoParams, trajectory: Option<&Path>) -> Result<PopSet, Failure> {
    let main = main_trajectory(c, sc, trajectory)?;
    Ok(optimize_pops(&main, sc, params, c.seed, c.execution())?.pso.pops)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match cli.command {
        Command::OptimizeSp1 { init } => optimize_sp1(c, init),
        Command::OptimizePops { trajectory, population, pso_iterations } => {
            let sc = c.scenario(false)?;
            let params = PsoParams { population, iterations: pso_iterations, ..Default::default() };
            let main = main_trajectory(c, &sc, trajectory.as_deref())?;
            let run = optimize_pops(&main, &sc, &params, c.seed, c.execution())?;
            write_all(&c.out, &pops_artifacts(&run, &main, &sc))?;
            let p = run.pops();
            println!(
                "average worst-case CRLB {:.4} m^2 (mean RMS bound {:.3} m) over {} sensors",
                p.average_crlb,
                p.average_rms_error(),
                p.crlb.len()
            );
            Ok(())
        }
        Command::Simulate { pops, trials, variances, distances } => {
            let sc = c.scenario(false)?;
            let pop_set = match pops {
                Some(p) => read_pops_csv(&std::fs::read_to_string(&p).map_err(Error::from)?)?,
                None => compute_pops(c, &sc, &PsoParams::default(), None)?,
            };
            if pop_set.main_pops.len() != sc.sensor_count() {
                return Err(usage(format!(
                    "observation points cover {} sensors, scenario has {}",
                    pop_set.main_pops.len(),
                    sc.sensor_count()
                )));
            }
            let mut opts = SimOptions { trials, seed: c.seed, execution: c.execution(), ..Default::default() };
            if !variances.is_empty() {
                opts.variances = variances;
            }
            if !distances.is_empty() {
                opts.distances = distances;
            }
            let sim = simulate(&pop_set, &sc, &opts)?;
            write_all(&c.out, &sim_artifacts(&sim))?;
            println!("simulated {} distances and {} noise levels, {trials} trials each", opts.distances.len(), opts.variances.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
