//! `optoctl`: parameter sweeps for the optomechanical measurement and
//! feedback protocols, written as CSV plus a JSON sidecar.

mod config;
mod experiments;
mod output;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::{Axis, Config, Experiment, Resolved, TrajectoryOverrides};
use experiments::Row;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Csv(PathBuf, csv::Error),
    #[error("all {0} points failed; first error: {1}")]
    AllFailed(usize, String),
    #[error(transparent)]
    Model(#[from] optoctl::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::AllFailed(..) | CliError::Model(_) => 3,
            CliError::Io(..) | CliError::Csv(..) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "optoctl", version, about = "Optomechanical measurement and feedback sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability, occupations and entanglement over (delta, g).
    PhaseDiagram(RunArgs),
    /// LQG feedback cooling.
    Cool(RunArgs),
    /// Time-continuous teleportation of squeezing onto the mechanics.
    Teleport(RunArgs),
    /// Time-continuous entanglement swapping between two oscillators.
    Swap(RunArgs),
    /// Conditional (or feedback) trajectories of the full model.
    Trajectory(RunArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file, `-` for stdin. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; the sidecar goes next to it as `<stem>.meta.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    /// Swept axis `name:min:max:count[:lin|log]`; repeat for more axes.
    /// Replaces the axes of the config file.
    #[arg(long = "axis", allow_hyphen_values = true)]
    axes: Vec<Axis>,

    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    g: Option<f64>,
    /// Cooperativity; sets g from the other parameters.
    #[arg(long = "C", allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    nbar: Option<f64>,
    /// Mechanical quality factor.
    #[arg(long = "Q", allow_hyphen_values = true)]
    q: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    /// Local oscillator angle.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
    /// Weight on mechanical energy in the LQG cost.
    #[arg(long, allow_hyphen_values = true)]
    hm: Option<f64>,
    /// Thermal occupation of the (pure) squeezed input.
    #[arg(long = "N", allow_hyphen_values = true)]
    n: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    upsilon: Option<f64>,
    /// Feedback gain.
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    optimize_phi: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    optimize_sigma: Option<bool>,
    /// Counter-rotating suppression factor used instead of the model value.
    #[arg(long, allow_hyphen_values = true)]
    epsilon_override: Option<f64>,

    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Close the LQG loop in trajectory runs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    feedback: Option<bool>,
}

impl RunArgs {
    fn as_config(&self) -> Config {
        let mut params = BTreeMap::new();
        let named = [
            ("kappa", self.kappa),
            ("delta", self.delta),
            ("g", self.g),
            ("C", self.c),
            ("nbar", self.nbar),
            ("Q", self.q),
            ("eta", self.eta),
            ("phi", self.phi),
            ("hm", self.hm),
            ("N", self.n),
            ("upsilon", self.upsilon),
            ("sigma", self.sigma),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                params.insert(k.to_string(), v);
            }
        }
        let trajectory = TrajectoryOverrides {
            t_final: self.t_final,
            dt: self.dt,
            paths: self.paths,
            record_every: self.record_every,
            feedback: self.feedback,
        };
        Config {
            experiment: None,
            params,
            axes: (!self.axes.is_empty()).then(|| self.axes.clone()),
            optimize_phi: self.optimize_phi,
            optimize_sigma: self.optimize_sigma,
            epsilon_override: self.epsilon_override,
            seed: self.seed,
            out: self.out.clone(),
            trajectory: (trajectory != TrajectoryOverrides::default()).then_some(trajectory),
        }
    }
}

fn load_config(path: &PathBuf) -> Result<Config, CliError> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::Io(path.clone(), e))?;
        s
    } else {
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    Config::from_json(&text)
}

fn run(experiment: Experiment, args: &RunArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let resolved = file.overlay(&args.as_config()).resolve(experiment)?;
    let jobs = match args.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let outcome = pool.install(|| match experiment {
        Experiment::Trajectory => run_trajectory(&resolved),
        _ => run_grid(&resolved),
    })?;
    let wall = clock.elapsed().as_secs_f64();

    let config = resolved.to_config();
    let meta = output::Sidecar {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: experiment.name(),
        config: &config,
        columns: &outcome.columns,
        rows: outcome.rows,
        failed_rows: outcome.failed.len(),
        started_unix_s: started,
        wall_clock_s: wall,
        jobs,
    };
    output::write_sidecar(&resolved.out, &meta)?;
    eprintln!(
        "{}: {} rows ({} failed) -> {} in {wall:.2} s",
        experiment,
        outcome.rows,
        outcome.failed.len(),
        resolved.out.display()
    );
    if outcome.rows > 0 && outcome.failed.len() == outcome.rows {
        return Err(CliError::AllFailed(outcome.rows, outcome.failed[0].clone()));
    }
    Ok(())
}

struct Outcome {
    columns: Vec<String>,
    rows: usize,
    /// Error messages of the failed rows.
    failed: Vec<String>,
}

fn run_grid(run: &Resolved) -> Result<Outcome, CliError> {
    // `collect` on an indexed parallel iterator keeps grid order.
    let rows: Vec<Row> = run
        .points()
        .par_iter()
        .map(|p| experiments::evaluate(run, p))
        .collect();
    let columns = experiments::header(run.experiment);
    output::write_rows(&run.out, &columns, &rows)?;
    let failed = rows
        .iter()
        .filter(|r| r.failed)
        .filter_map(|r| match r.cells.last() {
            Some(experiments::Cell::Text(s)) => Some(s.clone()),
            _ => None,
        })
        .collect();
    Ok(Outcome {
        columns,
        rows: rows.len(),
        failed,
    })
}

fn run_trajectory(run: &Resolved) -> Result<Outcome, CliError> {
    use optoctl::optomech::{full_model, lqg_weights};
    use optoctl::trajectories::{self, SimOptions};

    let point = run.points().remove(0);
    let p = experiments::physical(&point)?;
    let model = full_model(&p)?;
    let t = &run.trajectory;
    let opts = SimOptions::new(t.t_final, t.dt).record_every(t.record_every);
    let paths = if t.feedback {
        let hm = point.get("hm").copied().unwrap_or(optoctl::protocols::DEFAULT_HM);
        let (wp, wq) = lqg_weights(hm);
        let (filter, _, closed) = optoctl::solvers::lqg(&model, &wp, &wq)?;
        trajectories::simulate_closed_loop_ensemble(
            &model,
            &closed.controller,
            &filter.sigma,
            &opts,
            run.seed,
            t.paths,
        )?
    } else {
        trajectories::simulate_conditional_ensemble(&model, &opts, run.seed, t.paths)?
    };
    let mut buf = Vec::new();
    trajectories::write_csv(&paths, &mut buf).map_err(|e| CliError::Io(run.out.clone(), e))?;
    std::fs::write(&run.out, &buf).map_err(|e| CliError::Io(run.out.clone(), e))?;
    let text = String::from_utf8_lossy(&buf);
    let mut lines = text.lines();
    let columns = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    Ok(Outcome {
        columns,
        rows: lines.count(),
        failed: Vec::new(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::PhaseDiagram(a) => (Experiment::PhaseDiagram, a),
        Command::Cool(a) => (Experiment::Cool, a),
        Command::Teleport(a) => (Experiment::Teleport, a),
        Command::Swap(a) => (Experiment::Swap, a),
        Command::Trajectory(a) => (Experiment::Trajectory, a),
    };
    match run(experiment, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
