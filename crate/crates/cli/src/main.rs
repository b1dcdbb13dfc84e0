//! `taboo`: train populations, resume them, analyze and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taboo_core::env::{Condition, EnvConfig};
use taboo_core::experiment::{
    analyze, bench_env, exit_code, export_curves, resume, run_experiment, spec_bins, Control, ExperimentError,
    ExperimentOutcome, ExperimentSpec, Manifest, Mode, Preset, Resumed, SweepAxis,
};
use taboo_core::metrics::Metric;

#[derive(Parser)]
#[command(name = "taboo", version, about = "Taboo-foraging multi-agent training testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every cell of an experiment and write the analysis bundle.
    Run(RunArgs),
    /// Continue an experiment or a single run directory from its checkpoints.
    Resume {
        dir: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Recompute stats.json, report.txt and curves of a finished experiment.
    Analyze { dir: PathBuf },
    /// Write learning-curve CSVs (bin, mean, 99% CI half-width).
    ExportCurves {
        dir: PathBuf,
        /// Metric to export; repeat for several. Default: all.
        #[arg(long)]
        metric: Vec<Metric>,
        /// Destination directory. Default: <dir>/analysis/curves.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Measure single-threaded environment throughput with random actions.
    Bench {
        /// World to step; default is the full-size world.
        #[arg(long, default_value = "paper")]
        preset: Preset,
        #[arg(long, default_value_t = 2_000_000)]
        agent_steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also render every player's observation each step.
        #[arg(long)]
        render: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ExecArgs {
    /// Cells trained at the same time.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Stop each run at the first checkpoint at or after this many episodes.
    #[arg(long)]
    stop_after: Option<u64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting values; overrides the file's `preset` key. Default: desk.
    #[arg(long)]
    preset: Option<Preset>,
    /// Condition to train; repeat for several. Default: all three.
    #[arg(long)]
    condition: Vec<Condition>,
    /// Players per episode.
    #[arg(long)]
    players: Option<usize>,
    #[arg(long)]
    berry_types: Option<usize>,
    #[arg(long)]
    poison_delay: Option<u32>,
    /// Learners per population.
    #[arg(long)]
    population: Option<usize>,
    /// Episodes played per round (concurrent environments).
    #[arg(long)]
    envs: Option<usize>,
    #[arg(long)]
    total_episodes: Option<u64>,
    /// First population seed; populations use consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Populations per condition and level.
    #[arg(long)]
    populations: Option<usize>,
    #[arg(long)]
    sweep: Option<SweepAxis>,
    /// Comma-separated sweep levels.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<u32>,
    /// Concurrent actors and learners inside each run (not reproducible).
    #[arg(long)]
    threaded: bool,
    /// Write the event log of every n-th episode.
    #[arg(long)]
    event_every: Option<u64>,
    /// Dump PPM frames of this episode.
    #[arg(long)]
    frames_episode: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exec: ExecArgs,
}

impl RunArgs {
    fn spec(&self) -> Result<ExperimentSpec, ExperimentError> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut spec = ExperimentSpec::from_text(&text, self.preset)?;
        if !self.condition.is_empty() {
            spec.conditions = self.condition.clone();
        }
        let env = &mut spec.base.env;
        if let Some(v) = self.players {
            env.players_per_episode = v;
        }
        if let Some(v) = self.berry_types {
            env.num_berry_types = v;
        }
        if let Some(v) = self.poison_delay {
            env.poison_delay = v;
        }
        if let Some(v) = self.population {
            spec.base.population_size = v;
        }
        if let Some(v) = self.envs {
            spec.base.envs = v;
        }
        if let Some(v) = self.total_episodes {
            spec.base.total_episodes = v;
        }
        if self.seed.is_some() || self.populations.is_some() {
            let first = self.seed.unwrap_or(spec.seeds[0]);
            spec.set_seeds(first, self.populations.unwrap_or(spec.seeds.len()));
        }
        if let Some(axis) = self.sweep {
            spec.sweep = axis;
            spec.levels = axis.default_levels();
        }
        if !self.levels.is_empty() {
            spec.levels = self.levels.clone();
        }
        if self.threaded {
            spec.options.mode = Mode::Threaded;
        }
        if let Some(v) = self.event_every {
            spec.options.event_sample_every = v;
        }
        if self.frames_episode.is_some() {
            spec.options.frames_episode = self.frames_episode;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn control(exec: &ExecArgs) -> Control {
    let control = Control { stop_after: exec.stop_after, ..Default::default() };
    let stop = control.stop.clone();
    // first Ctrl-C stops at the next checkpoint; a second one kills
    let _ = ctrlc::set_handler(move || {
        if stop.is_set() {
            std::process::exit(130);
        }
        eprintln!("stopping at the next checkpoint (Ctrl-C again to abort)");
        stop.stop();
    });
    control
}

fn report_experiment(root: &Path, out: &ExperimentOutcome) -> i32 {
    let m = &out.manifest;
    let done = m.cells.iter().filter(|c| c.status == taboo_core::experiment::CellStatus::Complete).count();
    println!("{}: {done}/{} runs complete", root.display(), m.cells.len());
    if out.skipped > 0 {
        println!("{} runs were already complete", out.skipped);
    }
    for (dir, e) in &out.errors {
        eprintln!("error in {dir}: {e}");
    }
    if !out.errors.is_empty() {
        exit_code::RUNTIME
    } else if out.is_complete() {
        println!("analysis written to {}", root.join("analysis").display());
        exit_code::OK
    } else {
        println!("incomplete; continue with `taboo resume {}`", root.display());
        exit_code::INCOMPLETE
    }
}

fn main_inner(cli: Cli) -> Result<i32, ExperimentError> {
    match cli.command {
        Command::Run(args) => {
            let spec = args.spec()?;
            let control = control(&args.exec);
            let out = run_experiment(&spec, &args.out, args.exec.jobs, &control)?;
            Ok(report_experiment(&args.out, &out))
        }
        Command::Resume { dir, exec } => match resume(&dir, exec.jobs, &control(&exec))? {
            Resumed::Experiment(out) => Ok(report_experiment(&dir, &out)),
            Resumed::Run(o) if o.already_complete => {
                println!("{}: already complete ({} episodes); nothing to do", dir.display(), o.status.episodes_done);
                Ok(exit_code::OK)
            }
            Resumed::Run(o) => {
                println!("{}: {}/{} episodes", dir.display(), o.status.episodes_done, o.status.total_episodes);
                Ok(if o.status.complete { exit_code::OK } else { exit_code::INCOMPLETE })
            }
        },
        Command::Analyze { dir } => {
            let report = analyze(&dir)?;
            for l in &report.lines {
                println!("{l}");
            }
            Ok(exit_code::OK)
        }
        Command::ExportCurves { dir, metric, dest } => {
            let metrics = if metric.is_empty() { Metric::ALL.to_vec() } else { metric };
            let manifest = Manifest::read(&dir)?;
            let bins = spec_bins(&dir, &manifest)?;
            let dest = dest.unwrap_or_else(|| dir.join("analysis/curves"));
            for p in export_curves(&dir, &dest, &metrics, bins)? {
                println!("{}", p.display());
            }
            Ok(exit_code::OK)
        }
        Command::Bench { preset, agent_steps, seed, render, json } => {
            let env: EnvConfig = preset.run_config().env;
            let r = bench_env(&env, Condition::ImportantPlusSilly, agent_steps, seed, render)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            if json {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            } else {
                println!(
                    "{}: {} agent-steps in {:.3}s = {:.0} agent-steps/s ({} preset, {} players)",
                    r.name, r.agent_steps, r.seconds, r.agent_steps_per_sec, preset, env.players_per_episode
                );
            }
            Ok(exit_code::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match main_inner(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("taboo: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
