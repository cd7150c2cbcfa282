use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dccycle::autograd::{DType, Real};
use dccycle::data::{make_toy_data, Direction, ToyParams};
use dccycle::experiments::{
    emit_figures, metrics_file, run_plan, ExperimentPlan, Preset, RunConfig, RESOLVED_FILE,
};
use dccycle::model::peek_dtype;
use dccycle::trainer::{evaluate, TrainState};
use dccycle::Error;

#[derive(Parser)]
#[command(name = "dccycle", version, about = "Dual-contrast cycle-consistent translation between two image domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration at one seed, then evaluate both directions.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Master seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint's generator on the paired test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// a2b (X to Y) or b2a (Y to X).
        #[arg(long)]
        direction: Direction,
        /// Defaults to `config.resolved` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; defaults to `metrics_<direction>.csv` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the four loss-ablation cells over the repeat seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate SSIM&CE with dual contrast at every beta of the grid.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write real, synthesized and error-map PNGs for every test pair.
    Figures {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic two-modality corpus as PNGs plus manifest.csv.
    MakeToyData {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.5)]
        gamma: f64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat TOML config file; keys not given keep the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base values when the file names no preset.
    #[arg(long, default_value = "toy")]
    preset: String,
    /// `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let preset: Preset = self.preset.parse()?;
        RunConfig::resolve(self.config.as_deref(), preset, &self.overrides).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(e.to_string()),
            other => other.into(),
        })
    }
}

fn load_config_near(checkpoint: &Path, explicit: Option<&PathBuf>) -> Result<RunConfig, Failure> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => checkpoint.parent().unwrap_or(Path::new(".")).join(RESOLVED_FILE),
    };
    RunConfig::from_file(&path, Preset::Toy).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(format!("{e} (pass --config)")),
        other => other.into(),
    })
}

fn print_summary(plan: &ExperimentPlan, outcome: &dccycle::experiments::PlanOutcome) -> Result<(), Failure> {
    for run in &outcome.runs {
        match &run.error {
            Some(e) => println!("{} seed {}: FAILED: {e}", run.cell, run.seed),
            None => {
                for (d, r) in &run.reports {
                    let s = r.summary()?;
                    println!(
                        "{} seed {} {d}: MAE {:.5} PSNR {:.3} SSIM {:.3}",
                        run.cell, run.seed, s.mae.mean, s.psnr.mean, s.ssim.mean
                    );
                }
            }
        }
    }
    println!("outputs in {}", plan.root().display());
    if outcome.failures() > 0 {
        return Err(Failure::Runtime(format!("{} run(s) failed", outcome.failures())));
    }
    Ok(())
}

fn run_plan_cmd(plan: ExperimentPlan, verbose: bool) -> Result<(), Failure> {
    let data = plan.base.load_dataset()?;
    let outcome = run_plan(&plan, &data, verbose)?;
    if plan.kind == dccycle::experiments::PlanKind::Ablation {
        for d in Direction::BOTH {
            print!("{}", outcome.table(d)?.to_markdown());
        }
    }
    print_summary(&plan, &outcome)
}

fn evaluate_cmd<T: Real>(checkpoint: &Path, cfg: &RunConfig, direction: Direction, out: &Path) -> Result<(), Failure> {
    let state = TrainState::<T>::load(checkpoint)?;
    let data = cfg.load_dataset()?;
    let split = data.split(state.config().seed, cfg.train_fraction)?;
    let report = evaluate(&state, &data, &split, direction, &state.config().loss.ssim)?;
    report.write_csv(out)?;
    let s = report.summary()?;
    println!(
        "{direction} n={} MAE {} PSNR {} SSIM {}",
        report.rows.len(),
        s.mae.display(5),
        s.psnr.display(3),
        s.ssim.display(3)
    );
    println!("report written to {}", out.display());
    Ok(())
}

fn figures_cmd<T: Real>(checkpoint: &Path, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let state = TrainState::<T>::load(checkpoint)?;
    let data = cfg.load_dataset()?;
    let split = data.split(state.config().seed, cfg.train_fraction)?;
    let files = emit_figures(&state.gen_g, &state.gen_f, &data, &split, out)?;
    println!("wrote {} images to {}", files.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed } => {
            let mut cfg = config.resolve()?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            run_plan_cmd(ExperimentPlan::single(&cfg), !config.quiet)
        }
        Command::Ablate { config } => {
            let cfg = config.resolve()?;
            run_plan_cmd(ExperimentPlan::ablation(&cfg), !config.quiet)
        }
        Command::Sweep { config } => {
            let cfg = config.resolve()?;
            run_plan_cmd(ExperimentPlan::beta_sweep(&cfg)?, !config.quiet)
        }
        Command::Evaluate {
            checkpoint,
            direction,
            config,
            out,
        } => {
            let cfg = load_config_near(&checkpoint, config.as_ref())?;
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().unwrap_or(Path::new(".")).join(metrics_file(direction))
            });
            match peek_dtype(&checkpoint)? {
                DType::F32 => evaluate_cmd::<f32>(&checkpoint, &cfg, direction, &out),
                DType::F64 => evaluate_cmd::<f64>(&checkpoint, &cfg, direction, &out),
            }
        }
        Command::Figures { checkpoint, config, out } => {
            let cfg = load_config_near(&checkpoint, config.as_ref())?;
            match peek_dtype(&checkpoint)? {
                DType::F32 => figures_cmd::<f32>(&checkpoint, &cfg, &out),
                DType::F64 => figures_cmd::<f64>(&checkpoint, &cfg, &out),
            }
        }
        Command::MakeToyData {
            n,
            size,
            out,
            seed,
            gamma,
        } => {
            if n < 1 {
                return Err(Failure::Usage("--n must be at least 1".into()));
            }
            let entries = make_toy_data(&out, &ToyParams { n, size, seed, gamma })?;
            println!("wrote {} images and manifest.csv to {}", entries.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
