use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diffformer::data::{save_cube, synth_cube, SynthSpec};
use diffformer::selftest;
use diffformer_cli::pipeline::{run_eval, run_map, run_train, threads, Subset};
use diffformer_cli::sweep::{run_sweep, sweep_csv, Axis};
use diffformer_cli::{CliError, RunConfig, Stage};

// The tool's allocator. The system one returns large buffers to the OS and
// page-faults them back in on every forward pass.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "diffformer",
    version,
    about = "Hyperspectral patch classification with differential attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides shared by `train` and `sweep`.
#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat JSON run config; every key is required. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut overrides = self.overrides.clone();
        let json = |p: &PathBuf| serde_json::to_string(p).expect("path serializes");
        if let Some(c) = &self.cube {
            overrides.push(format!("cube={}", json(c)));
        }
        if let Some(d) = &self.out_dir {
            overrides.push(format!("out_dir={}", json(d)));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(e) = self.epochs {
            overrides.push(format!("epochs={e}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    All,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic strip scene as an HSICUBE1 file.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 20)]
        bands: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a cube and report on its test split.
    Train(ConfigArgs),
    /// Score a checkpoint on a cube.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        subset: SubsetArg,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record zero wall time so reports are byte-identical across runs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Render a full-scene classification map as binary PPM.
    Map {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per value of one axis and collect the scores as CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// One of patch, layers, heads, attention, train_frac.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Run points concurrently, up to DIFFFORMER_THREADS at a time.
        #[arg(long)]
        parallel: bool,
        /// CSV destination; defaults to sweep.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient checks, attention invariants and metric oracles.
    Selftest {
        /// Corrupt the backward rule of this op to exercise the checks.
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            classes,
            width,
            height,
            bands,
            sigma,
            seed,
            out,
        } => {
            if classes < 2 {
                return Err(CliError::Usage(format!("--classes must be at least 2, got {classes}")));
            }
            let spec = SynthSpec {
                classes,
                width,
                height,
                bands,
                noise_sigma: sigma,
                seed,
            };
            let cube = synth_cube(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
            save_cube(&cube, &out).stage("write cube")?;
            println!(
                "W={} H={} K={} n_classes={}",
                cube.width(),
                cube.height(),
                cube.bands(),
                cube.n_classes()
            );
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let summary = run_train(&cfg, threads())?;
            print!("{}", summary.report.to_table(&summary.class_names));
            println!("best epoch {} -> {}", summary.best_epoch, summary.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            cube,
            subset,
            out,
            no_timing,
        } => {
            let subset = match subset {
                SubsetArg::All => Subset::All,
                SubsetArg::Test => Subset::Test,
            };
            let report = run_eval(&checkpoint, &cube, subset, !no_timing, threads())?;
            match out {
                Some(path) => {
                    fs::write(&path, report.to_json()).stage("write report")?;
                    print!("{}", report.to_table(&[]));
                }
                None => println!("{}", report.to_json()),
            }
        }
        Command::Map { checkpoint, cube, out } => {
            let classes = run_map(&checkpoint, &cube, &out, threads())?;
            println!("{} pixels -> {}", classes.len(), out.display());
        }
        Command::Sweep {
            config,
            axis,
            values,
            parallel,
            out,
        } => {
            let axis: Axis = axis.parse()?;
            let cfg = config.load()?;
            let workers = if parallel { threads() } else { 1 };
            let rows = run_sweep(&cfg, axis, &values, workers)?;
            let csv = sweep_csv(&rows);
            let path = out.unwrap_or_else(|| cfg.out_dir.join("sweep.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).stage("write sweep")?;
            }
            fs::write(&path, &csv).stage("write sweep")?;
            print!("{csv}");
        }
        Command::Selftest { inject_fault } => {
            let report = selftest::run(inject_fault.as_deref());
            print!("{}", report.to_text());
            if !report.passed() {
                let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
                return Err(CliError::Numeric {
                    stage: "selftest",
                    message: format!("failed suites: {}", failed.join(", ")),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
