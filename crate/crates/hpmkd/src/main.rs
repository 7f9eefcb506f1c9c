//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hpmkd::experiment::{parse_ablation, Experiment};
use hpmkd::pipeline::{run_hpmkd, PipelineConfig, RunEnv};
use hpmkd::suite::{run_suite, Suite};

#[derive(Parser)]
#[command(
    name = "hpmkd",
    about = "Progressive multi-teacher knowledge distillation experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment file and write its report bundle.
    Run {
        /// Experiment file (flat key = value lines).
        file: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a protocol suite: baselines | ablation | robustness | interactions.
    Suite {
        name: String,
        /// Base experiment file; a desk-scale synthetic default is used
        /// when omitted.
        #[arg(long)]
        experiment: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Worker threads for parallel phases.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for the cross-experiment model cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Run-history file consumed by the adaptive configuration manager
    /// (defaults to hpmkd-history.txt in the working directory).
    #[arg(long)]
    history_file: Option<PathBuf>,
    /// Comma-separated components to disable:
    /// adapt_conf,prog_chain,multi_teach,meta_temp,parallel,memory.
    #[arg(long)]
    ablate: Option<String>,
    /// Master seed; every repetition and task derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repetitions (independent seeds).
    #[arg(long)]
    reps: Option<usize>,
    /// Report output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, exp: &mut Experiment) -> Result<(), String> {
        if let Some(w) = self.workers {
            exp.workers = w;
        }
        if let Some(s) = self.seed {
            exp.master_seed = s;
        }
        if let Some(r) = self.reps {
            exp.repetitions = r;
        }
        if let Some(list) = &self.ablate {
            exp.ablation = parse_ablation(list)?;
        }
        if let Some(out) = &self.output {
            exp.output_dir = Some(out.clone());
        }
        Ok(())
    }

    fn env(&self) -> RunEnv {
        RunEnv {
            cache_dir: self.cache_dir.clone(),
            history_path: Some(
                self.history_file
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("hpmkd-history.txt")),
            ),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { file, overrides } => run_command(&file, &overrides),
        Command::Suite {
            name,
            experiment,
            overrides,
        } => suite_command(&name, experiment.as_deref(), &overrides),
    }
}

fn run_command(file: &std::path::Path, overrides: &Overrides) -> ExitCode {
    let mut exp = match Experiment::from_file(file) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = overrides.apply(&mut exp) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let pcfg = PipelineConfig {
        workers: exp.workers,
        master_seed: exp.master_seed,
        ablation: exp.ablation.clone(),
    };
    let report = match run_hpmkd(&exp, &pcfg, &overrides.env()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    print!("{}", report.summary_text());
    let out_dir = exp
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&exp.name));
    if let Err(e) = report.write_bundle(&out_dir) {
        eprintln!("error: failed to write report bundle: {e}");
        return ExitCode::from(1);
    }
    println!("report bundle: {}", out_dir.display());
    if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn suite_command(
    name: &str,
    experiment: Option<&std::path::Path>,
    overrides: &Overrides,
) -> ExitCode {
    let suite: Suite = match name.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let mut base = match experiment {
        Some(path) => match Experiment::from_file(path) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => Experiment::synth_default(format!("suite-{suite}")),
    };
    if let Err(e) = overrides.apply(&mut base) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let report = match run_suite(suite, &base, &overrides.env()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    print!("{}", report.table_text());
    let out_dir = base
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{suite}", base.name)));
    if let Err(e) = report.write(&out_dir) {
        eprintln!("error: failed to write suite report: {e}");
        return ExitCode::from(1);
    }
    println!("suite report: {}", out_dir.display());
    if report.any_failures() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
