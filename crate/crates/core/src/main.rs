use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fa_lab::experiments::{self, ExperimentConfig, Suite};
use fa_lab::verify::default_threads;
use fa_lab::Error;

#[derive(Parser)]
#[command(name = "fa-lab", version, about = "Feedback-alignment training, sweeps and theory checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one network and write trajectory.csv
    Train(Common),
    /// Sweep widths and regularization, write sweep.csv
    Sweep(Common),
    /// Run verification checks, write verify_report.txt and verify_records.jsonl
    Verify {
        #[command(flatten)]
        common: Common,
        /// concentration, isometry, gram, dynamics, contraction, alignment or all
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Write the synthetic dataset to data.csv
    GenData(Common),
}

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Schema { .. } | Error::EmptyDataset(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, usize), Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let threads = common.threads.unwrap_or_else(default_threads);
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    Ok((cfg, threads))
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Train(common) => {
            let (cfg, _) = load(&common)?;
            let (_, s) = experiments::run_single(&cfg, &common.out)?;
            println!(
                "p={} steps={} final_err_norm={} final_cos_align={}",
                s.p, cfg.steps, s.final_err_norm, s.final_cos_align
            );
            Ok(0)
        }
        Cmd::Sweep(common) => {
            let (cfg, threads) = load(&common)?;
            let cells = experiments::run_sweep(&cfg, &common.out, threads)?;
            print!("{}", experiments::sweep_csv(&cells));
            Ok(0)
        }
        Cmd::Verify { common, suite } => {
            let suite: Suite = suite.parse()?;
            let (cfg, threads) = load(&common)?;
            let checks = experiments::run_verify(suite, &cfg, &common.out, threads)?;
            for c in &checks {
                println!("{}", experiments::report_line(c));
            }
            Ok(if checks.iter().all(|c| c.pass) { 0 } else { EXIT_VERIFY })
        }
        Cmd::GenData(common) => {
            let (cfg, _) = load(&common)?;
            let (path, data) = experiments::gen_data(&cfg, &common.out)?;
            let act = cfg.teacher_activation.unwrap_or(cfg.activation);
            println!(
                "wrote {} (n={}, d={}, teacher={}, seed={})",
                path.display(),
                data.n(),
                data.d(),
                act,
                cfg.seed
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
