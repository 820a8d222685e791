use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ising_poisson::experiment::{run, RunConfig};
use ising_poisson::MotifFile;

#[derive(Parser)]
#[command(name = "ising-poisson", version, about = "Motif counts in Ising models on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment grid and write CSV and JSON results.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory for the result files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and print it with defaults filled in.
    Validate { config: PathBuf },
    /// Print the statistics of a motif file.
    MotifInfo { file: PathBuf },
}

fn load(path: &Path) -> ising_poisson::Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let config = RunConfig::parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.load_motifs(&base)?;
    Ok((config, base))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, jobs, out } => {
            let (cfg, base) = match load(&config) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            match run(&cfg, &base, &out, jobs) {
                Ok(outcome) => {
                    let failed = outcome.rows.iter().filter(|r| r.error.is_some()).count();
                    println!(
                        "run {}: {} rows ({} failed) -> {}, {}",
                        outcome.run_id,
                        outcome.rows.len(),
                        failed,
                        outcome.csv_path.display(),
                        outcome.json_path.display()
                    );
                    for row in outcome.rows.iter().filter(|r| r.error.is_some()) {
                        eprintln!(
                            "cell n={} b={} motif={} target={}: {}",
                            row.n,
                            row.b,
                            row.motif,
                            row.target,
                            row.error.as_deref().unwrap_or_default()
                        );
                    }
                    if outcome.any_error() {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Validate { config } => match load(&config) {
            Ok((cfg, _)) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::MotifInfo { file } => match MotifFile::read(&file) {
            Ok(f) => {
                let m = &f.motif;
                let sig = m.signature();
                println!("d: {}", sig.dim);
                println!("rho: {}", sig.range);
                println!("p: {}", sig.norm);
                println!("r: {}", m.radius());
                println!("k: {}", m.k());
                println!("gamma: {}", m.perimeter());
                println!("clean: {}", m.is_clean());
                println!("hash: {}", m.hash_hex());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
