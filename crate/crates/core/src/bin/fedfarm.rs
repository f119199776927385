use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedfarm::engine::RunOptions;
use fedfarm::report;

#[derive(Parser)]
#[command(name = "fedfarm", version, about = "Federated-learning experiments over simulated rural links")]
struct Cli {
    /// Client-training threads (0 = one per core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.jsonl, summary.csv and manifest.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a dotted config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values, each parsed as JSON when possible.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config and print it with every default filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = RunOptions::workers(cli.workers);
    let result = match cli.command {
        Command::Run { config, out } => report::run_command(&config, &out, opts).map(|log| {
            if let Some(r) = log.last() {
                println!(
                    "{} steps, final loss {:.4}, accuracy {}, uplink {} B",
                    log.records.len(),
                    r.eval_loss,
                    r.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                    r.uplink_bytes
                );
            }
        }),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => report::sweep_command(&config, &param, &values, &out, opts).map(|rows| {
            for r in rows {
                println!("{}={}: loss {:.4}, uplink {} B", r.key, r.value, r.final_loss, r.uplink_bytes);
            }
        }),
        Command::Validate { config } => report::validate_command(&config).map(|v| {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(report::exit_code(&e) as u8)
        }
    }
}
