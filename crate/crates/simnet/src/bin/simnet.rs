//! Command-line front end for single simulations.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maskfed_core::load_dataset_csv;
use maskfed_simnet::oracle::check_aggregates;
use maskfed_simnet::trace::write_jsonl;
use maskfed_simnet::{assert_privacy, simulate, PrivacyContext, SimConfig, TransportMode};

#[derive(Parser)]
#[command(name = "simnet", about = "Simulate a masked federated project in one process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one project end to end and print the result file.
    Run {
        #[arg(long, default_value = "variance")]
        algorithm: String,
        /// Must match the number of data files.
        #[arg(long)]
        clients: usize,
        /// Comma-separated CSV files, one per client.
        #[arg(long, value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_masking: bool,
        /// Write the message trace here as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Use real HTTP on 127.0.0.1 instead of in-memory delivery.
        #[arg(long)]
        http: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run { algorithm, clients, data, seed, no_masking, trace, http } = Cli::parse().command;
    if clients != data.len() {
        eprintln!("error: --clients is {clients} but {} data files were given", data.len());
        return ExitCode::from(2);
    }
    let mut partitions = Vec::with_capacity(data.len());
    for path in &data {
        match load_dataset_csv(path) {
            Ok(table) => partitions.push(table),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    let mut config = SimConfig::new(&algorithm, partitions, seed);
    config.masking = !no_masking;
    if http {
        config.transport = TransportMode::HttpLoopback;
    }
    let report = match simulate(config) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(path) = trace {
        let written = File::create(&path).and_then(|f| write_jsonl(&report.trace, BufWriter::new(f)));
        if let Err(e) = written {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    }
    print!("{}", String::from_utf8_lossy(&report.result));
    let mut ok = true;
    match check_aggregates(&report, 1e-6) {
        Ok(n) => eprintln!("aggregates: {n} checked, all match"),
        Err(problems) => {
            ok = false;
            for p in problems {
                eprintln!("aggregate mismatch in round {} for {}: {}", p.round, p.parameter, p.detail);
            }
        }
    }
    match assert_privacy(&report.trace, &PrivacyContext::from_report(&report)) {
        Ok(()) => eprintln!("privacy: no violations in {} events", report.trace.len()),
        Err(violations) => {
            ok = false;
            for v in violations {
                eprintln!("privacy violation: {v}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
