//! Coordination server.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;

use maskfed_core::masking::{validate_modulus, GaussianSpec, PrimeModulus};
use maskfed_service::clock::SystemClock;
use maskfed_service::server::{CoordinationServer, FileStorage, MemoryStorage, ServerConfig, ServerHandler, Storage};

#[derive(Debug, Parser)]
#[command(about = "Coordination server for masked federated aggregation")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8000")]
    bind: SocketAddr,
    /// Directory for persisted accounts and projects.
    #[arg(long, default_value = "./server-data", conflicts_with = "memory")]
    storage: PathBuf,
    /// Keep everything in memory instead.
    #[arg(long)]
    memory: bool,
    /// Per-round timeout in seconds.
    #[arg(long, default_value_t = 300)]
    round_timeout: u64,
    /// Sync rejections tolerated per source and round.
    #[arg(long, default_value_t = 3)]
    sync_budget: u32,
    /// Default prime modulus for new projects.
    #[arg(long)]
    modulus: Option<i64>,
    /// Default Gaussian noise variance for new projects.
    #[arg(long)]
    noise_variance: Option<f64>,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut config = ServerConfig {
        round_timeout_ms: args.round_timeout * 1000,
        sync_retry_budget: args.sync_budget,
        ..ServerConfig::default()
    };
    if let Some(p) = args.modulus {
        let p = PrimeModulus::new(p)?;
        validate_modulus(p, 3)?;
        config.default_modulus = p;
    }
    if let Some(v) = args.noise_variance {
        config.default_noise = GaussianSpec::new(v)?;
    }
    let storage: Box<dyn Storage> = if args.memory {
        Box::new(MemoryStorage::new())
    } else {
        Box::new(FileStorage::open(&args.storage)?)
    };
    let server = Arc::new(CoordinationServer::with_parts(config, Arc::new(SystemClock), storage)?);

    let sweeper = Arc::clone(&server);
    std::thread::spawn(move || loop {
        std::thread::sleep(Duration::from_secs(1));
        sweeper.sweep_timeouts();
    });

    let http = maskfed_service::http::serve(Arc::new(ServerHandler::new(server)), args.bind)?;
    log::info!("server listening on {}", http.url());
    http.wait();
    Ok(())
}
