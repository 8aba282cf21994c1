//! Noise compensator.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;

use maskfed_service::compensator::{Compensator, CompensatorConfig, CompensatorHandler};
use maskfed_service::HttpTransport;

#[derive(Debug, Parser)]
#[command(about = "Aggregates client noise shares and forwards the sum to the server")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8001")]
    bind: SocketAddr,
    /// Delivery retries after a failed forward to the server.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Seconds after which an incomplete round is discarded.
    #[arg(long, default_value_t = 300)]
    round_timeout: u64,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = CompensatorConfig {
        retry_budget: args.retries,
        retry_backoff: Duration::from_secs(1),
        round_timeout_ms: args.round_timeout * 1000,
    };
    let compensator = Arc::new(Compensator::new(config, Arc::new(HttpTransport::default())));

    let sweeper = Arc::clone(&compensator);
    std::thread::spawn(move || loop {
        std::thread::sleep(Duration::from_secs(1));
        sweeper.sweep_timeouts();
    });

    let http = maskfed_service::http::serve(Arc::new(CompensatorHandler::new(compensator)), args.bind)?;
    log::info!("compensator listening on {}", http.url());
    http.wait();
    Ok(())
}
