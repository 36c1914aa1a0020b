//! Serves fixture entities and synthetic metric data on a local port.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use dashtalk_server::mock::{fixture_summary, MockConfig, MockServer, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(version, about = "Mock monitoring API")]
struct Args {
    #[arg(long, env = "PORT", default_value_t = 9090)]
    port: u16,
    #[arg(long, default_value = "fixtures/monitoring")]
    fixtures: PathBuf,
    /// Bearer token callers must present.
    #[arg(long, env = "MONITORING_API_TOKEN")]
    token: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Artificial delay per request, in milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().init();
    let args = Args::parse();
    let mut config = MockConfig::new(&args.fixtures)
        .with_seed(args.seed)
        .with_latency(Duration::from_millis(args.latency_ms));
    if let Some(token) = args.token.filter(|t| !t.is_empty()) {
        config = config.with_token(token);
    }
    let server = MockServer::bind(&config, SocketAddr::from(([0, 0, 0, 0], args.port))).await?;
    tracing::info!(addr = %server.addr, entities = ?fixture_summary(&server.control.catalog()), "mock monitoring API up");
    tokio::select! {
        _ = server.wait() => {}
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}
