use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info};
use nst_core::network::LossNetwork;
use nst_service::{serve, Service, ServiceConfig, DEFAULT_QUEUE_CAPACITY, DEFAULT_WORKERS};
use tokio::net::TcpListener;

/// Style-transfer job server.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Concurrent jobs.
    #[arg(long, default_value_t = DEFAULT_WORKERS)]
    workers: usize,
    /// Jobs waiting beyond this are refused with 429.
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
    #[arg(long, default_value = "nst-data")]
    data_dir: PathBuf,
    /// `tiny:SEED` or a path to an NSTW weight file.
    #[arg(long, default_value = "tiny:7")]
    weights: String,
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

async fn run(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    let network = LossNetwork::from_spec(&args.weights)?;
    let service = Service::open(ServiceConfig {
        data_dir: args.data_dir,
        workers: args.workers,
        queue_capacity: args.queue_capacity,
        network,
    })?;
    let listener = TcpListener::bind((args.host.as_str(), args.port)).await?;
    info!("listening on http://{}", listener.local_addr()?);
    serve(listener, service, async {
        let _ = tokio::signal::ctrl_c().await;
        info!("shutting down");
    })
    .await?;
    Ok(())
}
