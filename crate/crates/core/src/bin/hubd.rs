use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use servicehub::hub::{load_config, Hub, HubError, HubOptions};
use tokio::signal::unix::{signal, SignalKind};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Trace,
    Debug,
    Info,
    Warn,
    Error,
}

impl LogLevel {
    fn directive(self) -> &'static str {
        match self {
            LogLevel::Trace => "trace",
            LogLevel::Debug => "debug",
            LogLevel::Info => "info",
            LogLevel::Warn => "warn",
            LogLevel::Error => "error",
        }
    }
}

/// Plugin-based gRPC control daemon.
#[derive(Debug, Parser)]
#[command(name = "hubd", version)]
struct Args {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory searched for plugin manifests, in order. The configuration
    /// file's directory is searched last.
    #[arg(long = "search-path", value_name = "DIR")]
    search_paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "info")]
    log_level: LogLevel,
}

fn main() -> ExitCode {
    let args = Args::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(args.log_level.directive()))
        .with_writer(std::io::stderr)
        .init();

    let config = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(&HubError::Config(e)),
    };
    let mut search_paths = args.search_paths;
    search_paths.push(config.base_dir.clone().unwrap_or_else(|| PathBuf::from(".")));

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let result = runtime.block_on(async move {
        let listen = config.server_listen;
        let hub = Hub::build(config, HubOptions { search_paths, ..HubOptions::default() })?;
        let listener = Hub::bind(listen).await?;
        hub.serve(listener, shutdown_signal()).await
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(err: &HubError) -> ExitCode {
    eprintln!("hubd: {err}");
    ExitCode::from(err.exit_code() as u8)
}

async fn shutdown_signal() {
    let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
    tracing::info!("shutdown requested");
}
