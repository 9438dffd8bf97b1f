//! Built-in plugins serving the endpoint layer over gRPC.

mod attr;
mod register;
pub mod stream;

use std::sync::Arc;
use std::time::Duration;

use tonic::{Request, Status};

pub use attr::AttrPlugin;
pub use register::RegisterPlugin;
pub use stream::StreamPlugin;

use crate::endpoint::EndpointError;
use crate::hub::{FnFactory, HubContext, LogChannel, PluginCatalog};
use crate::reliability::MonitorPlugin;

/// Handlers answer this long before the caller's deadline so that their
/// `DeadlineExceeded` wins over the transport's own cancellation.
pub const DEADLINE_MARGIN: Duration = Duration::from_millis(2);

pub(crate) fn register_builtins(catalog: &mut PluginCatalog) {
    catalog
        .insert("register", Arc::new(FnFactory(RegisterPlugin::construct)))
        .insert("attr", Arc::new(FnFactory(AttrPlugin::construct)))
        .insert("stream", Arc::new(FnFactory(StreamPlugin::construct)))
        .insert("monitor", Arc::new(FnFactory(MonitorPlugin::construct)));
}

pub fn endpoint_status(err: &EndpointError) -> Status {
    match err {
        EndpointError::OutOfRange { .. }
        | EndpointError::Misaligned { .. }
        | EndpointError::ValueTooWide { .. }
        | EndpointError::InvalidBitField { .. }
        | EndpointError::InvalidWidth(_)
        | EndpointError::EmptyAccess
        | EndpointError::NoSuchAttribute(_)
        | EndpointError::Rejected { .. } => Status::invalid_argument(err.to_string()),
        EndpointError::Faulted(_) | EndpointError::BackendUnavailable { .. } | EndpointError::Io { .. } => {
            Status::unavailable(err.to_string())
        }
        EndpointError::Decode { .. } => Status::internal(err.to_string()),
    }
}

/// Parses a `grpc-timeout` header value: up to 8 digits and a unit.
pub fn parse_grpc_timeout(value: &str) -> Option<Duration> {
    let (digits, unit) = value.split_at(value.len().checked_sub(1)?);
    if digits.is_empty() || digits.len() > 8 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u64 = digits.parse().ok()?;
    Some(match unit {
        "H" => Duration::from_secs(n * 3600),
        "M" => Duration::from_secs(n * 60),
        "S" => Duration::from_secs(n),
        "m" => Duration::from_millis(n),
        "u" => Duration::from_micros(n),
        "n" => Duration::from_nanos(n),
        _ => return None,
    })
}

pub fn request_deadline<T>(request: &Request<T>) -> Option<Duration> {
    request.metadata().get("grpc-timeout")?.to_str().ok().and_then(parse_grpc_timeout)
}

/// Runs blocking endpoint work off the async runtime, bounded by the
/// caller's deadline. Work that overruns keeps its endpoint lock until it
/// finishes; the caller gets `DeadlineExceeded` right away.
pub async fn run_blocking<T, F>(deadline: Option<Duration>, work: F) -> Result<T, Status>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, Status> + Send + 'static,
{
    let task = tokio::task::spawn_blocking(work);
    let joined = match deadline {
        None => task.await,
        Some(d) => {
            let budget = d.saturating_sub(DEADLINE_MARGIN);
            if budget.is_zero() {
                return Err(Status::deadline_exceeded("deadline too short"));
            }
            tokio::time::timeout(budget, task)
                .await
                .map_err(|_| Status::deadline_exceeded(format!("deadline of {d:?} exceeded")))?
        }
    };
    joined.map_err(|e| Status::internal(format!("handler failed: {e}")))?
}

/// Maps an endpoint error to a status, first recording device faults
/// against the plugin's health.
pub(crate) fn fault_aware(ctx: &HubContext, log: &LogChannel, err: EndpointError) -> Status {
    if err.is_device_fault() {
        match ctx.escalate(&err.to_string()) {
            Ok(state) => log.warn(format_args!("{err}; health now {}", state.status)),
            Err(e) => log.warn(format_args!("{err}; health not updated: {e}")),
        }
    }
    endpoint_status(&err)
}
