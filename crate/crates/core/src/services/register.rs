use std::any::Any;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Deserialize;
use tonic::codec::CompressionEncoding;
use tonic::{Request, Response, Status};

use super::{fault_aware, request_deadline, run_blocking};
use crate::endpoint::{AccessOrder, EndpointDirectory, PlatformEndpoint, Width};
use crate::hub::{HubContext, LogChannel, Plugin, PluginArgs, PluginError, ServiceRegistration};
use crate::proto::register_service_server::{RegisterService, RegisterServiceServer};
use crate::proto::{Ack, RegisterRequest, RegisterResponse};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RegisterConfig {
    /// Platform endpoints to serve; all of them when absent.
    endpoints: Option<Vec<String>>,
    access_order: AccessOrder,
}

struct Shared {
    ctx: HubContext,
    log: LogChannel,
    endpoints: EndpointDirectory,
    order: AccessOrder,
}

/// Serves `RegisterService` over the platform endpoints.
pub struct RegisterPlugin {
    shared: Arc<Shared>,
    reloads: AtomicU64,
}

impl RegisterPlugin {
    pub fn construct(args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> {
        let config: RegisterConfig =
            serde_json::from_value(args.config).map_err(|e| PluginError::new(format_args!("config: {e}")))?;
        let all = args.ctx.endpoints();
        let endpoints = match &config.endpoints {
            Some(labels) => {
                let chosen = all
                    .select(labels.iter().map(String::as_str))
                    .map_err(|missing| PluginError::new(format_args!("no endpoint `{missing}`")))?;
                if let Some(ep) = chosen.iter().find(|ep| ep.as_platform().is_none()) {
                    return Err(PluginError::new(format_args!("`{}` is not a register endpoint", ep.label())));
                }
                chosen
            }
            None => all
                .select(all.iter().filter(|ep| ep.as_platform().is_some()).map(|ep| ep.label()))
                .expect("labels come from the directory"),
        };
        args.logger.info(format_args!(
            "serving {:?} with {:?} access",
            endpoints.labels().collect::<Vec<_>>(),
            config.access_order
        ));
        let shared = Arc::new(Shared { ctx: args.ctx, log: args.logger, endpoints, order: config.access_order });
        Ok(Arc::new(Self { shared, reloads: AtomicU64::new(0) }))
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.shared.endpoints
    }

    /// Number of completed reload calls.
    pub fn reload_count(&self) -> u64 {
        self.reloads.load(Ordering::SeqCst)
    }
}

impl Plugin for RegisterPlugin {
    fn services(&self) -> Vec<ServiceRegistration> {
        let mut server = RegisterServiceServer::new(RegisterHandler { shared: self.shared.clone() });
        if self.shared.ctx.compression() {
            server = server.accept_compressed(CompressionEncoding::Gzip).send_compressed(CompressionEncoding::Gzip);
        }
        vec![ServiceRegistration::new(server)]
    }

    fn reload(&self) -> Result<Vec<u64>, PluginError> {
        self.reloads.fetch_add(1, Ordering::SeqCst);
        self.shared.endpoints.iter().map(|ep| ep.reload().map_err(PluginError::new)).collect()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

struct Access {
    endpoint: Arc<PlatformEndpoint>,
    address: u64,
    width: Width,
    count: usize,
    values: Vec<u64>,
}

#[derive(Clone)]
struct RegisterHandler {
    shared: Arc<Shared>,
}

impl RegisterHandler {
    fn parse(&self, request: RegisterRequest, writes: bool) -> Result<Access, Status> {
        let endpoint = self
            .shared
            .endpoints
            .platform(&request.endpoint)
            .cloned()
            .ok_or_else(|| Status::not_found(format!("no register endpoint `{}`", request.endpoint)))?;
        let width = Width::from_bits(request.width).map_err(|e| Status::invalid_argument(e.to_string()))?;
        if request.count == 0 {
            return Err(Status::invalid_argument("count must be at least 1"));
        }
        let count = request.count as usize;
        if writes && request.values.len() != count {
            return Err(Status::invalid_argument(format!(
                "{} values given for count {count}",
                request.values.len()
            )));
        }
        Ok(Access { endpoint, address: request.address, width, count, values: request.values })
    }

    async fn run<T, F>(&self, request: Request<RegisterRequest>, writes: bool, op: F) -> Result<T, Status>
    where
        T: Send + 'static,
        F: FnOnce(Access, AccessOrder) -> Result<T, crate::endpoint::EndpointError> + Send + 'static,
    {
        let deadline = request_deadline(&request);
        let access = self.parse(request.into_inner(), writes)?;
        let shared = self.shared.clone();
        run_blocking(deadline, move || op(access, shared.order).map_err(|e| fault_aware(&shared.ctx, &shared.log, e)))
            .await
    }
}

#[tonic::async_trait]
impl RegisterService for RegisterHandler {
    async fn read_registers(&self, request: Request<RegisterRequest>) -> Result<Response<RegisterResponse>, Status> {
        let values = self
            .run(request, false, |a, order| a.endpoint.read_array(a.address, a.width, a.count, order))
            .await?;
        Ok(Response::new(RegisterResponse { values }))
    }

    async fn write_registers(&self, request: Request<RegisterRequest>) -> Result<Response<Ack>, Status> {
        self.run(request, true, |a, order| a.endpoint.write_array(a.address, a.width, &a.values, order))
            .await?;
        Ok(Response::new(Ack {}))
    }

    async fn write_read_registers(&self, request: Request<RegisterRequest>) -> Result<Response<RegisterResponse>, Status> {
        let values = self
            .run(request, true, |a, order| a.endpoint.write_read_array(a.address, a.width, &a.values, order))
            .await?;
        Ok(Response::new(RegisterResponse { values }))
    }
}
