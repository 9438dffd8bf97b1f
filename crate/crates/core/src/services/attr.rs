use std::any::Any;
use std::sync::Arc;

use serde::Deserialize;
use tonic::codec::CompressionEncoding;
use tonic::{Request, Response, Status};

use super::{fault_aware, request_deadline, run_blocking};
use crate::endpoint::{EndpointDirectory, EndpointError, SysfsEndpoint};
use crate::hub::{HubContext, LogChannel, Plugin, PluginArgs, PluginError, ServiceRegistration};
use crate::proto::attr_service_server::{AttrService, AttrServiceServer};
use crate::proto::{Ack, AttrRequest, AttrResponse};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttrConfig {
    /// Driver-backed endpoints to serve; all of them when absent.
    endpoints: Option<Vec<String>>,
}

struct Shared {
    ctx: HubContext,
    log: LogChannel,
    endpoints: EndpointDirectory,
}

/// Serves `AttrService` over the driver-backed endpoints.
pub struct AttrPlugin {
    shared: Arc<Shared>,
}

impl AttrPlugin {
    pub fn construct(args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> {
        let config: AttrConfig =
            serde_json::from_value(args.config).map_err(|e| PluginError::new(format_args!("config: {e}")))?;
        let all = args.ctx.endpoints();
        let endpoints = match &config.endpoints {
            Some(labels) => {
                let chosen = all
                    .select(labels.iter().map(String::as_str))
                    .map_err(|missing| PluginError::new(format_args!("no endpoint `{missing}`")))?;
                if let Some(ep) = chosen.iter().find(|ep| ep.as_sysfs().is_none()) {
                    return Err(PluginError::new(format_args!("`{}` is not a driver endpoint", ep.label())));
                }
                chosen
            }
            None => all
                .select(all.iter().filter(|ep| ep.as_sysfs().is_some()).map(|ep| ep.label()))
                .expect("labels come from the directory"),
        };
        args.logger.info(format_args!("serving {:?}", endpoints.labels().collect::<Vec<_>>()));
        Ok(Arc::new(Self { shared: Arc::new(Shared { ctx: args.ctx, log: args.logger, endpoints }) }))
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.shared.endpoints
    }
}

impl Plugin for AttrPlugin {
    fn services(&self) -> Vec<ServiceRegistration> {
        let mut server = AttrServiceServer::new(AttrHandler { shared: self.shared.clone() });
        if self.shared.ctx.compression() {
            server = server.accept_compressed(CompressionEncoding::Gzip).send_compressed(CompressionEncoding::Gzip);
        }
        vec![ServiceRegistration::new(server)]
    }

    fn reload(&self) -> Result<Vec<u64>, PluginError> {
        self.shared.endpoints.iter().map(|ep| ep.reload().map_err(PluginError::new)).collect()
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Clone)]
struct AttrHandler {
    shared: Arc<Shared>,
}

impl AttrHandler {
    async fn run<T, F>(&self, request: Request<AttrRequest>, op: F) -> Result<T, Status>
    where
        T: Send + 'static,
        F: FnOnce(&SysfsEndpoint, &str, u64) -> Result<T, EndpointError> + Send + 'static,
    {
        let deadline = request_deadline(&request);
        let request = request.into_inner();
        let endpoint = self
            .shared
            .endpoints
            .sysfs(&request.endpoint)
            .cloned()
            .ok_or_else(|| Status::not_found(format!("no driver endpoint `{}`", request.endpoint)))?;
        let shared = self.shared.clone();
        run_blocking(deadline, move || {
            op(&endpoint, &request.attribute, request.value).map_err(|e| fault_aware(&shared.ctx, &shared.log, e))
        })
        .await
    }
}

#[tonic::async_trait]
impl AttrService for AttrHandler {
    async fn read_attr(&self, request: Request<AttrRequest>) -> Result<Response<AttrResponse>, Status> {
        let value = self.run(request, |ep, attr, _| ep.read(attr)).await?;
        Ok(Response::new(AttrResponse { value }))
    }

    async fn write_attr(&self, request: Request<AttrRequest>) -> Result<Response<Ack>, Status> {
        self.run(request, |ep, attr, value| ep.write(attr, value)).await?;
        Ok(Response::new(Ack {}))
    }

    async fn write_read_attr(&self, request: Request<AttrRequest>) -> Result<Response<AttrResponse>, Status> {
        let value = self.run(request, |ep, attr, value| ep.write_read(attr, value)).await?;
        Ok(Response::new(AttrResponse { value }))
    }
}
