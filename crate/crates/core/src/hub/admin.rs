use std::sync::Arc;

use tonic::{Request, Response, Status};

use super::context::{Registry, ReloadError};
use crate::proto::admin_service_server::{AdminService, AdminServiceServer};
use crate::proto::{
    ListPluginsRequest, ListPluginsResponse, ListServicesRequest, ListServicesResponse, PluginInfo,
    ReloadPluginRequest, ReloadPluginResponse,
};
use crate::reliability::HealthStatus;

pub fn health_to_proto(status: HealthStatus) -> crate::proto::HealthStatus {
    match status {
        HealthStatus::Healthy => crate::proto::HealthStatus::Healthy,
        HealthStatus::Degraded => crate::proto::HealthStatus::Degraded,
        HealthStatus::Failed => crate::proto::HealthStatus::Failed,
    }
}

/// The daemon's own service: plugin listing, reload, service reflection.
#[derive(Debug, Clone)]
pub struct Admin {
    registry: Arc<Registry>,
    services: Arc<Vec<String>>,
}

impl Admin {
    pub fn new(registry: Arc<Registry>, services: Vec<String>) -> Self {
        Self { registry, services: Arc::new(services) }
    }

    pub fn into_server(self, compression: bool) -> AdminServiceServer<Self> {
        let server = AdminServiceServer::new(self);
        if compression {
            server
                .accept_compressed(tonic::codec::CompressionEncoding::Gzip)
                .send_compressed(tonic::codec::CompressionEncoding::Gzip)
        } else {
            server
        }
    }
}

#[tonic::async_trait]
impl AdminService for Admin {
    async fn list_plugins(&self, _: Request<ListPluginsRequest>) -> Result<Response<ListPluginsResponse>, Status> {
        let plugins = self
            .registry
            .handles()
            .into_iter()
            .map(|h| {
                let health = h.health();
                PluginInfo {
                    name: h.name.clone(),
                    health: health_to_proto(health.as_ref().map_or(HealthStatus::Healthy, |s| s.status)) as i32,
                    reason: health.and_then(|s| s.reason).unwrap_or_default(),
                    services: h.services.iter().map(|s| s.to_string()).collect(),
                }
            })
            .collect();
        Ok(Response::new(ListPluginsResponse { plugins }))
    }

    async fn reload_plugin(&self, request: Request<ReloadPluginRequest>) -> Result<Response<ReloadPluginResponse>, Status> {
        let name = request.into_inner().name;
        let registry = self.registry.clone();
        let result = tokio::task::spawn_blocking(move || registry.reload(&name))
            .await
            .map_err(|e| Status::internal(e.to_string()))?;
        match result {
            Ok(generations) => Ok(Response::new(ReloadPluginResponse { generations })),
            Err(e @ ReloadError::UnknownPlugin(_)) => Err(Status::not_found(e.to_string())),
            Err(e @ ReloadError::Failed { .. }) => Err(Status::unavailable(e.to_string())),
        }
    }

    async fn list_services(&self, _: Request<ListServicesRequest>) -> Result<Response<ListServicesResponse>, Status> {
        Ok(Response::new(ListServicesResponse { services: self.services.to_vec() }))
    }
}
