//! ServiceHub: a plugin-based gRPC control daemon for SoC-FPGA data
//! acquisition boards, with a simulated hardware backend.

pub mod clock;
pub mod endpoint;
pub mod hub;
pub mod reliability;
pub mod services;
pub mod sim;

pub mod proto {
    tonic::include_proto!("servicehub.v1");
}
