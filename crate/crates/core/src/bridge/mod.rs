//! Out-of-process logit sources over a line-delimited JSON protocol.

mod check;
mod client;
pub mod protocol;
mod server;

pub use check::{serve_check, CheckItem, ServeCheckOptions, ServeCheckReport};
pub use client::{
    BridgeConnection, BridgeOptions, BridgeSource, Endpoint, DEFAULT_HANDSHAKE_TIMEOUT, DEFAULT_QUERY_TIMEOUT,
};
pub use protocol::{BridgeRequest, BridgeResponse, PROTOCOL_VERSION};
pub use server::{serve_connection, SceneSetSource, ServeStats};
