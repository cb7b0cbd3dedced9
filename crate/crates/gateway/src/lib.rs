//! HTTP/JSON gateway, configuration and operator CLI around `fmgate-core`.

pub mod cli;
pub mod config;
pub mod http;
pub mod state;

pub use http::router;
pub use state::AppState;
