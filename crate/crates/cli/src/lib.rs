//! HTTP service and command line around `surgassist-core`.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod reference;
pub mod server;

pub use app::App;
pub use error::CliError;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
