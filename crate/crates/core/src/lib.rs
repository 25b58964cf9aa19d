//! Differentiable simulation of amplified WDM links: SRS fiber spans and
//! learned EDFA gain models composed into a cascade, with gradient-based
//! optimization of the launch power profile.

pub mod autodiff;
pub mod cascade;
pub mod edfa;
pub mod error;
pub mod eval;
pub mod fiber;
pub mod grid;
pub mod linalg;
pub mod optimize;
pub mod profiles;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
