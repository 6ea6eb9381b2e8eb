//! End-to-end experiments on the synthetic mixture: data, diffusion model,
//! belonging samples, trajectory features and every attack built on them.

mod context;
mod runs;

pub use context::{sample_belonging, split_name, train_model, Context, ContextParts};
pub use runs::*;

/// Crate version plus the `git describe` of the build, embedded in reports.
pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("DIFFTRAJ_GIT_DESCRIBE"));
