//! File-in, file-out workflows over `groundaware-core`: anchor statistics,
//! filter audits, depth-prior rasters, post-optimization and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or malformed inputs; exit code 1.
    #[error("{0}")]
    Input(String),
    /// Failure while computing; exit code 2.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

/// Run `f` on a pool of `jobs` threads, or the global pool when unset.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Compute(format!("thread pool: {e}"))),
    }
}
