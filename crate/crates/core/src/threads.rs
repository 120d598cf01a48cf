//! Worker-thread configuration.

use crate::{Error, Result};

pub const THREADS_ENV: &str = "TRIVOL_THREADS";

/// Thread cap requested through `TRIVOL_THREADS`, if set.
pub fn requested_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Sizes the global rayon pool from `TRIVOL_THREADS`. Returns the number
/// of worker threads in use.
pub fn init_from_env() -> Result<usize> {
    if let Some(n) = requested_threads()? {
        // a pool built earlier in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
