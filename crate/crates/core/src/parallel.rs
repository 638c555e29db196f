//! Worker-thread policy shared by the numeric kernels and the batch evaluators.
//!
//! `CAPSX_THREADS` caps the worker count; `CAPSX_DETERMINISTIC=1` forces serial
//! execution. Kernels are written so that results do not depend on the thread
//! count, but serial mode is the one the reproducibility guarantees are stated for.

use std::sync::OnceLock;

pub const THREADS_ENV: &str = "CAPSX_THREADS";
pub const DETERMINISTIC_ENV: &str = "CAPSX_DETERMINISTIC";

/// Number of worker threads numeric code may use.
pub fn worker_threads() -> usize {
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| resolve(std::env::var(THREADS_ENV).ok(), std::env::var(DETERMINISTIC_ENV).ok()))
}

pub fn deterministic() -> bool {
    matches!(std::env::var(DETERMINISTIC_ENV).as_deref(), Ok("1"))
}

fn resolve(threads: Option<String>, deterministic: Option<String>) -> usize {
    if deterministic.as_deref() == Some("1") {
        return 1;
    }
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match threads.and_then(|t| t.trim().parse::<usize>().ok()) {
        Some(0) | None => available,
        Some(n) => n,
    }
}
