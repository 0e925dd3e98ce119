//! Worker-pool sizing.
//!
//! Internal parallelism is capped by the `DRIFTLAB_THREADS` environment
//! variable. Parallel loops in this crate always collect per-index results
//! in index order before reducing, so the value only affects speed.

use rayon::prelude::*;

pub const THREADS_ENV: &str = "DRIFTLAB_THREADS";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid {THREADS_ENV} value `{0}`: expected a positive integer")]
pub struct ThreadsError(pub String);

/// Parses a thread-count setting; `None` or an empty string means "use all cores".
pub fn parse_threads(value: Option<&str>) -> Result<usize, ThreadsError> {
    match value.map(str::trim) {
        None | Some("") => Ok(default_threads()),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(ThreadsError(v.to_string())),
        },
    }
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Thread count taken from the environment.
pub fn configured_threads() -> Result<usize, ThreadsError> {
    parse_threads(std::env::var(THREADS_ENV).ok().as_deref())
}

/// Runs `f` inside a dedicated pool with `threads` workers.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Evaluates `f(i)` for `i in 0..n` in parallel, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_thread_counts() {
        assert_eq!(parse_threads(Some("4")), Ok(4));
        assert_eq!(parse_threads(Some(" 1 ")), Ok(1));
        assert!(parse_threads(Some("0")).is_err());
        assert!(parse_threads(Some("many")).is_err());
        assert!(parse_threads(None).unwrap() >= 1);
    }

    #[test]
    fn ordered_results_independent_of_pool() {
        let a = with_threads(1, || map_indexed(100, |i| (i as f64).sqrt()));
        let b = with_threads(4, || map_indexed(100, |i| (i as f64).sqrt()));
        assert_eq!(a, b);
    }
}
