//! Experiment protocols, CSV output, plots and run configurations.

pub mod bias_variance;
pub mod config;
pub mod csv;
pub mod curves;
pub mod stats;
pub mod svg;

/// Installs a global worker pool. `GRADCRITIC_THREADS` wins over `requested`;
/// with neither, rayon picks.
pub fn init_threads(requested: Option<usize>) -> crate::Result<()> {
    let from_env = std::env::var("GRADCRITIC_THREADS")
        .ok()
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| crate::Error::Config(format!("GRADCRITIC_THREADS=`{v}` is not a count")))
        })
        .transpose()?;
    if let Some(n) = from_env.or(requested) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
