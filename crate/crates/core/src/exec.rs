//! Order-preserving map over independent work items.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    /// Rayon work-stealing pool; sequential when built without `parallel`.
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Runs `f` over `items`, returning results in input order regardless of mode.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

/// Caps the global worker pool. Must run before the first parallel map.
#[cfg(feature = "parallel")]
pub fn configure_workers(n: usize) -> Result<(), String> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

#[cfg(not(feature = "parallel"))]
pub fn configure_workers(_n: usize) -> Result<(), String> {
    Ok(())
}

impl std::str::FromStr for Execution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Execution::Parallel),
            "sequential" => Ok(Execution::Sequential),
            other => Err(format!("unknown execution mode `{other}`")),
        }
    }
}
