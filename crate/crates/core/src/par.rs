//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the node-wise loops run on the rayon
//! pool when [`Execution::Parallel`] is selected. Results are collected in
//! index order, so both modes produce bit-identical output.

use serde::{Deserialize, Serialize};

/// How node-wise loops are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// `(range).map(f).collect()`, in parallel when enabled.
pub fn map_range<T, F>(exec: Execution, range: std::ops::Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            range.into_par_iter().map(f).collect()
        }
        _ => range.map(f).collect(),
    }
}
