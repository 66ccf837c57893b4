//! Optimization, the synthetic task, evaluation and layer-attention statistics.

pub mod baseline;
pub mod data;
pub mod dropout;
pub mod optim;
pub mod stats;
pub mod trainer;

pub use data::{Dataset, SyntheticSample, Vocabulary, World};
pub use optim::{adam_step, lr_at, AdamState};
pub use trainer::{evaluate, train_loop, EvalReport, MetricRow, TrainOutcome};

use crate::error::{DcnError, Result};

/// Worker pool honoring `DCN_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("DCN_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| DcnError::config("DCN_THREADS", format!("not a thread count: {raw:?}")))?;
        if n == 0 {
            return Err(DcnError::config("DCN_THREADS", "must be positive"));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| DcnError::Input(format!("cannot start worker threads: {e}")))
}
