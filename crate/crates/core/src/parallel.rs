//! Fixed-size worker pools, cached per worker count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::{ThreadPool, ThreadPoolBuilder};

fn pools() -> &'static Mutex<HashMap<usize, Arc<ThreadPool>>> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    POOLS.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Runs `f` inside a pool with exactly `workers` threads (at least one).
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    F: FnOnce() -> R + Send,
    R: Send,
{
    let workers = workers.max(1);
    let pool = {
        let mut map = pools().lock().unwrap_or_else(|e| e.into_inner());
        map.entry(workers)
            .or_insert_with(|| {
                Arc::new(
                    ThreadPoolBuilder::new()
                        .num_threads(workers)
                        .thread_name(move |i| format!("wfp-fgs-{workers}-{i}"))
                        .build()
                        .expect("thread pool construction"),
                )
            })
            .clone()
    };
    pool.install(f)
}
