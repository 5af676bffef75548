//! Execution-mode switch for the corpus-wide data-parallel loops.
//!
//! Everything that fans out over documents or queries goes through
//! [`map_collect`] / [`map_indexed`] so the same code runs on rayon (feature
//! `parallel`, on by default) or as a plain sequential loop. With the feature
//! disabled, [`ExecMode::Parallel`] degrades to the sequential path, so
//! `--no-default-features` builds stay fully functional.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to run a batch loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        ExecMode::Parallel
    }
}

/// Configure the global worker pool. `None` keeps the default (one worker per
/// core). A no-op on sequential builds or if a pool was already initialized.
pub fn configure_threads(jobs: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map_collect<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Map `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return (0..n).into_par_iter().map(&f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Counting semaphore bounding in-flight remote requests.
pub(crate) struct Semaphore {
    permits: std::sync::Mutex<usize>,
    cv: std::sync::Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: std::sync::Mutex::new(permits.max(1)),
            cv: std::sync::Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        SemaphoreGuard { sem: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.permits.lock().expect("semaphore poisoned");
        *n += 1;
        self.sem.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let items: Vec<usize> = (0..1000).collect();
        let seq = map_collect(ExecMode::Sequential, &items, |x| x * 2);
        let par = map_collect(ExecMode::Parallel, &items, |x| x * 2);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 14);
    }

    #[test]
    fn map_indexed_matches_range() {
        let out = map_indexed(ExecMode::Parallel, 64, |i| i + 1);
        assert_eq!(out, (1..=64).collect::<Vec<_>>());
    }

    #[test]
    fn semaphore_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let sem = Arc::clone(&sem);
            let active = Arc::clone(&active);
            let peak = Arc::clone(&peak);
            handles.push(std::thread::spawn(move || {
                let _g = sem.acquire();
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                active.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
