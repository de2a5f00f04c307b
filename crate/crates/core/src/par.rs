//! Execution strategy for the data-parallel loops.
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs on a rayon pool
//! sized to the requested thread count. Without it every strategy degrades to
//! the sequential path. Outputs are identical either way: callers only use
//! order-preserving maps and sort before persisting.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// `threads == 0` means rayon's default (one per core).
    Parallel { threads: usize },
    #[default]
    Auto,
}

impl Execution {
    pub fn with_threads(threads: usize) -> Self {
        match threads {
            1 => Execution::Sequential,
            n => Execution::Parallel { threads: n },
        }
    }

    fn threads(self) -> Option<usize> {
        match self {
            Execution::Sequential => None,
            Execution::Parallel { threads } => Some(threads),
            Execution::Auto => Some(0),
        }
    }

    /// Order-preserving map over `items`.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self.threads() {
            None => items.iter().map(f).collect(),
            Some(threads) => parallel_map(items, f, threads),
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, U, F>(items: &[T], f: F, threads: usize) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;

    if threads == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        // Pool creation only fails on OS resource exhaustion.
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, U, F>(items: &[T], f: F, _threads: usize) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
