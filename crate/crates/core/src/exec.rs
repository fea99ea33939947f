//! Data-parallel helpers. With the `parallel` feature the parallel mode runs
//! on rayon; without it every mode degrades to a plain sequential loop.
//! Results always come back in input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn map_indexed<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Runs `job` inside a pool of `workers` threads (ignored when
    /// sequential).
    pub fn with_workers<R: Send>(self, workers: usize, job: impl FnOnce() -> R + Send) -> R {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if workers > 0 => match rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
            {
                Ok(pool) => pool.install(job),
                Err(_) => job(),
            },
            _ => {
                let _ = workers;
                job()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            Exec::Parallel.map_indexed(5, |i| i + 1),
            vec![1, 2, 3, 4, 5]
        );
        assert_eq!(Exec::Parallel.with_workers(2, || 7), 7);
    }
}
