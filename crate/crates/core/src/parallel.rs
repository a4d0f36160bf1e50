//! Worker-pool helpers. With the `parallel` feature the map runs on rayon;
//! without it, or with `workers == 1`, it runs on the calling thread.
//! Results are always returned in input order.

/// Maps `f` over `items`. `workers == 0` uses the ambient rayon pool,
/// `workers == 1` forces the sequential path, larger values build a
/// dedicated pool of that size.
pub fn map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers == 1 || items.len() < 2 {
            return items.iter().map(f).collect();
        }
        if workers == 0 {
            return items.par_iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("falling back to sequential map: {e}");
                items.iter().map(f).collect()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        items.iter().map(f).collect()
    }
}

/// True when the crate was built with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_for_any_worker_count() {
        let items: Vec<u64> = (0..200).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x).collect();
        for w in [0, 1, 3] {
            assert_eq!(map(&items, w, |x| x * x), expected);
        }
    }
}
