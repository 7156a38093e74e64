//! Order-preserving data-parallel helpers. With the `parallel` feature they
//! run on rayon; without it they are plain sequential loops. Either way the
//! output order equals the input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Like [`map`], limited to `workers` threads. `workers == 0` means the
/// global pool.
#[cfg(feature = "parallel")]
pub fn map_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    with_workers(workers, || map(items, f))
}

#[cfg(not(feature = "parallel"))]
pub fn map_bounded<T, R, F>(items: &[T], _workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map(items, f)
}

/// Runs `f` with every [`map`] call inside it limited to `workers` threads.
/// `workers == 0` means the global pool.
#[cfg(feature = "parallel")]
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not start a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R, F>(_workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

/// True when compiled with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..10_000).collect();
        let ys = map(&xs, |x| x * 3);
        assert!(ys.iter().enumerate().all(|(i, &y)| y == 3 * i as u64));
        assert_eq!(map_bounded(&xs, 2, |x| x + 1), map(&xs, |x| x + 1));
        assert_eq!(with_workers(1, || map(&xs, |x| x * 3)), ys);
    }
}
