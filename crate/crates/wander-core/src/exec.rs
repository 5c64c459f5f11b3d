//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the default mode fans work out over rayon;
//! without it every helper runs on the calling thread.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(0);

/// Current execution mode.
pub fn mode() -> Mode {
    match MODE.load(Ordering::Relaxed) {
        1 => Mode::Sequential,
        2 => Mode::Parallel,
        _ => default_mode(),
    }
}

fn default_mode() -> Mode {
    if cfg!(feature = "parallel") {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Force a mode for the whole process. Parallel silently degrades to
/// sequential when the feature is off.
pub fn set_mode(m: Mode) {
    let v = match m {
        Mode::Sequential => 1,
        Mode::Parallel if cfg!(feature = "parallel") => 2,
        Mode::Parallel => 1,
    };
    MODE.store(v, Ordering::Relaxed);
}

/// Order-preserving map.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over an index range.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// In-place update of every element.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Run `f` on consecutive mutable chunks (with their starting offset) and
/// return the per-chunk results in order.
pub fn chunks_mut_map<T, U, F>(items: &mut [T], chunk: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut [T]) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return items.par_chunks_mut(chunk).enumerate().map(|(i, c)| f(i * chunk, c)).collect();
    }
    items.chunks_mut(chunk).enumerate().map(|(i, c)| f(i * chunk, c)).collect()
}

/// Worker count: `WANDER_THREADS` if set, else rayon's default.
pub fn init_threads_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("WANDER_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        if n <= 1 {
            set_mode(Mode::Sequential);
        }
    }
}

/// Maximum of `f` over the items; NaN propagates as +inf.
pub fn max_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let g = |x: &T| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(g).reduce(|| f64::NEG_INFINITY, f64::max);
    }
    items.iter().map(g).fold(f64::NEG_INFINITY, f64::max)
}

/// Minimum of `f` over the items; NaN propagates as -inf.
pub fn min_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    -max_by(items, |x| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    })
}
