//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper writes disjoint outputs or returns per-item results in index
//! order, so the caller reduces in a fixed order and results do not depend on
//! the number of worker threads.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}


thread_local! {
    static MODE: Cell<Option<ExecMode>> = const { Cell::new(None) };
}

pub fn current_mode() -> ExecMode {
    MODE.with(|m| m.get()).unwrap_or_default()
}

/// Runs `f` with the given execution mode on the calling thread.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = MODE.with(|m| m.replace(Some(mode)));
    let out = f();
    MODE.with(|m| m.set(prev));
    out
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match current_mode() {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Calls `f(i, chunk)` on consecutive `chunk_len`-sized chunks of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    match current_mode() {
        ExecMode::Sequential => data
            .chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let seq = with_mode(ExecMode::Sequential, || map(100, |i| i * i));
        let def = map(100, |i| i * i);
        assert_eq!(seq, def);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 10];
        for_each_chunk(&mut v, 3, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
    }
}
