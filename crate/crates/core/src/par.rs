//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the work runs on rayon's pool; without it, or
//! when [`Execution::Sequential`] is requested, it runs inline. Both paths
//! return results in input order, so callers stay deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree_and_keep_order() {
        let items: Vec<u64> = (0..257).collect();
        let f = |x: &u64| x.wrapping_mul(0x9E37_79B9) ^ 7;
        assert_eq!(
            map(Execution::Parallel, &items, f),
            map(Execution::Sequential, &items, f)
        );
        assert_eq!(
            map_range(Execution::Parallel, 10, |i| i * i),
            (0..10).map(|i| i * i).collect::<Vec<_>>()
        );
    }
}
