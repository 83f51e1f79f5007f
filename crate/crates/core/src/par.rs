//! Execution policy for the data-parallel kernels.
//!
//! Every kernel in this crate is written against [`Exec`]. With the `parallel`
//! feature the default policy fans work out over rayon; without it only the
//! sequential path exists. Both paths return identical results: maps preserve
//! input order and reductions use a fixed pairwise tree whose shape depends only
//! on the input length, never on the number of workers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Leaf width of the pairwise reduction tree.
const REDUCE_LEAF: usize = 32;

/// Parallel by default when the `parallel` feature is on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        self != Exec::Sequential
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }

    /// Counts the items satisfying `pred`.
    pub fn count<T, F>(self, items: &[T], pred: F) -> usize
    where
        T: Sync,
        F: Fn(&T) -> bool + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().filter(|x| pred(x)).count(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().filter(|x| pred(x)).count(),
        }
    }

    /// Runs two independent closures, concurrently under the parallel policy.
    pub fn join<A, B, RA, RB>(self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        match self {
            Exec::Sequential => (a(), b()),
            #[cfg(feature = "parallel")]
            Exec::Parallel => rayon::join(a, b),
        }
    }

    /// Pairwise tree reduction with a topology fixed by `items.len()`.
    ///
    /// Floating-point sums computed through this function are bit-identical for
    /// any worker count.
    pub fn tree_reduce<T, F>(self, items: &[T], identity: T, op: F) -> T
    where
        T: Clone + Send + Sync,
        F: Fn(&T, &T) -> T + Sync + Send,
    {
        if items.is_empty() {
            return identity;
        }
        reduce_node(self, items, &op)
    }
}

fn reduce_node<T, F>(exec: Exec, items: &[T], op: &F) -> T
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> T + Sync + Send,
{
    if items.len() <= REDUCE_LEAF {
        let mut acc = items[0].clone();
        for x in &items[1..] {
            acc = op(&acc, x);
        }
        return acc;
    }
    let (lo, hi) = items.split_at(items.len() / 2);
    let (a, b) = match exec {
        Exec::Sequential => (reduce_node(exec, lo, op), reduce_node(exec, hi, op)),
        #[cfg(feature = "parallel")]
        Exec::Parallel => rayon::join(|| reduce_node(exec, lo, op), || reduce_node(exec, hi, op)),
    };
    op(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policies() -> Vec<Exec> {
        #[cfg_attr(not(feature = "parallel"), allow(unused_mut))]
        let mut v = vec![Exec::Sequential];
        #[cfg(feature = "parallel")]
        v.push(Exec::Parallel);
        v
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u32> = (0..1000).collect();
        for exec in policies() {
            let ys = exec.map(&xs, |x| x * 2);
            assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tree_reduce_is_bit_identical_across_policies() {
        let xs: Vec<f64> = (0..10_007).map(|i| 1.0 / (1.0 + i as f64).sqrt()).collect();
        let sums: Vec<f64> = policies()
            .into_iter()
            .map(|e| e.tree_reduce(&xs, 0.0, |a, b| a + b))
            .collect();
        for s in &sums {
            assert_eq!(s.to_bits(), sums[0].to_bits());
        }
    }

    #[test]
    fn tree_reduce_empty_is_identity() {
        assert_eq!(
            Exec::Sequential.tree_reduce(&[] as &[f64], 7.0, |a, b| a + b),
            7.0
        );
    }
}
