//! Symmetric-normalized adjacency operator and the sparse-traversal counter.
//!
//! The operator is matrix-free over the graph's CSR arrays and realizes
//! `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree of `A + I`; the
//! identity term is the implicit self-loop, so graphs never store loops
//! themselves. Every application bumps a process-wide counter, which is how
//! tests prove that MLP training performs no sparse traversals at all.

use ndarray::{Array2, ArrayView2};

use crate::graph::Graph;

/// Per-thread count of sparse CSR traversals (adjacency applications,
/// topology-transition applications, neighborhood sweeps). Thread-local so
/// a training loop observes exactly its own traversals regardless of what
/// other threads do.
pub mod spmv_counter {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }

    pub fn value() -> u64 {
        COUNT.with(|c| c.get())
    }

    pub(crate) fn record() {
        COUNT.with(|c| c.set(c.get() + 1));
    }
}

pub(crate) use spmv_counter::record as record_traversal;

/// Matrix-free `D^{-1/2} (A + I) D^{-1/2}` over a borrowed graph.
#[derive(Debug)]
pub struct NormalizedAdjacency<'g> {
    graph: &'g Graph,
    inv_sqrt_deg: Vec<f64>,
}

impl<'g> NormalizedAdjacency<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        let inv_sqrt_deg = (0..graph.num_nodes())
            .map(|u| 1.0 / ((graph.degree(u) + 1) as f64).sqrt())
            .collect();
        NormalizedAdjacency {
            graph,
            inv_sqrt_deg,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Computes `Ã · x` for a dense row-per-node matrix.
    pub fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        spmv_counter::record();
        let n = self.graph.num_nodes();
        assert_eq!(x.nrows(), n, "row count must match node count");
        let c = &self.inv_sqrt_deg;
        let mut y = Array2::<f64>::zeros(x.raw_dim());
        for i in 0..n {
            let mut yi = y.row_mut(i);
            yi.scaled_add(c[i] * c[i], &x.row(i));
            for &j in self.graph.neighbors(i) {
                yi.scaled_add(c[i] * c[j], &x.row(j));
            }
        }
        y
    }

    /// Computes `Ãᵀ · x`; coincides with [`apply`](Self::apply) in value for
    /// undirected graphs but sums in scatter order.
    pub fn apply_transpose(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        spmv_counter::record();
        let n = self.graph.num_nodes();
        assert_eq!(x.nrows(), n, "row count must match node count");
        let c = &self.inv_sqrt_deg;
        let mut y = Array2::<f64>::zeros(x.raw_dim());
        for i in 0..n {
            y.row_mut(i).scaled_add(c[i] * c[i], &x.row(i));
            for &j in self.graph.neighbors(i) {
                y.row_mut(j).scaled_add(c[i] * c[j], &x.row(i));
            }
        }
        y
    }

    /// Dense materialization, for small-graph tests only.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.graph.num_nodes();
        let c = &self.inv_sqrt_deg;
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            a[[i, i]] = c[i] * c[i];
            for &j in self.graph.neighbors(i) {
                a[[i, j]] = c[i] * c[j];
            }
        }
        a
    }
}
