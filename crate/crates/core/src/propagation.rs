//! Gated graph propagation over the original, factor, and star views.
//!
//! Node states are rows. With aggregated messages
//! `c = [A_in X W_in + b_in, A_out X W_out + b_out]` (width `2d`), one layer
//! computes
//!
//! ```text
//! z  = σ(c W_z + x U_z)
//! r  = σ(c W_r + x U_r)
//! x~ = tanh(c W_h + (r ⊙ x) U_h)
//! x' = (1 - z) ⊙ x + z ⊙ x~
//! ```
//!
//! `W_z`, `W_r`, `W_h` are `2d × d` because they act on the concatenation.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{FactorAdjacency, SessionGraph, StarGraph};
use crate::params::{uniform, weight_set};
use crate::rng::Rng;
use crate::tape::{SparsePattern, Tape, Var};

weight_set!(
    /// One independent weight set per channel.
    GgnnWeights / GgnnVars {
        w_in,
        w_out,
        b_in,
        b_out,
        w_z,
        u_z,
        w_r,
        u_r,
        w_h,
        u_h,
    }
);

impl GgnnWeights {
    pub fn zeros(dim: usize) -> Self {
        let sq = || Array2::zeros((dim, dim));
        let wide = || Array2::zeros((2 * dim, dim));
        GgnnWeights {
            w_in: sq(),
            w_out: sq(),
            b_in: Array2::zeros((1, dim)),
            b_out: Array2::zeros((1, dim)),
            w_z: wide(),
            u_z: sq(),
            w_r: wide(),
            u_r: sq(),
            w_h: wide(),
            u_h: sq(),
        }
    }

    pub fn random(dim: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut w = Self::zeros(dim);
        for (_, t) in w.tensors_mut() {
            *t = uniform(rng, t.dim(), bound);
        }
        w
    }

    pub fn dim(&self) -> usize {
        self.w_in.nrows()
    }
}

/// In- and out-adjacency in sparse form; values may be differentiable.
#[derive(Debug, Clone)]
pub struct SparseAdjacency {
    pub pattern_in: Rc<SparsePattern>,
    pub values_in: Var,
    pub pattern_out: Rc<SparsePattern>,
    pub values_out: Var,
}

/// Nonzero entries of a dense matrix as a pattern plus an `nnz×1` column.
pub fn sparsify(a: &Array2<f64>) -> (SparsePattern, Array2<f64>) {
    let entries: Vec<((usize, usize), f64)> = a
        .indexed_iter()
        .filter(|(_, &w)| w != 0.0)
        .map(|(ij, &w)| (ij, w))
        .collect();
    let coords: Vec<(usize, usize)> = entries.iter().map(|(ij, _)| *ij).collect();
    let (pattern, order) = SparsePattern::from_entries(a.nrows(), a.ncols(), &coords);
    let values = Array2::from_shape_fn((order.len(), 1), |(e, _)| entries[order[e]].1);
    (pattern, values)
}

impl SparseAdjacency {
    /// Constant adjacency from dense in/out matrices.
    pub fn from_dense(tape: &mut Tape, adj_in: &Array2<f64>, adj_out: &Array2<f64>) -> Self {
        let (pi, vi) = sparsify(adj_in);
        let (po, vo) = sparsify(adj_out);
        SparseAdjacency {
            pattern_in: Rc::new(pi),
            values_in: tape.constant(vi),
            pattern_out: Rc::new(po),
            values_out: tape.constant(vo),
        }
    }
}

/// One gated propagation layer over all nodes.
pub fn ggnn_step(tape: &mut Tape, x: Var, adj: &SparseAdjacency, w: &GgnnVars) -> Var {
    let agg_in = tape.spmm(adj.values_in, adj.pattern_in.clone(), x);
    let agg_out = tape.spmm(adj.values_out, adj.pattern_out.clone(), x);
    let m_in = tape.matmul(agg_in, w.w_in);
    let m_in = tape.add_row(m_in, w.b_in);
    let m_out = tape.matmul(agg_out, w.w_out);
    let m_out = tape.add_row(m_out, w.b_out);
    let c = tape.concat_cols(&[m_in, m_out]);

    let gate = |tape: &mut Tape, wc: Var, ux: Var| {
        let a = tape.matmul(c, wc);
        let b = tape.matmul(x, ux);
        let s = tape.add(a, b);
        tape.sigmoid(s)
    };
    let z = gate(tape, w.w_z, w.u_z);
    let r = gate(tape, w.w_r, w.u_r);

    let ch = tape.matmul(c, w.w_h);
    let rx = tape.mul(r, x);
    let rh = tape.matmul(rx, w.u_h);
    let pre = tape.add(ch, rh);
    let cand = tape.tanh(pre);

    let keep = tape.one_minus(z);
    let old = tape.mul(keep, x);
    let new = tape.mul(z, cand);
    tape.add(old, new)
}

/// `layers` successive gated steps sharing one weight set.
pub fn propagate(tape: &mut Tape, x: Var, adj: &SparseAdjacency, w: &GgnnVars, layers: usize) -> Var {
    (0..layers).fold(x, |h, _| ggnn_step(tape, h, adj, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Original,
    Factor(usize),
    Star,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    pub channel: Channel,
    /// One row per real node, in graph node order.
    pub embeddings: Array2<f64>,
}

fn check_dims(x: ArrayView2<f64>, nodes: usize, w: &GgnnWeights) -> Result<()> {
    if x.nrows() != nodes {
        return Err(Error::Shape(format!(
            "{} embedding rows for {nodes} graph nodes",
            x.nrows()
        )));
    }
    if x.ncols() != w.dim() {
        return Err(Error::Shape(format!(
            "embedding width {} but channel width {}",
            x.ncols(),
            w.dim()
        )));
    }
    Ok(())
}

fn run_dense(
    x0: Array2<f64>,
    adj_in: &Array2<f64>,
    adj_out: &Array2<f64>,
    w: &GgnnWeights,
    layers: usize,
) -> Array2<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(x0);
    let adj = SparseAdjacency::from_dense(&mut tape, adj_in, adj_out);
    let vars = w.bind(&mut tape);
    let out = propagate(&mut tape, x, &adj, &vars, layers);
    tape.value(out).clone()
}

/// A single gated layer on dense inputs.
pub fn ggnn_step_dense(
    x: ArrayView2<f64>,
    adj_in: &Array2<f64>,
    adj_out: &Array2<f64>,
    w: &GgnnWeights,
) -> Result<Array2<f64>> {
    check_dims(x, adj_in.nrows(), w)?;
    if adj_in.dim() != adj_out.dim() || adj_in.nrows() != adj_in.ncols() {
        return Err(Error::Shape("adjacency must be square and matching".into()));
    }
    Ok(run_dense(x.to_owned(), adj_in, adj_out, w, 1))
}

pub fn run_original(
    graph: &SessionGraph,
    x0: ArrayView2<f64>,
    w: &GgnnWeights,
    layers: usize,
) -> Result<ChannelOutput> {
    check_dims(x0, graph.num_nodes(), w)?;
    Ok(ChannelOutput {
        channel: Channel::Original,
        embeddings: run_dense(x0.to_owned(), &graph.adj_in, &graph.adj_out, w, layers),
    })
}

/// Factor-channel in/out matrices: the cosine weights masked by the degree
/// normalization of the original graph.
pub fn factor_in_out(graph: &SessionGraph, factor: &FactorAdjacency) -> (Array2<f64>, Array2<f64>) {
    let adj_out = &factor.matrix * &graph.adj_out;
    let adj_in = &factor.matrix.t() * &graph.adj_in;
    (adj_in, adj_out)
}

pub fn run_factor(
    graph: &SessionGraph,
    factor: &FactorAdjacency,
    f0: ArrayView2<f64>,
    w: &GgnnWeights,
    layers: usize,
) -> Result<ChannelOutput> {
    check_dims(f0, graph.num_nodes(), w)?;
    let (adj_in, adj_out) = factor_in_out(graph, factor);
    Ok(ChannelOutput {
        channel: Channel::Factor(factor.k),
        embeddings: run_dense(f0.to_owned(), &adj_in, &adj_out, w, layers),
    })
}

/// Propagates over the star graph; the satellite row is dropped from the
/// output.
pub fn run_star(
    star: &StarGraph,
    x0: ArrayView2<f64>,
    satellite: &Array1<f64>,
    w: &GgnnWeights,
    layers: usize,
) -> Result<ChannelOutput> {
    let n = star.satellite_index;
    check_dims(x0, n, w)?;
    let mut x = Array2::zeros((n + 1, x0.ncols()));
    x.slice_mut(ndarray::s![..n, ..]).assign(&x0);
    x.row_mut(n).assign(satellite);
    let out = run_dense(x, &star.adj_in, &star.adj_out, w, layers);
    Ok(ChannelOutput {
        channel: Channel::Star,
        embeddings: out.slice(ndarray::s![..n, ..]).to_owned(),
    })
}
