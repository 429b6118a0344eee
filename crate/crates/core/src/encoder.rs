//! Soft-attention session encoder.
//!
//! For positions `i = 1..n` with node states `e_i` and last state `e_n`:
//! `α_i = σ(e_i W1 + e_n W2) q`, `g = Σ α_i e_i`, output `[e_n, g] W3`.
//! Scores are not normalized unless asked.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graphs::SessionGraph;
use crate::params::{uniform, weight_set};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

weight_set!(
    /// `q` is `d×1`, `w1` and `w2` are `d×d`, `w3` is `2d×d`.
    AttentionWeights / AttentionVars { q, w1, w2, w3 }
);

impl AttentionWeights {
    pub fn zeros(dim: usize) -> Self {
        AttentionWeights {
            q: Array2::zeros((dim, 1)),
            w1: Array2::zeros((dim, dim)),
            w2: Array2::zeros((dim, dim)),
            w3: Array2::zeros((2 * dim, dim)),
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
        self.w1.nrows()
    }
}

/// Maps sequence positions of a batch of sessions onto node rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionLayout {
    pub position_node: Rc<Vec<usize>>,
    pub position_session: Rc<Vec<usize>>,
    pub last_node: Rc<Vec<usize>>,
}

impl PositionLayout {
    /// Layout for graphs whose node rows start at `offsets[b]`.
    pub fn new(graphs: &[SessionGraph], offsets: &[usize]) -> Self {
        let mut position_node = Vec::new();
        let mut position_session = Vec::new();
        let mut last_node = Vec::with_capacity(graphs.len());
        for (b, (g, &off)) in graphs.iter().zip(offsets).enumerate() {
            for &a in &g.alias {
                position_node.push(off + a);
                position_session.push(b);
            }
            last_node.push(off + g.last_node());
        }
        PositionLayout {
            position_node: Rc::new(position_node),
            position_session: Rc::new(position_session),
            last_node: Rc::new(last_node),
        }
    }

    pub fn single(alias: &[usize]) -> Self {
        PositionLayout {
            position_node: Rc::new(alias.to_vec()),
            position_session: Rc::new(vec![0; alias.len()]),
            last_node: Rc::new(vec![*alias.last().expect("non-empty session")]),
        }
    }

    pub fn sessions(&self) -> usize {
        self.last_node.len()
    }
}

/// Session embeddings (`B×d`) from node states via soft attention.
pub fn encode(
    tape: &mut Tape,
    nodes: Var,
    layout: &PositionLayout,
    att: &AttentionVars,
    normalize: bool,
) -> Var {
    let pos = tape.gather_rows(nodes, layout.position_node.clone());
    let last = tape.gather_rows(nodes, layout.last_node.clone());
    let last_proj = tape.matmul(last, att.w2);
    let last_per_pos = tape.gather_rows(last_proj, layout.position_session.clone());
    let pos_proj = tape.matmul(pos, att.w1);
    let pre = tape.add(pos_proj, last_per_pos);
    let act = tape.sigmoid(pre);
    let mut alpha = tape.matmul(act, att.q);
    if normalize {
        alpha = tape.segment_softmax(alpha, layout.position_session.clone());
    }
    let weighted = tape.mul_col(pos, alpha);
    let global = tape.scatter_add_rows(weighted, layout.position_session.clone(), layout.sessions());
    let both = tape.concat_cols(&[last, global]);
    tape.matmul(both, att.w3)
}

/// Per-factor encodings concatenated in factor order, `B×(K·d_f)`.
pub fn encode_factors(
    tape: &mut Tape,
    factor_nodes: &[Var],
    layout: &PositionLayout,
    atts: &[AttentionVars],
    normalize: bool,
) -> Var {
    assert!(
        atts.len() == factor_nodes.len() || atts.len() == 1,
        "one attention set per factor, or one shared"
    );
    let parts: Vec<Var> = factor_nodes
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let att = if atts.len() == 1 { &atts[0] } else { &atts[k] };
            encode(tape, f, layout, att, normalize)
        })
        .collect();
    tape.concat_cols(&parts)
}

fn check(outputs: ArrayView2<f64>, alias: &[usize], att: &AttentionWeights) -> Result<()> {
    if alias.is_empty() {
        return Err(Error::Data("cannot encode an empty session".into()));
    }
    if outputs.ncols() != att.dim() {
        return Err(Error::Shape(format!(
            "node width {} but attention width {}",
            outputs.ncols(),
            att.dim()
        )));
    }
    if alias.iter().any(|&a| a >= outputs.nrows()) {
        return Err(Error::Shape("alias points past the node rows".into()));
    }
    Ok(())
}

/// Item-level session embedding of one session; `alias[i]` is the node row
/// of position `i`.
pub fn encode_item_level(
    outputs: ArrayView2<f64>,
    alias: &[usize],
    att: &AttentionWeights,
    normalize: bool,
) -> Result<Array1<f64>> {
    check(outputs, alias, att)?;
    let mut tape = Tape::new();
    let x = tape.constant(outputs.to_owned());
    let vars = att.bind(&mut tape);
    let e = encode(&mut tape, x, &PositionLayout::single(alias), &vars, normalize);
    Ok(tape.value(e).row(0).to_owned())
}

/// Factor-level session embedding `[e¹, …, e^K]` of one session.
pub fn encode_factor_level(
    factor_outputs: &[Array2<f64>],
    alias: &[usize],
    atts: &[AttentionWeights],
    normalize: bool,
) -> Result<Array1<f64>> {
    if atts.len() != factor_outputs.len() && atts.len() != 1 {
        return Err(Error::Shape(format!(
            "{} attention sets for {} factors",
            atts.len(),
            factor_outputs.len()
        )));
    }
    for (k, f) in factor_outputs.iter().enumerate() {
        check(f.view(), alias, &atts[k.min(atts.len() - 1)])?;
    }
    let mut tape = Tape::new();
    let xs: Vec<Var> = factor_outputs.iter().map(|f| tape.constant(f.clone())).collect();
    let vars: Vec<AttentionVars> = atts.iter().map(|a| a.bind(&mut tape)).collect();
    let e = encode_factors(&mut tape, &xs, &PositionLayout::single(alias), &vars, normalize);
    Ok(tape.value(e).row(0).to_owned())
}
