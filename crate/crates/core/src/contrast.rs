//! Item-level and factor-level contrastive objectives.
//!
//! Every anchor node `i` forms one positive pair with its counterpart in
//! the augmented view and `negatives_per_positive` negative pairs with
//! other nodes `j != i` of the same session. Each pair set is scored by a
//! discriminator and pushed through a binary cross-entropy.

use std::rc::Rc;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::disentangle::{project, ProjectionVars};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorForm {
    /// `H(a, b) = a · b`
    Dot,
    /// `H(a, b) = a W bᵀ` with a learned square `W` per embedding width.
    Bilinear,
}

/// Which view supplies the negative partner in the factor-level loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorNegatives {
    /// `(e^(o,k)_i, e^(o,k)_j)`
    WithinView,
    /// `(e^(o,k)_i, e^(f,k)_j)`
    CrossView,
}

/// Form of the negative-pair term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeTerm {
    /// `-ln(1 - σ(H))`, the usual binary cross-entropy.
    OneMinusSigmoid,
    /// `-ln σ(1 - H)`.
    SigmoidOfOneMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub alpha: f64,
    pub negatives_per_positive: usize,
    pub factor_negatives: FactorNegatives,
    pub negative_term: NegativeTerm,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            alpha: 0.5,
            negatives_per_positive: 1,
            factor_negatives: FactorNegatives::WithinView,
            negative_term: NegativeTerm::OneMinusSigmoid,
        }
    }
}

/// Tape handle for a discriminator at one embedding width.
#[derive(Debug, Clone, Copy)]
pub enum DiscVars {
    Dot,
    Bilinear(Var),
}

/// Agreement scores `H(a_r, b_r)` for each row pair, `m×1`.
pub fn agreement(tape: &mut Tape, disc: DiscVars, a: Var, b: Var) -> Var {
    match disc {
        DiscVars::Dot => tape.row_dot(a, b),
        DiscVars::Bilinear(w) => {
            let aw = tape.matmul(a, w);
            tape.row_dot(aw, b)
        }
    }
}

/// Anchor/negative row indices into a node matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    /// Rows that have a positive pair (one per valid node).
    pub anchors: Rc<Vec<usize>>,
    /// Anchor row of each negative pair.
    pub neg_anchor: Rc<Vec<usize>>,
    /// Partner row of each negative pair.
    pub neg_partner: Rc<Vec<usize>>,
}

impl PairIndex {
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Draws negatives uniformly among the other nodes of the same session.
/// `groups` lists `(first_row, node_count)` per session; sessions with a
/// single node contribute no pairs.
pub fn sample_negatives(groups: &[(usize, usize)], per_positive: usize, rng: &mut Rng) -> PairIndex {
    let mut anchors = Vec::new();
    let mut neg_anchor = Vec::new();
    let mut neg_partner = Vec::new();
    for &(start, n) in groups {
        if n < 2 {
            continue;
        }
        for i in 0..n {
            anchors.push(start + i);
            for _ in 0..per_positive {
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                neg_anchor.push(start + i);
                neg_partner.push(start + j);
            }
        }
    }
    PairIndex {
        anchors: Rc::new(anchors),
        neg_anchor: Rc::new(neg_anchor),
        neg_partner: Rc::new(neg_partner),
    }
}

/// Mean positive term plus mean negative term.
pub fn bce(tape: &mut Tape, pos: Var, neg: Var, term: NegativeTerm) -> Var {
    let lp = tape.log_sigmoid(pos);
    let lp = tape.mean(lp);
    let shifted = match term {
        NegativeTerm::OneMinusSigmoid => tape.scale(neg, -1.0),
        NegativeTerm::SigmoidOfOneMinus => tape.one_minus(neg),
    };
    let ln = tape.log_sigmoid(shifted);
    let ln = tape.mean(ln);
    let s = tape.add(lp, ln);
    tape.scale(s, -1.0)
}

fn pair_loss(
    tape: &mut Tape,
    anchor_view: Var,
    positive_view: Var,
    negative_view: Var,
    pairs: &PairIndex,
    disc: DiscVars,
    term: NegativeTerm,
) -> Var {
    let a = tape.gather_rows(anchor_view, pairs.anchors.clone());
    let p = tape.gather_rows(positive_view, pairs.anchors.clone());
    let pos = agreement(tape, disc, a, p);
    let na = tape.gather_rows(anchor_view, pairs.neg_anchor.clone());
    let np = tape.gather_rows(negative_view, pairs.neg_partner.clone());
    let neg = agreement(tape, disc, na, np);
    bce(tape, pos, neg, term)
}

/// Item-level loss between the original and the augmented view; negatives
/// come from the augmented view. `None` when no session has two nodes.
pub fn item_cl_loss(
    tape: &mut Tape,
    original: Var,
    augmented: Var,
    pairs: &PairIndex,
    disc: DiscVars,
    term: NegativeTerm,
) -> Option<Var> {
    if pairs.is_empty() {
        return None;
    }
    Some(pair_loss(tape, original, augmented, augmented, pairs, disc, term))
}

/// Factor-level loss summed over factors; `pairs[k]` are the pairs drawn
/// for factor `k`.
pub fn factor_cl_loss(
    tape: &mut Tape,
    original_factors: &[Var],
    augmented_factors: &[Var],
    pairs: &[PairIndex],
    disc: DiscVars,
    cfg: &ContrastConfig,
) -> Option<Var> {
    assert_eq!(original_factors.len(), augmented_factors.len(), "factor count");
    assert_eq!(original_factors.len(), pairs.len(), "one pair set per factor");
    let mut terms = Vec::new();
    for ((&o, &f), p) in original_factors.iter().zip(augmented_factors).zip(pairs) {
        if p.is_empty() {
            continue;
        }
        let neg_view = match cfg.factor_negatives {
            FactorNegatives::WithinView => o,
            FactorNegatives::CrossView => f,
        };
        terms.push(pair_loss(tape, o, f, neg_view, p, disc, cfg.negative_term));
    }
    if terms.is_empty() {
        return None;
    }
    let all = tape.concat_rows(&terms);
    Some(tape.sum(all))
}

/// Re-embeds original-channel outputs with the shared factor projection.
pub fn factor_view_of_original(tape: &mut Tape, original: Var, proj: &ProjectionVars) -> Vec<Var> {
    project(tape, original, proj)
}

/// `α · item + (1 − α) · factor`.
pub fn mix(item: f64, factor: f64, alpha: f64) -> f64 {
    alpha * item + (1.0 - alpha) * factor
}

pub fn mix_var(tape: &mut Tape, item: Option<Var>, factor: Option<Var>, alpha: f64) -> Var {
    let parts: Vec<Var> = [(item, alpha), (factor, 1.0 - alpha)]
        .into_iter()
        .filter_map(|(v, w)| v.filter(|_| w != 0.0).map(|v| tape.scale(v, w)))
        .collect();
    match parts.as_slice() {
        [] => tape.scalar(0.0),
        [one] => *one,
        [a, b] => tape.add(*a, *b),
        _ => unreachable!(),
    }
}

/// Value-level discriminator for single-session evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Discriminator {
    Dot,
    Bilinear(Array2<f64>),
}

impl Discriminator {
    pub fn bind(&self, tape: &mut Tape) -> DiscVars {
        match self {
            Discriminator::Dot => DiscVars::Dot,
            Discriminator::Bilinear(w) => DiscVars::Bilinear(tape.param(w.clone())),
        }
    }
}

fn check_views(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("views {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Item-level loss for one session's channel outputs. Returns `None` for
/// single-node sessions.
pub fn item_cl_loss_values(
    original: ArrayView2<f64>,
    augmented: ArrayView2<f64>,
    disc: &Discriminator,
    cfg: &ContrastConfig,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    check_views(original, augmented)?;
    let pairs = sample_negatives(&[(0, original.nrows())], cfg.negatives_per_positive, rng);
    let mut tape = Tape::new();
    let o = tape.constant(original.to_owned());
    let a = tape.constant(augmented.to_owned());
    let d = disc.bind(&mut tape);
    Ok(item_cl_loss(&mut tape, o, a, &pairs, d, cfg.negative_term).map(|l| tape.scalar_value(l)))
}

/// Factor-level loss for one session, summed over factors.
pub fn factor_cl_loss_values(
    original_factors: &[Array2<f64>],
    augmented_factors: &[Array2<f64>],
    disc: &Discriminator,
    cfg: &ContrastConfig,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    if original_factors.len() != augmented_factors.len() {
        return Err(Error::Shape("factor counts differ".into()));
    }
    for (o, f) in original_factors.iter().zip(augmented_factors) {
        check_views(o.view(), f.view())?;
    }
    let pairs: Vec<PairIndex> = original_factors
        .iter()
        .map(|o| sample_negatives(&[(0, o.nrows())], cfg.negatives_per_positive, rng))
        .collect();
    let mut tape = Tape::new();
    let o: Vec<Var> = original_factors.iter().map(|m| tape.constant(m.clone())).collect();
    let f: Vec<Var> = augmented_factors.iter().map(|m| tape.constant(m.clone())).collect();
    let d = disc.bind(&mut tape);
    Ok(factor_cl_loss(&mut tape, &o, &f, &pairs, d, cfg).map(|l| tape.scalar_value(l)))
}
