//! Dual-head scoring over the full catalog and the training objective.

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataio::ItemCatalog;
use crate::disentangle::{project, FactorProjection, ProjectionVars};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub item: Array1<f64>,
    pub factor: Option<Array1<f64>>,
    /// Mean of the two heads, or the item head alone.
    pub combined: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_c_item: f64,
    pub l_c_factor: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub total: f64,
}

pub fn total_loss(l_p: f64, l_c: f64, l_d: f64, beta1: f64, beta2: f64) -> f64 {
    l_p + beta1 * l_c + beta2 * l_d
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreVars {
    pub item: Var,
    pub factor: Option<Var>,
    pub combined: Var,
}

/// Catalog items in factor space, concatenated across factors: `N×(K·d_f)`.
pub fn catalog_factor_embeddings(tape: &mut Tape, catalog: Var, proj: &ProjectionVars) -> Var {
    let parts = project(tape, catalog, proj);
    tape.concat_cols(&parts)
}

/// Softmax probabilities for every catalog item from both heads.
///
/// `session_factor` of `None` scores with the item head only.
pub fn score_batch(
    tape: &mut Tape,
    session_item: Var,
    session_factor: Option<Var>,
    catalog: Var,
    proj: &ProjectionVars,
) -> ScoreVars {
    let cat_t = tape.transpose(catalog);
    let logits = tape.matmul(session_item, cat_t);
    let item = tape.softmax_rows(logits);
    let Some(sf) = session_factor else {
        return ScoreVars {
            item,
            factor: None,
            combined: item,
        };
    };
    let cat_f = catalog_factor_embeddings(tape, catalog, proj);
    let cat_ft = tape.transpose(cat_f);
    let flogits = tape.matmul(sf, cat_ft);
    let factor = tape.softmax_rows(flogits);
    let sum = tape.add(item, factor);
    let combined = tape.scale(sum, 0.5);
    ScoreVars {
        item,
        factor: Some(factor),
        combined,
    }
}

/// Binary cross-entropy against one-hot targets, summed over items and
/// averaged over the batch.
pub fn prediction_loss_batch(tape: &mut Tape, probs: Var, targets: &[usize]) -> Var {
    let (b, n) = tape.shape(probs);
    assert_eq!(b, targets.len(), "one target per row");
    let mut y = Array2::zeros((b, n));
    for (r, &t) in targets.iter().enumerate() {
        y[[r, t]] = 1.0;
    }
    let y = Rc::new(y);
    let not_y = Rc::new(y.mapv(|v| 1.0 - v));
    let log_p = tape.log_clamped(probs, PROB_EPS);
    let pos = tape.mul_const(log_p, y);
    let q = tape.one_minus(probs);
    let log_q = tape.log_clamped(q, PROB_EPS);
    let neg = tape.mul_const(log_q, not_y);
    let both = tape.add(pos, neg);
    let s = tape.sum(both);
    tape.scale(s, -1.0 / b as f64)
}

/// Scores every item for one session.
pub fn score(
    session_item: ArrayView1<f64>,
    session_factor: Option<ArrayView1<f64>>,
    catalog: ArrayView2<f64>,
    proj: &FactorProjection,
) -> Result<ScoreVector> {
    if catalog.nrows() == 0 {
        return Err(Error::Data("cannot score against an empty catalog".into()));
    }
    if session_item.len() != catalog.ncols() {
        return Err(Error::Shape(format!(
            "session width {} but item width {}",
            session_item.len(),
            catalog.ncols()
        )));
    }
    if let Some(f) = session_factor {
        let want = proj.factors() * proj.factor_dim();
        if f.len() != want || proj.input_dim() != catalog.ncols() {
            return Err(Error::Shape(format!(
                "factor session width {} but projection gives {want}",
                f.len()
            )));
        }
    }
    let mut tape = Tape::new();
    let si = tape.constant(session_item.to_owned().insert_axis(ndarray::Axis(0)));
    let sf = session_factor.map(|f| tape.constant(f.to_owned().insert_axis(ndarray::Axis(0))));
    let cat = tape.constant(catalog.to_owned());
    let pv = proj.bind(&mut tape);
    let s = score_batch(&mut tape, si, sf, cat, &pv);
    let row = |v: Var| tape.value(v).row(0).to_owned();
    Ok(ScoreVector {
        item: row(s.item),
        factor: s.factor.map(row),
        combined: row(s.combined),
    })
}

pub fn prediction_loss(scores: &ScoreVector, target: usize) -> f64 {
    scores
        .combined
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if i == target {
                -p.max(PROB_EPS).ln()
            } else {
                -(1.0 - p).max(PROB_EPS).ln()
            }
        })
        .sum()
}

/// Top `k` items by score as `(raw id, score)`, best first; ties go to the
/// lower index.
pub fn recommend(scores: ArrayView1<f64>, k: usize, catalog: &ItemCatalog) -> Vec<(String, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(k)
        .map(|i| (catalog.raw_id(i).to_string(), scores[i]))
        .collect()
}
