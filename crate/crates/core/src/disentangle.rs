//! Factor projection and the distance-correlation independence penalty.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::uniform;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

/// Where the factor bias is added relative to the activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasPlacement {
    /// `act(x W) + b`
    Outside,
    /// `act(x W + b)`
    Inside,
}

/// K independent maps from item space into factor spaces of width
/// `d / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorProjection {
    /// One `d × d_f` matrix per factor.
    pub weights: Vec<Array2<f64>>,
    /// One `1 × d_f` row per factor.
    pub biases: Vec<Array2<f64>>,
    pub activation: Activation,
    pub bias: BiasPlacement,
}

#[derive(Debug, Clone)]
pub struct ProjectionVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub activation: Activation,
    pub bias: BiasPlacement,
}

/// Factor width for item width `dim` split into `factors` parts.
pub fn factor_dim(dim: usize, factors: usize) -> Result<usize> {
    if factors == 0 || dim / factors == 0 {
        return Err(Error::Config(format!(
            "cannot split dimension {dim} into {factors} factors"
        )));
    }
    Ok(dim / factors)
}

impl FactorProjection {
    pub fn zeros(dim: usize, factors: usize) -> Result<Self> {
        let df = factor_dim(dim, factors)?;
        Ok(FactorProjection {
            weights: vec![Array2::zeros((dim, df)); factors],
            biases: vec![Array2::zeros((1, df)); factors],
            activation: Activation::Sigmoid,
            bias: BiasPlacement::Outside,
        })
    }

    pub fn random(dim: usize, factors: usize, bound: f64, rng: &mut Rng) -> Result<Self> {
        let df = factor_dim(dim, factors)?;
        let mut p = Self::zeros(dim, factors)?;
        for w in &mut p.weights {
            *w = uniform(rng, (dim, df), bound);
        }
        for b in &mut p.biases {
            *b = uniform(rng, (1, df), bound);
        }
        Ok(p)
    }

    pub fn factors(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn factor_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn bind(&self, tape: &mut Tape) -> ProjectionVars {
        ProjectionVars {
            weights: self.weights.iter().map(|w| tape.param(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.param(b.clone())).collect(),
            activation: self.activation,
            bias: self.bias,
        }
    }

    /// Projects every row of `items` into each factor space.
    pub fn project(&self, items: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if items.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "projection expects width {}, got {}",
                self.input_dim(),
                items.ncols()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(items.to_owned());
        let vars = self.bind(&mut tape);
        let out = project(&mut tape, x, &vars);
        Ok(out.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Identity => x,
    }
}

/// One `m × d_f` matrix per factor.
pub fn project(tape: &mut Tape, x: Var, p: &ProjectionVars) -> Vec<Var> {
    p.weights
        .iter()
        .zip(&p.biases)
        .map(|(&w, &b)| {
            let lin = tape.matmul(x, w);
            match p.bias {
                BiasPlacement::Outside => {
                    let a = activate(tape, lin, p.activation);
                    tape.add_row(a, b)
                }
                BiasPlacement::Inside => {
                    let z = tape.add_row(lin, b);
                    activate(tape, z, p.activation)
                }
            }
        })
        .collect()
}

/// Double-centered distance matrix of one sample set and its squared
/// distance variance.
struct Centered {
    centered: Var,
    dvar2: Var,
}

fn centered(tape: &mut Tape, x: Var) -> Centered {
    let d = tape.pairwise_dist(x);
    let centered = tape.double_center(d);
    let sq = tape.mul(centered, centered);
    let dvar2 = tape.mean(sq);
    Centered { centered, dvar2 }
}

fn dcor_centered(tape: &mut Tape, a: &Centered, b: &Centered) -> Var {
    let denom = tape.scalar_value(a.dvar2) * tape.scalar_value(b.dvar2);
    if denom <= 0.0 {
        return tape.scalar(0.0);
    }
    let prod = tape.mul(a.centered, b.centered);
    let dcov2 = tape.mean(prod);
    let dcov = tape.sqrt(dcov2);
    let vv = tape.mul(a.dvar2, b.dvar2);
    let inv = tape.powf(vv, -0.25);
    tape.mul(dcov, inv)
}

/// Distance correlation between two sample sets with equal row counts.
/// Zero when either side has zero distance variance.
pub fn dcor_var(tape: &mut Tape, x: Var, y: Var) -> Var {
    assert_eq!(
        tape.shape(x).0,
        tape.shape(y).0,
        "distance correlation needs equal sample counts"
    );
    let a = centered(tape, x);
    let b = centered(tape, y);
    dcor_centered(tape, &a, &b)
}

pub fn dcor(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() || x.nrows() < 2 {
        return Err(Error::Shape(format!(
            "distance correlation needs equal sample counts >= 2, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.to_owned());
    let yv = tape.constant(y.to_owned());
    let r = dcor_var(&mut tape, xv, yv);
    Ok(tape.scalar_value(r))
}

/// Sum of distance correlations over all ordered factor pairs `k != t`.
pub fn independence_loss(tape: &mut Tape, factors: &[Var]) -> Var {
    let cs: Vec<Centered> = factors.iter().map(|&f| centered(tape, f)).collect();
    let mut terms = Vec::new();
    for k in 0..cs.len() {
        for t in 0..cs.len() {
            if k != t {
                terms.push(dcor_centered(tape, &cs[k], &cs[t]));
            }
        }
    }
    if terms.is_empty() {
        return tape.scalar(0.0);
    }
    let all = tape.concat_rows(&terms);
    tape.sum(all)
}

pub fn independence_loss_values(factors: &[Array2<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = factors.iter().map(|f| tape.constant(f.clone())).collect();
    let l = independence_loss(&mut tape, &vars);
    tape.scalar_value(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zero_projection_is_one_half() {
        let p = FactorProjection::zeros(4, 2).unwrap();
        let out = p.project(array![[1.0, -2.0, 3.0, 0.5], [0.0, 0.0, 1.0, 1.0]].view()).unwrap();
        assert_eq!(out.len(), 2);
        for f in out {
            assert_eq!(f.dim(), (2, 2));
            assert!(f.iter().all(|&x| x == 0.5));
        }
    }

    #[test]
    fn single_column_projection() {
        let p = FactorProjection {
            weights: vec![array![[1.0], [0.0]]],
            biases: vec![array![[0.0]]],
            activation: Activation::Sigmoid,
            bias: BiasPlacement::Outside,
        };
        let out = p.project(array![[1.0, 0.0]].view()).unwrap();
        assert!((out[0][[0, 0]] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn bias_placement() {
        let mut p = FactorProjection::zeros(2, 1).unwrap();
        p.biases[0] = array![[1.0, -1.0]];
        let x = array![[0.0, 0.0]];
        assert_eq!(p.project(x.view()).unwrap()[0], array![[1.5, -0.5]]);
        p.bias = BiasPlacement::Inside;
        let inside = p.project(x.view()).unwrap();
        assert!((inside[0][[0, 0]] - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn projection_shape_errors() {
        let p = FactorProjection::zeros(4, 2).unwrap();
        assert!(matches!(p.project(array![[1.0, 2.0]].view()), Err(Error::Shape(_))));
        assert!(FactorProjection::zeros(3, 5).is_err());
        assert!(FactorProjection::zeros(3, 0).is_err());
    }

    #[test]
    fn dcor_basics() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![[5.0], [5.0], [5.0]];
        assert_eq!(dcor(x.view(), y.view()).unwrap(), 0.0);
        assert!((dcor(x.view(), x.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!(dcor(x.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn independence_loss_counts_ordered_pairs() {
        let f = array![[0.1, 0.2], [0.5, -0.3], [0.9, 0.4]];
        assert_eq!(independence_loss_values(&[f.clone()]), 0.0);
        let l = independence_loss_values(&[f.clone(), f.clone()]);
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_projection_has_k_pairs() {
        let mut rng = Rng::seed_from_u64(1);
        let p = FactorProjection::random(100, 5, 0.1, &mut rng).unwrap();
        assert_eq!((p.factors(), p.factor_dim(), p.input_dim()), (5, 20, 100));
    }
}
