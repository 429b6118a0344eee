use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastConfig, DiscriminatorForm, FactorNegatives, NegativeTerm};
use crate::disentangle::{Activation, BiasPlacement};
use crate::error::{Error, Result};
use crate::graphs::DropoutRates;

/// Model variant: the full model or one of the three ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    /// No factor-level contrastive term.
    Fcl,
    /// Edge/node dropout instead of the star graph for the item-level view.
    Star,
    /// Item-level head only at prediction.
    Fp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Fcl, Variant::Star, Variant::Fp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Fcl => "fcl",
            Variant::Star => "star",
            Variant::Fp => "fp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (full, fcl, star, fp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub factors: usize,
    pub layers: usize,
    pub theta: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub discriminator: DiscriminatorForm,
    pub factor_negatives: FactorNegatives,
    pub negative_term: NegativeTerm,
    pub negatives_per_positive: usize,
    pub normalize_adjacency: bool,
    pub projection_activation: Activation,
    pub projection_bias: BiasPlacement,
    pub attention_normalize: bool,
    pub share_factor_attention: bool,
    pub dropout: DropoutRates,
    /// Uniform init bound; `1/sqrt(dim)` when unset.
    pub init_bound: Option<f64>,
    /// Stop after this many epochs without validation P@20 improvement.
    pub early_stopping_patience: Option<usize>,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            factors: 5,
            layers: 1,
            theta: 0.3,
            alpha: 0.5,
            beta1: 0.05,
            beta2: 0.01,
            lr: 1e-3,
            epochs: 30,
            batch_size: 100,
            seed: 1,
            variant: Variant::Full,
            discriminator: DiscriminatorForm::Dot,
            factor_negatives: FactorNegatives::WithinView,
            negative_term: NegativeTerm::OneMinusSigmoid,
            negatives_per_positive: 1,
            normalize_adjacency: true,
            projection_activation: Activation::Sigmoid,
            projection_bias: BiasPlacement::Outside,
            attention_normalize: false,
            share_factor_attention: false,
            dropout: DropoutRates::default(),
            init_bound: None,
            early_stopping_patience: None,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.factors == 0 || self.dim / self.factors == 0 {
            return bad(format!("dim {} cannot hold {} factors", self.dim, self.factors));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta {} outside [0, 1]", self.theta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.beta1 < 0.0 || self.beta2 < 0.0 {
            return bad("beta1 and beta2 must be non-negative".into());
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.negatives_per_positive == 0 {
            return bad("lr, batch_size and negatives_per_positive must be positive".into());
        }
        for (name, p) in [("edge", self.dropout.edge), ("node", self.dropout.node)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} dropout {p} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn factor_dim(&self) -> usize {
        self.dim / self.factors
    }

    pub fn init_bound(&self) -> f64 {
        self.init_bound.unwrap_or(1.0 / (self.dim as f64).sqrt())
    }

    /// Contrastive settings after applying the variant.
    pub fn contrast(&self) -> ContrastConfig {
        ContrastConfig {
            alpha: if self.variant == Variant::Fcl { 1.0 } else { self.alpha },
            negatives_per_positive: self.negatives_per_positive,
            factor_negatives: self.factor_negatives,
            negative_term: self.negative_term,
        }
    }

    pub fn uses_factor_head(&self) -> bool {
        self.variant != Variant::Fp
    }

    /// Parses a `key = value` file; keys are the field names above.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
