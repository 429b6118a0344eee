//! Weight containers, initialization, and the Adam optimizer.

use ndarray::Array2;
use rand::Rng as _;

use crate::rng::Rng;

/// Declares a value-side weight struct and its tape-side twin.
///
/// The value struct owns `Array2<f64>` tensors; `bind` puts each tensor on
/// a tape as a differentiable leaf and returns the matching `Var`s. Field
/// order is the canonical tensor order used by checkpoints and optimizers.
macro_rules! weight_set {
    ($(#[$meta:meta])* $name:ident / $vars:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            $(pub $field: ndarray::Array2<f64>,)+
        }

        #[derive(Debug, Clone, Copy)]
        pub struct $vars {
            $(pub $field: $crate::tape::Var,)+
        }

        impl $name {
            pub fn bind(&self, tape: &mut $crate::tape::Tape) -> $vars {
                $vars { $($field: tape.param(self.$field.clone()),)+ }
            }

            pub fn tensors(&self) -> Vec<(&'static str, &ndarray::Array2<f64>)> {
                vec![$((stringify!($field), &self.$field),)+]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut ndarray::Array2<f64>)> {
                vec![$((stringify!($field), &mut self.$field),)+]
            }
        }

        impl $vars {
            pub fn flat(&self) -> Vec<$crate::tape::Var> {
                vec![$(self.$field,)+]
            }
        }
    };
}

pub(crate) use weight_set;

/// Uniform initialization on `[-bound, bound]`.
pub fn uniform(rng: &mut Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one bias-corrected update; `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}
