//! Online softmax accumulation.
//!
//! Attention over a token set can be computed in chunks: each chunk folds into
//! a [`SoftmaxPartial`] carrying the running max, the rescaled denominator and
//! the rescaled value accumulator. Partials produced on different banks merge
//! associatively and commutatively, so a tile can split a head's tokens any
//! way it likes and combine the pieces in any order.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPartial {
    pub running_max: f64,
    pub running_denominator: f64,
    pub weighted_sum: Vec<f64>,
}

impl SoftmaxPartial {
    /// Identity element: merging it into anything is a no-op.
    pub fn identity(head_dim: usize) -> Self {
        Self {
            running_max: f64::NEG_INFINITY,
            running_denominator: 0.0,
            weighted_sum: vec![0.0; head_dim],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.running_denominator == 0.0
    }

    /// Fold a chunk of scaled-dot-product scores into the partial.
    ///
    /// `keys` and `values` are row-major token matrices; `scale` is applied to
    /// every query-key dot product before exponentiation.
    pub fn absorb(&mut self, query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], scale: f64) {
        if keys.is_empty() {
            return;
        }
        debug_assert_eq!(keys.len(), values.len());
        let mut chunk_max = f64::NEG_INFINITY;
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| {
                let s = dot(query, k) * scale;
                chunk_max = chunk_max.max(s);
                s
            })
            .collect();

        let new_max = self.running_max.max(chunk_max);
        let carried = if self.running_denominator > 0.0 {
            (self.running_max - new_max).exp()
        } else {
            0.0
        };
        self.running_denominator *= carried;
        for w in &mut self.weighted_sum {
            *w *= carried;
        }
        for (s, v) in scores.iter().zip(values) {
            let p = (s - new_max).exp();
            self.running_denominator += p;
            for (w, x) in self.weighted_sum.iter_mut().zip(v) {
                *w += p * x;
            }
        }
        self.running_max = new_max;
    }

    /// Normalized attention output. Returns zeros if nothing was absorbed.
    pub fn finalize(&self) -> Vec<f64> {
        if self.running_denominator == 0.0 {
            return vec![0.0; self.weighted_sum.len()];
        }
        self.weighted_sum
            .iter()
            .map(|w| w / self.running_denominator)
            .collect()
    }

    /// Attention probabilities for a chunk of scores against this partial's
    /// final max/denominator. Used to attribute softmax mass to pages.
    pub fn probability(&self, score: f64) -> f64 {
        if self.running_denominator == 0.0 {
            0.0
        } else {
            (score - self.running_max).exp() / self.running_denominator
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Merge bank-local partials into one. Associative and commutative up to
/// floating-point rounding; errors on an empty list.
pub fn merge_partials(parts: &[SoftmaxPartial]) -> Result<SoftmaxPartial> {
    let first = parts.first().ok_or(Error::EmptyMerge)?;
    let dim = first.weighted_sum.len();
    let new_max = parts
        .iter()
        .map(|p| p.running_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = SoftmaxPartial::identity(dim);
    if new_max == f64::NEG_INFINITY {
        return Ok(out);
    }
    out.running_max = new_max;
    for p in parts {
        debug_assert_eq!(p.weighted_sum.len(), dim);
        if p.is_empty() {
            continue;
        }
        let f = (p.running_max - new_max).exp();
        out.running_denominator += p.running_denominator * f;
        for (w, x) in out.weighted_sum.iter_mut().zip(&p.weighted_sum) {
            *w += x * f;
        }
    }
    Ok(out)
}
