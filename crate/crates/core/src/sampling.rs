//! Constant-time categorical sampling over sparse term distributions.

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::index::TermId;

/// Alias-method sampler over a sparse set of term ids.
#[derive(Debug, Clone)]
pub struct TermSampler {
    terms: Vec<TermId>,
    table: WeightedAliasIndex<f64>,
}

impl TermSampler {
    /// Zero-weight entries are dropped; at least one positive weight is required.
    pub fn new(weights: &[(TermId, f64)]) -> Result<Self> {
        let (terms, w): (Vec<TermId>, Vec<f64>) = weights.iter().copied().filter(|&(_, w)| w > 0.0).unzip();
        if terms.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let table = WeightedAliasIndex::new(w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(TermSampler { terms, table })
    }

    /// Dense table indexed by term id.
    pub fn from_dense(probs: &[f64]) -> Result<Self> {
        let sparse: Vec<(TermId, f64)> = probs.iter().copied().enumerate().collect();
        Self::new(&sparse)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TermId {
        self.terms[self.table.sample(rng)]
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, out: &mut Vec<TermId>) {
        out.extend((0..n).map(|_| self.sample(rng)));
    }
}
