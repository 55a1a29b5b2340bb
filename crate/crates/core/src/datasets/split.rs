use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Fractions of the labeled / validation / reference partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    /// Set by the caller (derived from the global seed); not part of the JSON form.
    #[serde(skip)]
    pub seed: u64,
    /// Split each class separately (off by default).
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.6, 0.2, 0.2],
            seed: 0,
            stratified: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "fractions must be non-negative, got {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Sizes of the three partitions for `n` items: the first two are
    /// `floor(fraction * n)`, the remainder goes to the reference partition.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon absorbs representation error such as 0.29 * 100 = 28.999...
        let part = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let a = part(self.fractions[0]).min(n);
        let b = part(self.fractions[1]).min(n - a);
        (a, b, n - a - b)
    }
}

/// Randomly partition `data` into `(D_L, D_V, D_REF)`.
pub fn split_dataset(
    data: &LabeledSet,
    spec: &SplitSpec,
) -> Result<(LabeledSet, LabeledSet, LabeledSet)> {
    if data.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let (mut first, mut second, mut third) = (Vec::new(), Vec::new(), Vec::new());
    let mut assign = |mut idx: Vec<usize>| {
        idx.shuffle(&mut rng);
        let (a, b, _) = spec.sizes(idx.len());
        first.extend_from_slice(&idx[..a]);
        second.extend_from_slice(&idx[a..a + b]);
        third.extend_from_slice(&idx[a + b..]);
    };
    if spec.stratified {
        for class in 0..data.num_classes() {
            let members: Vec<usize> = data
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == class)
                .map(|(i, _)| i)
                .collect();
            assign(members);
        }
    } else {
        assign((0..data.len()).collect());
    }
    Ok((data.subset(&first), data.subset(&second), data.subset(&third)))
}
