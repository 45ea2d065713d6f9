//! Per-class train / validation / test partitioning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, PatchSample};
use crate::tensor::Rng64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    train_frac: f64,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, seed: u64) -> Result<Self, DataError> {
        let fracs = [train_frac, val_frac, test_frac];
        if fracs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(DataError::InvalidSplit(format!(
                "fractions must be positive, got {train_frac}/{val_frac}/{test_frac}"
            )));
        }
        let total: f64 = fracs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplit(format!("fractions sum to {total}, not 1")));
        }
        Ok(Self {
            train_frac,
            val_frac,
            test_frac,
            seed,
        })
    }

    pub fn train_frac(&self) -> f64 {
        self.train_frac
    }

    pub fn val_frac(&self) -> f64 {
        self.val_frac
    }

    pub fn test_frac(&self) -> f64 {
        self.test_frac
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_frac, self.val_frac, self.test_frac]
    }
}

/// Index lists into the original sample order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<PatchSample>,
    pub val: Vec<PatchSample>,
    pub test: Vec<PatchSample>,
}

/// Largest-remainder apportionment of `n` items over `fracs`; ties go to
/// the earlier subset.
pub fn apportion(n: usize, fracs: [f64; 3]) -> [usize; 3] {
    let quotas = fracs.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    if counts[0] == 0 {
        let donor = if counts[2] >= counts[1] { 2 } else { 1 };
        counts[donor] -= 1;
        counts[0] = 1;
    }
    counts
}

/// Shuffles each class with a stream derived from `(seed, class)` and cuts
/// it by [`apportion`]. Every class needs at least three samples.
pub fn split_indices(labels: &[u16], spec: &SplitSpec) -> Result<SplitIndices, DataError> {
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = SplitIndices::default();
    for (class, mut members) in by_class {
        if members.len() < 3 {
            return Err(DataError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        Rng64::derive(spec.seed, class as u64).shuffle(&mut members);
        let [tr, va, _] = apportion(members.len(), spec.fractions());
        out.train.extend_from_slice(&members[..tr]);
        out.val.extend_from_slice(&members[tr..tr + va]);
        out.test.extend_from_slice(&members[tr + va..]);
    }
    Ok(out)
}

pub fn stratified_split(samples: Vec<PatchSample>, spec: &SplitSpec) -> Result<Split, DataError> {
    let labels: Vec<u16> = samples.iter().map(|s| s.label).collect();
    let idx = split_indices(&labels, spec)?;
    let mut slots: Vec<Option<PatchSample>> = samples.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<PatchSample> {
        ids.iter().map(|&i| slots[i].take().expect("index used once")).collect()
    };
    Ok(Split {
        train: take(&idx.train),
        val: take(&idx.val),
        test: take(&idx.test),
    })
}
