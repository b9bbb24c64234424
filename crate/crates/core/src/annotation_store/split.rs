use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractions of ids assigned to each bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const STANDARD: SplitRatios = SplitRatios { train: 0.8, val: 0.1, test: 0.1 };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(format!("split ratios must be non-negative, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = Error;

    /// Parses `train,val,test`, e.g. `0.8,0.1,0.1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad ratios {s:?}: {e}")))?;
        match parts[..] {
            [train, val, test] => SplitRatios::new(train, val, test),
            _ => Err(Error::invalid(format!("expected three ratios, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

fn bucket_size(n: usize, ratio: f64) -> usize {
    // the epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    ((n as f64) * ratio + 1e-9).floor() as usize
}

/// Shuffles the sorted ids with a seeded ChaCha stream and cuts them into
/// train/val/test. Val and test take `floor(n * ratio)`; train takes the
/// rest. The result depends only on the id set, ratios and seed.
pub fn make_split(ids: &[String], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    shuffled.sort();
    if let Some(w) = shuffled.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate id {:?}", w[0])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let n_val = bucket_size(n, ratios.val);
    let n_test = bucket_size(n, ratios.test);
    let n_train = n - n_val - n_test;

    let test_ids = shuffled.split_off(n_train + n_val);
    let val_ids = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train_ids: shuffled,
        val_ids,
        test_ids,
        seed,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixOutcome {
    pub ids: Vec<String>,
    pub negatives_requested: usize,
    pub negatives_taken: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Positives followed by `floor(ratio * |positives|)` negatives drawn from
/// the pool with a seeded shuffle. Pool ids already among the positives are
/// ignored; a short pool is used in full with a warning.
pub fn mix_negatives(positive_ids: &[String], negative_pool: &[String], ratio: f64, seed: u64) -> Result<MixOutcome> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::invalid(format!("mixing ratio must be positive, got {ratio}")));
    }
    let positives: BTreeSet<&String> = positive_ids.iter().collect();
    let mut pool: Vec<String> = negative_pool
        .iter()
        .filter(|id| !positives.contains(id))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let requested = bucket_size(positive_ids.len(), ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let warning = (pool.len() < requested).then(|| {
        let msg = format!(
            "negative pool has {} ids, {} requested; using all of them",
            pool.len(),
            requested
        );
        log::warn!("{msg}");
        msg
    });
    pool.truncate(requested);
    let taken = pool.len();

    let mut ids = positive_ids.to_vec();
    ids.extend(pool);
    Ok(MixOutcome {
        ids,
        negatives_requested: requested,
        negatives_taken: taken,
        warning,
    })
}
