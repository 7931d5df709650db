//! Wine dataset loading, normalization, and the train/test split.
//!
//! Input layout is the UCI `wine.data` CSV: each row is a class label (1-3)
//! followed by 13 numeric attributes, no header. Labels are remapped to
//! 0-based class indices at load.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const N_FEATURES: usize = 13;
pub const N_CLASSES: usize = 3;
pub const FULL_SAMPLES: usize = 178;
pub const TRAIN_SAMPLES: usize = 148;
pub const TEST_SAMPLES: usize = 30;

/// Class histogram of the canonical UCI Wine file, checked at load as a
/// data-integrity guard.
const UCI_CLASS_COUNTS: [usize; N_CLASSES] = [59, 71, 48];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<[f64; N_FEATURES]>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Parse a UCI-layout Wine CSV file.
pub fn load_wine(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + N_FEATURES {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                message: format!("expected 14 comma-separated fields, found {}", fields.len()),
            });
        }
        let label: i64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: line_no,
            message: format!("class label `{}` is not an integer", fields[0]),
        })?;
        if !(1..=N_CLASSES as i64).contains(&label) {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                message: format!("class label {label} outside 1-3"),
            });
        }
        let mut row = [0.0; N_FEATURES];
        for (k, field) in fields[1..].iter().enumerate() {
            row[k] = field.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("attribute {} (`{}`) is not numeric", k + 1, field),
            })?;
        }
        features.push(row);
        labels.push(label as usize - 1);
    }
    if features.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: "file contains no data rows".into(),
        });
    }
    let ds = Dataset { features, labels };
    if ds.n_samples() == FULL_SAMPLES && ds.class_counts() != UCI_CLASS_COUNTS {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!(
                "full-size file has class histogram {:?}, expected {:?}",
                ds.class_counts(),
                UCI_CLASS_COUNTS
            ),
        });
    }
    Ok(ds)
}

/// Min-max scale every feature column to [0, 1] using statistics of the
/// whole input. Constant columns map to 0.
pub fn normalize(ds: &Dataset) -> Dataset {
    let n = ds.n_samples();
    let mut lo = [f64::INFINITY; N_FEATURES];
    let mut hi = [f64::NEG_INFINITY; N_FEATURES];
    for row in &ds.features {
        for k in 0..N_FEATURES {
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    let mut features = Vec::with_capacity(n);
    for row in &ds.features {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let span = hi[k] - lo[k];
            out[k] = if span > 0.0 { (row[k] - lo[k]) / span } else { 0.0 };
        }
        features.push(out);
    }
    Dataset {
        features,
        labels: ds.labels.clone(),
    }
}

/// Deterministic stratified split of the full 178-sample dataset into
/// 148 train / 30 test. Per-class test quotas are assigned by largest
/// remainder, so class proportions are preserved to within one sample.
pub fn split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.n_samples() != FULL_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "split expects the full {}-sample dataset, got {}",
            FULL_SAMPLES,
            ds.n_samples()
        )));
    }
    let counts = ds.class_counts();
    let quotas = test_quotas(counts);

    let mut rng = seed::rng_from(seed::child_seed(seed, "dataset/split", 0));
    let mut test_idx = Vec::with_capacity(TEST_SAMPLES);
    let mut train_idx = Vec::with_capacity(TRAIN_SAMPLES);
    for class in 0..N_CLASSES {
        let mut members: Vec<usize> = (0..ds.n_samples())
            .filter(|&i| ds.labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        test_idx.extend_from_slice(&members[..quotas[class]]);
        train_idx.extend_from_slice(&members[quotas[class]..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let take = |indices: &[usize]| Dataset {
        features: indices.iter().map(|&i| ds.features[i]).collect(),
        labels: indices.iter().map(|&i| ds.labels[i]).collect(),
    };
    Ok((take(&train_idx), take(&test_idx)))
}

/// Largest-remainder apportionment of the 30 test slots across classes.
fn test_quotas(counts: [usize; N_CLASSES]) -> [usize; N_CLASSES] {
    let total: usize = counts.iter().sum();
    let mut quotas = [0usize; N_CLASSES];
    let mut remainders = [(0.0f64, 0usize); N_CLASSES];
    let mut assigned = 0;
    for c in 0..N_CLASSES {
        let exact = counts[c] as f64 * TEST_SAMPLES as f64 / total as f64;
        quotas[c] = exact.floor() as usize;
        assigned += quotas[c];
        remainders[c] = (exact - exact.floor(), c);
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take(TEST_SAMPLES - assigned) {
        quotas[c] += 1;
    }
    quotas
}
