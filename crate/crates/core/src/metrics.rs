//! Segmentation scoring: adjusted Rand index and mask diagnostics.

use std::collections::{BTreeSet, HashMap};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A row-major H×W clustering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(LabError::Shape(format!(
                "{} labels for a {height}×{width} map",
                labels.len()
            )));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn from_u8(height: usize, width: usize, labels: &[u8]) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|&l| l as u32).collect())
    }
}

/// Result of an ARI evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AriScore {
    pub value: f64,
    /// Both clusterings have identical pair structure with no room for
    /// chance correction (e.g. one cluster each); the value is 1 by convention.
    pub degenerate: bool,
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index of `pred` against `truth`, ignoring pixels whose truth
/// label is in `exclude_truth`.
pub fn ari(pred: &LabelMap, truth: &LabelMap, exclude_truth: &[u32]) -> Result<AriScore> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(LabError::Shape(format!(
            "prediction {}×{} vs truth {}×{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let pairs: Vec<(u32, u32)> = pred
        .labels
        .iter()
        .zip(&truth.labels)
        .filter(|(_, t)| !exclude_truth.contains(t))
        .map(|(&p, &t)| (p, t))
        .collect();
    ari_from_pairs(&pairs)
}

/// ARI over `(pred, truth)` label pairs via the contingency table.
pub fn ari_from_pairs(pairs: &[(u32, u32)]) -> Result<AriScore> {
    if pairs.is_empty() {
        return Err(LabError::Degenerate("every pixel was excluded".into()));
    }
    let mut table: HashMap<(u32, u32), u64> = HashMap::new();
    let mut rows: HashMap<u32, u64> = HashMap::new();
    let mut cols: HashMap<u32, u64> = HashMap::new();
    for &(p, t) in pairs {
        *table.entry((p, t)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(t).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(pairs.len() as u64);
    Ok(adjusted(index, sum_rows, sum_cols, total))
}

/// Chance-adjusted normalization shared by the table and brute-force paths.
pub fn adjusted(index: f64, sum_rows: f64, sum_cols: f64, total_pairs: f64) -> AriScore {
    let expected = if total_pairs > 0.0 {
        sum_rows * sum_cols / total_pairs
    } else {
        0.0
    };
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return AriScore {
            value: 1.0,
            degenerate: true,
        };
    }
    AriScore {
        value: (index - expected) / denom,
        degenerate: false,
    }
}

/// Per-pixel argmax over slots of masks `(B, K, H, W)`, ties to the lowest
/// slot index. Returns one map per batch element.
pub fn masks_to_labels(masks: &Tensor) -> Result<Vec<LabelMap>> {
    let (b, k, h, w) = masks.dims4()?;
    let v = masks.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut labels = Vec::with_capacity(plane);
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = v[bi * k * plane + p];
            for ki in 1..k {
                let x = v[(bi * k + ki) * plane + p];
                if x > best_v {
                    best = ki;
                    best_v = x;
                }
            }
            labels.push(best as u32);
        }
        out.push(LabelMap::new(h, w, labels)?);
    }
    Ok(out)
}

/// Mean over pixels of the largest mask value, per batch element.
pub fn binarization_index(masks: &Tensor) -> Result<Vec<f64>> {
    let (b, _, h, w) = masks.dims4()?;
    let max = masks.max(1)?.to_dtype(DType::F64)?.reshape((b, h * w))?;
    Ok(max.mean(1)?.to_vec1::<f64>()?)
}

/// Distinct labels present in a map.
pub fn alphabet(map: &LabelMap) -> BTreeSet<u32> {
    map.labels.iter().copied().collect()
}

/// One evaluation record as written to `run.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ari_median: Option<f64>,
    pub ari: f64,
    pub mse: f64,
    pub binarization: f64,
    pub seed: u64,
    pub condition: String,
}
