//! Quantile scoring of continuous exposures.
//!
//! Each column is cut at its empirical quantiles `k/q`, `k = 1..q-1`, using
//! linear interpolation between order statistics. A value's score is the
//! number of cut points strictly below it, so ties at a cut point fall into
//! the lower bin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores and cut points for a set of quantized columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedMatrix {
    /// Column-wise scores in `0..q`.
    pub scores: Vec<Vec<u32>>,
    /// `q - 1` non-decreasing cut points per column.
    pub cutpoints: Vec<Vec<f64>>,
    pub q: usize,
    pub column_names: Vec<String>,
}

impl QuantizedMatrix {
    pub fn nrows(&self) -> usize {
        self.scores.first().map_or(0, Vec::len)
    }

    pub fn ncols(&self) -> usize {
        self.scores.len()
    }

    /// Scores as floating-point columns, ready for a design matrix.
    pub fn scores_f64(&self) -> Vec<Vec<f64>> {
        self.scores
            .iter()
            .map(|c| c.iter().map(|&s| s as f64).collect())
            .collect()
    }
}

/// Empirical quantile at probability `prob` of sorted data, interpolating
/// linearly between order statistics `floor(h)` and `floor(h) + 1` with
/// `h = (n - 1) * prob`.
pub fn interpolated_quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        sorted[lo.min(n - 1)]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

fn is_score_column(x: &[f64], q: usize) -> bool {
    x.iter()
        .all(|&v| v >= 0.0 && v <= (q - 1) as f64 && v.fract() == 0.0)
}

fn quantize_named(x: &[f64], q: usize, name: &str) -> Result<(Vec<u32>, Vec<f64>)> {
    if q < 2 {
        return Err(Error::InvalidQuantiles(q));
    }
    if let Some(row) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            column: name.to_string(),
            row,
        });
    }
    let n = x.len();
    if n < q {
        return Err(Error::TooFewObservations { n, q });
    }

    // Data already on the score scale passes through unchanged.
    if is_score_column(x, q) {
        let cuts = (0..q - 1).map(|k| k as f64).collect();
        return Ok((x.iter().map(|&v| v as u32).collect(), cuts));
    }

    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let cuts: Vec<f64> = if distinct.len() <= q {
        // Rank-of-distinct-value mapping: the r-th smallest value sits above
        // exactly r - 1 cut points.
        let last = distinct[distinct.len() - 1];
        distinct[..distinct.len() - 1]
            .iter()
            .copied()
            .chain(std::iter::repeat(last))
            .take(q - 1)
            .collect()
    } else {
        (1..q)
            .map(|k| interpolated_quantile(&sorted, k as f64 / q as f64))
            .collect()
    };

    let scores = x
        .iter()
        .map(|&v| cuts.partition_point(|&c| c < v) as u32)
        .collect();
    Ok((scores, cuts))
}

/// Scores one column into `q` quantile levels.
pub fn quantize_column(x: &[f64], q: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    quantize_named(x, q, "x")
}

/// Quantizes each column independently, preserving column order.
pub fn quantize_matrix(columns: &[Vec<f64>], names: &[String], q: usize) -> Result<QuantizedMatrix> {
    if columns.len() != names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} columns but {} names",
            columns.len(),
            names.len()
        )));
    }
    if let Some(first) = columns.first() {
        if let Some(bad) = columns.iter().find(|c| c.len() != first.len()) {
            return Err(Error::DimensionMismatch(format!(
                "column lengths differ ({} vs {})",
                first.len(),
                bad.len()
            )));
        }
    }
    let mut scores = Vec::with_capacity(columns.len());
    let mut cutpoints = Vec::with_capacity(columns.len());
    for (col, name) in columns.iter().zip(names) {
        let (s, c) = quantize_named(col, q, name)?;
        scores.push(s);
        cutpoints.push(c);
    }
    Ok(QuantizedMatrix {
        scores,
        cutpoints,
        q,
        column_names: names.to_vec(),
    })
}
