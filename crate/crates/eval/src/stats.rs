//! Paired significance testing between two runs on the same dataset.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::AccuracyReport;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompareError {
    #[error("runs cover different dataset sizes ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("runs were made on different datasets")]
    DatasetMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub records: usize,
    /// Records only the first run got right.
    pub only_a: usize,
    /// Records only the second run got right.
    pub only_b: usize,
    /// Overall accuracy of b minus a, in percentage points.
    pub delta: f64,
    pub p_value: f64,
}

/// Exact two-sided McNemar test on the discordant counts: twice the binomial
/// tail of the smaller count under p = 1/2, capped at 1.
pub fn mcnemar_exact(only_a: usize, only_b: usize) -> f64 {
    let n = only_a + only_b;
    if n == 0 {
        return 1.0;
    }
    let k = only_a.min(only_b);
    // Terms C(n, i) / 2^n, built in log space to stay finite for large n.
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_term = ln_half_n;
    let mut tail = ln_term.exp();
    for i in 1..=k {
        ln_term += ((n - i + 1) as f64).ln() - (i as f64).ln();
        tail += ln_term.exp();
    }
    (2.0 * tail).min(1.0)
}

pub fn compare_runs(a: &AccuracyReport, b: &AccuracyReport) -> Result<Comparison, CompareError> {
    if a.records != b.records || a.per_record.len() != b.per_record.len() {
        return Err(CompareError::SizeMismatch(a.records, b.records));
    }
    if a.run.dataset_sha256 != b.run.dataset_sha256 {
        return Err(CompareError::DatasetMismatch);
    }
    let (va, vb) = (a.overall_vector(), b.overall_vector());
    let only_a = va.iter().zip(&vb).filter(|(x, y)| **x && !**y).count();
    let only_b = va.iter().zip(&vb).filter(|(x, y)| !**x && **y).count();
    Ok(Comparison {
        records: a.records,
        only_a,
        only_b,
        delta: b.overall.percentage - a.overall.percentage,
        p_value: mcnemar_exact(only_a, only_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_bounded() {
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert_eq!(mcnemar_exact(3, 3), 1.0);
        assert_eq!(mcnemar_exact(2, 9), mcnemar_exact(9, 2));
        // b = 1, c = 5: 2 * (1 + 6) / 64.
        assert!((mcnemar_exact(1, 5) - 14.0 / 64.0).abs() < 1e-15);
    }
}
