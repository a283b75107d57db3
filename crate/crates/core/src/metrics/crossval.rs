use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricReport;
use crate::error::{CoreError, Result};

/// Denominator of the fold standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdevConvention {
    /// Divide by `n`. Folds 85.60, 84.90, 88.80, 86.37, 87.29 give
    /// mean 86.59 and stdev 1.36 under this form.
    #[default]
    Population,
    /// Divide by `n - 1`.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValSummary {
    pub k: usize,
    pub convention: StdevConvention,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn mean_std(values: &[f64], convention: StdevConvention) -> Result<MeanStd> {
    if values.len() < 2 {
        return Err(CoreError::Parameter(format!("need at least 2 folds, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let denom = match convention {
        StdevConvention::Population => n,
        StdevConvention::Sample => n - 1.0,
    };
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / denom;
    Ok(MeanStd { mean, stdev: var.sqrt() })
}

/// Per-metric mean and standard deviation over folds. Every fold must carry
/// the same metric names.
pub fn aggregate_values(per_fold: &[BTreeMap<String, f64>], convention: StdevConvention) -> Result<CrossValSummary> {
    if per_fold.len() < 2 {
        return Err(CoreError::Parameter(format!("need at least 2 folds, got {}", per_fold.len())));
    }
    let names: Vec<&String> = per_fold[0].keys().collect();
    for (i, f) in per_fold.iter().enumerate().skip(1) {
        if f.keys().collect::<Vec<_>>() != names {
            return Err(CoreError::Parameter(format!("fold {i} reports metrics {:?}, fold 0 reports {:?}", f.keys().collect::<Vec<_>>(), names)));
        }
    }
    let metrics = names
        .into_iter()
        .map(|name| {
            let values: Vec<f64> = per_fold.iter().map(|f| f[name]).collect();
            mean_std(&values, convention).map(|ms| (name.clone(), ms))
        })
        .collect::<Result<_>>()?;
    Ok(CrossValSummary { k: per_fold.len(), convention, metrics })
}

pub fn crossval_aggregate(per_fold: &[MetricReport], convention: StdevConvention) -> Result<CrossValSummary> {
    let values: Vec<BTreeMap<String, f64>> = per_fold.iter().map(MetricReport::scalar_metrics).collect();
    aggregate_values(&values, convention)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_folds_pin_sample_convention() {
        let ms = mean_std(&[0.0, 1.0], StdevConvention::Sample).unwrap();
        assert_eq!(ms.mean, 0.5);
        assert!((ms.stdev - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.0, 1.0], StdevConvention::Population).unwrap().stdev, 0.5);
    }

    #[test]
    fn identical_folds() {
        assert_eq!(mean_std(&[0.7; 5], StdevConvention::Sample).unwrap().stdev, 0.0);
    }

    #[test]
    fn mismatched_sets() {
        let a: BTreeMap<String, f64> = [("ap".to_string(), 0.5)].into();
        let b: BTreeMap<String, f64> = [("f1".to_string(), 0.5)].into();
        assert!(aggregate_values(&[a, b], StdevConvention::default()).is_err());
    }
}
