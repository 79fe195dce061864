use serde::{Deserialize, Serialize};

use super::gbdt::{GbdtConfig, GradientBoosting};
use super::{StressFeatureVector, StressLabel};
use crate::error::{Error, Result};
use crate::training::loso_splits;

/// Which feature families the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    PpgOnly,
    EdaOnly,
    Both,
}

impl FeatureSet {
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            FeatureSet::PpgOnly => 0..5,
            FeatureSet::EdaOnly => 5..10,
            FeatureSet::Both => 0..10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::PpgOnly => "ppg_only",
            FeatureSet::EdaOnly => "eda_only",
            FeatureSet::Both => "both",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppg_only" | "ppg" => Ok(FeatureSet::PpgOnly),
            "eda_only" | "eda" => Ok(FeatureSet::EdaOnly),
            "both" => Ok(FeatureSet::Both),
            _ => Err(Error::Config(format!("unknown feature set {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressPrediction {
    pub participant_id: String,
    pub window_index: usize,
    pub label: StressLabel,
    pub predicted: StressLabel,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressFold {
    pub test_id: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Training-fold medians used to fill missing features.
    pub medians: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressReport {
    pub feature_set: Option<FeatureSet>,
    pub bacc: f64,
    /// F1 of the stress class.
    pub f1: f64,
    pub folds: Vec<StressFold>,
    pub predictions: Vec<StressPrediction>,
    pub leakage_checks: usize,
}

fn confusion(truth: &[bool], pred: &[bool]) -> Result<[usize; 4]> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} labels but {} predictions", truth.len(), pred.len())));
    }
    let mut c = [0usize; 4];
    for (&t, &p) in truth.iter().zip(pred) {
        c[usize::from(t) * 2 + usize::from(p)] += 1;
    }
    Ok(c)
}

/// Mean of the per-class recalls; both classes must occur in `truth`.
pub fn balanced_accuracy(truth: &[bool], pred: &[bool]) -> Result<f64> {
    let [tn, fp, fneg, tp] = confusion(truth, pred)?;
    if tn + fp == 0 || tp + fneg == 0 {
        return Err(Error::SingleClass);
    }
    Ok(0.5 * (tp as f64 / (tp + fneg) as f64 + tn as f64 / (tn + fp) as f64))
}

/// F1 of the positive class; 0 when there are no true positives.
pub fn f1_positive(truth: &[bool], pred: &[bool]) -> Result<f64> {
    let [_, fp, fneg, tp] = confusion(truth, pred)?;
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn report(feature_set: Option<FeatureSet>, folds: Vec<StressFold>, predictions: Vec<StressPrediction>, checks: usize) -> Result<StressReport> {
    let truth: Vec<bool> = predictions.iter().map(|p| p.label.is_stress()).collect();
    let pred: Vec<bool> = predictions.iter().map(|p| p.predicted.is_stress()).collect();
    Ok(StressReport {
        feature_set,
        bacc: balanced_accuracy(&truth, &pred)?,
        f1: f1_positive(&truth, &pred)?,
        folds,
        predictions,
        leakage_checks: checks,
    })
}

/// Leave-one-subject-out gradient boosting on the chosen feature families.
///
/// Missing features are filled with the median of the training fold (0 when
/// the whole fold lacks that feature).
pub fn classify_stress(features: &[StressFeatureVector], set: FeatureSet, cfg: &GbdtConfig) -> Result<StressReport> {
    cfg.validate()?;
    let ids: Vec<String> = {
        let mut ids: Vec<String> = features.iter().map(|f| f.participant_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    };
    let cols = set.columns();
    let mut folds = Vec::with_capacity(ids.len());
    let mut predictions = Vec::with_capacity(features.len());
    let mut checks = 0;
    for split in loso_splits(&ids)? {
        let (train, test): (Vec<&StressFeatureVector>, Vec<&StressFeatureVector>) =
            features.iter().partition(|f| f.participant_id != split.test_id);
        checks += 1;
        if let Some(f) = train.iter().find(|f| f.participant_id == split.test_id) {
            return Err(Error::Protocol(format!("test participant {} in its training fold", f.participant_id)));
        }
        let medians: Vec<f64> = cols
            .clone()
            .map(|c| median(train.iter().filter_map(|f| f.values()[c]).collect()).unwrap_or(0.0))
            .collect();
        let matrix = |rows: &[&StressFeatureVector]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|f| {
                    let v = f.values();
                    cols.clone().zip(&medians).map(|(c, m)| v[c].unwrap_or(*m)).collect()
                })
                .collect()
        };
        let y: Vec<bool> = train.iter().map(|f| f.label.is_stress()).collect();
        let model = GradientBoosting::fit(&matrix(&train), &y, cfg)?;
        for (f, row) in test.iter().zip(matrix(&test)) {
            predictions.push(StressPrediction {
                participant_id: f.participant_id.clone(),
                window_index: f.window_index,
                label: f.label,
                predicted: if model.predict(&row) {
                    StressLabel::Stress
                } else {
                    StressLabel::Rest
                },
                probability: model.predict_proba(&row),
            });
        }
        folds.push(StressFold {
            test_id: split.test_id,
            n_train: train.len(),
            n_test: test.len(),
            medians,
        });
    }
    report(Some(set), folds, predictions, checks)
}

/// The trivial baseline that labels every window as rest.
pub fn always_rest(features: &[StressFeatureVector]) -> Result<StressReport> {
    let predictions = features
        .iter()
        .map(|f| StressPrediction {
            participant_id: f.participant_id.clone(),
            window_index: f.window_index,
            label: f.label,
            predicted: StressLabel::Rest,
            probability: 0.0,
        })
        .collect();
    report(None, Vec::new(), predictions, 0)
}

/// Rows of `(method, signals, report)` as a Markdown table.
pub fn markdown_stress_table(rows: &[(String, String, StressReport)]) -> String {
    let mut s = String::from("| Method | Signals | BACC | F1 |\n|---|---|---|---|\n");
    for (method, signals, r) in rows {
        s.push_str(&format!("| {method} | {signals} | {:.2} | {:.2} |\n", r.bacc, r.f1));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stress::EdaFeatures;

    fn row(id: &str, k: usize, stress: bool, mu: f64) -> StressFeatureVector {
        StressFeatureVector {
            participant_id: id.into(),
            window_index: k,
            label: if stress { StressLabel::Stress } else { StressLabel::Rest },
            hr: None,
            eda: Some(EdaFeatures {
                mu,
                sigma: 0.1,
                min: mu - 0.2,
                max: mu + 0.2,
                mu_change: 0.0,
            }),
        }
    }

    fn protocol_rows(shift: f64) -> Vec<StressFeatureVector> {
        ["a", "b", "c", "d"]
            .iter()
            .enumerate()
            .flat_map(|(p, id)| {
                (0..19).map(move |k| {
                    let s = [4, 9, 14].contains(&k);
                    row(id, k, s, p as f64 * 0.1 + (k % 3) as f64 * 0.05 + if s { shift } else { 0.0 })
                })
            })
            .collect()
    }

    #[test]
    fn metric_oracles() {
        let t = [true, false, false, false];
        assert_eq!(balanced_accuracy(&t, &[false; 4]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&t, &[true; 4]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&t, &[true, true, false, false]).unwrap(), 0.5 * (1.0 + 2.0 / 3.0));
        assert_eq!(f1_positive(&t, &[false; 4]).unwrap(), 0.0);
        assert_eq!(f1_positive(&t, &[true, true, false, false]).unwrap(), 2.0 / 3.0);
        assert!(matches!(balanced_accuracy(&[false; 3], &[false; 3]), Err(Error::SingleClass)));
    }

    #[test]
    fn always_rest_is_chance() {
        let r = always_rest(&protocol_rows(0.0)).unwrap();
        assert_eq!(r.bacc, 0.5);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn separable_eda_shift() {
        let r = classify_stress(&protocol_rows(3.0), FeatureSet::EdaOnly, &GbdtConfig::default()).unwrap();
        assert_eq!(r.bacc, 1.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.folds.len(), 4);
        assert_eq!(r.leakage_checks, 4);
        assert!(r.folds.iter().all(|f| f.n_train == 57 && f.n_test == 19));
    }

    #[test]
    fn missing_family_is_imputed() {
        let r = classify_stress(&protocol_rows(3.0), FeatureSet::Both, &GbdtConfig::default()).unwrap();
        assert_eq!(r.bacc, 1.0);
        assert!(r.folds[0].medians[..5].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_class_fold_rejected() {
        let rows: Vec<_> = ["a", "b", "c"].iter().flat_map(|id| (0..5).map(move |k| row(id, k, false, 1.0))).collect();
        assert!(matches!(
            classify_stress(&rows, FeatureSet::EdaOnly, &GbdtConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn table_layout() {
        let r = always_rest(&protocol_rows(0.0)).unwrap();
        let t = markdown_stress_table(&[("Baseline".into(), "-".into(), r)]);
        assert!(t.contains("| Baseline | - | 0.50 | 0.00 |"));
    }
}
