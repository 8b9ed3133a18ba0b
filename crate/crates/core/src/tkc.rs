//! Two-round transductive kernel classifier.
//!
//! Round one fits one-versus-all models on the training block of the
//! transductive kernel and predicts every test sample. The `r` test samples
//! with the highest confidence are then appended to the training set with
//! their predicted labels, and round two re-fits and re-predicts all test
//! samples. Kernel values are never recomputed between rounds; the second
//! training block is sliced out of the same matrix.
//!
//! Test labels are not an input here, so they cannot leak into training.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{encode_ova, fit_predict_ova, ScoreTable};
use crate::error::{Error, Result};
use crate::matrix::{KernelMatrix, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TkcConfig {
    /// Test samples promoted into the training set after round one.
    pub r: usize,
    pub lambda: f64,
    pub classes: usize,
}

impl Default for TkcConfig {
    fn default() -> Self {
        TkcConfig {
            r: 1000,
            lambda: 1e-5,
            classes: 2,
        }
    }
}

/// Everything the classifier decided, in test-set positions (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct TkcTrace {
    pub round1: ScoreTable,
    /// Test positions by descending round-one confidence.
    pub order: Vec<usize>,
    /// The first `min(r, n)` entries of `order`.
    pub promoted: Vec<usize>,
    /// Round-one predictions at the promoted positions.
    pub pseudo_labels: Vec<usize>,
    /// `None` when only one round was run.
    pub round2: Option<ScoreTable>,
}

impl TkcTrace {
    /// Final predicted class per test sample (1-based classes).
    pub fn predictions(&self) -> &[usize] {
        match &self.round2 {
            Some(t) => &t.predicted,
            None => &self.round1.predicted,
        }
    }

    /// Number of promoted samples per class, index 0 for class 1.
    pub fn promoted_class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &label in &self.pseudo_labels {
            counts[label - 1] += 1;
        }
        counts
    }

    /// One line per test sample:
    /// `index  round1_label  round1_score  promoted  final_label`.
    pub fn to_report(&self) -> String {
        let n = self.round1.predicted.len();
        let mut promoted = vec![false; n];
        for &i in &self.promoted {
            promoted[i] = true;
        }
        let finals = self.predictions();
        let mut out = String::from("#index\tround1_label\tround1_score\tpromoted\tfinal_label\n");
        for i in 0..n {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i,
                self.round1.predicted[i],
                self.round1.confidence[i],
                u8::from(promoted[i]),
                finals[i]
            );
        }
        out
    }
}

/// Test positions sorted by descending score; ties go to the lower position.
pub fn rank_by_confidence(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn check_inputs(k: &KernelMatrix, train_labels: &[usize], cfg: &TkcConfig) -> Result<()> {
    if k.stage() != Stage::Transductive {
        return Err(Error::WrongStage {
            expected: "transductive",
            actual: k.stage().as_str(),
        });
    }
    if k.m() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if train_labels.len() != k.m() {
        return Err(Error::DimensionMismatch {
            expected: k.m(),
            actual: train_labels.len(),
        });
    }
    if cfg.classes < 2 {
        return Err(Error::InvalidConfig(
            "at least two classes are required".into(),
        ));
    }
    Ok(())
}

fn empty_table() -> ScoreTable {
    ScoreTable {
        scores: Vec::new(),
        predicted: Vec::new(),
        confidence: Vec::new(),
    }
}

fn fit_round(
    k: &KernelMatrix,
    train_idx: &[usize],
    labels: &[usize],
    cfg: &TkcConfig,
) -> Result<ScoreTable> {
    let test_idx = k.test_indices();
    let k_train = k.slice(train_idx, train_idx)?;
    let k_test = k.slice(&test_idx, train_idx)?;
    let targets = encode_ova(labels, cfg.classes)?;
    fit_predict_ova(&k_train, &k_test, &targets, cfg.lambda)
}

/// Single inductive fit on the training block; no promotion.
pub fn run_single_round(
    k: &KernelMatrix,
    train_labels: &[usize],
    cfg: &TkcConfig,
) -> Result<TkcTrace> {
    check_inputs(k, train_labels, cfg)?;
    let round1 = if k.n() == 0 {
        empty_table()
    } else {
        fit_round(k, &k.train_indices(), train_labels, cfg)?
    };
    Ok(TkcTrace {
        order: rank_by_confidence(&round1.confidence),
        round1,
        promoted: Vec::new(),
        pseudo_labels: Vec::new(),
        round2: None,
    })
}

/// Runs both rounds of the transductive classifier.
pub fn run_tkc(k: &KernelMatrix, train_labels: &[usize], cfg: &TkcConfig) -> Result<TkcTrace> {
    check_inputs(k, train_labels, cfg)?;
    if k.n() == 0 {
        return Ok(TkcTrace {
            round1: empty_table(),
            order: Vec::new(),
            promoted: Vec::new(),
            pseudo_labels: Vec::new(),
            round2: Some(empty_table()),
        });
    }

    let mut train_idx = k.train_indices();
    let mut labels = train_labels.to_vec();
    let round1 = fit_round(k, &train_idx, &labels, cfg)?;

    let order = rank_by_confidence(&round1.confidence);
    let keep = cfg.r.min(k.n());
    let promoted: Vec<usize> = order[..keep].to_vec();
    let pseudo_labels: Vec<usize> = promoted.iter().map(|&i| round1.predicted[i]).collect();
    labels.extend_from_slice(&pseudo_labels);
    train_idx.extend(promoted.iter().map(|&i| k.m() + i));

    let round2 = fit_round(k, &train_idx, &labels, cfg)?;
    Ok(TkcTrace {
        round1,
        order,
        promoted,
        pseudo_labels,
        round2: Some(round2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_by_confidence(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_by_confidence(&[0.5, 0.5]), vec![0, 1]);
        assert!(rank_by_confidence(&[]).is_empty());
    }

    fn toy() -> KernelMatrix {
        let rows = vec![
            vec![3.0, 0.5, 0.2, 1.0, 0.1],
            vec![0.5, 3.0, 0.4, 0.2, 1.2],
            vec![0.2, 0.4, 3.0, 0.3, 0.9],
            vec![1.0, 0.2, 0.3, 3.0, 0.2],
            vec![0.1, 1.2, 0.9, 0.2, 3.0],
        ];
        KernelMatrix::new(Matrix::from_rows(&rows).unwrap(), 3, 2, Stage::Transductive).unwrap()
    }

    #[test]
    fn r_zero_matches_single_round() {
        let cfg = TkcConfig {
            r: 0,
            lambda: 1e-3,
            classes: 2,
        };
        let k = toy();
        let two = run_tkc(&k, &[1, 2, 2], &cfg).unwrap();
        let one = run_single_round(&k, &[1, 2, 2], &cfg).unwrap();
        assert_eq!(two.predictions(), one.predictions());
        assert_eq!(two.round2.as_ref().unwrap(), &one.round1);
        assert!(two.promoted.is_empty());
    }

    #[test]
    fn r_clamped_to_n() {
        let cfg = TkcConfig {
            r: 50,
            lambda: 1e-3,
            classes: 2,
        };
        let trace = run_tkc(&toy(), &[1, 2, 2], &cfg).unwrap();
        assert_eq!(trace.promoted.len(), 2);
        assert_eq!(
            trace.pseudo_labels,
            trace
                .promoted
                .iter()
                .map(|&i| trace.round1.predicted[i])
                .collect::<Vec<_>>()
        );
        assert_eq!(trace.predictions().len(), 2);
        assert_eq!(trace.promoted_class_counts(2).iter().sum::<usize>(), 2);
    }

    #[test]
    fn input_guards() {
        let cfg = TkcConfig::default();
        let k = toy();
        assert!(run_tkc(&k, &[1, 2], &cfg).is_err());
        let raw = KernelMatrix::new(k.values().clone(), 3, 2, Stage::Raw).unwrap();
        assert!(matches!(
            run_tkc(&raw, &[1, 2, 2], &cfg),
            Err(Error::WrongStage { .. })
        ));
        let only_train = KernelMatrix::new(Matrix::identity(2), 2, 0, Stage::Transductive).unwrap();
        let trace = run_tkc(&only_train, &[1, 2], &cfg).unwrap();
        assert!(trace.predictions().is_empty());
    }

    #[test]
    fn report_has_one_line_per_test_sample() {
        let cfg = TkcConfig {
            r: 1,
            lambda: 1e-3,
            classes: 2,
        };
        let trace = run_tkc(&toy(), &[1, 2, 2], &cfg).unwrap();
        let report = trace.to_report();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with('#'));
        let promoted: usize = lines[1..]
            .iter()
            .map(|l| l.split('\t').nth(3).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(promoted, 1);
    }
}
