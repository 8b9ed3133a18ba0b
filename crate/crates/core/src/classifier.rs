//! Kernel ridge regression in dual form with one-versus-all encoding.
//!
//! Class indices are 1-based throughout this module.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{norm, Cholesky, Matrix};

/// Relative residual the dual solve is expected to reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
const REFINEMENT_STEPS: usize = 3;

/// `labeled x c` matrix of +-1 targets, +1 in the column of the true class.
#[derive(Clone, Debug, PartialEq)]
pub struct OvaTargets {
    classes: usize,
    rows: Vec<Vec<f64>>,
}

impl OvaTargets {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Target vector for one class (1-based).
    pub fn column(&self, class: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[class - 1]).collect()
    }
}

pub fn encode_ova(labels: &[usize], classes: usize) -> Result<OvaTargets> {
    let rows = labels
        .iter()
        .map(|&label| {
            if label == 0 || label > classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let mut row = vec![-1.0; classes];
            row[label - 1] = 1.0;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(OvaTargets { classes, rows })
}

/// Dual weights of one binary classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct DualModel {
    pub alpha: Vec<f64>,
    /// Always zero for kernel ridge regression.
    pub bias: f64,
    /// `||(K + lambda I) alpha - t|| / ||t||` at fit time.
    pub relative_residual: f64,
}

/// Factorization of `K + lambda I`, shared by all one-versus-all fits on the
/// same training block.
pub struct KrrSolver<'a> {
    kernel: &'a Matrix,
    lambda: f64,
    chol: Cholesky,
}

impl<'a> KrrSolver<'a> {
    pub fn new(kernel: &'a Matrix, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularization must be positive, got {lambda}"
            )));
        }
        if !kernel.is_square() {
            return Err(Error::DimensionMismatch {
                expected: kernel.rows(),
                actual: kernel.cols(),
            });
        }
        let chol = Cholesky::factor_shifted(kernel, lambda)?;
        Ok(KrrSolver {
            kernel,
            lambda,
            chol,
        })
    }

    fn residual(&self, alpha: &[f64], targets: &[f64]) -> Vec<f64> {
        let mut r = self.kernel.matvec(alpha).expect("dimensions checked");
        for ((ri, &ai), &ti) in r.iter_mut().zip(alpha).zip(targets) {
            *ri = ti - (*ri + self.lambda * ai);
        }
        r
    }

    /// Solves `(K + lambda I) alpha = targets` with a few steps of iterative
    /// refinement.
    pub fn fit(&self, targets: &[f64]) -> Result<DualModel> {
        let mut alpha = self.chol.solve(targets)?;
        let t_norm = norm(targets).max(f64::MIN_POSITIVE);
        let mut r = self.residual(&alpha, targets);
        let mut rel = norm(&r) / t_norm;
        for _ in 0..REFINEMENT_STEPS {
            if rel <= RESIDUAL_TOLERANCE * 1e-3 {
                break;
            }
            let delta = self.chol.solve(&r)?;
            let candidate: Vec<f64> = alpha.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let r_new = self.residual(&candidate, targets);
            let rel_new = norm(&r_new) / t_norm;
            if rel_new.is_nan() || rel_new >= rel {
                break;
            }
            alpha = candidate;
            r = r_new;
            rel = rel_new;
        }
        if rel > RESIDUAL_TOLERANCE {
            warn!("dual solve residual {rel:e} exceeds {RESIDUAL_TOLERANCE:e}");
        }
        Ok(DualModel {
            alpha,
            bias: 0.0,
            relative_residual: rel,
        })
    }
}

/// Fits one kernel ridge regression model on a training block.
pub fn krr_fit(kernel: &Matrix, targets: &[f64], lambda: f64) -> Result<DualModel> {
    if targets.len() != kernel.rows() {
        return Err(Error::DimensionMismatch {
            expected: kernel.rows(),
            actual: targets.len(),
        });
    }
    KrrSolver::new(kernel, lambda)?.fit(targets)
}

/// `K_test * alpha + b`.
pub fn score(k_test: &Matrix, model: &DualModel) -> Result<Vec<f64>> {
    let mut s = k_test.matvec(&model.alpha)?;
    for v in &mut s {
        *v += model.bias;
    }
    Ok(s)
}

/// Per-sample OVA scores with the argmax class and its score.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    /// `n x c` scores, row per test sample.
    pub scores: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
    pub confidence: Vec<f64>,
}

/// Row-wise argmax (1-based, lowest index wins ties) and max.
pub fn predict_ova(scores: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    scores
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            (best + 1, row[best])
        })
        .unzip()
}

/// Fits one model per class on `k_train` and scores `k_test` with each.
pub fn fit_predict_ova(
    k_train: &Matrix,
    k_test: &Matrix,
    targets: &OvaTargets,
    lambda: f64,
) -> Result<ScoreTable> {
    if targets.len() != k_train.rows() {
        return Err(Error::DimensionMismatch {
            expected: k_train.rows(),
            actual: targets.len(),
        });
    }
    if k_test.cols() != k_train.rows() {
        return Err(Error::DimensionMismatch {
            expected: k_train.rows(),
            actual: k_test.cols(),
        });
    }
    let solver = KrrSolver::new(k_train, lambda)?;
    let columns: Vec<Vec<f64>> = (1..=targets.classes())
        .into_par_iter()
        .map(|class| {
            let model = solver.fit(&targets.column(class))?;
            score(k_test, &model)
        })
        .collect::<Result<_>>()?;
    let n = k_test.rows();
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();
    let (predicted, confidence) = predict_ova(&scores);
    Ok(ScoreTable {
        scores,
        predicted,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_examples() {
        let t = encode_ova(&[1, 2], 2).unwrap();
        assert_eq!(t.rows(), &[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let t = encode_ova(&[2], 3).unwrap();
        assert_eq!(t.rows(), &[vec![-1.0, 1.0, -1.0]]);
        let t = encode_ova(&[1, 1, 1], 2).unwrap();
        assert_eq!(t.column(1), vec![1.0; 3]);
        assert_eq!(t.column(2), vec![-1.0; 3]);
        assert!(matches!(
            encode_ova(&[3], 2),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 2
            })
        ));
        assert!(encode_ova(&[0], 2).is_err());
    }

    #[test]
    fn fit_examples() {
        let k = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let model = krr_fit(&k, &[1.0], 1e-12).unwrap();
        assert!((model.alpha[0] - 1.0).abs() < 1e-11);

        let k = Matrix::identity(2);
        let model = krr_fit(&k, &[1.0, -1.0], 1.0).unwrap();
        assert!((model.alpha[0] - 0.5).abs() <= 1e-12);
        assert!((model.alpha[1] + 0.5).abs() <= 1e-12);
        assert_eq!(model.bias, 0.0);
        assert!(model.relative_residual <= RESIDUAL_TOLERANCE);
    }

    #[test]
    fn fit_rejects_bad_lambda_and_shapes() {
        let k = Matrix::identity(2);
        assert!(krr_fit(&k, &[1.0, 1.0], 0.0).is_err());
        assert!(krr_fit(&k, &[1.0, 1.0], -1.0).is_err());
        assert!(krr_fit(&k, &[1.0], 1.0).is_err());
    }

    #[test]
    fn score_examples() {
        let model = DualModel {
            alpha: vec![2.0, 3.0],
            bias: 0.0,
            relative_residual: 0.0,
        };
        let k = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(score(&k, &model).unwrap(), vec![2.0]);
        let zeros = Matrix::zeros(3, 2);
        let biased = DualModel {
            bias: 0.7,
            ..model.clone()
        };
        assert_eq!(score(&zeros, &biased).unwrap(), vec![0.7; 3]);
        let one = DualModel {
            alpha: vec![-2.0],
            bias: 0.1,
            relative_residual: 0.0,
        };
        let k = Matrix::from_rows(&[vec![0.5]]).unwrap();
        assert!((score(&k, &one).unwrap()[0] + 0.9).abs() < 1e-15);
        assert!(score(&Matrix::zeros(1, 3), &model).is_err());
    }

    #[test]
    fn predict_examples() {
        assert_eq!(predict_ova(&[vec![0.3, -0.2]]), (vec![1], vec![0.3]));
        assert_eq!(predict_ova(&[vec![0.5, 0.5]]), (vec![1], vec![0.5]));
        assert_eq!(
            predict_ova(&[vec![-1.0, 2.0], vec![3.0, 0.0]]),
            (vec![2, 1], vec![2.0, 3.0])
        );
    }

    #[test]
    fn binary_ova_columns_are_negated() {
        let k_train = Matrix::from_rows(&[
            vec![2.0, 0.5, 0.1],
            vec![0.5, 1.5, 0.3],
            vec![0.1, 0.3, 1.0],
        ])
        .unwrap();
        let k_test = Matrix::from_rows(&[vec![0.4, 0.2, 0.9], vec![1.0, 0.1, 0.0]]).unwrap();
        let targets = encode_ova(&[1, 2, 2], 2).unwrap();
        let table = fit_predict_ova(&k_train, &k_test, &targets, 1e-3).unwrap();
        for (row, &p) in table.scores.iter().zip(&table.predicted) {
            assert_eq!(row[0], -row[1]);
            assert_eq!(p, if row[0] >= 0.0 { 1 } else { 2 });
        }
    }
}
