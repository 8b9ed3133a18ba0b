//! Accuracy, McNemar's paired test, and result tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::corpus::domain_code;
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;
/// Critical value of chi-squared with one degree of freedom at 0.01.
pub const CHI2_CRITICAL_0_01: f64 = 6.635;
/// Discordant-pair count from which the chi-squared approximation is used.
pub const CHI2_MIN_DISCORDANT: u64 = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub per_class: Vec<ClassCounts>,
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<EvalResult> {
    if pred.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Data("accuracy over zero samples".into()));
    }
    let classes = gold.iter().chain(pred).copied().max().unwrap_or(0);
    let mut per_class: Vec<ClassCounts> = (1..=classes)
        .map(|class| ClassCounts {
            class,
            support: 0,
            correct: 0,
        })
        .collect();
    let mut correct = 0;
    for (&p, &g) in pred.iter().zip(gold) {
        if g >= 1 {
            per_class[g - 1].support += 1;
        }
        if p == g {
            correct += 1;
            if g >= 1 {
                per_class[g - 1].correct += 1;
            }
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / gold.len() as f64,
        n: gold.len(),
        correct,
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    ChiSquaredCorrected,
    ExactBinomial,
}

impl McNemarMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            McNemarMethod::ChiSquaredCorrected => "chi_squared_corrected",
            McNemarMethod::ExactBinomial => "exact_binomial",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
    /// Continuity-corrected chi-squared statistic `(|b-c|-1)^2 / (b+c)`.
    pub statistic: f64,
    pub p_value: f64,
    pub significant_at_0_01: bool,
    pub method: McNemarMethod,
}

impl McNemarResult {
    /// Continuity-corrected chi-squared when `b + c >= 25`, exact two-sided
    /// binomial test otherwise.
    pub fn from_counts(b: u64, c: u64) -> Self {
        let method = if b + c >= CHI2_MIN_DISCORDANT {
            McNemarMethod::ChiSquaredCorrected
        } else {
            McNemarMethod::ExactBinomial
        };
        Self::with_method(b, c, method)
    }

    pub fn with_method(b: u64, c: u64, method: McNemarMethod) -> Self {
        let total = b + c;
        if total == 0 {
            return McNemarResult {
                b,
                c,
                statistic: 0.0,
                p_value: 1.0,
                significant_at_0_01: false,
                method,
            };
        }
        let diff = b.abs_diff(c) as f64;
        let statistic = (diff - 1.0).powi(2) / total as f64;
        let (p_value, significant) = match method {
            McNemarMethod::ChiSquaredCorrected => {
                let chi = ChiSquared::new(1.0).expect("valid dof");
                (chi.sf(statistic), statistic > CHI2_CRITICAL_0_01)
            }
            McNemarMethod::ExactBinomial => {
                let p = exact_binomial_p(b, c);
                (p, p < SIGNIFICANCE_LEVEL)
            }
        };
        McNemarResult {
            b,
            c,
            statistic,
            p_value,
            significant_at_0_01: significant,
            method,
        }
    }
}

/// Two-sided exact binomial p-value of `min(b, c)` under `Bin(b+c, 1/2)`.
pub fn exact_binomial_p(b: u64, c: u64) -> f64 {
    let total = b + c;
    if total == 0 {
        return 1.0;
    }
    let dist = Binomial::new(0.5, total).expect("valid binomial");
    (2.0 * dist.cdf(b.min(c))).min(1.0)
}

pub fn mcnemar(pred_a: &[usize], pred_b: &[usize], gold: &[usize]) -> Result<McNemarResult> {
    if pred_a.len() != gold.len() || pred_b.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: if pred_a.len() != gold.len() {
                pred_a.len()
            } else {
                pred_b.len()
            },
        });
    }
    let (mut b, mut c) = (0u64, 0u64);
    for ((&a, &bb), &g) in pred_a.iter().zip(pred_b).zip(gold) {
        match (a == g, bb == g) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemarResult::from_counts(b, c))
}

/// One cell of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub source_domains: Vec<String>,
    pub target_domain: String,
    pub accuracy: f64,
    /// Comparison against the baseline run, when one was made.
    pub mcnemar: Option<McNemarResult>,
    /// Significant at 0.01 and more accurate than the baseline.
    pub significant_vs_baseline: bool,
}

impl ReportRow {
    pub fn setting(&self) -> String {
        let src: String = self.source_domains.iter().map(|s| domain_code(s)).collect();
        format!("{src}->{}", domain_code(&self.target_domain))
    }

    fn cell(&self) -> String {
        format!(
            "{:.1}{}",
            self.accuracy * 100.0,
            if self.significant_vs_baseline {
                "*"
            } else {
                ""
            }
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

fn first_appearance<'a>(items: impl Iterator<Item = String> + 'a) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

impl Report {
    /// Methods as rows, settings as columns, accuracy in percent with one
    /// decimal and `*` on entries significantly better than the baseline.
    pub fn to_text(&self) -> String {
        let methods = first_appearance(self.rows.iter().map(|r| r.method.clone()));
        let settings = first_appearance(self.rows.iter().map(ReportRow::setting));
        let mut grid: Vec<Vec<String>> = vec![std::iter::once("method".to_owned())
            .chain(settings.iter().cloned())
            .collect()];
        for method in &methods {
            let mut line = vec![method.clone()];
            for setting in &settings {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| &r.method == method && &r.setting() == setting)
                    .map_or_else(|| "-".to_owned(), ReportRow::cell);
                line.push(cell);
            }
            grid.push(line);
        }
        let cols = grid[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|j| {
                grid.iter()
                    .map(|row| row[j].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in &grid {
            let mut line = String::new();
            for (j, cell) in row.iter().enumerate() {
                if j == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[j]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[j]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "method\tsource_domains\ttarget_domain\taccuracy_percent\tsignificant_vs_baseline\tmcnemar_statistic\tmcnemar_method\n",
        );
        for r in &self.rows {
            let (stat, method) = match &r.mcnemar {
                Some(m) => (format!("{:.4}", m.statistic), m.method.as_str()),
                None => ("-".to_owned(), "-"),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.1}\t{}\t{}\t{}",
                r.method,
                r.source_domains.join(","),
                r.target_domain,
                r.accuracy * 100.0,
                u8::from(r.significant_vs_baseline),
                stat,
                method
            );
        }
        out
    }
}
