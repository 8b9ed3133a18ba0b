//! Oracles and fixtures shared by the integration tests. Nothing here calls
//! into the library's numerical code.

#![allow(dead_code, clippy::needless_range_loop)]

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kernel families as plain tags so the oracle does not depend on the library enum.
#[derive(Clone, Copy, Debug)]
pub enum Family {
    Presence,
    Intersection,
    Spectrum,
}

fn windows(s: &[char], p: usize) -> Vec<&[char]> {
    if s.len() < p {
        Vec::new()
    } else {
        (0..=s.len() - p).map(|i| &s[i..i + p]).collect()
    }
}

fn occurrences(hay: &[&[char]], g: &[char]) -> u64 {
    hay.iter().filter(|w| **w == g).count() as u64
}

/// Kernel by comparing every substring of `x` against every substring of `y`.
pub fn naive_kernel(x: &str, y: &str, p: usize, family: Family) -> f64 {
    let xs: Vec<char> = x.chars().collect();
    let ys: Vec<char> = y.chars().collect();
    let wx = windows(&xs, p);
    let wy = windows(&ys, p);
    let mut total = 0u64;
    match family {
        Family::Spectrum => {
            for a in &wx {
                for b in &wy {
                    if a == b {
                        total += 1;
                    }
                }
            }
        }
        Family::Presence | Family::Intersection => {
            for (i, a) in wx.iter().enumerate() {
                // count each distinct n-gram once, at its first occurrence
                if wx[..i].contains(a) {
                    continue;
                }
                let cx = occurrences(&wx, a);
                let cy = occurrences(&wy, a);
                total += match family {
                    Family::Presence => u64::from(cy > 0),
                    _ => cx.min(cy),
                };
            }
        }
    }
    total as f64
}

pub fn naive_blended(
    x: &str,
    y: &str,
    p_min: usize,
    p_max: usize,
    family: Family,
    lowercase: bool,
) -> f64 {
    let (x, y) = if lowercase {
        (x.to_lowercase(), y.to_lowercase())
    } else {
        (x.to_owned(), y.to_owned())
    };
    (p_min..=p_max)
        .map(|p| naive_kernel(&x, &y, p, family))
        .sum()
}

pub type Dense = Vec<Vec<f64>>;

pub fn naive_gram(
    texts: &[&str],
    p_min: usize,
    p_max: usize,
    family: Family,
    lowercase: bool,
) -> Dense {
    texts
        .iter()
        .map(|a| {
            texts
                .iter()
                .map(|b| naive_blended(a, b, p_min, p_max, family, lowercase))
                .collect()
        })
        .collect()
}

pub fn naive_normalize(k: &Dense) -> Dense {
    let n = k.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let d = k[i][i] * k[j][j];
            out[i][j] = if d > 0.0 {
                (k[i][j] / d.sqrt()).clamp(0.0, 1.0)
            } else if i == j {
                1.0
            } else {
                0.0
            };
        }
    }
    out
}

pub fn naive_rbf(k: &Dense) -> Dense {
    k.iter()
        .map(|r| r.iter().map(|v| (v - 1.0).exp()).collect())
        .collect()
}

pub fn naive_product(k: &Dense) -> Dense {
    let n = k.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|t| k[i][t] * k[j][t]).sum();
        }
    }
    out
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &v)| {
            let mut row = r.clone();
            row.push(v);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for c in col..=n {
                m[row][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// One OVA round of kernel ridge regression. Returns `(scores, labels)` with
/// 1-based labels, lowest class on ties.
pub fn naive_round(
    k: &Dense,
    train: &[usize],
    labels: &[usize],
    test: &[usize],
    classes: usize,
    lambda: f64,
) -> (Dense, Vec<usize>) {
    let kt: Dense = train
        .iter()
        .enumerate()
        .map(|(a, &i)| {
            train
                .iter()
                .enumerate()
                .map(|(b, &j)| k[i][j] + if a == b { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    let mut scores = vec![vec![0.0; classes]; test.len()];
    for c in 1..=classes {
        let t: Vec<f64> = labels
            .iter()
            .map(|&l| if l == c { 1.0 } else { -1.0 })
            .collect();
        let alpha = gauss_solve(&kt, &t);
        for (row, &i) in test.iter().enumerate() {
            scores[row][c - 1] = train.iter().zip(&alpha).map(|(&j, a)| k[i][j] * a).sum();
        }
    }
    let labels = scores
        .iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..classes {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best + 1
        })
        .collect();
    (scores, labels)
}

/// Random text over a small alphabet.
pub fn random_text(rng: &mut impl Rng, alphabet: &[char], max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

const DOMAIN_WORDS: [(&str, &[&str]); 4] = [
    (
        "books",
        &["novel", "author", "chapter", "plot", "reader", "pages"],
    ),
    (
        "dvd",
        &["movie", "actor", "scene", "director", "film", "episode"],
    ),
    (
        "electronics",
        &["battery", "screen", "cable", "device", "signal", "charger"],
    ),
    (
        "kitchen",
        &["blender", "knife", "pan", "kettle", "dishwasher", "oven"],
    ),
];
const POSITIVE: [&str; 6] = [
    "excellent",
    "wonderful",
    "loved",
    "great",
    "perfect",
    "recommend",
];
const NEGATIVE: [&str; 6] = [
    "terrible",
    "awful",
    "broken",
    "waste",
    "disappointing",
    "refund",
];
const FILLER: [&str; 8] = ["the", "this", "it", "was", "and", "very", "really", "my"];

/// Review text for one domain and polarity.
pub fn review_text(rng: &mut impl Rng, domain: &str, positive: bool) -> String {
    let topic = DOMAIN_WORDS
        .iter()
        .find(|(d, _)| *d == domain)
        .map_or(&FILLER[..], |(_, w)| w);
    let sentiment = if positive { &POSITIVE } else { &NEGATIVE };
    let len = rng.gen_range(8..20);
    (0..len)
        .map(|_| match rng.gen_range(0..10) {
            0..=3 => *FILLER.choose(rng).unwrap(),
            4..=6 => *topic.choose(rng).unwrap(),
            _ => *sentiment.choose(rng).unwrap(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes a small dataset in the multi-domain review layout:
/// `<dir>/<domain>/{positive,negative}.review`.
pub fn write_mdsd(dir: &Path, per_class: usize, seed: u64) {
    let mut rng = rng(seed);
    for (domain, _) in DOMAIN_WORDS {
        let d = dir.join(domain);
        std::fs::create_dir_all(&d).unwrap();
        for (stem, positive) in [("negative", false), ("positive", true)] {
            let mut body = String::new();
            for k in 0..per_class {
                let rating = if positive {
                    [4.0, 5.0][k % 2]
                } else {
                    [1.0, 2.0][k % 2]
                };
                let _ = write!(
                    body,
                    "<review>\n<unique_id>\n{domain}-{stem}-{k}\n</unique_id>\n<rating>\n{rating:.1}\n</rating>\n<review_text>\n{}\n</review_text>\n</review>\n",
                    review_text(&mut rng, domain, positive)
                );
            }
            // one neutral review that ingestion must drop
            let _ = write!(
                body,
                "<review>\n<rating>\n3.0\n</rating>\n<review_text>\nit was fine\n</review_text>\n</review>\n"
            );
            std::fs::write(d.join(format!("{stem}.review")), body).unwrap();
        }
    }
}
