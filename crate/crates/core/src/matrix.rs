//! The full train+test kernel matrix and its transforms.
//!
//! Samples are ordered as the `m` training documents followed by the `n`
//! test documents. The pipeline runs
//!
//! ```text
//! raw K --normalize--> K^ --rbf--> K~ --product--> K" = K~ K~^T
//! ```
//!
//! Each row of the RBF matrix holds the similarity of one sample to every
//! training and test sample, so the final product compares samples through
//! feature vectors that already include the test set.
//!
//! Indices in this module are 0-based.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::ngram::{char_boundaries, windows, KernelConfig, KernelFamily};

pub const MAGIC: &[u8; 4] = b"TSKM";
pub const FORMAT_VERSION: u8 = 0x01;
const HEADER_LEN: u64 = 4 + 1 + 8 + 8 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw = 0,
    Normalized = 1,
    Rbf = 2,
    Transductive = 3,
}

impl Stage {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Stage> {
        match code {
            0 => Some(Stage::Raw),
            1 => Some(Stage::Normalized),
            2 => Some(Stage::Rbf),
            3 => Some(Stage::Transductive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Normalized => "normalized",
            Stage::Rbf => "rbf",
            Stage::Transductive => "transductive",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Stage::Raw),
            "normalized" => Ok(Stage::Normalized),
            "rbf" => Ok(Stage::Rbf),
            "transductive" => Ok(Stage::Transductive),
            other => Err(Error::InvalidConfig(format!("unknown stage `{other}`"))),
        }
    }
}

/// Dense symmetric `(m+n) x (m+n)` matrix over training then test samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    values: Matrix,
    m: usize,
    n: usize,
    stage: Stage,
}

impl KernelMatrix {
    pub fn new(values: Matrix, m: usize, n: usize, stage: Stage) -> Result<Self> {
        let dim = m + n;
        if values.rows() != dim || values.cols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: values.rows().max(values.cols()),
            });
        }
        Ok(KernelMatrix {
            values,
            m,
            n,
            stage,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m + self.n
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.m).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (self.m..self.m + self.n).collect()
    }

    fn expect_stage(&self, allowed: &[Stage], expected: &'static str) -> Result<()> {
        if allowed.contains(&self.stage) {
            Ok(())
        } else {
            Err(Error::WrongStage {
                expected,
                actual: self.stage.as_str(),
            })
        }
    }

    /// Sub-matrix by row and column selection.
    pub fn slice(&self, rows: &[usize], cols: &[usize]) -> Result<Matrix> {
        self.values.select(rows, cols)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[FORMAT_VERSION])?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&[self.stage.code()])?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.values.as_slice().chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<KernelMatrix> {
        let mut header = [0u8; HEADER_LEN as usize];
        let got = read_full(&mut r, &mut header)?;
        if got < header.len() {
            return Err(Error::CorruptMatrix {
                offset: got as u64,
                reason: format!("truncated header ({got} of {HEADER_LEN} bytes)"),
            });
        }
        if &header[..4] != MAGIC {
            return Err(Error::CorruptMatrix {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        if header[4] != FORMAT_VERSION {
            return Err(Error::CorruptMatrix {
                offset: 4,
                reason: format!("unsupported format version {}", header[4]),
            });
        }
        let m = u64::from_le_bytes(header[5..13].try_into().unwrap());
        let n = u64::from_le_bytes(header[13..21].try_into().unwrap());
        let stage = Stage::from_code(header[21]).ok_or_else(|| Error::CorruptMatrix {
            offset: 21,
            reason: format!("unknown stage code {}", header[21]),
        })?;
        let dim = m
            .checked_add(n)
            .filter(|d| d.checked_mul(*d).and_then(|c| c.checked_mul(8)).is_some())
            .ok_or_else(|| Error::CorruptMatrix {
                offset: 5,
                reason: format!("implausible dimensions m={m} n={n}"),
            })?;
        let count = usize::try_from(dim * dim).map_err(|_| Error::CorruptMatrix {
            offset: 5,
            reason: "matrix too large for this platform".into(),
        })?;

        let mut values = Vec::new();
        values
            .try_reserve_exact(count)
            .map_err(|_| Error::CorruptMatrix {
                offset: 5,
                reason: format!("cannot allocate {count} values"),
            })?;
        let mut buf = vec![0u8; 8 * 8192];
        let mut offset = HEADER_LEN;
        while values.len() < count {
            let want = (count - values.len()).min(8192) * 8;
            let got = read_full(&mut r, &mut buf[..want])?;
            offset += got as u64;
            if got < want {
                return Err(Error::CorruptMatrix {
                    offset,
                    reason: format!(
                        "truncated payload: expected {} bytes",
                        HEADER_LEN + count as u64 * 8
                    ),
                });
            }
            values.extend(
                buf[..want]
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap())),
            );
        }
        let mut probe = [0u8; 1];
        if read_full(&mut r, &mut probe)? != 0 {
            return Err(Error::CorruptMatrix {
                offset,
                reason: "trailing bytes after payload".into(),
            });
        }
        let dim = dim as usize;
        KernelMatrix::new(
            Matrix::from_vec(dim, dim, values)?,
            m as usize,
            n as usize,
            stage,
        )
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("reading kernel matrix", e)),
        }
    }
    Ok(filled)
}

/// Writes the cache file atomically: a partial file never survives a failure.
pub fn save_matrix(k: &KernelMatrix, path: &Path) -> Result<()> {
    let tmp = path.with_extension("partial");
    let result = File::create(&tmp)
        .and_then(|f| k.write_to(BufWriter::new(f)))
        .and_then(|()| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(format!("writing {}", path.display()), e));
    }
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<KernelMatrix> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    KernelMatrix::read_from(BufReader::new(f))
}

/// Builds the raw blended kernel matrix over `train` followed by `test`.
///
/// An empty test set is allowed and yields the training Gram matrix.
pub fn build_full_matrix<D: AsRef<str> + Sync>(
    train: &[D],
    test: &[D],
    cfg: &KernelConfig,
) -> Result<KernelMatrix> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let texts: Vec<&str> = train.iter().chain(test).map(|d| d.as_ref()).collect();
    let values = gram_matrix(&texts, cfg);
    KernelMatrix::new(values, train.len(), test.len(), Stage::Raw)
}

/// Blended Gram matrix over arbitrary texts, preprocessed according to `cfg`.
pub fn gram_matrix<S: AsRef<str> + Sync>(texts: &[S], cfg: &KernelConfig) -> Matrix {
    let texts: Vec<Cow<'_, str>> = texts
        .par_iter()
        .map(|t| cfg.preprocess(t.as_ref()))
        .collect();
    let dim = texts.len();
    let mut out = Matrix::zeros(dim, dim);
    let offsets: Vec<Vec<usize>> = texts
        .par_iter()
        .map(|t| char_boundaries(t.as_ref()))
        .collect();
    for p in cfg.lengths() {
        let index = SparseIndex::build(&texts, &offsets, p);
        match cfg.family {
            KernelFamily::Presence => index.accumulate(&mut out, |_, _| 1),
            KernelFamily::Intersection => index.accumulate(&mut out, |a, b| u64::from(a.min(b))),
            KernelFamily::Spectrum => {
                index.accumulate(&mut out, |a, b| u64::from(a) * u64::from(b))
            }
        }
    }
    out.mirror_upper();
    out
}

/// Documents as sparse count vectors over interned n-grams, plus the
/// inverted index from n-gram to the documents containing it.
struct SparseIndex {
    docs: Vec<Vec<(u32, u32)>>,
    postings: Vec<Vec<(u32, u32)>>,
}

impl SparseIndex {
    fn build<S: AsRef<str>>(texts: &[S], offsets: &[Vec<usize>], p: usize) -> SparseIndex {
        let mut vocab: HashMap<&str, u32> = HashMap::new();
        let mut docs = Vec::with_capacity(texts.len());
        let mut local: HashMap<u32, u32> = HashMap::new();
        for (text, offs) in texts.iter().zip(offsets) {
            local.clear();
            for gram in windows(text.as_ref(), offs, p) {
                let next = vocab.len() as u32;
                let id = *vocab.entry(gram).or_insert(next);
                *local.entry(id).or_insert(0) += 1;
            }
            let mut v: Vec<(u32, u32)> = local.iter().map(|(&k, &c)| (k, c)).collect();
            v.sort_unstable();
            docs.push(v);
        }
        let mut postings: Vec<Vec<(u32, u32)>> = vec![Vec::new(); vocab.len()];
        for (d, v) in docs.iter().enumerate() {
            for &(f, c) in v {
                postings[f as usize].push((d as u32, c));
            }
        }
        SparseIndex { docs, postings }
    }

    /// Adds this length's kernel values to the upper triangle of `out`.
    fn accumulate<F>(&self, out: &mut Matrix, combine: F)
    where
        F: Fn(u32, u32) -> u64 + Sync,
    {
        let dim = self.docs.len();
        if dim == 0 {
            return;
        }
        out.as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each_init(
                || vec![0u64; dim],
                |acc, (i, row)| {
                    for &(f, ci) in &self.docs[i] {
                        let post = &self.postings[f as usize];
                        let start = post.partition_point(|&(d, _)| (d as usize) < i);
                        for &(d, cj) in &post[start..] {
                            acc[d as usize] += combine(ci, cj);
                        }
                    }
                    for (slot, a) in row[i..].iter_mut().zip(&mut acc[i..]) {
                        *slot += *a as f64;
                        *a = 0;
                    }
                },
            );
    }
}

/// `K^_ij = K_ij / sqrt(K_ii K_jj)`.
///
/// A row whose diagonal is zero (a document with no n-grams) gets 1 on the
/// diagonal and 0 elsewhere. Accepts raw or already normalized input.
pub fn normalize(k: KernelMatrix) -> Result<KernelMatrix> {
    k.expect_stage(&[Stage::Raw, Stage::Normalized], "raw")?;
    let KernelMatrix {
        mut values, m, n, ..
    } = k;
    let dim = m + n;
    let diag: Vec<f64> = (0..dim).map(|i| values.get(i, i)).collect();
    if dim > 0 {
        values
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j {
                        1.0
                    } else if diag[i] <= 0.0 || diag[j] <= 0.0 {
                        0.0
                    } else {
                        (*v / (diag[i] * diag[j]).sqrt()).clamp(0.0, 1.0)
                    };
                }
            });
    }
    Ok(KernelMatrix {
        values,
        m,
        n,
        stage: Stage::Normalized,
    })
}

/// `K~_ij = exp(-1 + K^_ij)`, elementwise.
pub fn rbf_transform(k: KernelMatrix) -> Result<KernelMatrix> {
    k.expect_stage(&[Stage::Normalized], "normalized")?;
    let KernelMatrix {
        mut values, m, n, ..
    } = k;
    values
        .as_mut_slice()
        .par_iter_mut()
        .for_each(|v| *v = (-1.0 + *v).exp());
    Ok(KernelMatrix {
        values,
        m,
        n,
        stage: Stage::Rbf,
    })
}

/// `K" = K~ K~^T`.
pub fn transductive_product(k: &KernelMatrix) -> Result<KernelMatrix> {
    k.expect_stage(&[Stage::Rbf], "rbf")?;
    Ok(KernelMatrix {
        values: k.values.mul_transpose(),
        m: k.m,
        n: k.n,
        stage: Stage::Transductive,
    })
}

/// Advances a matrix through the pipeline until it reaches `target`.
pub fn advance_to(mut k: KernelMatrix, target: Stage) -> Result<KernelMatrix> {
    if k.stage > target {
        return Err(Error::WrongStage {
            expected: target.as_str(),
            actual: k.stage.as_str(),
        });
    }
    while k.stage < target {
        k = match k.stage {
            Stage::Raw => normalize(k)?,
            Stage::Normalized => rbf_transform(k)?,
            Stage::Rbf => transductive_product(&k)?,
            Stage::Transductive => unreachable!(),
        };
    }
    Ok(k)
}

/// Raw matrix through to the transductive kernel in one call.
pub fn transductive_kernel<D: AsRef<str> + Sync>(
    train: &[D],
    test: &[D],
    cfg: &KernelConfig,
) -> Result<KernelMatrix> {
    advance_to(build_full_matrix(train, test, cfg)?, Stage::Transductive)
}
