//! Character n-gram profiles and the presence, intersection and spectrum
//! string kernels.
//!
//! A profile maps every contiguous length-`p` character substring of a text
//! to its occurrence count. Characters are Unicode scalar values, so a
//! multi-byte code point counts as one character.
//!
//! The three kernel families differ only in how the two counts of a shared
//! n-gram are combined:
//!
//! | family       | term for a shared n-gram `v` |
//! |--------------|------------------------------|
//! | presence     | `1`                          |
//! | intersection | `min(num_v(x), num_v(y))`    |
//! | spectrum     | `num_v(x) * num_v(y)`        |
//!
//! Kernels over a range of lengths are blended by summing the per-length
//! values.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Counts n-grams shared by both texts, ignoring multiplicity.
    Presence,
    /// Sums the minimum of the two occurrence counts.
    Intersection,
    /// Sums the product of the two occurrence counts.
    Spectrum,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Presence,
        KernelFamily::Intersection,
        KernelFamily::Spectrum,
    ];

    /// Contribution of one n-gram present in both texts.
    #[inline]
    pub fn combine(self, a: u32, b: u32) -> u64 {
        match self {
            KernelFamily::Presence => 1,
            KernelFamily::Intersection => u64::from(a.min(b)),
            KernelFamily::Spectrum => u64::from(a) * u64::from(b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Presence => "presence",
            KernelFamily::Intersection => "intersection",
            KernelFamily::Spectrum => "spectrum",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            KernelFamily::Presence => 0,
            KernelFamily::Intersection => 1,
            KernelFamily::Spectrum => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code)).copied()
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "presence" | "presence_bits" | "p" | "0/1" => Ok(KernelFamily::Presence),
            "intersection" | "i" => Ok(KernelFamily::Intersection),
            "spectrum" | "s" => Ok(KernelFamily::Spectrum),
            other => Err(Error::InvalidConfig(format!(
                "unknown kernel family `{other}`"
            ))),
        }
    }
}

/// Kernel family plus n-gram length range; fully determines a kernel function.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub p_min: usize,
    pub p_max: usize,
    pub lowercase: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: KernelFamily::Presence,
            p_min: 5,
            p_max: 8,
            lowercase: true,
        }
    }
}

impl KernelConfig {
    pub fn new(family: KernelFamily, p_min: usize, p_max: usize) -> Result<Self> {
        let cfg = KernelConfig {
            family,
            p_min,
            p_max,
            lowercase: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_min == 0 {
            return Err(Error::InvalidConfig("p_min must be at least 1".into()));
        }
        if self.p_min > self.p_max {
            return Err(Error::InvalidConfig(format!(
                "p_min ({}) exceeds p_max ({})",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }

    pub fn lengths(&self) -> RangeInclusive<usize> {
        self.p_min..=self.p_max
    }

    /// Applies the configured text normalization. Whitespace and punctuation
    /// are kept.
    pub fn preprocess<'a>(&self, text: &'a str) -> Cow<'a, str> {
        if self.lowercase && text.chars().any(char::is_uppercase) {
            Cow::Owned(text.to_lowercase())
        } else {
            Cow::Borrowed(text)
        }
    }
}

/// Occurrence counts of every length-`p` character substring of one text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramProfile {
    p: usize,
    counts: HashMap<String, u32>,
    total: u64,
}

impl NGramProfile {
    pub fn empty(p: usize) -> Self {
        NGramProfile {
            p,
            counts: HashMap::new(),
            total: 0,
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct n-grams.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, ngram: &str) -> u32 {
        self.counts.get(ngram).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Byte offsets of every char boundary in `text`, including `text.len()`.
pub(crate) fn char_boundaries(text: &str) -> Vec<usize> {
    let mut offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    offsets.push(text.len());
    offsets
}

/// Iterates over all contiguous length-`p` character windows of `text`.
pub(crate) fn windows<'a>(
    text: &'a str,
    offsets: &'a [usize],
    p: usize,
) -> impl Iterator<Item = &'a str> + 'a {
    let chars = offsets.len() - 1;
    let count = if p == 0 || chars < p {
        0
    } else {
        chars - p + 1
    };
    (0..count).map(move |i| &text[offsets[i]..offsets[i + p]])
}

/// Counts all contiguous length-`p` substrings of an already preprocessed text.
///
/// Text shorter than `p` yields an empty profile.
///
/// # Panics
///
/// Panics if `p` is zero.
pub fn extract_profile(text: &str, p: usize) -> NGramProfile {
    assert!(p >= 1, "n-gram length must be at least 1");
    let offsets = char_boundaries(text);
    let mut counts: HashMap<String, u32> = HashMap::new();
    let mut total = 0u64;
    for gram in windows(text, &offsets, p) {
        match counts.get_mut(gram) {
            Some(c) => *c += 1,
            None => {
                counts.insert(gram.to_owned(), 1);
            }
        }
        total += 1;
    }
    NGramProfile { p, counts, total }
}

/// Kernel value between two profiles of the same n-gram length.
pub fn kernel_value(a: &NGramProfile, b: &NGramProfile, family: KernelFamily) -> Result<f64> {
    if a.p != b.p {
        return Err(Error::NGramLengthMismatch {
            left: a.p,
            right: b.p,
        });
    }
    // Iterate the smaller map; the sum is over shared keys only.
    let (small, large) = if a.counts.len() <= b.counts.len() {
        (a, b)
    } else {
        (b, a)
    };
    let mut sum = 0u64;
    for (gram, &ca) in &small.counts {
        if let Some(&cb) = large.counts.get(gram) {
            sum += family.combine(ca, cb);
        }
    }
    Ok(sum as f64)
}

/// Sum of per-length kernel values over `cfg.p_min..=cfg.p_max`.
///
/// Both texts are preprocessed according to `cfg` first.
pub fn blended_kernel(x: &str, y: &str, cfg: &KernelConfig) -> f64 {
    let x = cfg.preprocess(x);
    let y = cfg.preprocess(y);
    cfg.lengths()
        .map(|p| {
            let a = extract_profile(&x, p);
            let b = extract_profile(&y, p);
            kernel_value(&a, &b, cfg.family).expect("profiles share p")
        })
        .sum()
}
