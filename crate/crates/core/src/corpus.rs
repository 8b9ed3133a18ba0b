//! Review corpora: ingestion of the multi-domain Amazon review files, the
//! canonical TSV format, and experiment splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ngram::KernelConfig;
use crate::tkc::TkcConfig;

pub const DOMAINS: [&str; 4] = ["books", "dvd", "electronics", "kitchen"];
pub const CLASS_COUNT: usize = 2;
/// Reviews per class and domain in the balanced release.
pub const EXPECTED_PER_CLASS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Negative = 1,
    Positive = 2,
}

impl Label {
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(class: usize) -> Option<Label> {
        match class {
            1 => Some(Label::Negative),
            2 => Some(Label::Positive),
            _ => None,
        }
    }

    /// More than 3 stars is positive, fewer is negative, exactly 3 has no label.
    pub fn from_rating(rating: f64) -> Option<Label> {
        if rating > 3.0 {
            Some(Label::Positive)
        } else if rating < 3.0 {
            Some(Label::Negative)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn label_str(label: Option<Label>) -> &'static str {
    label.map_or("unlabeled", Label::as_str)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub domain: String,
    pub label: Option<Label>,
    pub text: String,
}

impl AsRef<str> for Document {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

/// One-letter code used in setting names such as `DEK->B`.
pub fn domain_code(domain: &str) -> String {
    domain
        .chars()
        .next()
        .map(|c| c.to_uppercase().collect())
        .unwrap_or_default()
}

fn sort_documents(docs: &mut [Document]) {
    docs.sort_by(|a, b| (&a.domain, &a.id).cmp(&(&b.domain, &b.id)));
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordError {
    pub file: PathBuf,
    /// 1-based position of the review within its file.
    pub record: usize,
    pub reason: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} review #{}: {}",
            self.file.display(),
            self.record,
            self.reason
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub errors: Vec<RecordError>,
    /// Reviews dropped because their rating maps to no label.
    pub neutral_excluded: usize,
    /// Invalid UTF-8 sequences replaced with U+FFFD.
    pub replacements: usize,
    pub warnings: Vec<String>,
}

impl IngestReport {
    /// `(negative, positive)` counts per domain.
    pub fn balance(&self) -> BTreeMap<String, (usize, usize)> {
        label_balance(&self.documents)
    }
}

pub fn label_balance(docs: &[Document]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for d in docs {
        let e = out.entry(d.domain.clone()).or_default();
        match d.label {
            Some(Label::Negative) => e.0 += 1,
            Some(Label::Positive) => e.1 += 1,
            None => {}
        }
    }
    out
}

/// Decodes UTF-8, replacing invalid sequences, and counts the replacements.
pub fn decode_lossy(bytes: &[u8]) -> (String, usize) {
    let mut out = String::with_capacity(bytes.len());
    let mut replaced = 0;
    for chunk in bytes.utf8_chunks() {
        out.push_str(chunk.valid());
        if !chunk.invalid().is_empty() {
            out.push(char::REPLACEMENT_CHARACTER);
            replaced += 1;
        }
    }
    (out, replaced)
}

/// Content of the first `<tag>...</tag>` element in `s`, trimmed.
fn element<'a>(s: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = s.find(&open)? + open.len();
    let end = s[start..].find(&close)? + start;
    Some(s[start..end].trim())
}

/// Splits pseudo-XML review file contents into `<review>` blocks.
fn review_blocks(s: &str) -> Vec<&str> {
    const OPEN: &str = "<review>";
    const CLOSE: &str = "</review>";
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(start) = rest.find(OPEN) {
        let body = &rest[start + OPEN.len()..];
        let end = body.find(CLOSE).unwrap_or(body.len());
        out.push(&body[..end]);
        rest = &body[(end + CLOSE.len()).min(body.len())..];
    }
    out
}

/// Parses one review file. Returns documents, per-record errors, neutral
/// reviews dropped and UTF-8 replacements.
pub fn parse_review_file(
    bytes: &[u8],
    domain: &str,
    stem: &str,
    file: &Path,
) -> (Vec<Document>, Vec<RecordError>, usize, usize) {
    let (text, replaced) = decode_lossy(bytes);
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    let mut neutral = 0;
    for (k, block) in review_blocks(&text).into_iter().enumerate() {
        let record = k + 1;
        let err = |reason: String| RecordError {
            file: file.to_path_buf(),
            record,
            reason,
        };
        let rating = match element(block, "rating") {
            None => {
                errors.push(err("missing rating".into()));
                continue;
            }
            Some(r) => match r.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    errors.push(err(format!("unparsable rating `{r}`")));
                    continue;
                }
            },
        };
        let body = match element(block, "review_text") {
            Some(t) if !t.is_empty() => t,
            Some(_) => {
                errors.push(err("empty review text".into()));
                continue;
            }
            None => {
                errors.push(err("missing review text".into()));
                continue;
            }
        };
        match Label::from_rating(rating) {
            None => neutral += 1,
            Some(label) => docs.push(Document {
                id: format!("{domain}:{stem}:{record:05}"),
                domain: domain.to_owned(),
                label: Some(label),
                text: body.to_owned(),
            }),
        }
    }
    (docs, errors, neutral, replaced)
}

/// Reads `<dir>/<domain>/{negative,positive}.review` for every domain
/// subdirectory present.
pub fn ingest_mdsd(dir: &Path) -> Result<IngestReport> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading dataset directory {}", dir.display()), e))?;
    let mut domains: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                domains.push(name.to_owned());
            }
        }
    }
    domains.sort();

    let mut warnings = Vec::new();
    let mut files = Vec::new();
    for domain in &domains {
        for stem in ["negative", "positive"] {
            let path = dir.join(domain).join(format!("{stem}.review"));
            if path.is_file() {
                files.push((domain.clone(), stem, path));
            } else {
                warnings.push(format!("missing {}", path.display()));
            }
        }
    }
    for expected in DOMAINS {
        if !domains.iter().any(|d| d == expected) {
            warnings.push(format!("domain `{expected}` not present"));
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no review files found under {}",
            dir.display()
        )));
    }

    let parsed: Vec<_> = files
        .par_iter()
        .map(|(domain, stem, path)| match std::fs::read(path) {
            Ok(bytes) => parse_review_file(&bytes, domain, stem, path),
            Err(e) => (
                Vec::new(),
                vec![RecordError {
                    file: path.clone(),
                    record: 0,
                    reason: format!("unreadable: {e}"),
                }],
                0,
                0,
            ),
        })
        .collect();

    let mut report = IngestReport {
        warnings,
        ..Default::default()
    };
    for (docs, errors, neutral, replaced) in parsed {
        report.documents.extend(docs);
        report.errors.extend(errors);
        report.neutral_excluded += neutral;
        report.replacements += replaced;
    }
    sort_documents(&mut report.documents);
    for (domain, (neg, pos)) in report.balance() {
        if neg != EXPECTED_PER_CLASS || pos != EXPECTED_PER_CLASS {
            report.warnings.push(format!(
                "domain `{domain}` has {neg} negative / {pos} positive reviews, expected {EXPECTED_PER_CLASS} each"
            ));
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Canonical TSV

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

pub fn write_canonical<W: Write>(docs: &[Document], mut w: W) -> std::io::Result<()> {
    let mut line = String::new();
    for d in docs {
        line.clear();
        escape(&d.id, &mut line);
        line.push('\t');
        escape(&d.domain, &mut line);
        line.push('\t');
        line.push_str(label_str(d.label));
        line.push('\t');
        escape(&d.text, &mut line);
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// Parses canonical TSV. `source` is only used in error messages.
pub fn read_canonical<R: BufRead>(r: R, source: &Path) -> Result<Vec<Document>> {
    let malformed = |line: usize, reason: String| Error::MalformedLine {
        path: source.to_path_buf(),
        line,
        reason,
    };
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (k, line) in r.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", source.display()), e))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let id = unescape(fields[0]).map_err(|e| malformed(lineno, e))?;
        let domain = unescape(fields[1]).map_err(|e| malformed(lineno, e))?;
        let label = match fields[2] {
            "negative" => Some(Label::Negative),
            "positive" => Some(Label::Positive),
            "unlabeled" => None,
            other => return Err(malformed(lineno, format!("unknown label `{other}`"))),
        };
        let text = unescape(fields[3]).map_err(|e| malformed(lineno, e))?;
        if !seen.insert(id.clone()) {
            return Err(malformed(lineno, format!("duplicate id `{id}`")));
        }
        docs.push(Document {
            id,
            domain,
            label,
            text,
        });
    }
    Ok(docs)
}

pub fn save_canonical(docs: &[Document], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_canonical(docs, BufWriter::new(f))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_canonical(path: &Path) -> Result<Vec<Document>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_canonical(BufReader::new(f), path)
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MultiSource,
    SingleSource,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "multi_source" | "multi" => Ok(Mode::MultiSource),
            "single_source" | "single" => Ok(Mode::SingleSource),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MultiSource => "multi_source",
            Mode::SingleSource => "single_source",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub sources: Vec<String>,
    pub target: String,
    pub kernel: KernelConfig,
    pub tkc: TkcConfig,
}

impl ExperimentSpec {
    /// Sources are every domain of `docs` other than `target`.
    pub fn multi_source(docs: &[Document], target: &str) -> Self {
        let domains: BTreeSet<&str> = docs.iter().map(|d| d.domain.as_str()).collect();
        ExperimentSpec {
            mode: Mode::MultiSource,
            sources: domains
                .into_iter()
                .filter(|d| *d != target)
                .map(str::to_owned)
                .collect(),
            target: target.to_owned(),
            kernel: KernelConfig::default(),
            tkc: TkcConfig::default(),
        }
    }

    pub fn single_source(source: &str, target: &str) -> Self {
        ExperimentSpec {
            mode: Mode::SingleSource,
            sources: vec![source.to_owned()],
            target: target.to_owned(),
            kernel: KernelConfig::default(),
            tkc: TkcConfig::default(),
        }
    }

    /// Setting label such as `DEK->B`.
    pub fn setting(&self) -> String {
        let src: String = self.sources.iter().map(|s| domain_code(s)).collect();
        format!("{src}->{}", domain_code(&self.target))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig("no source domains".into()));
        }
        if self.mode == Mode::SingleSource && self.sources.len() != 1 {
            return Err(Error::InvalidConfig(
                "single_source mode takes exactly one source domain".into(),
            ));
        }
        if self.sources.contains(&self.target) {
            return Err(Error::InvalidConfig(format!(
                "target domain `{}` is also a source",
                self.target
            )));
        }
        self.kernel.validate()
    }
}

/// Training documents are the labeled documents of the source domains; test
/// documents are all documents of the target domain. Both sorted by
/// `(domain, id)`.
pub fn make_split(
    docs: &[Document],
    spec: &ExperimentSpec,
) -> Result<(Vec<Document>, Vec<Document>)> {
    spec.validate()?;
    let sources: HashSet<&str> = spec.sources.iter().map(String::as_str).collect();
    let mut train: Vec<Document> = docs
        .iter()
        .filter(|d| sources.contains(d.domain.as_str()) && d.label.is_some())
        .cloned()
        .collect();
    let mut test: Vec<Document> = docs
        .iter()
        .filter(|d| d.domain == spec.target)
        .cloned()
        .collect();
    for source in &spec.sources {
        if !train.iter().any(|d| &d.domain == source) {
            return Err(Error::Data(format!(
                "source domain `{source}` has no labeled documents"
            )));
        }
    }
    if test.is_empty() {
        return Err(Error::Data(format!(
            "target domain `{}` has no documents",
            spec.target
        )));
    }
    sort_documents(&mut train);
    sort_documents(&mut test);
    Ok((train, test))
}
