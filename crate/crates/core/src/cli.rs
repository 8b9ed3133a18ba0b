//! The `tsk` command line: ingest, kernel, run and report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    self, label_str, load_canonical, make_split, save_canonical, Document, ExperimentSpec, Label,
    Mode, CLASS_COUNT,
};
use crate::error::{Error, Result};
use crate::eval::{self, accuracy, EvalResult, Report, ReportRow};
use crate::matrix::{
    self, advance_to, build_full_matrix, load_matrix, save_matrix, KernelMatrix, Stage,
};
use crate::ngram::{KernelConfig, KernelFamily};
use crate::tkc::{run_single_round, run_tkc, TkcConfig, TkcTrace};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

pub const DATASET_ENV: &str = "TSK_MDSD_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const TRACE_FILE: &str = "trace.tsv";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Parser)]
#[command(
    name = "tsk",
    version,
    about = "Transductive string kernels for cross-domain text classification"
)]
pub struct Cli {
    /// Worker threads (1 is the bit-exact reference mode; all counts give identical results).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert the multi-domain review files into a canonical corpus.
    Ingest(IngestArgs),
    /// Compute the kernel matrix for an experiment split and cache it.
    Kernel(KernelArgs),
    /// Run the classifier and write predictions, trace and accuracy.
    Run(RunArgs),
    /// Aggregate run directories into a results table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Dataset directory with one subdirectory per domain.
    #[arg(env = DATASET_ENV)]
    pub input: PathBuf,
    /// Output corpus (canonical TSV).
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Canonical corpus file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "multi_source", value_parser = parse_mode)]
    pub mode: Mode,
    /// Source domain(s). Defaults to every non-target domain in multi-source mode.
    #[arg(long = "source")]
    pub sources: Vec<String>,
    #[arg(long)]
    pub target: String,
}

#[derive(Debug, Clone, Args)]
pub struct KernelFlags {
    /// Kernel family: presence, intersection or spectrum.
    #[arg(long = "kernel", default_value = "presence", value_parser = parse_family)]
    pub family: KernelFamily,
    #[arg(long, default_value_t = 5)]
    pub p_min: usize,
    #[arg(long, default_value_t = 8)]
    pub p_max: usize,
    /// Keep letter case.
    #[arg(long)]
    pub no_lowercase: bool,
}

impl KernelFlags {
    pub fn config(&self) -> Result<KernelConfig> {
        Ok(KernelConfig::new(self.family, self.p_min, self.p_max)?
            .with_lowercase(!self.no_lowercase))
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub kernel: KernelFlags,
    /// Last pipeline stage to compute.
    #[arg(long, default_value = "transductive", value_parser = parse_stage)]
    pub stage: Stage,
    /// Output cache file.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub kernel: KernelFlags,
    /// Precomputed kernel cache for this split.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Test samples promoted after the first round.
    #[arg(long, default_value_t = 1000)]
    pub r: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lambda: f64,
    /// Run both rounds (default).
    #[arg(long, overrides_with = "no_tkc")]
    pub tkc: bool,
    /// Single round of training only.
    #[arg(long, overrides_with = "tkc")]
    pub no_tkc: bool,
    /// Method name used in reports.
    #[arg(long)]
    pub name: Option<String>,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Baseline run directory, one per target domain.
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    /// Write `<prefix>.txt` and `<prefix>.tsv` instead of printing.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<KernelFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputChecksum {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub method: Option<String>,
    pub experiment: ExperimentSpec,
    pub tkc_enabled: Option<bool>,
    pub stage: Stage,
    pub train_size: usize,
    pub test_size: usize,
    pub inputs: Vec<InputChecksum>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Data(format!("invalid manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        write_file(path, json.as_bytes())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    if !args.input.is_dir() {
        return Err(Error::Data(format!(
            "dataset directory {} does not exist",
            args.input.display()
        )));
    }
    let report = corpus::ingest_mdsd(&args.input)?;
    for w in &report.warnings {
        warn!("{w}");
        eprintln!("warning: {w}");
    }
    for e in &report.errors {
        eprintln!("skipped: {e}");
    }
    if report.documents.is_empty() {
        return Err(Error::Data("no documents ingested".into()));
    }
    save_canonical(&report.documents, &args.output)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "domain\tnegative\tpositive\ttotal");
    for (domain, (neg, pos)) in report.balance() {
        let _ = writeln!(out, "{domain}\t{neg}\t{pos}\t{}", neg + pos);
    }
    let _ = writeln!(
        out,
        "documents: {}, skipped records: {}, neutral excluded: {}, utf-8 replacements: {}",
        report.documents.len(),
        report.errors.len(),
        report.neutral_excluded,
        report.replacements
    );
    Ok(())
}

fn experiment_spec(
    split: &SplitArgs,
    docs: &[Document],
    kernel: KernelConfig,
    tkc: TkcConfig,
) -> Result<ExperimentSpec> {
    let mut spec = match split.mode {
        Mode::MultiSource if split.sources.is_empty() => {
            ExperimentSpec::multi_source(docs, &split.target)
        }
        Mode::MultiSource => ExperimentSpec {
            mode: Mode::MultiSource,
            sources: split.sources.clone(),
            target: split.target.clone(),
            kernel: KernelConfig::default(),
            tkc: TkcConfig::default(),
        },
        Mode::SingleSource => match split.sources.as_slice() {
            [one] => ExperimentSpec::single_source(one, &split.target),
            _ => {
                return Err(Error::InvalidConfig(
                    "single_source mode needs exactly one --source".into(),
                ))
            }
        },
    };
    spec.kernel = kernel;
    spec.tkc = tkc;
    spec.validate()?;
    Ok(spec)
}

fn labels_of(docs: &[Document]) -> Vec<usize> {
    docs.iter()
        .map(|d| d.label.map_or(0, Label::class_index))
        .collect()
}

pub fn cmd_kernel(args: &KernelArgs) -> Result<()> {
    let docs = load_canonical(&args.split.corpus)?;
    let kernel = args.kernel.config()?;
    let spec = experiment_spec(&args.split, &docs, kernel, TkcConfig::default())?;
    let (train, test) = make_split(&docs, &spec)?;
    info!(
        "building {} kernel over {} + {} documents",
        spec.kernel.family,
        train.len(),
        test.len()
    );
    let k = build_full_matrix(&train, &test, &spec.kernel)?;
    let k = advance_to(k, args.stage)?;
    save_matrix(&k, &args.output)?;

    let manifest = RunManifest {
        tool: "tsk".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "kernel".into(),
        method: None,
        experiment: spec,
        tkc_enabled: None,
        stage: args.stage,
        train_size: train.len(),
        test_size: test.len(),
        inputs: vec![InputChecksum {
            path: display(&args.split.corpus),
            sha256: sha256_file(&args.split.corpus)?,
        }],
        outputs: vec![display(&args.output)],
    };
    let manifest_path = cache_manifest_path(&args.output);
    if let Err(e) = manifest.save(&manifest_path) {
        let _ = fs::remove_file(&args.output);
        return Err(e);
    }
    println!(
        "wrote {} ({}x{}, stage {})",
        args.output.display(),
        k.dim(),
        k.dim(),
        k.stage()
    );
    Ok(())
}

pub fn cache_manifest_path(cache: &Path) -> PathBuf {
    let mut name = cache.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    cache.with_file_name(name)
}

/// Outcome of one classification run.
pub struct RunOutcome {
    pub train_size: usize,
    pub test: Vec<Document>,
    pub trace: TkcTrace,
    pub eval: Option<EvalResult>,
}

/// Kernel (computed or loaded), classifier, and accuracy on labeled test documents.
pub fn execute_run(
    docs: &[Document],
    spec: &ExperimentSpec,
    use_tkc: bool,
    cached: Option<KernelMatrix>,
) -> Result<RunOutcome> {
    let (train, test) = make_split(docs, spec)?;
    let k = match cached {
        Some(k) => {
            if k.m() != train.len() || k.n() != test.len() {
                return Err(Error::Data(format!(
                    "cached kernel is {}+{} but the split is {}+{}",
                    k.m(),
                    k.n(),
                    train.len(),
                    test.len()
                )));
            }
            advance_to(k, Stage::Transductive)?
        }
        None => matrix::transductive_kernel(&train, &test, &spec.kernel)?,
    };
    let train_labels = labels_of(&train);
    let trace = if use_tkc {
        run_tkc(&k, &train_labels, &spec.tkc)?
    } else {
        run_single_round(&k, &train_labels, &spec.tkc)?
    };
    let (pred, gold): (Vec<usize>, Vec<usize>) = trace
        .predictions()
        .iter()
        .zip(&test)
        .filter_map(|(&p, d)| d.label.map(|l| (p, l.class_index())))
        .unzip();
    let eval = if gold.is_empty() {
        None
    } else {
        Some(accuracy(&pred, &gold)?)
    };
    Ok(RunOutcome {
        train_size: train.len(),
        test,
        trace,
        eval,
    })
}

pub fn predictions_tsv(test: &[Document], predictions: &[usize]) -> String {
    let mut out = String::from("id\tpredicted\tgold\n");
    for (d, &p) in test.iter().zip(predictions) {
        let label = Label::from_class_index(p).map_or("unlabeled", Label::as_str);
        out.push_str(&format!("{}\t{}\t{}\n", d.id, label, label_str(d.label)));
    }
    out
}

pub fn cmd_run(args: &RunArgs) -> Result<()> {
    if !(args.lambda.is_finite() && args.lambda > 0.0) {
        return Err(Error::InvalidConfig("--lambda must be positive".into()));
    }
    let docs = load_canonical(&args.split.corpus)?;
    let kernel = args.kernel.config()?;
    let tkc = TkcConfig {
        r: args.r,
        lambda: args.lambda,
        classes: CLASS_COUNT,
    };
    let spec = experiment_spec(&args.split, &docs, kernel, tkc)?;
    let corpus_sum = sha256_file(&args.split.corpus)?;
    let mut inputs = vec![InputChecksum {
        path: display(&args.split.corpus),
        sha256: corpus_sum.clone(),
    }];

    let cached = match &args.cache {
        Some(path) => {
            let manifest_path = cache_manifest_path(path);
            if manifest_path.is_file() {
                let m = RunManifest::load(&manifest_path)?;
                let same_corpus = m.inputs.iter().any(|i| i.sha256 == corpus_sum);
                if !same_corpus
                    || m.experiment.kernel != spec.kernel
                    || m.experiment.sources != spec.sources
                    || m.experiment.target != spec.target
                {
                    return Err(Error::Data(format!(
                        "cache {} was built for a different corpus or configuration",
                        path.display()
                    )));
                }
            } else {
                warn!(
                    "no manifest next to {}; trusting its dimensions",
                    path.display()
                );
            }
            inputs.push(InputChecksum {
                path: display(path),
                sha256: sha256_file(path)?,
            });
            Some(load_matrix(path)?)
        }
        None => None,
    };

    let use_tkc = !args.no_tkc;
    let outcome = execute_run(&docs, &spec, use_tkc, cached)?;

    fs::create_dir_all(&args.output)
        .map_err(|e| Error::io(format!("creating {}", args.output.display()), e))?;
    let method = args.name.clone().unwrap_or_else(|| {
        let mut m = spec.kernel.family.to_string();
        if use_tkc {
            m.push_str("+TKC");
        }
        m
    });

    let pred_path = args.output.join(PREDICTIONS_FILE);
    write_file(
        &pred_path,
        predictions_tsv(&outcome.test, outcome.trace.predictions()).as_bytes(),
    )?;
    let trace_path = args.output.join(TRACE_FILE);
    let mut trace = outcome.trace.to_report();
    if use_tkc {
        let counts = outcome.trace.promoted_class_counts(CLASS_COUNT);
        trace.push_str(&format!(
            "#promoted_per_class\tnegative={}\tpositive={}\n",
            counts[0], counts[1]
        ));
    }
    write_file(&trace_path, trace.as_bytes())?;
    let mut outputs = vec![display(&pred_path), display(&trace_path)];
    if let Some(eval) = &outcome.eval {
        let eval_path = args.output.join(EVAL_FILE);
        let mut json = serde_json::to_string_pretty(eval).expect("eval serializes");
        json.push('\n');
        write_file(&eval_path, json.as_bytes())?;
        outputs.push(display(&eval_path));
        println!(
            "{} {}: accuracy {:.1}% ({}/{})",
            method,
            spec.setting(),
            eval.accuracy * 100.0,
            eval.correct,
            eval.n
        );
    }
    let manifest = RunManifest {
        tool: "tsk".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "run".into(),
        method: Some(method),
        tkc_enabled: Some(use_tkc),
        stage: Stage::Transductive,
        train_size: outcome.train_size,
        test_size: outcome.test.len(),
        experiment: spec,
        inputs,
        outputs,
    };
    manifest.save(&args.output.join(MANIFEST_FILE))
}

/// Predictions of a finished run: `(id, predicted, gold)` rows.
pub struct RunRecord {
    pub manifest: RunManifest,
    pub ids: Vec<String>,
    pub predicted: Vec<usize>,
    pub gold: Vec<usize>,
}

fn parse_label(s: &str) -> usize {
    match s {
        "negative" => Label::Negative.class_index(),
        "positive" => Label::Positive.class_index(),
        _ => 0,
    }
}

pub fn load_run(dir: &Path) -> Result<RunRecord> {
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(PREDICTIONS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut rec = RunRecord {
        manifest,
        ids: Vec::new(),
        predicted: Vec::new(),
        gold: Vec::new(),
    };
    for (k, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedLine {
                path: path.clone(),
                line: k + 1,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        rec.ids.push(fields[0].to_owned());
        rec.predicted.push(parse_label(fields[1]));
        rec.gold.push(parse_label(fields[2]));
    }
    Ok(rec)
}

fn labeled(rec: &RunRecord) -> (Vec<usize>, Vec<usize>) {
    rec.predicted
        .iter()
        .zip(&rec.gold)
        .filter(|(_, &g)| g != 0)
        .map(|(&p, &g)| (p, g))
        .unzip()
}

pub fn build_report(runs: &[RunRecord], baselines: &[RunRecord]) -> Result<Report> {
    let mut rows = Vec::new();
    let mut by_target: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for b in baselines {
        if by_target.insert(&b.manifest.experiment.target, b).is_some() {
            return Err(Error::InvalidConfig(format!(
                "more than one baseline for target `{}`",
                b.manifest.experiment.target
            )));
        }
    }
    for run in runs {
        let (pred, gold) = labeled(run);
        if gold.is_empty() {
            return Err(Error::Data(format!(
                "run `{}` has no labeled test documents",
                run.manifest.method.as_deref().unwrap_or("?")
            )));
        }
        let acc = accuracy(&pred, &gold)?;
        let exp = &run.manifest.experiment;
        let mut row = ReportRow {
            method: run
                .manifest
                .method
                .clone()
                .unwrap_or_else(|| "unnamed".into()),
            source_domains: exp.sources.clone(),
            target_domain: exp.target.clone(),
            accuracy: acc.accuracy,
            mcnemar: None,
            significant_vs_baseline: false,
        };
        if let Some(base) = by_target.get(exp.target.as_str()) {
            if base.ids != run.ids {
                return Err(Error::Data(format!(
                    "run `{}` and its baseline were evaluated on different test sets",
                    row.method
                )));
            }
            let is_baseline = base.manifest == run.manifest && base.predicted == run.predicted;
            if !is_baseline {
                let (base_pred, _) = labeled(base);
                let test = eval::mcnemar(&pred, &base_pred, &gold)?;
                let base_acc = accuracy(&base_pred, &gold)?.accuracy;
                row.significant_vs_baseline = test.significant_at_0_01 && acc.accuracy > base_acc;
                row.mcnemar = Some(test);
            }
        }
        rows.push(row);
    }
    Ok(Report { rows })
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let baselines = args
        .baseline
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for dir in &args.baseline {
        if !args.runs.contains(dir) {
            runs.push(load_run(dir)?);
        }
    }
    for dir in &args.runs {
        runs.push(load_run(dir)?);
    }
    let report = build_report(&runs, &baselines)?;
    match &args.output {
        Some(prefix) => {
            write_file(&prefix.with_extension("txt"), report.to_text().as_bytes())?;
            write_file(&prefix.with_extension("tsv"), report.to_tsv().as_bytes())?;
        }
        None => {
            print!("{}", report.to_text());
            println!();
            print!("{}", report.to_tsv());
        }
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => EXIT_USAGE,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Kernel(a) => cmd_kernel(a),
        Command::Run(a) => cmd_run(a),
        Command::Report(a) => cmd_report(a),
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
