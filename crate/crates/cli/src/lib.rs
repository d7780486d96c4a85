//! Command implementations behind the `viewcast` binary.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data validation
//! error, 3 protocol precondition failure.

pub mod reports;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use viewcast::corpus::{parse_corpus, validate_corpus, write_corpus, CorpusError, EpisodeCorpus, ScoreManifest, ValidationReport};
use viewcast::forecast_protocols::{run_protocol, ForecastSeries, Protocol, ProtocolConfig, ProtocolError, ProtocolRun};
use viewcast::preprocess::GenreMap;
use viewcast::shap_explain::SHAP_METHOD;
use viewcast::similarity::{corpus_profiles, nearest_shows, SimilarityError, AGGREGATION};
use viewcast::synthgen::{describe_planted_truth, generate_corpus, SynthError, SynthSpec};

use reports::write_atomic;

pub const CORPUS_FILE: &str = "corpus.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const VALIDATION_FILE: &str = "validation_report.json";
pub const METADATA_FILE: &str = "run_metadata.json";
pub const METRICS_SUMMARY_FILE: &str = "metrics_summary.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Precondition(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Precondition(_) => 3,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        if e.is_precondition() {
            return CliError::Precondition(e.to_string());
        }
        match e {
            ProtocolError::Corpus(CorpusError::UnknownShow(_))
            | ProtocolError::InvalidParams(_)
            | ProtocolError::UnknownProtocol(_)
            | ProtocolError::Boost(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SimilarityError> for CliError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::TooFewProfiles(_) => CliError::Precondition(e.to_string()),
            SimilarityError::Corpus(CorpusError::UnknownShow(_)) | SimilarityError::UnknownShow(_) | SimilarityError::InvalidK => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {what} {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(io_err(&path))
}

#[derive(Debug, Parser)]
#[command(name = "viewcast", version, about = "Next-episode viewership forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus and write validation_report.json.
    Validate(InputArgs),
    /// Run one protocol for one show.
    Forecast {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        show: String,
        #[arg(long, value_parser = parse_protocol)]
        protocol: Protocol,
    },
    /// Write the nearest shows by script profile.
    Similarity {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        show: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Generate a synthetic corpus and its ground truth.
    Synth {
        /// Spec JSON; the pinned reference spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate, run every protocol for every show, and score similarity.
    Batch {
        #[command(flatten)]
        input: InputArgs,
        /// Comma-separated subset of protocols.
        #[arg(long, value_delimiter = ',', value_parser = parse_protocol)]
        protocol: Vec<Protocol>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse::<Protocol>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Score-name manifest JSON; the bundled 43-score manifest when omitted.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Raw-to-coarse genre JSON; the bundled map when omitted.
    #[arg(long)]
    pub genre_map: Option<PathBuf>,
    /// JSON overrides for protocol and similarity settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Boosting seed (only consulted when subsampling is enabled).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilaritySettings {
    /// z-score each dimension across shows before measuring distance.
    pub standardize: bool,
}

impl Default for SimilaritySettings {
    fn default() -> Self {
        Self { standardize: true }
    }
}

/// Contents of a `--config` file; every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    #[serde(flatten)]
    pub protocols: ProtocolConfig,
    pub similarity: SimilaritySettings,
}

/// Everything a command needs, loaded and checked.
#[derive(Debug)]
pub struct Session {
    pub corpus: EpisodeCorpus,
    pub genre_map: GenreMap,
    pub settings: RunSettings,
    pub seed: u64,
    pub out: PathBuf,
}

fn load_manifest(path: Option<&Path>) -> Result<ScoreManifest, CliError> {
    match path {
        None => Ok(ScoreManifest::default_manifest()),
        Some(p) => ScoreManifest::from_json(&read_text(p, "manifest")?)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", p.display()))),
    }
}

impl Session {
    pub fn load(args: &InputArgs) -> Result<Self, CliError> {
        let manifest = load_manifest(args.manifest.as_deref())?;
        let genre_map = match &args.genre_map {
            None => GenreMap::default_map(),
            Some(p) => GenreMap::from_json(&read_text(p, "genre map")?)
                .map_err(|e| CliError::Config(format!("genre map {}: {e}", p.display())))?,
        };
        let mut settings = match &args.config {
            None => RunSettings::default(),
            Some(p) => serde_json::from_str(&read_text(p, "config")?)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?,
        };
        let seed = args.seed.unwrap_or(0);
        settings.protocols = settings.protocols.with_seed(seed);
        let file = fs::File::open(&args.corpus)
            .map_err(|e| CliError::Config(format!("cannot open corpus {}: {e}", args.corpus.display())))?;
        let corpus = parse_corpus(file, &manifest).map_err(|e| CliError::Data(format!("{}: {e}", args.corpus.display())))?;
        fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
        Ok(Self {
            corpus,
            genre_map,
            settings,
            seed,
            out: args.out.clone(),
        })
    }

    /// Writes the validation report and fails on unusable data.
    pub fn validate(&self) -> Result<ValidationReport, CliError> {
        let report = validate_corpus(&self.corpus);
        write(&self.out, VALIDATION_FILE, &reports::json_bytes(&report))?;
        if report.has_errors() {
            let first = &report.non_finite_cells[0];
            return Err(CliError::Data(format!(
                "{} non-finite score cells, first at {} column `{}`",
                report.non_finite_cells.len(),
                first.episode,
                first.column
            )));
        }
        Ok(report)
    }

    fn metadata(&self, protocols: &[Protocol], skipped: &[SkippedRun]) -> RunMetadata {
        RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            shap_method: SHAP_METHOD.to_string(),
            similarity: SimilarityMetadata {
                metric: "euclidean".into(),
                aggregation: AGGREGATION.into(),
                standardized: self.settings.similarity.standardize,
            },
            manifest_version: self.corpus.manifest().version().to_string(),
            seed: self.seed,
            protocols: protocols.to_vec(),
            settings: self.settings.clone(),
            skipped: skipped.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMetadata {
    pub metric: String,
    pub aggregation: String,
    pub standardized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub show_id: String,
    pub protocol: Protocol,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub shap_method: String,
    pub similarity: SimilarityMetadata,
    pub manifest_version: String,
    pub seed: u64,
    pub protocols: Vec<Protocol>,
    pub settings: RunSettings,
    pub skipped: Vec<SkippedRun>,
}

/// Writes the files for one protocol run and returns its series.
fn write_run(out: &Path, show: &str, run: &ProtocolRun) -> Result<(), CliError> {
    let series = run.series();
    let tag = format!("{show}_{}", series.protocol);
    write(out, &format!("forecast_{tag}.csv"), &reports::forecast_csv(series))?;
    write(out, &format!("metrics_{tag}.csv"), &reports::metrics_csv([series]))?;
    if let Some(gains) = &series.importance {
        write(out, &format!("importance_{tag}.csv"), &reports::importance_csv(gains))?;
    }
    if let ProtocolRun::Selection(result) = run {
        write(out, &format!("shap_summary_{show}.csv"), &reports::shap_summary_csv(&result.shap))?;
        write(out, &format!("shap_values_{show}.csv"), &reports::shap_values_csv(&result.shap))?;
        let top = result.top_features.join("\n") + "\n";
        write(out, &format!("selected_features_{show}.txt"), top.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_validate(args: &InputArgs) -> Result<ValidationReport, CliError> {
    Session::load(args)?.validate()
}

pub fn cmd_forecast(args: &InputArgs, show: &str, protocol: Protocol) -> Result<ForecastSeries, CliError> {
    let session = Session::load(args)?;
    session.validate()?;
    let run = run_protocol(&session.corpus, show, &session.genre_map, protocol, &session.settings.protocols)?;
    write_run(&session.out, show, &run)?;
    write(&session.out, METADATA_FILE, &reports::json_bytes(&session.metadata(&[protocol], &[])))?;
    Ok(run.series().clone())
}

fn similarity_files(session: &Session, shows: &[&str], k: usize) -> Result<(), CliError> {
    let profiles = corpus_profiles(&session.corpus)?;
    let standardize = session.settings.similarity.standardize;
    shows.par_iter().try_for_each(|show| {
        let list = nearest_shows(&profiles, show, k, standardize)?;
        write(&session.out, &format!("neighbors_{show}.csv"), &reports::neighbors_csv(&list))
    })
}

pub fn cmd_similarity(args: &InputArgs, show: &str, k: usize) -> Result<(), CliError> {
    let session = Session::load(args)?;
    session.validate()?;
    similarity_files(&session, &[show], k)?;
    write(&session.out, METADATA_FILE, &reports::json_bytes(&session.metadata(&[], &[])))
}

pub fn cmd_synth(spec: Option<&Path>, manifest: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = match spec {
        None => SynthSpec::pinned(),
        Some(p) => SynthSpec::from_json(&read_text(p, "spec")?).map_err(|e| CliError::Config(format!("spec {}: {e}", p.display())))?,
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = load_manifest(manifest)?;
    let synth_err = |e: SynthError| CliError::Config(e.to_string());
    let corpus = generate_corpus(&spec, &manifest).map_err(synth_err)?;
    let truth = describe_planted_truth(&spec, &manifest).map_err(synth_err)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut csv = Vec::new();
    write_corpus(&corpus, &mut csv).map_err(|e| CliError::Data(e.to_string()))?;
    write(out, CORPUS_FILE, &csv)?;
    write(out, TRUTH_FILE, &reports::json_bytes(&truth))
}

/// Per-show results of a batch run, in show order.
#[derive(Debug)]
pub struct BatchSummary {
    pub series: Vec<ForecastSeries>,
    pub skipped: Vec<SkippedRun>,
}

pub fn cmd_batch(args: &InputArgs, protocols: &[Protocol], k: usize) -> Result<BatchSummary, CliError> {
    let session = Session::load(args)?;
    session.validate()?;
    let protocols: Vec<Protocol> = if protocols.is_empty() { Protocol::ALL.to_vec() } else { protocols.to_vec() };
    let shows: Vec<&str> = session.corpus.show_ids().collect();
    let jobs: Vec<(&str, Protocol)> = shows.iter().flat_map(|s| protocols.iter().map(move |p| (*s, *p))).collect();

    let outcomes = jobs
        .par_iter()
        .map(|&(show, protocol)| {
            match run_protocol(&session.corpus, show, &session.genre_map, protocol, &session.settings.protocols) {
                Ok(run) => write_run(&session.out, show, &run).map(|()| Ok(run.series().clone())),
                Err(e) if e.is_precondition() => Ok(Err(SkippedRun {
                    show_id: show.to_string(),
                    protocol,
                    reason: e.to_string(),
                })),
                Err(e) => Err(CliError::from(e)),
            }
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (mut series, mut skipped) = (Vec::new(), Vec::new());
    for outcome in outcomes {
        match outcome {
            Ok(s) => series.push(s),
            Err(s) => skipped.push(s),
        }
    }

    if shows.len() >= 2 {
        similarity_files(&session, &shows, k)?;
    }
    write(&session.out, METRICS_SUMMARY_FILE, &reports::metrics_csv(&series))?;
    write(&session.out, METADATA_FILE, &reports::json_bytes(&session.metadata(&protocols, &skipped)))?;
    Ok(BatchSummary { series, skipped })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(args) => {
            let report = cmd_validate(&args)?;
            println!("{} shows, {} flags", report.shows.len(), report.flag_count());
        }
        Command::Forecast { input, show, protocol } => {
            let s = cmd_forecast(&input, &show, protocol)?;
            let r2 = s.metrics.r2.map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"));
            println!("{show} {protocol}: rmse {:.4}, r2 {r2}, n {}", s.metrics.rmse, s.metrics.n);
        }
        Command::Similarity { input, show, k } => cmd_similarity(&input, &show, k)?,
        Command::Synth { spec, manifest, out, seed } => cmd_synth(spec.as_deref(), manifest.as_deref(), &out, seed)?,
        Command::Batch { input, protocol, k } => {
            let summary = cmd_batch(&input, &protocol, k)?;
            println!("{} series written, {} runs skipped", summary.series.len(), summary.skipped.len());
        }
    }
    Ok(())
}
