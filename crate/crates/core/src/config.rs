//! Run configuration and the end-to-end driver.
//!
//! Config files hold one `key = value` pair per line; `#` starts a comment.
//! Keys: `corpus`, `format` (`uci` | `text`), `vocab`, `K`, `alpha`, `beta`,
//! `M`, `iterations`, `seed`, `mode` (`serial` | `model-parallel` |
//! `stale-sync`), `staleness` (tokens or `inf`), `bigrams`,
//! `bigram_min_count`, `output`, `top_n`, `deterministic`, `shards`,
//! `memory_budget`.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec;
use crate::corpus::{augment_bigrams, load_bag_of_words, load_raw_text, Corpus, Vocabulary};
use crate::engine::{
    train, Engine, Executor, ModelParallelEngine, ParallelOptions, SerialEngine, StaleOptions,
    StaleSyncEngine, Staleness,
};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsRecord, Summary};
use crate::model::{Hyperparameters, DEFAULT_BETA};
use crate::sampler::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Uci,
    Text,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uci" => Ok(Self::Uci),
            "text" => Ok(Self::Text),
            _ => Err(format!("unknown corpus format `{s}` (expected uci or text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Serial,
    ModelParallel,
    StaleSync,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "serial" => Ok(Self::Serial),
            "model-parallel" => Ok(Self::ModelParallel),
            "stale-sync" => Ok(Self::StaleSync),
            _ => Err(format!(
                "unknown mode `{s}` (expected serial, model-parallel or stale-sync)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Serial => "serial",
            Mode::ModelParallel => "model-parallel",
            Mode::StaleSync => "stale-sync",
        })
    }
}

/// `inf` or a token count.
pub fn parse_staleness(s: &str) -> std::result::Result<Staleness, String> {
    match s {
        "inf" | "unbounded" => Ok(Staleness::Unbounded),
        _ => s
            .parse::<u64>()
            .map(Staleness::Tokens)
            .map_err(|_| format!("staleness `{s}` is neither a token count nor `inf`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub vocab: Option<PathBuf>,
    pub num_topics: usize,
    /// Symmetric; `50 / K` when unset.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub workers: usize,
    pub iterations: usize,
    pub seed: u64,
    pub mode: Mode,
    pub staleness: Staleness,
    pub bigrams: bool,
    pub bigram_min_count: u64,
    pub output: PathBuf,
    pub top_n: usize,
    pub deterministic: bool,
    pub shards: Option<usize>,
    pub memory_budget: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            format: CorpusFormat::Uci,
            vocab: None,
            num_topics: 100,
            alpha: None,
            beta: DEFAULT_BETA,
            workers: 1,
            iterations: 100,
            seed: 0,
            mode: Mode::ModelParallel,
            staleness: Staleness::Unbounded,
            bigrams: false,
            bigram_min_count: 5,
            output: PathBuf::from("out"),
            top_n: 10,
            deterministic: false,
            shards: None,
            memory_budget: None,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    })
}

fn text<T>(line: usize, r: std::result::Result<T, String>) -> Result<T> {
    r.map_err(|msg| Error::Parse { line, msg })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("`{key}` expects true or false, got `{value}`"),
        }),
    }
}

impl RunConfig {
    /// Applies `key = value` lines on top of `self`.
    pub fn apply_file<R: BufRead>(mut self, reader: R) -> Result<Self> {
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected key = value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "corpus" => self.corpus = Some(PathBuf::from(value)),
                "format" => self.format = text(line_no, value.parse())?,
                "vocab" => self.vocab = Some(PathBuf::from(value)),
                "K" | "topics" => self.num_topics = parse_value(line_no, key, value)?,
                "alpha" => self.alpha = Some(parse_value(line_no, key, value)?),
                "beta" => self.beta = parse_value(line_no, key, value)?,
                "M" | "workers" => self.workers = parse_value(line_no, key, value)?,
                "iterations" => self.iterations = parse_value(line_no, key, value)?,
                "seed" => self.seed = parse_value(line_no, key, value)?,
                "mode" => self.mode = text(line_no, value.parse())?,
                "staleness" => self.staleness = text(line_no, parse_staleness(value))?,
                "bigrams" => self.bigrams = parse_bool(line_no, key, value)?,
                "bigram_min_count" => self.bigram_min_count = parse_value(line_no, key, value)?,
                "output" => self.output = PathBuf::from(value),
                "top_n" => self.top_n = parse_value(line_no, key, value)?,
                "deterministic" => self.deterministic = parse_bool(line_no, key, value)?,
                "shards" => self.shards = Some(parse_value(line_no, key, value)?),
                "memory_budget" => self.memory_budget = Some(parse_value(line_no, key, value)?),
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        Ok(self)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::default().apply_file(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Every problem with `config`. `vocab_size` enables checks that need the
/// loaded corpus.
pub fn validate(config: &RunConfig, vocab_size: Option<usize>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut error = |m: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            message: m,
        })
    };
    if config.corpus.is_none() {
        error("no corpus path given".into());
    }
    if config.num_topics == 0 {
        error("K must be at least 1".into());
    }
    if config.workers == 0 {
        error("M must be at least 1".into());
    }
    if !(config.beta.is_finite() && config.beta > 0.0) {
        error(format!("beta must be positive, got {}", config.beta));
    }
    if let Some(a) = config.alpha {
        if !(a.is_finite() && a > 0.0) {
            error(format!("alpha must be positive, got {a}"));
        }
    }
    if config.mode == Mode::StaleSync && config.staleness == Staleness::Tokens(0) {
        error("stale-sync mode needs staleness of at least 1 token or inf".into());
    }
    if config.shards == Some(0) {
        error("shard count must be at least 1".into());
    }
    if config.mode == Mode::Serial && config.workers > 1 {
        out.push(Diagnostic {
            severity: Severity::Warning,
            message: format!("serial mode ignores M = {}", config.workers),
        });
    }
    if let Some(v) = vocab_size {
        if config.workers > v {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!(
                    "M = {} exceeds the vocabulary size {v}; some blocks will be empty",
                    config.workers
                ),
            });
        }
    }
    out
}

fn fail_on_errors(diagnostics: &[Diagnostic]) -> Result<()> {
    let errors: Vec<String> = diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message.clone())
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors.join("; ")))
    }
}

pub fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    let path = config
        .corpus
        .as_ref()
        .ok_or_else(|| Error::Config("no corpus path given".into()))?;
    let reader = BufReader::new(File::open(path)?);
    let corpus = match config.format {
        CorpusFormat::Uci => {
            let vocab = match &config.vocab {
                Some(p) => Some(Vocabulary::read(BufReader::new(File::open(p)?))?),
                None => None,
            };
            load_bag_of_words(reader, vocab)?
        }
        CorpusFormat::Text => load_raw_text(reader)?,
    };
    Ok(if config.bigrams {
        augment_bigrams(&corpus, config.bigram_min_count)
    } else {
        corpus
    })
}

/// Builds the engine selected by `config` over an initialized corpus.
pub fn build_engine(
    config: &RunConfig,
    mut corpus: Corpus,
) -> Result<(Box<dyn Engine + Send>, Hyperparameters)> {
    let hyper = Hyperparameters::symmetric(
        config.num_topics,
        corpus.vocab_size(),
        config.alpha,
        config.beta,
    )?;
    corpus.initialize_assignments(config.num_topics, &mut RngStream::for_initialization(config.seed));
    let executor = if config.deterministic {
        Executor::default()
    } else {
        Executor::Threaded
    };
    let engine: Box<dyn Engine + Send> = match config.mode {
        Mode::Serial => Box::new(SerialEngine::new(corpus, hyper.clone(), config.seed)?),
        Mode::ModelParallel => {
            let options = ParallelOptions {
                workers: config.workers,
                shards: config.shards,
                seed: config.seed,
                executor,
            };
            Box::new(ModelParallelEngine::new(corpus, hyper.clone(), &options)?)
        }
        Mode::StaleSync => {
            let options = StaleOptions {
                workers: config.workers,
                staleness: config.staleness,
                seed: config.seed,
                shards: config.shards,
                memory_budget: config.memory_budget,
                executor,
            };
            Box::new(StaleSyncEngine::new(corpus, hyper.clone(), &options)?)
        }
    };
    Ok((engine, hyper))
}

/// Paths of the files written by [`run`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub topics: PathBuf,
    pub summary: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            checkpoint: dir.join("model.ckpt"),
            topics: dir.join("topics.txt"),
            summary: dir.join("summary.json"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: Artifacts,
    pub records: Vec<MetricsRecord>,
    pub warnings: Vec<Diagnostic>,
}

/// Loads, trains and writes every artifact under `config.output`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    fail_on_errors(&validate(config, None))?;
    let corpus = load_corpus(config)?;
    let diagnostics = validate(config, Some(corpus.vocab_size()));
    fail_on_errors(&diagnostics)?;
    for d in &diagnostics {
        log::warn!("{d}");
    }
    let vocabulary = corpus.vocabulary.clone();
    let (mut engine, hyper) = build_engine(config, corpus)?;

    let started = std::time::Instant::now();
    let records = train(engine.as_mut(), config.iterations, |_, _| Ok(()))?;
    let wall = started.elapsed().as_secs_f64();
    let rows = engine.rows()?;

    fs::create_dir_all(&config.output)?;
    let artifacts = Artifacts::in_dir(&config.output);
    let mut csv = BufWriter::new(File::create(&artifacts.metrics)?);
    metrics::write_csv(&mut csv, &records)?;
    csv.flush()?;
    fs::write(&artifacts.checkpoint, codec::encode_checkpoint(&hyper, &rows))?;
    let mut topics = BufWriter::new(File::create(&artifacts.topics)?);
    codec::write_topic_dump(&mut topics, &rows, hyper.num_topics(), &vocabulary, config.top_n)?;
    topics.flush()?;
    let summary = Summary {
        mode: config.mode.to_string(),
        iterations: config.iterations,
        workers: engine.num_workers(),
        num_topics: hyper.num_topics(),
        vocab_size: hyper.vocab_size(),
        tokens: engine.total_tokens(),
        final_log_likelihood: records.iter().rev().find_map(|r| r.log_likelihood),
        total_wall_seconds: wall,
        peak_entries_per_worker: engine.memory().workers.iter().map(|w| w.total()).collect(),
    };
    let mut json = BufWriter::new(File::create(&artifacts.summary)?);
    metrics::write_summary(&mut json, &summary)?;
    writeln!(json)?;
    json.flush()?;
    Ok(RunOutcome {
        artifacts,
        records,
        warnings: diagnostics,
    })
}
