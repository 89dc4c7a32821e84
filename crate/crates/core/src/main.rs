use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mplda::config::{self, parse_staleness, CorpusFormat, Mode, RunConfig, Severity};
use mplda::corpus::write_bag_of_words;
use mplda::engine::Staleness;
use mplda::synthetic::{self, PlantedSpec};
use mplda::Error;

/// Model-parallel collapsed Gibbs sampling for LDA.
#[derive(Parser, Debug)]
#[command(name = "mplda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics.csv, model.ckpt, topics.txt and summary.json.
    Run(RunArgs),
    /// Print every configuration problem and exit.
    Validate(RunArgs),
    /// Write a planted-topic corpus (UCI bag-of-words plus vocabulary).
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key = value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    /// Vocabulary file for UCI input, one term per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long = "K")]
    num_topics: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "M")]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Tokens between exchanges in stale-sync mode, or `inf`.
    #[arg(long, value_parser = parse_staleness)]
    staleness: Option<Staleness>,
    #[arg(long)]
    bigrams: bool,
    #[arg(long)]
    bigram_min_count: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    top_n: Option<usize>,
    /// Step workers one at a time on a single thread.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    shards: Option<usize>,
    /// Largest dense replica, in entries, allowed in stale-sync mode.
    #[arg(long)]
    memory_budget: Option<u64>,
}

impl RunArgs {
    fn into_config(self) -> mplda::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.corpus {
            c.corpus = Some(v);
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if let Some(v) = self.vocab {
            c.vocab = Some(v);
        }
        if let Some(v) = self.num_topics {
            c.num_topics = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = Some(v);
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = self.iterations {
            c.iterations = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.staleness {
            c.staleness = v;
        }
        c.bigrams |= self.bigrams;
        if let Some(v) = self.bigram_min_count {
            c.bigram_min_count = v;
        }
        if let Some(v) = self.output {
            c.output = v;
        }
        if let Some(v) = self.top_n {
            c.top_n = v;
        }
        c.deterministic |= self.deterministic;
        if let Some(v) = self.shards {
            c.shards = Some(v);
        }
        if let Some(v) = self.memory_budget {
            c.memory_budget = Some(v);
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 1000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 10)]
    topics: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving corpus.txt and vocab.txt.
    #[arg(long)]
    output: PathBuf,
}

fn exit_code(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn synth(args: SynthArgs) -> mplda::Result<()> {
    let spec = PlantedSpec {
        num_docs: args.docs,
        vocab_size: args.vocab_size,
        num_topics: args.topics,
        ..PlantedSpec::default()
    };
    let planted = synthetic::generate(&spec, args.seed)?;
    fs::create_dir_all(&args.output)?;
    write_bag_of_words(
        &planted.corpus,
        BufWriter::new(File::create(args.output.join("corpus.txt"))?),
    )?;
    planted
        .corpus
        .vocabulary
        .write(BufWriter::new(File::create(args.output.join("vocab.txt"))?))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPLDA_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => args.into_config().and_then(|c| config::run(&c)).map(|outcome| {
            for w in &outcome.warnings {
                eprintln!("{w}");
            }
        }),
        Command::Validate(args) => match args.into_config() {
            Ok(c) => {
                let diagnostics = config::validate(&c, None);
                for d in &diagnostics {
                    println!("{d}");
                }
                if diagnostics.iter().any(|d| d.severity == Severity::Error) {
                    return ExitCode::from(2);
                }
                Ok(())
            }
            Err(e) => Err(e),
        },
        Command::Synth(args) => synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mplda: {e}");
            exit_code(&e)
        }
    }
}
