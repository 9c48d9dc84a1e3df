use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tagrec::corpus::{ingest_with_warnings, stats, Corpus, CorpusFormat};
use tagrec::embed::TrainingMode;
use tagrec::pipeline::{self, ExperimentConfig, Manifest, PipelineError};
use tagrec::recommend::{make_algorithm, AlgorithmId, HybridSelection, Resources, ScoredTag};
use tagrec::report::{self, ReportFormat};
use tagrec::synth::{generate_synthetic, SynthProfile};

#[derive(Parser)]
#[command(name = "tagrec", version, about = "Tag recommendation and evaluation for e-books")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and write it back as canonical JSONL.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Train the paragraph-vector model and save it.
    TrainEmbeddings {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embed: EmbedArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the top-k tags for one book as JSON.
    Recommend {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        isbn: String,
        #[arg(long, default_value = "hyb-best")]
        algorithm: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Run the full evaluation and write manifest and reports.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        embed: EmbedArgs,
        /// Rerun the experiment recorded in a manifest.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Comma-separated algorithm ids.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<String>>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        split_seed: Option<u64>,
        /// Load this model instead of training one.
        #[arg(long)]
        embedding_model: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        n_books: usize,
        /// TOML file with generator parameters.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
    },
}

/// Where the corpus comes from. Flags shadow the config file.
#[derive(Args)]
struct CorpusArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file (JSONL or CSV). Without it a synthetic corpus is used.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long)]
    n_books: Option<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    negative: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    infer_epochs: Option<usize>,
    /// Lock-free parallel training on this many threads (not reproducible).
    #[arg(long)]
    threads: Option<usize>,
}

impl CorpusArgs {
    fn config(&self) -> Result<ExperimentConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut c);
        Ok(c)
    }

    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(p) = &self.input {
            c.corpus.path = Some(p.clone());
        }
        if let Some(f) = self.format {
            c.corpus.format = Some(f);
        }
        if let Some(s) = self.synth_seed {
            c.corpus.synthetic.seed = s;
        }
        if let Some(n) = self.n_books {
            c.corpus.synthetic.n_books = n;
        }
    }
}

impl EmbedArgs {
    fn apply(&self, c: &mut ExperimentConfig) {
        let h = &mut c.embedding;
        self.dim.inspect(|&v| h.dim = v);
        self.negative.inspect(|&v| h.negative = v);
        self.lr.inspect(|&v| h.lr0 = v);
        self.epochs.inspect(|&v| h.epochs = v);
        self.seed.inspect(|&v| h.seed = v);
        self.infer_epochs.inspect(|&v| h.infer_epochs = v);
        if let Some(threads) = self.threads {
            h.mode = TrainingMode::Parallel { threads };
        }
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != io::ErrorKind::BrokenPipe {
            eprintln!("error: stdout: {e}");
        }
    }
}

fn print_json(value: &impl Serialize) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("serializes")));
}

fn load_corpus(args: &CorpusArgs) -> Result<(ExperimentConfig, Corpus), PipelineError> {
    let config = args.config()?;
    if let Some(path) = &config.corpus.path {
        let format = config.corpus.format.unwrap_or_else(|| CorpusFormat::from_path(path));
        let (corpus, warnings) = ingest_with_warnings(path, format)?;
        for w in &warnings {
            log::warn!("{w}");
        }
        return Ok((config, corpus));
    }
    config.validate()?;
    let corpus = config.load_corpus()?;
    Ok((config, corpus))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| PipelineError::data("write-artifacts", format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Recommendation<'a> {
    isbn: &'a str,
    algorithm: String,
    k: usize,
    tags: &'a [ScoredTag],
    #[serde(skip_serializing_if = "Option::is_none")]
    flag: Option<tagrec::recommend::ListFlag>,
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest { corpus, out } => {
            let (_, c) = load_corpus(&corpus)?;
            match CorpusFormat::from_path(&out) {
                CorpusFormat::Csv => c.write_csv(&out)?,
                CorpusFormat::Jsonl => write_file(&out, c.to_jsonl().as_bytes())?,
            }
            eprintln!("{} books written to {}", c.len(), out.display());
        }
        Command::Stats { corpus } => {
            let (_, c) = load_corpus(&corpus)?;
            print_json(&stats(&c));
        }
        Command::TrainEmbeddings { corpus, embed, out } => {
            let (mut config, c) = load_corpus(&corpus)?;
            embed.apply(&mut config);
            config.embedding.validate().map_err(|e| PipelineError::Config(format!("embedding: {e}")))?;
            let preprocessing = config.preprocess_config()?;
            let model = pipeline::train_embeddings(&c, &config.embedding, &preprocessing)?;
            write_file(&out, &model.to_bytes())?;
            print_json(&serde_json::json!({
                "model": out,
                "sha256": model.content_hash(),
                "documents": model.doc_ids().len(),
                "vocabulary": model.vocab_len(),
                "epoch_losses": model.epoch_losses(),
            }));
        }
        Command::Recommend { corpus, isbn, algorithm, k } => {
            let id: AlgorithmId = algorithm.parse().map_err(|e| PipelineError::Config(format!("algorithm: {e}")))?;
            if k == 0 {
                return Err(PipelineError::Config("k: must be at least 1".into()));
            }
            let (config, c) = load_corpus(&corpus)?;
            let book = c
                .get(&isbn)
                .ok_or_else(|| PipelineError::data("recommend", format!("isbn {isbn} not in corpus")))?;
            let preprocessing = config.preprocess_config()?;
            let selection = config.protocol.selection.unwrap_or_else(HybridSelection::default);
            let resources = Resources::build(&c, &config.recommend_config(), &preprocessing).with_selection(selection);
            let rec = make_algorithm(id, &resources).map_err(|e| PipelineError::Config(e.to_string()))?;
            let query = resources.corpus().get(&isbn).unwrap_or(book);
            let list = rec.recommend(query, k);
            print_json(&Recommendation {
                isbn: &isbn,
                algorithm: id.to_string(),
                k,
                tags: list.entries(),
                flag: list.flag,
            });
        }
        Command::Evaluate {
            corpus,
            embed,
            manifest,
            algorithms,
            k_max,
            split_seed,
            embedding_model,
            out_dir,
        } => {
            let mut config = match &manifest {
                Some(p) => {
                    let m = Manifest::load(p)?;
                    m.verify_inputs()?;
                    m.config
                }
                None => corpus.config()?,
            };
            corpus.apply(&mut config);
            embed.apply(&mut config);
            if let Some(a) = algorithms {
                config.algorithms = a;
            }
            if let Some(k) = k_max {
                config.protocol.k_max = k;
            }
            if let Some(s) = split_seed {
                config.protocol.split_seed = s;
            }
            if let Some(m) = embedding_model {
                config.embedding_model = Some(m);
            }
            let out = pipeline::run_to_dir(&config, &out_dir)?;
            eprintln!(
                "{} algorithms on {} test cases; artifacts in {}",
                out.report.rows.len(),
                out.report.metadata.n_test_cases,
                out_dir.display()
            );
        }
        Command::Report { input, format } => {
            let r = report::load(&input).map_err(|e| PipelineError::data("report", format!("{}: {e}", input.display())))?;
            emit(&report::render(&r, format));
        }
        Command::Synth {
            seed,
            n_books,
            profile,
            out,
            format,
        } => {
            let profile: SynthProfile = match profile {
                Some(p) => {
                    let s = fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                    toml::from_str(&s).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?
                }
                None => SynthProfile::default(),
            };
            let c = generate_synthetic(seed, n_books, &profile)?;
            match format.unwrap_or_else(|| CorpusFormat::from_path(&out)) {
                CorpusFormat::Csv => c.write_csv(&out)?,
                CorpusFormat::Jsonl => write_file(&out, c.to_jsonl().as_bytes())?,
            }
            eprintln!("{} books written to {}", c.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
