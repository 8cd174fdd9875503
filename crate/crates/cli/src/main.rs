//! `rest` — build token datastores, train the reference n-gram model, and
//! run or benchmark retrieval-accelerated generation.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rest_core::bench::{run_suite, BenchOptions, BenchReport, DraftSelection};
use rest_core::extproc::{serve, ExtProcVerifier};
use rest_core::tokenizer::{vocab_sidecar_path, Tokenizer, WordVocab};
use rest_core::verify::Verifier;
use rest_core::{
    generate, ingest, Datastore, GenerationConfig, GenerationReport, NgramModel, RetrievalConfig,
    SamplingConfig, TokenId,
};

#[derive(Parser)]
#[command(
    name = "rest",
    version,
    about = "Retrieval-based speculative decoding engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a datastore file from input documents (one document per file).
    Build(BuildArgs),
    /// Train the reference n-gram model on a datastore's corpus.
    TrainLm(TrainLmArgs),
    /// Generate from a prompt, with and without speculation settings.
    Generate(GenerateArgs),
    /// Run baseline vs. speculative generation over a prompt file and report
    /// speed metrics. Fails hard if any output pair differs.
    Bench(BenchArgs),
    /// Print datastore metadata.
    Stats(StatsArgs),
    /// Host a model file behind the line-delimited verifier protocol on
    /// stdin/stdout (for `--model extproc:...`).
    ServeLm(ServeLmArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TokenizerKind {
    Bytes,
    Words,
}

#[derive(Args)]
struct BuildArgs {
    /// Input files, one document each.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = TokenizerKind::Bytes)]
    tokenizer: TokenizerKind,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long)]
    datastore: PathBuf,
    /// n-gram order (3 = trigram).
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long)]
    datastore: PathBuf,
    /// Model file, or `extproc:<command>` to verify through a subprocess.
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, default_value_t = 0.95)]
    top_p: f64,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    max_new_tokens: usize,
    /// Longest context suffix length probed during retrieval.
    #[arg(long, default_value_t = 16)]
    n_max: usize,
    /// Retrieved continuation truncation length.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Draft token budget (trie nodes kept).
    #[arg(long, default_value_t = 64)]
    c: usize,
    /// Maximum retrieved occurrences per step.
    #[arg(long, default_value_t = 5000)]
    match_cap: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    prompt: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DraftSelectKind {
    Trie,
    Random,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Prompt file, one prompt per line.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, value_enum, default_value_t = DraftSelectKind::Trie)]
    draft_select: DraftSelectKind,
    /// Write the full report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    datastore: PathBuf,
}

#[derive(Args)]
struct ServeLmArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Build(args) => cmd_build(args),
        Command::TrainLm(args) => cmd_train_lm(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Stats(args) => cmd_stats(args),
        Command::ServeLm(args) => cmd_serve_lm(args),
    }
}

fn cmd_build(args: BuildArgs) -> anyhow::Result<()> {
    let (documents, vocab) = match args.tokenizer {
        TokenizerKind::Bytes => {
            let docs: Vec<Vec<TokenId>> = args
                .input
                .iter()
                .map(|path| {
                    let bytes = std::fs::read(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    Ok(bytes.into_iter().map(TokenId::from).collect())
                })
                .collect::<anyhow::Result<_>>()?;
            (docs, None)
        }
        TokenizerKind::Words => {
            let texts: Vec<String> = args
                .input
                .iter()
                .map(|path| {
                    std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))
                })
                .collect::<anyhow::Result<_>>()?;
            let vocab = WordVocab::build(texts.iter().map(String::as_str));
            let tokenizer = Tokenizer::Words(vocab.clone());
            let docs = texts
                .iter()
                .map(|text| Ok(tokenizer.encode(text)?))
                .collect::<anyhow::Result<_>>()?;
            (docs, Some(vocab))
        }
    };

    let vocab_size = vocab.as_ref().map_or(256, |v| v.len() as u32);
    let corpus = ingest(&documents, vocab_size)?;
    let token_count = corpus.len();
    let doc_count = corpus.doc_count();
    let ds = Datastore::build(corpus)?;
    ds.write_to(&args.output)?;
    if let Some(vocab) = vocab {
        vocab.save(&vocab_sidecar_path(&args.output))?;
    }
    println!(
        "built {} ({} tokens, {} documents, vocab {})",
        args.output.display(),
        token_count,
        doc_count,
        vocab_size
    );
    Ok(())
}

fn cmd_train_lm(args: TrainLmArgs) -> anyhow::Result<()> {
    let ds = Datastore::read_from(&args.datastore)?;
    let model = NgramModel::train(ds.corpus(), args.order);
    model.write_to(&args.output)?;
    println!(
        "trained order-{} model over {} tokens -> {}",
        args.order,
        ds.corpus().len(),
        args.output.display()
    );
    Ok(())
}

/// The verification backend behind `--model`: an in-process model file or a
/// spawned subprocess speaking the verifier protocol.
enum Backend {
    Local(NgramModel),
    External(ExtProcVerifier),
}

impl Backend {
    fn open(model_arg: &str) -> anyhow::Result<Self> {
        if let Some(command) = model_arg.strip_prefix("extproc:") {
            Ok(Backend::External(ExtProcVerifier::spawn(command)?))
        } else {
            Ok(Backend::Local(NgramModel::read_from(Path::new(model_arg))?))
        }
    }
}

impl Verifier for Backend {
    fn choose_tokens(
        &self,
        context: &[TokenId],
        buffer: &rest_core::DraftBuffer,
        sampling: &SamplingConfig,
        pos0: u64,
    ) -> rest_core::Result<Vec<TokenId>> {
        match self {
            Backend::Local(model) => model.choose_tokens(context, buffer, sampling, pos0),
            Backend::External(client) => client.choose_tokens(context, buffer, sampling, pos0),
        }
    }
}

fn load_tokenizer(datastore_path: &Path, ds: &Datastore) -> anyhow::Result<Tokenizer> {
    let sidecar = vocab_sidecar_path(datastore_path);
    if sidecar.exists() {
        let vocab = WordVocab::load(&sidecar)?;
        if vocab.len() as u32 != ds.corpus().vocab_size() {
            bail!(
                "vocabulary sidecar {} has {} words but the datastore says vocab {}",
                sidecar.display(),
                vocab.len(),
                ds.corpus().vocab_size()
            );
        }
        Ok(Tokenizer::Words(vocab))
    } else if ds.corpus().vocab_size() == 256 {
        Ok(Tokenizer::Bytes)
    } else {
        bail!(
            "datastore has vocab {} but no {} sidecar; cannot pick a tokenizer",
            ds.corpus().vocab_size(),
            sidecar.display()
        );
    }
}

fn engine_config(args: &EngineArgs) -> anyhow::Result<GenerationConfig> {
    Ok(GenerationConfig {
        sampling: SamplingConfig {
            strategy: args.strategy.parse().map_err(anyhow::Error::msg)?,
            top_p: args.top_p,
            temperature: args.temperature,
            seed: args.seed,
        },
        max_new_tokens: args.max_new_tokens,
        eos_token: None,
        retrieval: RetrievalConfig {
            n_max: args.n_max,
            m: args.m,
            match_cap: args.match_cap,
        },
        draft_budget: args.c,
    })
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    let ds = Datastore::read_from(&args.engine.datastore)?;
    let tokenizer = load_tokenizer(&args.engine.datastore, &ds)?;
    let backend = Backend::open(&args.engine.model)?;
    let cfg = engine_config(&args.engine)?;
    let prompt = tokenizer.encode(&args.prompt)?;

    let (tokens, report) = generate(&backend, &ds, &prompt, &cfg)?;
    println!("{}", tokenizer.decode(&tokens));
    print_report(&report);
    Ok(())
}

fn print_report(report: &GenerationReport) {
    println!();
    println!("tokens generated (L)   : {}", report.tokens_generated);
    println!("forward passes (F)     : {}", report.forward_passes);
    println!(
        "mean generated len (M) : {:.3}",
        report.mean_generated_length
    );
    println!(
        "mean token time        : {:.4} ms",
        report.mean_token_time_ms
    );
    println!(
        "retrieval per step     : {:.4} ms",
        report.retrieval_time_ms_mean
    );
    println!(
        "matched suffix lengths : {}",
        histogram_line(&report.matched_suffix_histogram)
    );
}

fn histogram_line(histogram: &[u64]) -> String {
    let cells: Vec<String> = histogram
        .iter()
        .enumerate()
        .filter(|(_, &count)| count > 0)
        .map(|(n, count)| format!("{n}:{count}"))
        .collect();
    if cells.is_empty() {
        "-".to_string()
    } else {
        cells.join(" ")
    }
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<()> {
    let ds = Datastore::read_from(&args.engine.datastore)?;
    let tokenizer = load_tokenizer(&args.engine.datastore, &ds)?;
    let backend = Backend::open(&args.engine.model)?;
    let cfg = engine_config(&args.engine)?;

    let text = std::fs::read_to_string(&args.prompts)
        .with_context(|| format!("reading {}", args.prompts.display()))?;
    let prompts: Vec<Vec<TokenId>> = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let tokens = tokenizer.encode(line)?;
            if tokens.is_empty() {
                bail!("prompt {} is empty", i);
            }
            Ok(tokens)
        })
        .collect::<anyhow::Result<_>>()?;
    if prompts.is_empty() {
        bail!("prompt file {} has no prompts", args.prompts.display());
    }

    let options = BenchOptions {
        draft_selection: match args.draft_select {
            DraftSelectKind::Trie => DraftSelection::Trie,
            DraftSelectKind::Random => DraftSelection::random_default(),
        },
        ..Default::default()
    };
    let report = run_suite(&backend, &ds, &prompts, &cfg, &options)?;
    print_bench(&report);

    if let Some(path) = args.json {
        let mut file = std::fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut file, &report)?;
        file.write_all(b"\n")?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_bench(report: &BenchReport) {
    println!("prompt      L      F       M   ms/token  retr ms  speedup");
    for row in &report.prompts {
        println!(
            "{:>6} {:>6} {:>6} {:>7.3} {:>10.4} {:>8.4} {:>8.3}",
            row.prompt_index,
            row.tokens_generated,
            row.forward_passes,
            row.mean_generated_length,
            row.mean_token_time_ms,
            row.retrieval_time_ms_mean,
            row.speedup
        );
    }
    let a = &report.aggregate;
    println!();
    println!("prompts                : {}", a.prompt_count);
    println!("aggregate M            : {:.3}", a.mean_generated_length);
    println!(
        "mean token time        : {:.4} ms (baseline {:.4} ms)",
        a.mean_token_time_ms, a.baseline_mean_token_time_ms
    );
    println!("speedup                : {:.3}x", a.speedup);
    println!(
        "retrieval per step     : {:.4} ms ({:.1}% of step time)",
        a.retrieval_time_ms_mean,
        a.retrieval_share * 100.0
    );
    println!(
        "matched suffix lengths : {}",
        histogram_line(&a.matched_suffix_histogram)
    );
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let bytes = std::fs::read(&args.datastore)
        .with_context(|| format!("reading {}", args.datastore.display()))?;
    let ds = Datastore::from_bytes(&bytes)?;
    let checksum = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    println!("vocab_size  : {}", ds.corpus().vocab_size());
    println!("token_count : {}", ds.corpus().len());
    println!("doc_count   : {}", ds.corpus().doc_count());
    println!("suffixes    : {}", ds.suffix_array().len());
    println!("checksum    : {checksum:#018x}");
    let sidecar = vocab_sidecar_path(&args.datastore);
    if sidecar.exists() {
        println!("tokenizer   : words ({})", sidecar.display());
    } else {
        println!("tokenizer   : bytes (no vocabulary sidecar)");
    }
    Ok(())
}

fn cmd_serve_lm(args: ServeLmArgs) -> anyhow::Result<()> {
    let model = NgramModel::read_from(&args.model)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(&model, stdin.lock(), stdout.lock())?;
    Ok(())
}
