//! Command-line surface for the toolkit: vocabulary building, feature
//! extraction, group training, intrinsic evaluation, n-best scoring, and
//! a synthetic-bitext generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use mtnet::cli::RunConfig;
use mtnet::corpus::{parse_bitext, Side, Vocabulary};
use mtnet::error::{Error, Result};
use mtnet::eval::{format_scored_line, likelihood_report, parse_nbest_line, ScoreMode, Scorer};
use mtnet::extract::{extract_corpus, read_shard, write_shard, NullMode, Shard, TaskSpec};
use mtnet::mtl::{train, GroupKind, Model, TaskGroupSpec, TrainConfig};
use mtnet::synth::{gen_synth, SynthPattern};

#[derive(Parser)]
#[command(name = "mtnet", version, about = "Neural SMT feature toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary from a whitespace-tokenized corpus file.
    BuildVocab(BuildVocabArgs),
    /// Extract feature examples from aligned bitext into a shard.
    Extract(ExtractArgs),
    /// Train a task group on one shard per task.
    Train(TrainArgs),
    /// Report held-out average log-likelihood and perplexity per task.
    Eval(EvalArgs),
    /// Append feature scores to an n-best file.
    Score(ScoreArgs),
    /// Generate a seeded synthetic parallel corpus.
    GenSynth(GenSynthArgs),
}

#[derive(Parser)]
struct BuildVocabArgs {
    #[arg(long)]
    input: PathBuf,
    /// source or target
    #[arg(long)]
    side: String,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser)]
struct ExtractArgs {
    /// jmo, tcm, ori, or fert
    #[arg(long)]
    task: String,
    /// JMO offset parameter.
    #[arg(long)]
    k: Option<u32>,
    /// Target history length (JMO).
    #[arg(long)]
    n: Option<u32>,
    /// TCM offset from the attached target word (may be negative).
    #[arg(long, allow_hyphen_values = true)]
    dprime: Option<i32>,
    /// Source window half-width.
    #[arg(long)]
    m: Option<u32>,
    /// predict-null or skip-unaligned (TCM offset 0 only)
    #[arg(long)]
    null_mode: Option<String>,
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    align: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser)]
struct TrainArgs {
    /// hypen, srcen, or single
    #[arg(long)]
    group: String,
    /// One shard per member task, in task order.
    #[arg(long = "shard", required = true)]
    shards: Vec<PathBuf>,
    /// Optional validation shards (same tasks); defaults to the last 5%
    /// of each training shard.
    #[arg(long = "val-shard")]
    val_shards: Vec<PathBuf>,
    /// Total hidden layers L.
    #[arg(long)]
    layers: Option<usize>,
    /// Shared hidden layers t.
    #[arg(long)]
    shared: Option<usize>,
    /// Hidden widths: one value for all layers or a comma list.
    #[arg(long)]
    hidden: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    embed: Option<usize>,
    /// on or off
    #[arg(long)]
    tensor: Option<String>,
    /// Log-partition penalty weight.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// One shard per model task.
    #[arg(long = "shard", required = true)]
    shards: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser)]
struct ScoreArgs {
    /// Model files; their heads together define the feature set.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// N-best file: `id ||| target tokens ||| j-i pairs` (0-based pairs).
    #[arg(long)]
    nbest: PathBuf,
    /// Source sentences, line-indexed by n-best id.
    #[arg(long)]
    source: PathBuf,
    /// exact or selfnorm
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated name=weight pairs for a weighted total.
    #[arg(long)]
    weights: Option<String>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional vocabulary files cross-checked against the models.
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    #[arg(long)]
    tgt_vocab: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Parser)]
struct GenSynthArgs {
    /// monotone, reversal, block-swap, or collocation
    #[arg(long)]
    pattern: String,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes <prefix>.src, <prefix>.tgt, <prefix>.align.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::BuildVocab(args) => cmd_build_vocab(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Score(args) => cmd_score(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {}: {e}", e.category());
        std::process::exit(1);
    }
}

fn parse_side(s: &str) -> Result<Side> {
    match s {
        "source" => Ok(Side::Source),
        "target" => Ok(Side::Target),
        other => Err(Error::Config(format!(
            "side must be source or target, got {other:?}"
        ))),
    }
}

fn parse_on_off(key: &str, s: &str) -> Result<bool> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(Error::Config(format!(
            "{key} must be on or off, got {other:?}"
        ))),
    }
}

fn cmd_build_vocab(args: BuildVocabArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let side = parse_side(&args.side)?;
    let min_count = cfg.resolve("min-count", args.min_count, 2)?;
    let max_size = cfg.resolve("max-size", args.max_size, 32_004)?;
    cfg.record("input", args.input.display());
    cfg.record("side", &args.side);
    cfg.record("out", args.out.display());
    eprint!("{}", cfg.log_header("build-vocab"));

    let vocab = Vocabulary::from_token_file(&args.input, min_count, max_size, side)?;
    vocab.save(&args.out)?;
    eprintln!("wrote {} entries to {}", vocab.len(), args.out.display());
    Ok(())
}

fn task_spec_from_flags(
    cfg: &mut RunConfig,
    task: &str,
    k: Option<u32>,
    n: Option<u32>,
    dprime: Option<i32>,
    m: Option<u32>,
) -> Result<TaskSpec> {
    let m = cfg.resolve("m", m, 5)?;
    let spec = match task {
        "jmo" => {
            let k = cfg.resolve("k", k, 0)?;
            let n = cfg.resolve("n", n, 4)?;
            if n < 1 {
                return Err(Error::Config("n must be >= 1".into()));
            }
            TaskSpec::jmo(k, n, m)
        }
        "tcm" => {
            let dprime = cfg.resolve("dprime", dprime, 0)?;
            TaskSpec::tcm(dprime, m)
        }
        "ori" => TaskSpec::ori(m),
        "fert" => TaskSpec::fert(m),
        other => {
            return Err(Error::Config(format!(
                "task must be jmo, tcm, ori, or fert, got {other:?}"
            )))
        }
    };
    Ok(spec)
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let spec = task_spec_from_flags(&mut cfg, &args.task, args.k, args.n, args.dprime, args.m)?;
    let null_mode = match cfg
        .resolve("null-mode", args.null_mode, "predict-null".to_string())?
        .as_str()
    {
        "predict-null" => NullMode::PredictNull,
        "skip-unaligned" => NullMode::SkipUnaligned,
        other => {
            return Err(Error::Config(format!(
                "null-mode must be predict-null or skip-unaligned, got {other:?}"
            )))
        }
    };
    let workers = cfg.resolve("workers", args.workers, 1)?;
    cfg.record("task", spec.name());
    cfg.record("src", args.src.display());
    cfg.record("tgt", args.tgt.display());
    cfg.record("align", args.align.display());
    cfg.record("out", args.out.display());
    eprint!("{}", cfg.log_header("extract"));

    let src_vocab = Vocabulary::load(&args.src_vocab, Side::Source)?;
    let tgt_vocab = Vocabulary::load(&args.tgt_vocab, Side::Target)?;
    let pairs = parse_bitext(&args.src, &args.tgt, &args.align, &src_vocab, &tgt_vocab)?;
    let examples = extract_corpus(&pairs, &spec, null_mode, workers);
    write_shard(
        &args.out,
        &spec,
        spec.label_space_size(tgt_vocab.len()),
        &examples,
    )?;
    eprintln!(
        "wrote {} examples ({} slots each) to {}",
        examples.len(),
        spec.input_width(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let group_kind = match args.group.as_str() {
        "hypen" => GroupKind::HypEn,
        "srcen" => GroupKind::SrcEn,
        "single" => GroupKind::Single,
        other => {
            return Err(Error::Config(format!(
                "group must be hypen, srcen, or single, got {other:?}"
            )))
        }
    };
    // depth defaults: the source-enumerating group shares one hidden layer
    // of three; other groups use two private layers
    let (default_layers, default_shared) = match group_kind {
        GroupKind::SrcEn => (3, 1),
        _ => (2, 0),
    };
    let layers = cfg.resolve("layers", args.layers, default_layers)?;
    let shared = cfg.resolve("shared", args.shared, default_shared)?;
    let hidden = cfg.resolve("hidden", args.hidden, "500".to_string())?;
    let embed = cfg.resolve("embed", args.embed, 200)?;
    let tensor = parse_on_off("tensor", &cfg.resolve("tensor", args.tensor, "on".to_string())?)?;
    let alpha = cfg.resolve("alpha", args.alpha, 0.1)?;
    let train_config = TrainConfig {
        epochs: cfg.resolve("epochs", args.epochs, 10)?,
        batch_size: cfg.resolve("batch", args.batch, 128)?,
        learning_rate: cfg.resolve("lr", args.lr, 0.1)?,
        patience: cfg.resolve("patience", args.patience, 2)?,
        seed: cfg.resolve("seed", args.seed, 1)?,
        workers: cfg.resolve("workers", args.workers, 1)?,
    };

    let widths: Vec<usize> = {
        let parts: Vec<&str> = hidden.split(',').collect();
        let parsed: Result<Vec<usize>> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad hidden width {p:?}")))
            })
            .collect();
        let parsed = parsed?;
        if parsed.len() == 1 {
            vec![parsed[0]; layers]
        } else if parsed.len() == layers {
            parsed
        } else {
            return Err(Error::Config(format!(
                "{} hidden widths given for {layers} layers",
                parsed.len()
            )));
        }
    };

    for shard in &args.shards {
        cfg.record(&format!("shard:{}", shard.display()), "train");
    }
    cfg.record("group", &args.group);
    cfg.record("out", args.out.display());
    eprint!("{}", cfg.log_header("train"));

    let src_vocab = Vocabulary::load(&args.src_vocab, Side::Source)?;
    let tgt_vocab = Vocabulary::load(&args.tgt_vocab, Side::Target)?;

    let shards: Vec<Shard> = args.shards.iter().map(read_shard).collect::<Result<_>>()?;
    let val_shards: Option<Vec<Shard>> = if args.val_shards.is_empty() {
        None
    } else {
        Some(
            args.val_shards
                .iter()
                .map(read_shard)
                .collect::<Result<_>>()?,
        )
    };

    let group = TaskGroupSpec {
        group: group_kind,
        tasks: shards.iter().map(|s| s.spec).collect(),
        total_layers: layers,
        shared_layers: shared,
        widths,
        embed_dim: embed,
        tensor,
        alpha,
    };

    let (model, history) = train(
        &group,
        &shards,
        val_shards.as_deref(),
        &train_config,
        &src_vocab,
        &tgt_vocab,
    )?;
    for record in &history.epochs {
        let tasks: Vec<String> = record
            .per_task
            .iter()
            .map(|(name, ll, _)| format!("{name}={ll:.6}"))
            .collect();
        eprintln!(
            "epoch {:>3} lr {:.6} heldout sum {:.6} [{}]",
            record.epoch,
            record.learning_rate,
            record.summed,
            tasks.join(" ")
        );
    }
    model.save(&args.out)?;
    eprintln!("wrote model to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.record("model", args.model.display());
    for shard in &args.shards {
        cfg.record(&format!("shard:{}", shard.display()), "eval");
    }
    eprint!("{}", cfg.log_header("eval"));

    let model = Model::load(&args.model)?;
    let shards: Vec<Shard> = args.shards.iter().map(read_shard).collect::<Result<_>>()?;
    let report = likelihood_report(&model, &shards)?;
    let mut out = std::io::stdout().lock();
    for (name, ll, count) in &report.per_task {
        writeln!(
            out,
            "{name}\tavg_loglik={ll:.6}\tperplexity={:.6}\tcount={count}",
            (-ll).exp()
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    writeln!(out, "sum\tavg_loglik={:.6}", report.group_sum)
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

fn parse_weights(raw: &str) -> Result<BTreeMap<String, f64>> {
    let mut weights = BTreeMap::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad weight {part:?}, expected name=value")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("bad weight value {value:?}")))?;
        weights.insert(name.to_string(), value);
    }
    Ok(weights)
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let mode = match cfg.resolve("mode", args.mode, "exact".to_string())?.as_str() {
        "exact" => ScoreMode::Exact,
        "selfnorm" => ScoreMode::SelfNormalized,
        other => {
            return Err(Error::Config(format!(
                "mode must be exact or selfnorm, got {other:?}"
            )))
        }
    };
    let weights = match cfg.resolve_opt("weights", args.weights)? {
        Some(raw) => Some(parse_weights(&raw)?),
        None => None,
    };
    for model in &args.models {
        cfg.record(&format!("model:{}", model.display()), "score");
    }
    cfg.record("nbest", args.nbest.display());
    cfg.record("source", args.source.display());
    eprint!("{}", cfg.log_header("score"));

    let models: Vec<Model> = args.models.iter().map(Model::load).collect::<Result<_>>()?;
    if let Some(path) = &args.src_vocab {
        let v = Vocabulary::load(path, Side::Source)?;
        models[0].verify_vocab(Side::Source, &v)?;
    }
    if let Some(path) = &args.tgt_vocab {
        let v = Vocabulary::load(path, Side::Target)?;
        models[0].verify_vocab(Side::Target, &v)?;
    }
    let model_refs: Vec<&Model> = models.iter().collect();
    let scorer = Scorer::new(&model_refs)?;

    let sources: Vec<String> = {
        let file = File::open(&args.source).map_err(|e| Error::io(&args.source, e))?;
        BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&args.source, e))?
    };

    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Error::io(path, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };

    let nbest = File::open(&args.nbest).map_err(|e| Error::io(&args.nbest, e))?;
    for (lineno, line) in BufReader::new(nbest).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&args.nbest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_nbest_line(&line, lineno + 1)?;
        let src_line = sources.get(entry.id as usize).ok_or_else(|| Error::Parse {
            line: lineno + 1,
            detail: format!(
                "sentence id {} out of range for source file of {} lines",
                entry.id,
                sources.len()
            ),
        })?;
        let src_tokens: Vec<&str> = src_line.split_whitespace().collect();
        let hyp_tokens: Vec<&str> = entry.hyp_tokens.iter().map(String::as_str).collect();
        let score = scorer.score_hypothesis(
            &src_tokens,
            &hyp_tokens,
            &entry.links,
            weights.as_ref(),
            mode,
        )?;
        writeln!(sink, "{}", format_scored_line(&entry, &score))
            .map_err(|e| Error::io("<output>", e))?;
    }
    sink.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let pattern = SynthPattern::parse(&args.pattern)?;
    let sentences = cfg.resolve("sentences", args.sentences, 10_000)?;
    let vocab_size = cfg.resolve("vocab-size", args.vocab_size, 50)?;
    let seed = cfg.resolve("seed", args.seed, 1)?;
    cfg.record("pattern", pattern);
    cfg.record("out-prefix", args.out_prefix.display());
    eprint!("{}", cfg.log_header("gen-synth"));

    let corpus = gen_synth(pattern, sentences, vocab_size, seed)?;
    let (s, t, a) = corpus.write(&args.out_prefix)?;
    eprintln!(
        "wrote {} sentences to {}, {}, {}",
        sentences,
        s.display(),
        t.display(),
        a.display()
    );
    Ok(())
}
