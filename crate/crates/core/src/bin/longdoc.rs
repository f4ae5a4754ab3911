use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use longdoc::checkpoint::{load_checkpoint, save_checkpoint};
use longdoc::chunking::{chunk_tokens, normalize_overlap, TokenizedDocument, Vocabulary};
use longdoc::config::RunConfig;
use longdoc::corpus::{
    self, load_jsonl, middle_truncate, oracle_label, tokenize_records, CorpusRecord, SignalPolicy, Split,
};
use longdoc::eval::{self, compare_dumps, read_dump, DumpRecord, EvalOptions, Metric};
use longdoc::model::ModelState;
use longdoc::pipeline::{plan_passes, predict_document};
use longdoc::recurrence::Prediction;
use longdoc::train::train_with_progress;
use longdoc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "longdoc",
    version,
    about = "Long-document classification with overlapping chunks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags and --set override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (model init, shuffling, corpus, bootstrap).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. --set pipeline.chunk_size=64. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, its manifest and vocabulary into --out.
    Generate {
        #[arg(long)]
        n_docs: Option<usize>,
        #[arg(long, value_parser = parse_policy)]
        policy: Option<SignalPolicy>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        balance: Option<f64>,
    },
    /// Show the chunk layout and encoder pass plan of documents.
    Chunk {
        /// JSONL corpus; omit to lay out a synthetic document of --length tokens.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, conflicts_with = "input")]
        length: Option<usize>,
        #[arg(short = 'c', long)]
        chunk_size: Option<usize>,
        #[arg(short = 'z', long)]
        overlap: Option<usize>,
        #[arg(long)]
        max_c: Option<usize>,
    },
    /// Fine-tune for one epoch; writes model.ckpt, vocab.txt, losses.tsv and config.json into --out.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary file; built from the training texts when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(short = 'z', long)]
        overlap: Option<usize>,
    },
    /// Write a prediction dump (JSONL) to --out or stdout.
    Predict {
        /// Directory written by `train`, or a checkpoint path.
        #[arg(long, required_unless_present = "oracle")]
        model: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// Only records tagged with this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Name stored in every dump record.
        #[arg(long)]
        name: Option<String>,
        /// Keep only head and tail chunks up to this budget before predicting.
        #[arg(long)]
        truncate: Option<usize>,
        /// Scan synthetic texts for planted signal words instead of running a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Metrics, bootstrap intervals, longest-document slices and length buckets.
    Evaluate {
        #[arg(long)]
        dump: PathBuf,
        /// Longest-document fractions, e.g. 0.1,0.01.
        #[arg(long, value_delimiter = ',')]
        slices: Option<Vec<f64>>,
        #[arg(long)]
        buckets: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Rank models from several dumps over shared bootstrap resamples.
    Compare {
        #[arg(long = "dump", required = true, num_args = 1..)]
        dumps: Vec<PathBuf>,
        #[arg(long, default_value = "macro-f1", value_parser = parse_metric)]
        metric: Metric,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn parse_policy(s: &str) -> std::result::Result<SignalPolicy, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("unknown policy '{s}' (uniform, tail-only, head-only, middle-only)"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown split '{s}' (train, valid, test)"))
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown metric '{s}' (macro-f1, mcc)"))
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn overlap_flag(z: Option<usize>, cfg: &mut RunConfig) -> Result<()> {
    let requested = z.unwrap_or(cfg.pipeline.overlap);
    let (z, mapped) = normalize_overlap(requested)?;
    if mapped {
        warn(format!(
            "overlap {requested} is odd; using {z} ({} tokens per side)",
            z / 2
        ));
    }
    cfg.pipeline.overlap = z;
    Ok(())
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => io::stdout().write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cmd_generate(
    common: &Common,
    n_docs: Option<usize>,
    policy: Option<SignalPolicy>,
    min_len: Option<usize>,
    max_len: Option<usize>,
    balance: Option<f64>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let spec = &mut cfg.corpus;
    spec.n_docs = n_docs.unwrap_or(spec.n_docs);
    spec.policy = policy.unwrap_or(spec.policy);
    spec.min_len = min_len.unwrap_or(spec.min_len);
    spec.max_len = max_len.unwrap_or(spec.max_len);
    spec.balance = balance.unwrap_or(spec.balance);
    let cfg = cfg.resolve()?;
    let dir = common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("generate needs --out DIR".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let corpus = corpus::generate(&cfg.corpus)?;
    corpus::save_jsonl(&corpus.records, &dir.join("corpus.jsonl"))?;
    corpus::save_jsonl(&corpus.manifest, &dir.join("manifest.jsonl"))?;
    corpus.vocabulary.save(&dir.join("vocab.txt"))?;
    write_file(&dir.join("config.json"), cfg.to_pretty_json())?;
    eprintln!("wrote {} documents to {}", corpus.records.len(), dir.display());
    Ok(())
}

fn cmd_chunk(
    common: &Common,
    input: Option<&Path>,
    length: Option<usize>,
    c: Option<usize>,
    z: Option<usize>,
    max_c: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    cfg.pipeline.chunk_size = c.unwrap_or(cfg.pipeline.chunk_size);
    cfg.pipeline.max_c = max_c.unwrap_or(cfg.pipeline.max_c);
    overlap_flag(z, &mut cfg)?;
    let cfg = cfg.resolve()?;
    let (c, z, max_c) = (cfg.pipeline.chunk_size, cfg.pipeline.overlap, cfg.pipeline.max_c);

    let docs: Vec<(String, Vec<u32>)> = match (input, length) {
        (Some(path), _) => {
            let records = load_jsonl(path)?;
            let vocab = Vocabulary::build(records.iter().map(|r| r.text.as_str()), None);
            tokenize_records(&records, &vocab)?
                .into_iter()
                .map(|d| (d.id, d.tokens))
                .collect()
        }
        (None, Some(k)) => vec![(format!("length-{k}"), (0..k as u32).map(|t| t + 4).collect())],
        (None, None) => return Err(Error::Config("chunk needs --input FILE or --length K".into())),
    };
    let mut lines = Vec::new();
    for (id, tokens) in docs {
        let set = chunk_tokens(&tokens, c, z)?;
        let lengths: Vec<usize> = set.chunks.iter().map(Vec::len).collect();
        lines.push(json!({
            "id": id,
            "tokens": tokens.len(),
            "chunk_size": c,
            "overlap": z,
            "chunks": set.len(),
            "starts": set.starts,
            "lengths": lengths,
            "shared": set.shared_counts(),
            "max_c": max_c,
            "passes": plan_passes(set.len(), max_c)?,
        }));
    }
    let mut out = String::new();
    for l in lines {
        out += &l.to_string();
        out.push('\n');
    }
    write_output(common.out.as_deref(), out.as_bytes())
}

fn labelled_split(records: &[CorpusRecord], split: Split) -> Vec<&CorpusRecord> {
    if records.iter().any(|r| r.split.is_some()) {
        records.iter().filter(|r| r.split == Some(split)).collect()
    } else {
        records.iter().collect()
    }
}

fn cmd_train(common: &Common, corpus_path: &Path, vocab: Option<&Path>, z: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    overlap_flag(z, &mut cfg)?;
    let dir = common
        .out
        .as_deref()
        .ok_or_else(|| Error::Config("train needs --out DIR".into()))?;
    let records = load_jsonl(corpus_path)?;
    let train_records = labelled_split(&records, Split::Train);
    if train_records.is_empty() {
        return Err(Error::Config(format!("{}: no training records", corpus_path.display())));
    }
    let vocab = match vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::build(
            train_records.iter().map(|r| r.text.as_str()),
            Some(cfg.pipeline.encoder.vocab_size.max(5)),
        ),
    };
    cfg.pipeline.encoder.vocab_size = vocab.len();
    let cfg = cfg.resolve()?;
    let docs = tokenize_records(train_records.iter().copied(), &vocab)?;

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut state = ModelState::<f32>::init(cfg.pipeline.clone())?;
    let total = cfg.train.total_steps(docs.len());
    let every = (total / 20).max(1);
    let report = train_with_progress(&docs, &mut state, &cfg.train, |step, loss| {
        if step % every == 0 || step + 1 == total {
            eprintln!("step {}/{total} loss {loss:.4}", step + 1);
        }
    })?;
    save_checkpoint(&state, &dir.join("model.ckpt"))?;
    vocab.save(&dir.join("vocab.txt"))?;
    let mut trace = String::from("step\tlr\tloss\n");
    for (i, (lr, loss)) in report.learning_rates.iter().zip(&report.losses).enumerate() {
        trace += &format!("{i}\t{lr:.6e}\t{loss:.6}\n");
    }
    write_file(&dir.join("losses.tsv"), trace)?;
    write_file(&dir.join("config.json"), cfg.to_pretty_json())?;
    eprintln!("saved model to {}", dir.display());
    Ok(())
}

fn resolve_model_paths(model: &Path, vocab: Option<&Path>) -> (PathBuf, PathBuf) {
    let ckpt = if model.is_dir() {
        model.join("model.ckpt")
    } else {
        model.to_path_buf()
    };
    let vocab = vocab
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    (ckpt, vocab)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    common: &Common,
    model: Option<&Path>,
    vocab: Option<&Path>,
    corpus_path: &Path,
    split: Option<Split>,
    name: Option<String>,
    truncate: Option<usize>,
    oracle: bool,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let records = load_jsonl(corpus_path)?;
    let selected: Vec<&CorpusRecord> = match split {
        Some(s) => records.iter().filter(|r| r.split == Some(s)).collect(),
        None => records.iter().collect(),
    };
    if selected.is_empty() {
        return Err(Error::Config(format!(
            "{}: no records in the requested split",
            corpus_path.display()
        )));
    }
    if let Some(b) = truncate {
        cfg.truncate_budget = Some(b);
    }
    let mut dump = Vec::with_capacity(selected.len());
    if oracle {
        let model_name = name.unwrap_or_else(|| "oracle".into());
        for r in &selected {
            let label = r
                .label
                .ok_or_else(|| Error::invalid(format!("document '{}' has no gold label", r.id)))?;
            let pred = oracle_label(&r.text).unwrap_or(0);
            dump.push(DumpRecord {
                id: r.id.clone(),
                length: r.text.split_whitespace().count(),
                label,
                probability: f64::from(pred),
                prediction: pred,
                model: model_name.clone(),
            });
        }
    } else {
        let model = model.expect("clap requires --model without --oracle");
        let (ckpt, vocab_path) = resolve_model_paths(model, vocab);
        let state = load_checkpoint::<f32>(&ckpt)?;
        cfg.pipeline = state.config.clone();
        cfg = cfg.resolve()?;
        let vocab = Vocabulary::load(&vocab_path)?;
        if vocab.len() != state.config.encoder.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary {} has {} entries, model expects {}",
                vocab_path.display(),
                vocab.len(),
                state.config.encoder.vocab_size
            )));
        }
        let model_name = name.unwrap_or_else(|| format!("overlap-{}", state.config.overlap));
        let docs = tokenize_records(selected.iter().copied(), &vocab)?;
        for d in &docs {
            let label = d
                .label
                .ok_or_else(|| Error::invalid(format!("document '{}' has no gold label", d.id)))?;
            let input: TokenizedDocument = match cfg.truncate_budget {
                Some(b) => middle_truncate(d, b, cfg.pipeline.chunk_size)?,
                None => d.clone(),
            };
            let Prediction {
                probability,
                label: pred,
            } = predict_document(&input, &state)?;
            dump.push(DumpRecord {
                id: d.id.clone(),
                length: d.len(),
                label,
                probability,
                prediction: pred,
                model: model_name.clone(),
            });
        }
    }
    let mut bytes = Vec::new();
    eval::write_dump(&dump, &mut bytes).map_err(|e| Error::io("<dump>", e))?;
    write_output(common.out.as_deref(), &bytes)?;
    if let Some(out) = &common.out {
        write_file(&sidecar(out), cfg.to_pretty_json())?;
    }
    Ok(())
}

fn cmd_evaluate(
    common: &Common,
    dump_path: &Path,
    slices: Option<Vec<f64>>,
    buckets: Option<usize>,
    replicates: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(s) = slices {
        cfg.eval.slices = s;
    }
    if buckets.is_some() {
        cfg.eval.buckets = buckets;
    }
    if let Some(b) = replicates {
        cfg.eval.bootstrap.replicates = b;
    }
    let cfg = cfg.resolve()?;
    let records = read_dump(dump_path)?;
    let opts = EvalOptions {
        bootstrap: Some(cfg.eval.bootstrap),
        slices: cfg.eval.slices.clone(),
        buckets: cfg.eval.buckets,
    };
    let report = eval::evaluate(&records, &opts)?;
    for (what, ci) in [("macro-f1", report.overall.macro_f1_ci), ("mcc", report.overall.mcc_ci)] {
        if let Some(ci) = ci.filter(|c| c.unresolved > 0) {
            warn(format!(
                "{what}: {} bootstrap replicates stayed single-class",
                ci.unresolved
            ));
        }
    }
    let doc = json!({ "report": report, "config": cfg });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    write_output(common.out.as_deref(), text.as_bytes())
}

fn cmd_compare(
    common: &Common,
    paths: &[PathBuf],
    metric: Metric,
    replicates: Option<usize>,
    alpha: Option<f64>,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(b) = replicates {
        cfg.eval.bootstrap.replicates = b;
    }
    if let Some(a) = alpha {
        cfg.eval.alpha = a;
    }
    let cfg = cfg.resolve()?;
    if paths.len() < 2 {
        return Err(Error::Config("compare needs at least two --dump files".into()));
    }
    let dumps = paths.iter().map(|p| read_dump(p)).collect::<Result<Vec<_>>>()?;
    let ranking = compare_dumps(&dumps, metric, &cfg.eval.bootstrap, cfg.eval.alpha)?;
    match &common.out {
        Some(out) => {
            let doc = json!({ "metric": metric, "ranking": ranking, "config": cfg });
            write_file(out, serde_json::to_string_pretty(&doc)? + "\n")?;
            print!("{}", ranking.table());
        }
        None => print!("{}", ranking.table()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Generate {
            n_docs,
            policy,
            min_len,
            max_len,
            balance,
        } => cmd_generate(common, n_docs, policy, min_len, max_len, balance),
        Command::Chunk {
            input,
            length,
            chunk_size,
            overlap,
            max_c,
        } => cmd_chunk(common, input.as_deref(), length, chunk_size, overlap, max_c),
        Command::Train { corpus, vocab, overlap } => cmd_train(common, &corpus, vocab.as_deref(), overlap),
        Command::Predict {
            model,
            vocab,
            corpus,
            split,
            name,
            truncate,
            oracle,
        } => cmd_predict(
            common,
            model.as_deref(),
            vocab.as_deref(),
            &corpus,
            split,
            name,
            truncate,
            oracle,
        ),
        Command::Evaluate {
            dump,
            slices,
            buckets,
            replicates,
        } => cmd_evaluate(common, &dump, slices, buckets, replicates),
        Command::Compare {
            dumps,
            metric,
            replicates,
            alpha,
        } => cmd_compare(common, &dumps, metric, replicates, alpha),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
