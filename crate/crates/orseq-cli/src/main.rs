//! `orseq` command line: vocabulary building, synthetic data generation,
//! training with oracle-sampled contexts, translation, evaluation, and
//! oracle inspection dumps.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use orseq::checkpoint::{self, Checkpoint};
use orseq::data::{
    build_vocab, gen_synthetic, load_parallel_corpus, SyntheticSpec, SyntheticTask, Vocabulary,
    BOS,
};
use orseq::metrics::{corpus_bleu, sentence_bleu};
use orseq::model::{decoder_step, encode, init_state, ModelParams, SentenceDecoder};
use orseq::numerics::Rng;
use orseq::oracle::{sentence_oracle_with, word_oracle, OracleMode};
use orseq::search::{beam_search, default_max_len, force_decode};
use orseq::trainer::{train, DataSet, OptimizerConfig, TrainConfig};
use orseq::TokenId;

#[derive(Parser)]
#[command(name = "orseq", version, about = "Oracle-sampled seq2seq training")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a vocabulary file from a tokenized corpus
    BuildVocab(BuildVocabArgs),
    /// Generate a synthetic parallel corpus (copy / reverse / cipher)
    GenData(GenDataArgs),
    /// Train a model; writes metrics.csv, best.ckpt, last.ckpt, manifest.json
    Train(Box<TrainArgs>),
    /// Decode a source file with beam search
    Translate(TranslateArgs),
    /// Decode a test set and report corpus BLEU
    Evaluate(EvaluateArgs),
    /// Dump per-sentence word/sentence oracle selections for inspection
    OracleDump(OracleDumpArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Tokenized corpus, one sentence per line
    #[arg(long)]
    input: PathBuf,
    /// Maximum vocabulary size including the 4 reserved entries
    #[arg(long, default_value_t = 30_000)]
    max_size: usize,
    /// Drop tokens rarer than this
    #[arg(long, default_value_t = 1)]
    min_freq: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Structured-text config with keys vocab_size, min_len, max_len, task,
    /// pairs, swap_prob, seed (flags override)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// copy | reverse | cipher
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    swap_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated split sizes, e.g. 5000,500,500 for train/val/test;
    /// their sum must equal `pairs`. One split writes `<prefix>.src/.tgt`,
    /// three write `<prefix>.{train,val,test}.{src,tgt}`.
    #[arg(long, default_value = "0")]
    splits: String,
    #[arg(long)]
    out_prefix: PathBuf,
}

fn parse_oracle(s: &str) -> std::result::Result<OracleMode, String> {
    s.parse::<OracleMode>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    val_src: PathBuf,
    #[arg(long)]
    val_tgt: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON config file; explicit flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from a last.ckpt written with the same config and corpora
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, value_parser = parse_oracle)]
    oracle: Option<OracleMode>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    oracle_beam: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// sgd | adadelta
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_beam: Option<usize>,
    /// Sentence length filter applied when loading the corpora
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Write 0.000 in the metrics seconds column (byte-stable output)
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Where to write the decoded hypotheses (one per input line)
    #[arg(long)]
    hyp_out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleDumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    src: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    src_vocab: PathBuf,
    #[arg(long)]
    tgt_vocab: PathBuf,
    /// Oracle flavor; noise applies when the mode carries it
    #[arg(long, default_value = "sentence-noise", value_parser = parse_oracle)]
    oracle: OracleMode,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 3)]
    oracle_beam: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Dump at most this many sentences (0 = all)
    #[arg(long, default_value_t = 0)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::BuildVocab(a) => cmd_build_vocab(a),
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Train(a) => cmd_train(*a),
        Cmd::Translate(a) => cmd_translate(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::OracleDump(a) => cmd_oracle_dump(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// ORSEQ_THREADS caps decode parallelism; unset means rayon's default.
fn configure_threads() {
    if let Ok(v) = std::env::var("ORSEQ_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn cmd_build_vocab(a: BuildVocabArgs) -> Result<()> {
    let vocab = build_vocab(&a.input, a.max_size, a.min_freq)?;
    vocab.save(&a.out)?;
    eprintln!("wrote {} entries to {}", vocab.len(), a.out.display());
    Ok(())
}

fn parse_kv_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    let kv = match &a.config {
        Some(p) => parse_kv_config(p)?,
        None => BTreeMap::new(),
    };
    fn pick<T: std::str::FromStr>(
        flag: Option<T>,
        kv: &BTreeMap<String, String>,
        key: &str,
    ) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match kv.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
        }
    }
    let vocab_size = pick(a.vocab_size, &kv, "vocab_size")?.context("vocab_size required")?;
    let min_len = pick(a.min_len, &kv, "min_len")?.unwrap_or(3);
    let max_len = pick(a.max_len, &kv, "max_len")?.unwrap_or(12);
    let task: SyntheticTask = pick(a.task.clone(), &kv, "task")?
        .context("task required (copy, reverse, cipher)")?
        .parse()?;
    let pairs = pick(a.pairs, &kv, "pairs")?.context("pairs required")?;
    let swap_prob = pick(a.swap_prob, &kv, "swap_prob")?.unwrap_or(0.1);
    let seed = pick(a.seed, &kv, "seed")?.unwrap_or(1);

    let spec = SyntheticSpec {
        vocab_size,
        min_len,
        max_len,
        task,
        pairs,
        swap_prob,
        seed,
    };
    let corpus = gen_synthetic(&spec)?;

    let splits: Vec<usize> = a
        .splits
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("bad --splits"))
        .collect::<Result<_>>()?;
    let write_pair_files = |prefix: &Path, rows: &[(String, String)]| -> Result<()> {
        let mut src = String::new();
        let mut tgt = String::new();
        for (s, t) in rows {
            src.push_str(s);
            src.push('\n');
            tgt.push_str(t);
            tgt.push('\n');
        }
        // append, never replace: a prefix like data.train must become
        // data.train.src, not data.src
        let src_path = PathBuf::from(format!("{}.src", prefix.display()));
        let tgt_path = PathBuf::from(format!("{}.tgt", prefix.display()));
        std::fs::write(&src_path, src).with_context(|| src_path.display().to_string())?;
        std::fs::write(&tgt_path, tgt).with_context(|| tgt_path.display().to_string())?;
        eprintln!("wrote {} pairs to {}[.src/.tgt]", rows.len(), prefix.display());
        Ok(())
    };

    if splits == [0] {
        write_pair_files(&a.out_prefix, &corpus)?;
    } else {
        if splits.iter().sum::<usize>() != pairs {
            bail!(
                "--splits {:?} must sum to pairs = {pairs}",
                splits
            );
        }
        if splits.len() != 3 {
            bail!("--splits expects three sizes (train,val,test)");
        }
        let names = ["train", "val", "test"];
        let mut offset = 0;
        for (n, name) in splits.iter().zip(names.iter()) {
            let rows = &corpus[offset..offset + n];
            offset += n;
            let prefix = a.out_prefix.with_file_name(format!(
                "{}.{name}",
                a.out_prefix.file_name().unwrap_or_default().to_string_lossy()
            ));
            write_pair_files(&prefix, rows)?;
        }
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    version: String,
    seed: u64,
    config: TrainConfig,
    corpora: BTreeMap<String, FileStamp>,
    artifacts: BTreeMap<String, String>,
}

#[derive(serde::Serialize, serde::Deserialize, PartialEq)]
struct FileStamp {
    path: String,
    sha256: String,
}

fn merge_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $arg:expr) => {
            if let Some(v) = $arg {
                cfg.$field = v;
            }
        };
    }
    set!(oracle, a.oracle);
    set!(tau, a.tau);
    set!(mu, a.mu);
    set!(oracle_beam, a.oracle_beam);
    set!(epochs, a.epochs);
    set!(batch_size, a.batch_size);
    set!(dropout, a.dropout);
    set!(seed, a.seed);
    set!(patience, a.patience);
    set!(eval_beam, a.eval_beam);
    set!(max_sentence_len, a.max_len);
    set!(embed_dim, a.embed_dim);
    set!(hidden_dim, a.hidden_dim);
    set!(clip_norm, a.clip_norm);
    if a.no_wall_time {
        cfg.wall_time = false;
    }
    match a.optimizer.as_deref() {
        None => {
            // flags may still tweak the configured optimizer
            cfg.optimizer = tweak_optimizer(cfg.optimizer, a)?;
        }
        Some("adadelta") => {
            cfg.optimizer = tweak_optimizer(
                OptimizerConfig::Adadelta {
                    rho: 0.95,
                    eps: 1e-6,
                },
                a,
            )?;
        }
        Some("sgd") => {
            cfg.optimizer = tweak_optimizer(OptimizerConfig::Sgd { lr: 1.0 }, a)?;
        }
        Some(other) => bail!("unknown optimizer `{other}` (expected sgd or adadelta)"),
    }
    Ok(cfg)
}

fn tweak_optimizer(base: OptimizerConfig, a: &TrainArgs) -> Result<OptimizerConfig> {
    Ok(match base {
        OptimizerConfig::Sgd { lr } => OptimizerConfig::Sgd {
            lr: a.lr.unwrap_or(lr),
        },
        OptimizerConfig::Adadelta { rho, eps } => OptimizerConfig::Adadelta {
            rho: a.rho.unwrap_or(rho),
            eps: a.eps.unwrap_or(eps),
        },
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = merge_train_config(&a)?;
    cfg.validate()?;

    let src_vocab = Vocabulary::load(&a.src_vocab)?;
    let tgt_vocab = Vocabulary::load(&a.tgt_vocab)?;
    let train_pairs = load_parallel_corpus(
        &a.train_src,
        &a.train_tgt,
        &src_vocab,
        &tgt_vocab,
        cfg.max_sentence_len,
    )?;
    let val_pairs = load_parallel_corpus(
        &a.val_src,
        &a.val_tgt,
        &src_vocab,
        &tgt_vocab,
        cfg.max_sentence_len,
    )?;

    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;

    let mut corpora = BTreeMap::new();
    for (name, path) in [
        ("train_src", &a.train_src),
        ("train_tgt", &a.train_tgt),
        ("val_src", &a.val_src),
        ("val_tgt", &a.val_tgt),
        ("src_vocab", &a.src_vocab),
        ("tgt_vocab", &a.tgt_vocab),
    ] {
        corpora.insert(
            name.to_string(),
            FileStamp {
                path: path.display().to_string(),
                sha256: sha256_file(path)?,
            },
        );
    }

    let manifest_path = a.out_dir.join("manifest.json");
    if a.resume.is_some() && manifest_path.exists() {
        let old: Manifest = serde_json::from_str(
            &std::fs::read_to_string(&manifest_path).context("reading existing manifest")?,
        )
        .context("parsing existing manifest")?;
        for (name, stamp) in &old.corpora {
            match corpora.get(name) {
                Some(now) if now.sha256 == stamp.sha256 => {}
                _ => bail!(
                    "corpus checksum changed since the original run: {name} ({})",
                    stamp.path
                ),
            }
        }
    }

    let manifest = Manifest {
        version: format!("orseq {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        config: cfg.clone(),
        corpora,
        artifacts: BTreeMap::from([
            ("metrics".to_string(), "metrics.csv".to_string()),
            ("best".to_string(), "best.ckpt".to_string()),
            ("last".to_string(), "last.ckpt".to_string()),
        ]),
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).context("serializing manifest")?,
    )
    .with_context(|| format!("writing {}", manifest_path.display()))?;

    let ds = DataSet {
        train: train_pairs,
        val: val_pairs,
        src_vocab,
        tgt_vocab,
    };
    let report = train(&cfg, &ds, &a.out_dir, a.resume.as_deref())?;
    eprintln!(
        "trained {} epochs; best val BLEU {:.4} at epoch {}",
        report.epochs_run, report.best_val_bleu, report.best_epoch
    );
    println!("{:.2}", report.best_val_bleu * 100.0);
    Ok(())
}

fn load_checkpoint_with_vocabs(
    ckpt_path: &Path,
    src_vocab_path: &Path,
    tgt_vocab_path: &Path,
) -> Result<(Checkpoint, Vocabulary, Vocabulary)> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let src_vocab = Vocabulary::load(src_vocab_path)?;
    let tgt_vocab = Vocabulary::load(tgt_vocab_path)?;
    if src_vocab.len() != ckpt.dims.src_vocab || tgt_vocab.len() != ckpt.dims.tgt_vocab {
        bail!(
            "vocab sizes ({}, {}) do not match checkpoint dims ({}, {})",
            src_vocab.len(),
            tgt_vocab.len(),
            ckpt.dims.src_vocab,
            ckpt.dims.tgt_vocab
        );
    }
    Ok((ckpt, src_vocab, tgt_vocab))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(|s| s.to_string())
        .collect())
}

/// Beam-decode one encoded source; empty sources yield empty outputs.
fn decode_line(params: &ModelParams, ids: &[TokenId], beam: usize) -> orseq::Result<Vec<TokenId>> {
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let decoder = SentenceDecoder::new(params, ids)?;
    let hyps = beam_search(&decoder, beam, default_max_len(ids.len()), None)?;
    let best = &hyps[0];
    Ok(best.tokens[..best.tokens.len() - 1].to_vec())
}

fn cmd_translate(a: TranslateArgs) -> Result<()> {
    let (ckpt, src_vocab, tgt_vocab) =
        load_checkpoint_with_vocabs(&a.checkpoint, &a.src_vocab, &a.tgt_vocab)?;
    let lines = read_lines(&a.input)?;
    use rayon::prelude::*;
    let hyps: Vec<Vec<TokenId>> = lines
        .par_iter()
        .map(|line| decode_line(&ckpt.params, &src_vocab.encode_sentence(line), a.beam))
        .collect::<orseq::Result<_>>()?;
    let mut out = String::new();
    for h in &hyps {
        out.push_str(&tgt_vocab.decode(h));
        out.push('\n');
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("decoded {} lines to {}", hyps.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let (ckpt, src_vocab, tgt_vocab) =
        load_checkpoint_with_vocabs(&a.checkpoint, &a.src_vocab, &a.tgt_vocab)?;
    let src_lines = read_lines(&a.src)?;
    let ref_lines = read_lines(&a.reference)?;
    if src_lines.len() != ref_lines.len() {
        bail!(
            "{} has {} lines but {} has {}",
            a.src.display(),
            src_lines.len(),
            a.reference.display(),
            ref_lines.len()
        );
    }
    use rayon::prelude::*;
    let hyps: Vec<Vec<TokenId>> = src_lines
        .par_iter()
        .map(|line| decode_line(&ckpt.params, &src_vocab.encode_sentence(line), a.beam))
        .collect::<orseq::Result<_>>()?;
    let refs: Vec<Vec<TokenId>> = ref_lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let ids = tgt_vocab.encode_sentence(line);
            if ids.is_empty() {
                bail!("{}:{}: empty reference line", a.reference.display(), i + 1);
            }
            Ok(ids)
        })
        .collect::<Result<_>>()?;
    let bleu = corpus_bleu(&hyps, &refs)?;
    if let Some(hyp_out) = &a.hyp_out {
        let mut out = String::new();
        for h in &hyps {
            out.push_str(&tgt_vocab.decode(h));
            out.push('\n');
        }
        std::fs::write(hyp_out, out).with_context(|| format!("writing {}", hyp_out.display()))?;
    }
    eprintln!("corpus BLEU over {} sentences (beam {})", hyps.len(), a.beam);
    println!("{:.2}", bleu * 100.0);
    Ok(())
}

#[derive(serde::Serialize)]
struct DumpRow {
    index: usize,
    source: String,
    reference: String,
    word_oracle: String,
    sentence_oracle: String,
    sentence_oracle_bleu: f64,
    candidates: Vec<DumpCandidate>,
    word_divergence: f64,
    sentence_divergence: f64,
}

#[derive(serde::Serialize)]
struct DumpCandidate {
    tokens: String,
    bleu: f64,
    score: f64,
}

/// Word oracles under teacher forcing: run the ground-truth-fed decoder and
/// take the per-step (optionally perturbed) argmax.
fn teacher_forced_word_oracles(
    params: &ModelParams,
    src: &[TokenId],
    tgt: &[TokenId],
    mut noise: Option<(&mut Rng, f64)>,
) -> Result<Vec<TokenId>> {
    let ann = encode(params, src)?;
    let mut state = init_state(params);
    let mut ctx = BOS;
    let mut out = Vec::with_capacity(tgt.len());
    for truth in tgt {
        let (next, logits) = decoder_step(params, ctx, &state, &ann)?;
        out.push(word_oracle(
            &logits,
            noise.as_mut().map(|(rng, tau)| (&mut **rng, *tau)),
        ));
        state = next;
        ctx = *truth;
    }
    Ok(out)
}

fn divergence(oracle: &[TokenId], reference: &[TokenId]) -> f64 {
    let differing = oracle
        .iter()
        .zip(reference.iter())
        .filter(|(a, b)| a != b)
        .count();
    differing as f64 / reference.len() as f64
}

fn cmd_oracle_dump(a: OracleDumpArgs) -> Result<()> {
    let (ckpt, src_vocab, tgt_vocab) =
        load_checkpoint_with_vocabs(&a.checkpoint, &a.src_vocab, &a.tgt_vocab)?;
    let pairs = load_parallel_corpus(&a.src, &a.reference, &src_vocab, &tgt_vocab, usize::MAX)?;
    let take = if a.limit == 0 { pairs.len() } else { a.limit.min(pairs.len()) };
    let master = Rng::new(a.seed);

    let mut out = String::new();
    let mut word_div_sum = 0.0;
    let mut sent_div_sum = 0.0;
    for (i, pair) in pairs.iter().take(take).enumerate() {
        let mut word_rng = master.derive(&[0x574f, i as u64]);
        let word_noise = a
            .oracle
            .uses_noise()
            .then_some((&mut word_rng, a.tau));
        let word = teacher_forced_word_oracles(&ckpt.params, &pair.src, &pair.tgt, word_noise)?;

        let decoder = SentenceDecoder::new(&ckpt.params, &pair.src)?;
        let mut sent_rng = master.derive(&[0x534f, i as u64]);
        let mut cand_rng = sent_rng.clone();
        let sel = sentence_oracle_with(
            &decoder,
            &pair.tgt,
            a.oracle_beam,
            a.oracle.uses_noise().then_some((&mut sent_rng, a.tau)),
            a.oracle,
        )?;
        let cands = force_decode(
            &decoder,
            pair.tgt.len(),
            a.oracle_beam,
            a.oracle.uses_noise().then_some(orseq::search::Noise {
                rng: &mut cand_rng,
                tau: a.tau,
            }),
        )?;

        let word_div = divergence(&word, &pair.tgt);
        let sent_div = divergence(&sel.tokens, &pair.tgt);
        word_div_sum += word_div;
        sent_div_sum += sent_div;

        let row = DumpRow {
            index: i,
            source: src_vocab.decode(&pair.src),
            reference: tgt_vocab.decode(&pair.tgt),
            word_oracle: tgt_vocab.decode(&word),
            sentence_oracle: tgt_vocab.decode(&sel.tokens),
            sentence_oracle_bleu: sel.bleu,
            candidates: cands
                .iter()
                .map(|h| DumpCandidate {
                    tokens: tgt_vocab.decode(&h.tokens[..h.tokens.len() - 1]),
                    bleu: sentence_bleu(&h.tokens[..h.tokens.len() - 1], &pair.tgt),
                    score: h.score,
                })
                .collect(),
            word_divergence: word_div,
            sentence_divergence: sent_div,
        };
        out.push_str(&serde_json::to_string(&row).context("serializing dump row")?);
        out.push('\n');
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "dumped {take} sentences; mean divergence word {:.3}, sentence {:.3}",
        word_div_sum / take as f64,
        sent_div_sum / take as f64
    );
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "word_divergence={:.4} sentence_divergence={:.4}",
        word_div_sum / take as f64,
        sent_div_sum / take as f64
    )?;
    Ok(())
}
