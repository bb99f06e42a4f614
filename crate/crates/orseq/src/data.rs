//! Corpus ingestion, vocabularies, numericalization, batching, and the
//! synthetic parallel-task generator used for desk-scale experiments.
//!
//! Corpora are UTF-8, newline-delimited, whitespace-tokenized plain text.
//! Parallel corpora are two line-aligned files; a line-count mismatch is a
//! hard error. Vocab files carry a fixed 4-line reserved header, then one
//! token per line (`id = line_number`, counting the header and starting at 0).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::TokenId;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Bidirectional token <-> id map with the fixed reserved block
/// PAD=0, UNK=1, BOS=2, EOS=3 followed by tokens in descending corpus
/// frequency (ties by first occurrence).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_of: HashMap<String, TokenId>,
    token_of: Vec<String>,
}

impl Vocabulary {
    fn from_ordered_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut token_of: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        token_of.extend(tokens);
        let mut id_of = HashMap::with_capacity(token_of.len());
        for (i, t) in token_of.iter().enumerate() {
            if id_of.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Vocabulary { id_of, token_of })
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved block is always present
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.id_of.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.token_of[id as usize]
    }

    /// Whitespace-tokenize and numericalize one line. Unknown tokens map to
    /// UNK; no BOS/EOS are added. Empty lines yield empty sequences.
    pub fn encode_sentence(&self, line: &str) -> Vec<TokenId> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Space-join the tokens of an id sequence.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(*id));
        }
        out
    }

    /// Serialize: the 4 reserved lines, then one token per line.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.token_of {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() {
            return Err(Error::Vocab(format!(
                "vocab file {} too short for reserved header",
                path.display()
            )));
        }
        for (i, expect) in RESERVED.iter().enumerate() {
            if lines[i] != *expect {
                return Err(Error::Vocab(format!(
                    "vocab file {} line {} should be `{expect}`, got `{}`",
                    path.display(),
                    i + 1,
                    lines[i]
                )));
            }
        }
        Vocabulary::from_ordered_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string()).collect())
    }
}

/// Vocabulary from in-memory lines: reserved block first, then tokens by
/// descending frequency (ties by first occurrence), truncated at `max_size`
/// total entries. Tokens with corpus frequency below `min_freq` are dropped.
pub fn vocab_from_lines<'a>(
    lines: impl Iterator<Item = &'a str>,
    max_size: usize,
    min_freq: u64,
) -> Result<Vocabulary> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut order = 0usize;
    let mut any = false;
    for line in lines {
        any = true;
        for tok in line.split_whitespace() {
            *freq.entry(tok).or_insert(0) += 1;
            first_seen.entry(tok).or_insert_with(|| {
                order += 1;
                order
            });
        }
    }
    if !any {
        return Err(Error::Corpus("empty corpus".into()));
    }
    if max_size < RESERVED.len() {
        return Err(Error::Vocab(format!(
            "max_size {max_size} smaller than the reserved block"
        )));
    }
    let mut entries: Vec<(&str, u64, usize)> = freq
        .iter()
        .filter(|(_, c)| **c >= min_freq)
        .map(|(t, c)| (*t, *c, first_seen[t]))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    entries.truncate(max_size - RESERVED.len());
    Vocabulary::from_ordered_tokens(entries.into_iter().map(|(t, _, _)| t.to_string()).collect())
}

/// Build a vocabulary from a corpus file.
pub fn build_vocab(path: &Path, max_size: usize, min_freq: u64) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    vocab_from_lines(text.lines(), max_size, min_freq)
}

/// One numericalized source/target pair. No BOS/EOS on either side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

/// A mini-batch of at most `batch_size` pairs.
pub type Batch = Vec<SentencePair>;

/// Load a line-aligned parallel corpus, numericalize, and drop pairs where
/// either side is empty or longer than `max_len`.
pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<SentencePair>> {
    let src_text = std::fs::read_to_string(src_path).map_err(|e| Error::io(src_path, e))?;
    let tgt_text = std::fs::read_to_string(tgt_path).map_err(|e| Error::io(tgt_path, e))?;
    let src_lines: Vec<&str> = src_text.lines().collect();
    let tgt_lines: Vec<&str> = tgt_text.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Corpus(format!(
            "{} has {} lines but {} has {}",
            src_path.display(),
            src_lines.len(),
            tgt_path.display(),
            tgt_lines.len()
        )));
    }
    let mut pairs = Vec::new();
    for (s, t) in src_lines.iter().zip(tgt_lines.iter()) {
        let src = src_vocab.encode_sentence(s);
        let tgt = tgt_vocab.encode_sentence(t);
        if src.is_empty() || tgt.is_empty() || src.len() > max_len || tgt.len() > max_len {
            continue;
        }
        pairs.push(SentencePair { src, tgt });
    }
    if pairs.is_empty() {
        return Err(Error::Corpus(format!(
            "no usable pairs in {} / {}",
            src_path.display(),
            tgt_path.display()
        )));
    }
    Ok(pairs)
}

/// Deterministic shuffled mini-batches for one epoch: Fisher-Yates under
/// `rng.derive([epoch])`, contiguous chunks, final short batch included.
pub fn batch_iter(pairs: &[SentencePair], batch_size: usize, rng: &Rng, epoch: usize) -> Vec<Batch> {
    debug_assert!(batch_size > 0);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle_rng = rng.derive(&[0x5348_5546, epoch as u64]);
    shuffle_rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|i| pairs[*i].clone()).collect())
        .collect()
}

/// Synthetic parallel-task description.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Number of distinct content word types (excluding specials).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub task: SyntheticTask,
    pub pairs: usize,
    /// Probability of swapping each adjacent target pair (cipher task only).
    pub swap_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    Copy,
    Reverse,
    /// Fixed token permutation of the source, then local adjacent swaps.
    Cipher,
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<SyntheticTask> {
        match s {
            "copy" => Ok(SyntheticTask::Copy),
            "reverse" => Ok(SyntheticTask::Reverse),
            "cipher" => Ok(SyntheticTask::Cipher),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected copy, reverse, or cipher)"
            ))),
        }
    }
}

/// Generate a deterministic parallel corpus of `(source, target)` text lines
/// where `target = task(source)`. Word types are `w0..w{vocab_size-1}`.
///
/// The cipher permutation depends only on the spec seed, so splits generated
/// from one spec share the same mapping. Local swaps walk left to right and
/// skip the position after a swap, so swaps never overlap.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<(String, String)>> {
    if spec.vocab_size < 2 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Config(format!(
            "bad synthetic spec: vocab_size {}, lengths {}..{}",
            spec.vocab_size, spec.min_len, spec.max_len
        )));
    }
    let master = Rng::new(spec.seed);
    let cipher: Vec<usize> = {
        let mut perm: Vec<usize> = (0..spec.vocab_size).collect();
        let mut perm_rng = master.derive(&[0x4349_5048]);
        perm_rng.shuffle(&mut perm);
        perm
    };
    let mut rng = master.derive(&[0x4745_4e21]);
    let mut out = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        let src: Vec<usize> = (0..len).map(|_| rng.below(spec.vocab_size)).collect();
        let tgt: Vec<usize> = match spec.task {
            SyntheticTask::Copy => src.clone(),
            SyntheticTask::Reverse => src.iter().rev().copied().collect(),
            SyntheticTask::Cipher => {
                let mut t: Vec<usize> = src.iter().map(|w| cipher[*w]).collect();
                let mut i = 0;
                while i + 1 < t.len() {
                    if rng.bernoulli(spec.swap_prob) {
                        t.swap(i, i + 1);
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                t
            }
        };
        let fmt = |xs: &[usize]| {
            xs.iter()
                .map(|w| format!("w{w}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.push((fmt(&src), fmt(&tgt)));
    }
    Ok(out)
}
