//! Message-pair corpora: tokenization, vocabulary, TSV loading,
//! deterministic splitting, and synthetic corpus generation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod synth;
pub use synth::{SynthSpec, Template, FILLER_SLOT};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Reserved tokens, in id order 0..=3.
pub const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Token table with a fixed reserved prefix. `index` is the exact
/// inverse of `tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from an explicit token list that must already start with
    /// the four reserved tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::Config(format!(
                "vocabulary needs at least {} tokens, got {}",
                RESERVED.len(),
                tokens.len()
            )));
        }
        for (i, expect) in RESERVED.iter().enumerate() {
            if tokens[i] != *expect {
                return Err(Error::Config(format!(
                    "vocabulary slot {i} must be {expect:?}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Build from token sequences: reserved prefix, then remaining slots
    /// by descending frequency with lexicographic tie-break, truncated
    /// at `max_size`.
    pub fn build<'a, I>(texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size < RESERVED.len() {
            return Err(Error::Config(format!(
                "max vocabulary size must be at least {}, got {max_size}",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for seq in texts {
            for tok in seq {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked
                .into_iter()
                .take(max_size - RESERVED.len())
                .map(|(t, _)| t.to_string()),
        );
        Vocabulary::from_tokens(tokens)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(Error::InvalidId {
                id,
                vocab: self.size(),
            })
    }

    /// Map tokens to ids; out-of-vocabulary tokens become UNK.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.token(id).map(String::from)).collect()
    }
}

/// Lowercase, split on whitespace, split apostrophe clitics
/// ("that's" -> "that", "'s"), and split punctuation into standalone
/// single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if c == '\'' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// One (original, response) id-sequence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePair {
    pub original: Vec<u32>,
    pub response: Vec<u32>,
}

impl MessagePair {
    /// Validates both sides: non-empty, ids in range, and free of the
    /// model-internal PAD/BOS/EOS tokens.
    pub fn new(original: Vec<u32>, response: Vec<u32>, vocab_size: usize) -> Result<Self> {
        for (side, seq) in [("original", &original), ("response", &response)] {
            if seq.is_empty() {
                return Err(Error::Config(format!("{side} sequence is empty")));
            }
            for &id in seq.iter() {
                if id as usize >= vocab_size {
                    return Err(Error::InvalidId {
                        id,
                        vocab: vocab_size,
                    });
                }
                if id == PAD || id == BOS || id == EOS {
                    return Err(Error::Config(format!(
                        "{side} sequence contains model-internal token id {id}"
                    )));
                }
            }
        }
        Ok(MessagePair { original, response })
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<MessagePair>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<(Vec<String>, Vec<String>)>> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != 2 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!(
                "expected exactly one tab separating original and response, found {}",
                parts.len() - 1
            ),
        });
    }
    let original = tokenize(parts[0]);
    let response = tokenize(parts[1]);
    for (side, toks) in [("original", &original), ("response", &response)] {
        if toks.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("{side} side is empty"),
            });
        }
    }
    Ok(Some((original, response)))
}

fn read_pair_lines(path: &Path) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(pair) = parse_line(line, i + 1)? {
            pairs.push(pair);
        }
    }
    Ok(pairs)
}

/// Load a TSV corpus, building the vocabulary from the file content.
pub fn load_corpus(path: &Path, max_vocab: usize) -> Result<Corpus> {
    let token_pairs = read_pair_lines(path)?;
    let all_texts = token_pairs
        .iter()
        .flat_map(|(o, r)| [o.as_slice(), r.as_slice()]);
    let vocab = Vocabulary::build(all_texts, max_vocab)?;
    corpus_from_token_pairs(token_pairs, vocab)
}

/// Load a TSV corpus against an already-fixed vocabulary; unknown
/// tokens become UNK.
pub fn load_corpus_with_vocab(path: &Path, vocab: &Vocabulary) -> Result<Corpus> {
    let token_pairs = read_pair_lines(path)?;
    corpus_from_token_pairs(token_pairs, vocab.clone())
}

pub(crate) fn corpus_from_token_pairs(
    token_pairs: Vec<(Vec<String>, Vec<String>)>,
    vocab: Vocabulary,
) -> Result<Corpus> {
    let pairs = token_pairs
        .into_iter()
        .map(|(o, r)| MessagePair::new(vocab.encode(&o), vocab.encode(&r), vocab.size()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { pairs, vocab })
}

/// Write a corpus as `original<TAB>response`, tokens space-separated.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for pair in &corpus.pairs {
        let o = corpus.vocab.decode(&pair.original)?.join(" ");
        let r = corpus.vocab.decode(&pair.response)?.join(" ");
        let _ = writeln!(out, "{o}\t{r}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Deterministic seeded partition; train side gets round(frac * n) pairs.
pub fn split_corpus(corpus: &Corpus, train_frac: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie strictly between 0 and 1, got {train_frac}"
        )));
    }
    let n = corpus.len();
    let n_train = (train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "split of {n} pairs at fraction {train_frac} leaves an empty side"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let take = |ix: &[usize]| Corpus {
        pairs: ix.iter().map(|&i| corpus.pairs[i].clone()).collect(),
        vocab: corpus.vocab.clone(),
    };
    Ok((take(&indices[..n_train]), take(&indices[n_train..])))
}
