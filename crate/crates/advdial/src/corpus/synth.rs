//! Deterministic synthetic dialogue corpora.
//!
//! Each pair is drawn from a template: the original message is the
//! template's question pattern with `_` slots filled by random filler
//! words; the response is either a stock reply (with probability
//! `common_reply_rate`) or a string of answer words drawn i.i.d. from
//! the template's weighted answer distribution, with length drawn from
//! `response_length_dist`. Controllable length and stock-reply knobs
//! make corpus-level biases easy to construct on purpose.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{corpus_from_token_pairs, tokenize, Corpus, Vocabulary};
use crate::error::{Error, Result};

const DIST_SUM_TOL: f64 = 1e-9;

/// Slot marker inside question patterns.
pub const FILLER_SLOT: &str = "_";

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    /// Question tokens; `_` entries are filler slots.
    pub pattern: Vec<String>,
    /// Weighted answer-word distribution; weights sum to 1.
    pub answer_words: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_pairs: usize,
    pub seed: u64,
    /// Probability a response is a stock reply instead of template answers.
    pub common_reply_rate: f64,
    /// Categorical distribution over answer-string lengths; weights sum to 1.
    pub response_length_dist: Vec<(usize, f64)>,
    pub stock_replies: Vec<Vec<String>>,
    pub filler_words: Vec<String>,
    pub templates: Vec<Template>,
}

fn check_dist_sum(what: &str, total: f64) -> Result<()> {
    if (total - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::Config(format!(
            "{what} weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

fn check_word(what: &str, w: &str) -> Result<()> {
    let toks = tokenize(w);
    if toks.len() != 1 || toks[0] != w {
        return Err(Error::Config(format!(
            "{what} {w:?} must be a single lowercase token"
        )));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.common_reply_rate) {
            return Err(Error::Config(format!(
                "common_reply_rate must lie in [0,1], got {}",
                self.common_reply_rate
            )));
        }
        if self.response_length_dist.is_empty() {
            return Err(Error::Config("response_length_dist is empty".into()));
        }
        let mut seen_lengths = std::collections::HashSet::new();
        let mut total = 0.0;
        for &(len, w) in &self.response_length_dist {
            if len == 0 {
                return Err(Error::Config("response length 0 is not allowed".into()));
            }
            if w <= 0.0 {
                return Err(Error::Config(format!(
                    "response length {len} has non-positive weight {w}"
                )));
            }
            if !seen_lengths.insert(len) {
                return Err(Error::Config(format!("duplicate response length {len}")));
            }
            total += w;
        }
        check_dist_sum("response_length_dist", total)?;

        if self.common_reply_rate > 0.0 && self.stock_replies.is_empty() {
            return Err(Error::Config(
                "common_reply_rate > 0 requires at least one stock reply".into(),
            ));
        }
        for reply in &self.stock_replies {
            if reply.is_empty() {
                return Err(Error::Config("empty stock reply".into()));
            }
            for w in reply {
                check_word("stock reply word", w)?;
            }
        }
        for w in &self.filler_words {
            check_word("filler word", w)?;
        }

        if self.templates.is_empty() {
            return Err(Error::Config("at least one template is required".into()));
        }
        let mut needs_fillers = false;
        for t in &self.templates {
            if t.pattern.is_empty() {
                return Err(Error::Config("template pattern is empty".into()));
            }
            for tok in &t.pattern {
                if tok == FILLER_SLOT {
                    needs_fillers = true;
                } else {
                    check_word("pattern word", tok)?;
                }
            }
            if t.answer_words.is_empty() {
                return Err(Error::Config("template has no answer words".into()));
            }
            let mut total = 0.0;
            for (w, weight) in &t.answer_words {
                check_word("answer word", w)?;
                if *weight <= 0.0 {
                    return Err(Error::Config(format!(
                        "answer word {w:?} has non-positive weight {weight}"
                    )));
                }
                total += weight;
            }
            check_dist_sum("answer word", total)?;
        }
        if needs_fillers && self.filler_words.is_empty() {
            return Err(Error::Config(
                "patterns contain `_` slots but no filler words are given".into(),
            ));
        }
        // Every original must identify its template (respond relies on it):
        // any two patterns must differ in length or at a shared fixed position.
        for (i, a) in self.templates.iter().enumerate() {
            for b in self.templates.iter().skip(i + 1) {
                if a.pattern.len() != b.pattern.len() {
                    continue;
                }
                let distinguishable = a.pattern.iter().zip(&b.pattern).any(|(x, y)| {
                    x != FILLER_SLOT && y != FILLER_SLOT && x != y
                });
                if !distinguishable {
                    return Err(Error::Config(format!(
                        "templates {:?} and {:?} are not distinguishable from their output",
                        a.pattern.join(" "),
                        b.pattern.join(" ")
                    )));
                }
            }
        }
        Ok(())
    }

    /// Generate the corpus; identical spec gives identical output.
    pub fn generate(&self, max_vocab: usize) -> Result<Corpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut token_pairs = Vec::with_capacity(self.n_pairs);
        for _ in 0..self.n_pairs {
            let template = &self.templates[rng.random_range(0..self.templates.len())];
            let original: Vec<String> = template
                .pattern
                .iter()
                .map(|tok| {
                    if tok == FILLER_SLOT {
                        self.filler_words[rng.random_range(0..self.filler_words.len())].clone()
                    } else {
                        tok.clone()
                    }
                })
                .collect();
            let response = self.draw_response(template, &mut rng);
            token_pairs.push((original, response));
        }
        let texts = token_pairs
            .iter()
            .flat_map(|(o, r)| [o.as_slice(), r.as_slice()]);
        let vocab = Vocabulary::build(texts, max_vocab)?;
        corpus_from_token_pairs(token_pairs, vocab)
    }

    fn draw_response(&self, template: &Template, rng: &mut ChaCha8Rng) -> Vec<String> {
        if rng.random::<f64>() < self.common_reply_rate {
            return self.stock_replies[rng.random_range(0..self.stock_replies.len())].clone();
        }
        let len = *weighted_choice(&self.response_length_dist, rng);
        (0..len)
            .map(|_| weighted_choice(&template.answer_words, rng).clone())
            .collect()
    }

    /// Draw a fresh response for `original` from the same conditional
    /// distribution the corpus was generated with. The template is
    /// recovered from the original's fixed pattern positions.
    pub fn respond(&self, vocab: &Vocabulary, original: &[u32], seed: u64) -> Result<Vec<u32>> {
        let tokens = vocab.decode(original)?;
        let template = self.match_template(&tokens)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let response = self.draw_response(template, &mut rng);
        Ok(vocab.encode(&response))
    }

    fn match_template(&self, tokens: &[String]) -> Result<&Template> {
        let matches: Vec<&Template> = self
            .templates
            .iter()
            .filter(|t| {
                t.pattern.len() == tokens.len()
                    && t.pattern
                        .iter()
                        .zip(tokens)
                        .all(|(p, tok)| p == FILLER_SLOT || p == tok)
            })
            .collect();
        match matches.as_slice() {
            [one] => Ok(one),
            [] => Err(Error::Config(format!(
                "no template matches original {:?}",
                tokens.join(" ")
            ))),
            _ => Err(Error::Config(format!(
                "original {:?} matches multiple templates",
                tokens.join(" ")
            ))),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }
}

/// Inverse-CDF draw over a weighted list; weights sum to 1.
fn weighted_choice<'a, T>(dist: &'a [(T, f64)], rng: &mut ChaCha8Rng) -> &'a T {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (item, w) in dist {
        acc += w;
        if u < acc {
            return item;
        }
    }
    &dist.last().expect("non-empty distribution").0
}

impl std::str::FromStr for SynthSpec {
    type Err = Error;

    /// Line-oriented `key=value` format. `template` may repeat; its value
    /// is `pattern tokens::word:weight,word:weight`. Lists use commas,
    /// stock replies use `|` between phrases. `#` starts a comment line.
    fn from_str(text: &str) -> Result<Self> {
        let mut n_pairs = None;
        let mut seed = None;
        let mut common_reply_rate = None;
        let mut response_length_dist = None;
        let mut stock_replies = Vec::new();
        let mut filler_words = Vec::new();
        let mut templates = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let dup = |name: &str| Error::Parse {
                line: i + 1,
                msg: format!("duplicate key {name}"),
            };
            match key {
                "n_pairs" => {
                    if n_pairs.replace(parse_num::<usize>(i + 1, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "seed" => {
                    if seed.replace(parse_num::<u64>(i + 1, value)?).is_some() {
                        return Err(dup(key));
                    }
                }
                "common_reply_rate" => {
                    if common_reply_rate
                        .replace(parse_num::<f64>(i + 1, value)?)
                        .is_some()
                    {
                        return Err(dup(key));
                    }
                }
                "response_length_dist" => {
                    let dist = parse_weighted(i + 1, value)?
                        .into_iter()
                        .map(|(k, w)| parse_num::<usize>(i + 1, &k).map(|len| (len, w)))
                        .collect::<Result<Vec<_>>>()?;
                    if response_length_dist.replace(dist).is_some() {
                        return Err(dup(key));
                    }
                }
                "stock_replies" => {
                    if !stock_replies.is_empty() {
                        return Err(dup(key));
                    }
                    stock_replies = value
                        .split('|')
                        .map(|phrase| tokenize(phrase))
                        .collect();
                }
                "filler_words" => {
                    if !filler_words.is_empty() {
                        return Err(dup(key));
                    }
                    filler_words = value.split(',').map(|w| w.trim().to_string()).collect();
                }
                "template" => {
                    let (pattern, dist) = value.split_once("::").ok_or_else(|| Error::Parse {
                        line: i + 1,
                        msg: "template needs `pattern::answer distribution`".into(),
                    })?;
                    templates.push(Template {
                        pattern: pattern.split_whitespace().map(String::from).collect(),
                        answer_words: parse_weighted(i + 1, dist.trim())?,
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown key {other:?}"),
                    });
                }
            }
        }

        let missing = |name: &str| Error::Config(format!("synth spec is missing {name}"));
        let spec = SynthSpec {
            n_pairs: n_pairs.ok_or_else(|| missing("n_pairs"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            common_reply_rate: common_reply_rate.unwrap_or(0.0),
            response_length_dist: response_length_dist
                .ok_or_else(|| missing("response_length_dist"))?,
            stock_replies,
            filler_words,
            templates,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse number from {s:?}"),
    })
}

fn parse_weighted(line: usize, s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .map(|entry| {
            let (k, w) = entry.trim().rsplit_once(':').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected item:weight, got {entry:?}"),
            })?;
            Ok((k.trim().to_string(), parse_num::<f64>(line, w)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word_dist(words: &[(&str, f64)]) -> Vec<(String, f64)> {
        words.iter().map(|(w, p)| (w.to_string(), *p)).collect()
    }

    fn basic_spec() -> SynthSpec {
        SynthSpec {
            n_pairs: 100,
            seed: 9,
            common_reply_rate: 0.3,
            response_length_dist: vec![(1, 0.5), (4, 0.5)],
            stock_replies: vec![vec!["thanks".into()], vec!["ok".into(), "sure".into()]],
            filler_words: vec!["alpha".into(), "beta".into()],
            templates: vec![
                Template {
                    pattern: ["do", "you", "want", "_", "today"]
                        .map(String::from)
                        .to_vec(),
                    answer_words: word_dist(&[("yes", 0.6), ("no", 0.4)]),
                },
                Template {
                    pattern: ["when", "is", "the", "_", "call"].map(String::from).to_vec(),
                    answer_words: word_dist(&[("monday", 0.5), ("friday", 0.5)]),
                },
            ],
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = basic_spec();
        let a = spec.generate(100).unwrap();
        let b = spec.generate(100).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.vocab, b.vocab);
        let other = SynthSpec {
            seed: 10,
            ..basic_spec()
        };
        assert_ne!(other.generate(100).unwrap().pairs, a.pairs);
    }

    #[test]
    fn stock_reply_fraction_converges() {
        let spec = SynthSpec {
            n_pairs: 10_000,
            ..basic_spec()
        };
        let corpus = spec.generate(100).unwrap();
        // Stock vocab ("thanks","ok","sure") is disjoint from answer words,
        // so first-token membership identifies stock replies.
        let stock_firsts: Vec<u32> = ["thanks", "ok"]
            .iter()
            .map(|w| corpus.vocab.id_of(w).unwrap())
            .collect();
        let n_stock = corpus
            .pairs
            .iter()
            .filter(|p| stock_firsts.contains(&p.response[0]))
            .count();
        let frac = n_stock as f64 / corpus.len() as f64;
        assert!((frac - 0.3).abs() < 0.02, "stock fraction {frac}");
    }

    #[test]
    fn mean_response_length_converges() {
        let spec = SynthSpec {
            n_pairs: 10_000,
            common_reply_rate: 0.0,
            ..basic_spec()
        };
        let corpus = spec.generate(100).unwrap();
        let mean = corpus
            .pairs
            .iter()
            .map(|p| p.response.len() as f64)
            .sum::<f64>()
            / corpus.len() as f64;
        assert!((mean - 2.5).abs() < 0.1, "mean length {mean}");
    }

    #[test]
    fn length_histogram_passes_chi_square() {
        let dist = vec![(4, 0.1), (6, 0.2), (8, 0.4), (10, 0.2), (12, 0.1)];
        let spec = SynthSpec {
            n_pairs: 10_000,
            common_reply_rate: 0.0,
            response_length_dist: dist.clone(),
            ..basic_spec()
        };
        let corpus = spec.generate(100).unwrap();
        let mut chi2 = 0.0;
        for &(len, p) in &dist {
            let observed = corpus
                .pairs
                .iter()
                .filter(|pair| pair.response.len() == len)
                .count() as f64;
            let expected = p * corpus.len() as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
        // 99th percentile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 13.2767, "chi-square statistic {chi2}");
    }

    #[test]
    fn respond_draws_from_the_conditional() {
        let spec = basic_spec();
        let corpus = spec.generate(100).unwrap();
        let original = &corpus.pairs[0].original;
        let a = spec.respond(&corpus.vocab, original, 1).unwrap();
        let b = spec.respond(&corpus.vocab, original, 1).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        // Rate 1 forces a stock reply.
        let all_stock = SynthSpec {
            common_reply_rate: 1.0,
            ..basic_spec()
        };
        let reply = all_stock.respond(&corpus.vocab, original, 5).unwrap();
        let words = corpus.vocab.decode(&reply).unwrap();
        assert!(all_stock.stock_replies.contains(&words), "got {words:?}");
    }

    #[test]
    fn respond_rejects_unknown_original() {
        let spec = basic_spec();
        let corpus = spec.generate(100).unwrap();
        let bogus = vec![corpus.pairs[0].original[0]];
        assert!(matches!(
            spec.respond(&corpus.vocab, &bogus, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn parse_round_trip() {
        let text = "\
# synthetic corpus
n_pairs = 50
seed = 7
common_reply_rate = 0.25
response_length_dist = 1:0.5, 4:0.5
stock_replies = thanks | ok sure
filler_words = alpha, beta
template = do you want _ today :: yes:0.6, no:0.4
template = when is the _ call :: monday:0.5, friday:0.5
";
        let parsed: SynthSpec = text.parse().unwrap();
        let expected = SynthSpec {
            n_pairs: 50,
            seed: 7,
            common_reply_rate: 0.25,
            ..basic_spec()
        };
        assert_eq!(parsed, expected);
    }

    #[test]
    fn parse_rejects_bad_input() {
        let ok = "n_pairs=5\nseed=1\nresponse_length_dist=2:1.0\ntemplate=hi::yes:1.0\n";
        assert!(ok.parse::<SynthSpec>().is_ok());
        for bad in [
            "n_pairs=5\nseed=1\nresponse_length_dist=2:0.9\ntemplate=hi::yes:1.0\n",
            "n_pairs=5\nseed=1\nresponse_length_dist=2:1.0\ntemplate=hi::yes:0.5\n",
            "n_pairs=5\nseed=1\nresponse_length_dist=2:1.0\n",
            "seed=1\nresponse_length_dist=2:1.0\ntemplate=hi::yes:1.0\n",
            "n_pairs=5\nseed=1\nseed=2\nresponse_length_dist=2:1.0\ntemplate=hi::yes:1.0\n",
            "n_pairs=5\nseed=1\nwat=9\nresponse_length_dist=2:1.0\ntemplate=hi::yes:1.0\n",
            "n_pairs=5\nseed=1\nresponse_length_dist=2:1.0\ntemplate=hi _::yes:1.0\n",
            "n_pairs=5\nseed=1\nresponse_length_dist=2:1.0\ntemplate=hi::yes:1.0\ntemplate=hi::no:1.0\n",
        ] {
            assert!(bad.parse::<SynthSpec>().is_err(), "accepted: {bad}");
        }
    }
}
