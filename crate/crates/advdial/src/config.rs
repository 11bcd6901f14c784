//! Experiment configuration: a flat key = value file, one setting per
//! line, `#` comments. Every omitted setting takes its documented
//! default; the canonical echo embedded in reports always lists the
//! full effective configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Where the dialogue corpus comes from: a pre-tokenized pair file or a
/// synthetic-corpus spec to generate one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    File(PathBuf),
    Synth(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: CorpusSource,
    pub seed: u64,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Fraction of pairs used to train the generator; the rest is held
    /// out for the discriminator dataset and evaluation.
    pub train_frac: f64,
    /// Fraction of the labeled dataset used to train the discriminator;
    /// the rest is its evaluation split.
    pub disc_train_frac: f64,
    pub gen_epochs: usize,
    pub disc_epochs: usize,
    pub learning_rate: f64,
    pub sample_max_len: usize,
    pub beam_width: usize,
    pub temperature: f64,
    pub eval_contexts: usize,
    pub eval_samples: usize,
    pub top_k: usize,
    pub top_k_contexts: usize,
    /// Source path exactly as written in the config file; used for the
    /// canonical echo so reports do not depend on where the file lived.
    source_raw: String,
}

impl RunConfig {
    /// Parse, resolve the source path against `base_dir`, and validate.
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut corpus: Option<String> = None;
        let mut synth: Option<String> = None;
        let mut seed: Option<u64> = None;
        let mut vocab_size = 200usize;
        let mut embed_dim = 32usize;
        let mut hidden_dim = 64usize;
        let mut train_frac = 0.8f64;
        let mut disc_train_frac = 0.7f64;
        let mut gen_epochs = 30usize;
        let mut disc_epochs = 10usize;
        let mut learning_rate = 1e-3f64;
        let mut sample_max_len = 16usize;
        let mut beam_width = 4usize;
        let mut temperature = 1.0f64;
        let mut eval_contexts = 50usize;
        let mut eval_samples = 50usize;
        let mut top_k = 3usize;
        let mut top_k_contexts = 2usize;

        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected 'key = value', got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "duplicate setting '{key}' (line {line_no})"
                )));
            }
            let bad = |what: &str| {
                Error::Config(format!(
                    "setting '{key}' (line {line_no}): expected {what}, got {value:?}"
                ))
            };
            match key {
                "corpus" => corpus = Some(value.to_string()),
                "synth" => synth = Some(value.to_string()),
                "seed" => seed = Some(value.parse().map_err(|_| bad("an unsigned integer"))?),
                "vocab_size" => vocab_size = value.parse().map_err(|_| bad("a positive integer"))?,
                "embed_dim" => embed_dim = value.parse().map_err(|_| bad("a positive integer"))?,
                "hidden_dim" => hidden_dim = value.parse().map_err(|_| bad("a positive integer"))?,
                "train_frac" => train_frac = value.parse().map_err(|_| bad("a number"))?,
                "disc_train_frac" => {
                    disc_train_frac = value.parse().map_err(|_| bad("a number"))?
                }
                "gen_epochs" => gen_epochs = value.parse().map_err(|_| bad("a positive integer"))?,
                "disc_epochs" => {
                    disc_epochs = value.parse().map_err(|_| bad("a positive integer"))?
                }
                "learning_rate" => learning_rate = value.parse().map_err(|_| bad("a number"))?,
                "sample_max_len" => {
                    sample_max_len = value.parse().map_err(|_| bad("a positive integer"))?
                }
                "beam_width" => beam_width = value.parse().map_err(|_| bad("a positive integer"))?,
                "temperature" => temperature = value.parse().map_err(|_| bad("a number"))?,
                "eval_contexts" => {
                    eval_contexts = value.parse().map_err(|_| bad("a positive integer"))?
                }
                "eval_samples" => {
                    eval_samples = value.parse().map_err(|_| bad("a positive integer"))?
                }
                "top_k" => top_k = value.parse().map_err(|_| bad("a positive integer"))?,
                "top_k_contexts" => {
                    top_k_contexts = value.parse().map_err(|_| bad("an integer"))?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown setting '{other}' (line {line_no})"
                    )))
                }
            }
        }

        let (source, source_raw) = match (corpus, synth) {
            (Some(c), None) => (CorpusSource::File(base_dir.join(&c)), c),
            (None, Some(s)) => (CorpusSource::Synth(base_dir.join(&s)), s),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "settings 'corpus' and 'synth' are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "a corpus source is required: set 'corpus' or 'synth'".into(),
                ))
            }
        };
        let seed =
            seed.ok_or_else(|| Error::Config("the 'seed' setting is required".into()))?;

        let cfg = RunConfig {
            source,
            seed,
            vocab_size,
            embed_dim,
            hidden_dim,
            train_frac,
            disc_train_frac,
            gen_epochs,
            disc_epochs,
            learning_rate,
            sample_max_len,
            beam_width,
            temperature,
            eval_contexts,
            eval_samples,
            top_k,
            top_k_contexts,
            source_raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        RunConfig::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let source_path = match &self.source {
            CorpusSource::File(p) | CorpusSource::Synth(p) => p,
        };
        if !source_path.is_file() {
            return Err(Error::Config(format!(
                "corpus source not found: {}",
                source_path.display()
            )));
        }
        let positive = |name: &str, v: usize| -> Result<()> {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
            Ok(())
        };
        if self.vocab_size < 4 {
            return Err(Error::Config(
                "vocab_size must be at least 4 (reserved tokens)".into(),
            ));
        }
        positive("embed_dim", self.embed_dim)?;
        positive("hidden_dim", self.hidden_dim)?;
        positive("gen_epochs", self.gen_epochs)?;
        positive("disc_epochs", self.disc_epochs)?;
        positive("sample_max_len", self.sample_max_len)?;
        positive("beam_width", self.beam_width)?;
        positive("eval_contexts", self.eval_contexts)?;
        positive("top_k", self.top_k)?;
        for (name, v) in [
            ("train_frac", self.train_frac),
            ("disc_train_frac", self.disc_train_frac),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!(
                    "{name} must lie strictly between 0 and 1, got {v}"
                )));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.eval_samples < 2 {
            return Err(Error::Config(
                "eval_samples must be at least 2 for rank statistics".into(),
            ));
        }
        Ok(())
    }

    /// Path of the configured corpus or synth-spec file.
    pub fn source_path(&self) -> &Path {
        match &self.source {
            CorpusSource::File(p) | CorpusSource::Synth(p) => p,
        }
    }

    /// Full effective configuration in fixed key order. Embedded in
    /// reports; written values, not the raw file, so seed overrides and
    /// defaults are reflected.
    pub fn canonical_echo(&self) -> String {
        let mut out = String::new();
        let source_key = match &self.source {
            CorpusSource::File(_) => "corpus",
            CorpusSource::Synth(_) => "synth",
        };
        let _ = writeln!(out, "{source_key} = {}", self.source_raw);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "vocab_size = {}", self.vocab_size);
        let _ = writeln!(out, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(out, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(out, "train_frac = {:?}", self.train_frac);
        let _ = writeln!(out, "disc_train_frac = {:?}", self.disc_train_frac);
        let _ = writeln!(out, "gen_epochs = {}", self.gen_epochs);
        let _ = writeln!(out, "disc_epochs = {}", self.disc_epochs);
        let _ = writeln!(out, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(out, "sample_max_len = {}", self.sample_max_len);
        let _ = writeln!(out, "beam_width = {}", self.beam_width);
        let _ = writeln!(out, "temperature = {:?}", self.temperature);
        let _ = writeln!(out, "eval_contexts = {}", self.eval_contexts);
        let _ = writeln!(out, "eval_samples = {}", self.eval_samples);
        let _ = writeln!(out, "top_k = {}", self.top_k);
        let _ = writeln!(out, "top_k_contexts = {}", self.top_k_contexts);
        out
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stage seed derived from the master seed and a stable stage tag, so
/// each pipeline stage gets an independent stream and inserting a new
/// stage never shifts the seeds of existing ones.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a64(tag.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let corpus = dir.join("pairs.tsv");
        std::fs::write(&corpus, "hello\tworld\n").unwrap();
        let path = dir.join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "corpus = pairs.tsv").unwrap();
        writeln!(f, "{body}").unwrap();
        path
    }

    #[test]
    fn defaults_fill_omitted_settings() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "seed = 7");
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.vocab_size, 200);
        assert_eq!(cfg.hidden_dim, 64);
        assert_eq!(cfg.train_frac, 0.8);
        assert_eq!(cfg.top_k, 3);
        assert_eq!(cfg.source, CorpusSource::File(dir.path().join("pairs.tsv")));
    }

    #[test]
    fn explicit_settings_and_comments_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "seed = 9\nhidden_dim = 12 # small model\n\ngen_epochs = 3",
        );
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.hidden_dim, 12);
        assert_eq!(cfg.gen_epochs, 3);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pairs.tsv"), "a\tb\n").unwrap();
        let parse = |body: &str| RunConfig::parse(body, dir.path());

        assert!(matches!(
            parse("corpus = pairs.tsv\nseed = 1\nwat = 3"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse("corpus = pairs.tsv\nseed = 1\nseed = 2"),
            Err(Error::Config(_))
        ));
        match parse("corpus = pairs.tsv\nseed") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse("corpus = pairs.tsv\nseed = banana"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn requires_exactly_one_source_and_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pairs.tsv"), "a\tb\n").unwrap();
        std::fs::write(dir.path().join("s.spec"), "n_pairs = 1\n").unwrap();
        let parse = |body: &str| RunConfig::parse(body, dir.path());

        assert!(matches!(parse("seed = 1"), Err(Error::Config(_))));
        assert!(matches!(
            parse("corpus = pairs.tsv\nsynth = s.spec\nseed = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse("corpus = pairs.tsv"), Err(Error::Config(_))));
        assert!(matches!(
            parse("corpus = missing.tsv\nseed = 1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validate_rejects_out_of_range_numbers() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pairs.tsv"), "a\tb\n").unwrap();
        let parse = |body: &str| RunConfig::parse(body, dir.path());
        let base = "corpus = pairs.tsv\nseed = 1\n";

        for bad in [
            "train_frac = 1.0",
            "train_frac = 0",
            "disc_train_frac = -0.5",
            "learning_rate = 0",
            "temperature = 0",
            "eval_samples = 1",
            "vocab_size = 3",
            "beam_width = 0",
        ] {
            let body = format!("{base}{bad}");
            assert!(
                matches!(parse(&body), Err(Error::Config(_))),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn canonical_echo_is_stable_and_reflects_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "seed = 7");
        let mut cfg = RunConfig::from_file(&path).unwrap();
        let echo1 = cfg.canonical_echo();
        assert_eq!(echo1, cfg.canonical_echo());
        assert!(echo1.contains("seed = 7"));
        assert!(echo1.contains("corpus = pairs.tsv"));
        assert!(echo1.contains("learning_rate = 0.001"));
        cfg.seed = 99;
        assert!(cfg.canonical_echo().contains("seed = 99"));
    }

    #[test]
    fn derive_seed_separates_stages_and_masters() {
        assert_eq!(derive_seed(1, "synth"), derive_seed(1, "synth"));
        assert_ne!(derive_seed(1, "synth"), derive_seed(1, "split"));
        assert_ne!(derive_seed(1, "synth"), derive_seed(2, "synth"));
        // Tag hashing must not collapse distinct tags.
        let tags = [
            "synth",
            "split",
            "gen-init",
            "gen-train",
            "dataset",
            "disc-init",
            "disc-train",
            "eval",
        ];
        let mut seen = std::collections::BTreeSet::new();
        for t in tags {
            assert!(seen.insert(derive_seed(42, t)), "collision on {t}");
        }
    }
}
