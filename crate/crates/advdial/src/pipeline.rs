//! End-to-end experiment pipeline.
//!
//! Stages run in a fixed order, each persisting its outputs into the
//! run directory:
//!
//! ```text
//! corpus         corpus.tsv, vocab.txt
//! split          train.tsv, heldout.tsv
//! train-gen      generator.ckpt
//! build-dataset  disc_dataset.tsv
//! train-disc     discriminator.ckpt
//! evaluate       length.dat, pr.dat, report.txt, report.json
//! ```
//!
//! A stage whose outputs already exist is skipped and its artifacts are
//! reloaded, so an interrupted run resumes where it stopped and ends in
//! the same final bytes as an uninterrupted one. A `run.stamp` file
//! pins the configuration; reusing a run directory with a different
//! configuration is refused rather than mixing artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::{derive_seed, CorpusSource, RunConfig};
use crate::corpus::{
    load_corpus, Corpus, MessagePair, SynthSpec, Vocabulary, UNK,
};
use crate::discriminator::{
    build_disc_dataset, load_disc_dataset, save_disc_dataset, train_discriminator,
    DiscriminatorModel, LabeledExample,
};
use crate::error::{Error, Result};
use crate::evalsuite::{
    accuracy_at_threshold, emit_report, length_score_analysis, pr_curve,
    same_length_rank_divergence, top_k_comparison, ContextReport, EvalReport, ReportSeeds,
    SampleReport, ScoredResponse, TopKEntry, TopKTableReport, SCHEMA_VERSION,
};
use crate::generator::{train_generator, DecodeConfig, DecodeMode, GeneratorModel};
use crate::nnet::Dims;

/// Classification threshold used for the headline accuracy number.
pub const ACCURACY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageName {
    Corpus,
    Split,
    TrainGen,
    BuildDataset,
    TrainDisc,
    Evaluate,
}

impl StageName {
    pub const ALL: [StageName; 6] = [
        StageName::Corpus,
        StageName::Split,
        StageName::TrainGen,
        StageName::BuildDataset,
        StageName::TrainDisc,
        StageName::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Corpus => "corpus",
            StageName::Split => "split",
            StageName::TrainGen => "train-gen",
            StageName::BuildDataset => "build-dataset",
            StageName::TrainDisc => "train-disc",
            StageName::Evaluate => "evaluate",
        }
    }

    pub fn parse(s: &str) -> Result<StageName> {
        StageName::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown stage '{s}' (expected one of: {})",
                    StageName::ALL.map(StageName::as_str).join(", ")
                ))
            })
    }
}

/// What happened to one stage during a run.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: StageName,
    /// True when existing artifacts were reused instead of recomputed.
    pub skipped: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub stages: Vec<StageOutcome>,
    /// Present when the evaluate stage was computed in this invocation.
    pub report: Option<EvalReport>,
}

fn render(vocab: &Vocabulary, ids: &[u32]) -> Result<String> {
    Ok(vocab.decode(ids)?.join(" "))
}

fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in vocab.tokens() {
        out.push_str(t);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path)?;
    Vocabulary::from_tokens(text.lines().map(str::to_string).collect())
}

/// Reload a corpus artifact: whitespace-separated tokens looked up
/// verbatim against the fixed vocabulary (no re-tokenization), so every
/// token written by the corresponding save round-trips exactly.
fn load_pairs_verbatim(path: &Path, vocab: &Vocabulary) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!(
                    "expected original<TAB>response, found {} fields",
                    parts.len()
                ),
            });
        }
        let encode = |side: &str| -> Vec<u32> {
            side.split_whitespace()
                .map(|t| vocab.id_of(t).unwrap_or(UNK))
                .collect()
        };
        pairs.push(MessagePair::new(
            encode(parts[0]),
            encode(parts[1]),
            vocab.size(),
        )?);
    }
    Ok(Corpus {
        pairs,
        vocab: vocab.clone(),
    })
}

struct Paths {
    corpus: PathBuf,
    vocab: PathBuf,
    train: PathBuf,
    heldout: PathBuf,
    gen_ckpt: PathBuf,
    dataset: PathBuf,
    disc_ckpt: PathBuf,
    stamp: PathBuf,
    out: PathBuf,
}

impl Paths {
    fn new(out: &Path) -> Paths {
        Paths {
            corpus: out.join("corpus.tsv"),
            vocab: out.join("vocab.txt"),
            train: out.join("train.tsv"),
            heldout: out.join("heldout.tsv"),
            gen_ckpt: out.join("generator.ckpt"),
            dataset: out.join("disc_dataset.tsv"),
            disc_ckpt: out.join("discriminator.ckpt"),
            stamp: out.join("run.stamp"),
            out: out.to_path_buf(),
        }
    }

    fn report_files(&self) -> [PathBuf; 4] {
        [
            self.out.join("length.dat"),
            self.out.join("pr.dat"),
            self.out.join("report.txt"),
            self.out.join("report.json"),
        ]
    }
}

/// Refuse to mix artifacts from different configurations in one run
/// directory: the stamp records the canonical configuration echo.
fn check_stamp(cfg: &RunConfig, paths: &Paths) -> Result<()> {
    let stamp = cfg.canonical_echo();
    if paths.stamp.is_file() {
        let existing = fs::read_to_string(&paths.stamp)?;
        if existing != stamp {
            return Err(Error::Config(format!(
                "run directory {} holds artifacts of a different configuration; \
                 use a fresh directory or delete it",
                paths.out.display()
            )));
        }
    } else {
        fs::write(&paths.stamp, stamp)?;
    }
    Ok(())
}

fn decode_config(cfg: &RunConfig) -> DecodeConfig {
    DecodeConfig {
        mode: DecodeMode::Sample,
        max_len: cfg.sample_max_len,
        beam_width: cfg.beam_width,
        temperature: cfg.temperature,
        seed: 0,
    }
}

fn stage_corpus(cfg: &RunConfig, paths: &Paths) -> Result<(Corpus, bool)> {
    if paths.corpus.is_file() && paths.vocab.is_file() {
        let vocab = load_vocab(&paths.vocab)?;
        return Ok((load_pairs_verbatim(&paths.corpus, &vocab)?, true));
    }
    let corpus = match &cfg.source {
        CorpusSource::File(p) => load_corpus(p, cfg.vocab_size)?,
        CorpusSource::Synth(p) => SynthSpec::from_file(p)?.generate(cfg.vocab_size)?,
    };
    save_vocab(&corpus.vocab, &paths.vocab)?;
    crate::corpus::save_corpus(&corpus, &paths.corpus)?;
    Ok((corpus, false))
}

fn stage_split(cfg: &RunConfig, paths: &Paths, corpus: &Corpus) -> Result<(Corpus, Corpus, bool)> {
    if paths.train.is_file() && paths.heldout.is_file() {
        let train = load_pairs_verbatim(&paths.train, &corpus.vocab)?;
        let heldout = load_pairs_verbatim(&paths.heldout, &corpus.vocab)?;
        return Ok((train, heldout, true));
    }
    let (train, heldout) =
        crate::corpus::split_corpus(corpus, cfg.train_frac, derive_seed(cfg.seed, "split"))?;
    crate::corpus::save_corpus(&train, &paths.train)?;
    crate::corpus::save_corpus(&heldout, &paths.heldout)?;
    Ok((train, heldout, false))
}

fn model_dims(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Dims> {
    Dims::new(vocab.size(), cfg.embed_dim, cfg.hidden_dim)
}

fn stage_train_gen(
    cfg: &RunConfig,
    paths: &Paths,
    train: &Corpus,
) -> Result<(GeneratorModel, bool)> {
    if paths.gen_ckpt.is_file() {
        let (model, _) = checkpoint::load_generator(&paths.gen_ckpt)?;
        return Ok((model, true));
    }
    let dims = model_dims(cfg, &train.vocab)?;
    let mut model = GeneratorModel::new(dims, derive_seed(cfg.seed, "gen-init"))?;
    train_generator(
        &mut model,
        train,
        cfg.gen_epochs,
        cfg.learning_rate,
        derive_seed(cfg.seed, "gen-train"),
    )?;
    checkpoint::save_generator(&paths.gen_ckpt, &model, &train.vocab)?;
    Ok((model, false))
}

fn stage_build_dataset(
    cfg: &RunConfig,
    paths: &Paths,
    heldout: &Corpus,
    generator: &GeneratorModel,
) -> Result<(Vec<LabeledExample>, bool)> {
    if paths.dataset.is_file() {
        return Ok((load_disc_dataset(&paths.dataset, &heldout.vocab)?, true));
    }
    let examples = build_disc_dataset(
        heldout,
        generator,
        &decode_config(cfg),
        derive_seed(cfg.seed, "dataset"),
    )?;
    save_disc_dataset(&examples, &heldout.vocab, &paths.dataset)?;
    Ok((examples, false))
}

/// Boundary between the discriminator's train and eval splits; the
/// dataset order is already shuffled, so a prefix split is unbiased.
fn disc_split_point(cfg: &RunConfig, n: usize) -> Result<usize> {
    let n_train = (cfg.disc_train_frac * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Config(format!(
            "disc_train_frac {} leaves an empty split of the {n}-example dataset",
            cfg.disc_train_frac
        )));
    }
    Ok(n_train)
}

fn stage_train_disc(
    cfg: &RunConfig,
    paths: &Paths,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<(DiscriminatorModel, bool)> {
    if paths.disc_ckpt.is_file() {
        let (model, _) = checkpoint::load_discriminator(&paths.disc_ckpt)?;
        return Ok((model, true));
    }
    let n_train = disc_split_point(cfg, examples.len())?;
    let dims = model_dims(cfg, vocab)?;
    let mut model = DiscriminatorModel::new(dims, derive_seed(cfg.seed, "disc-init"))?;
    train_discriminator(
        &mut model,
        &examples[..n_train],
        cfg.disc_epochs,
        cfg.learning_rate,
        derive_seed(cfg.seed, "disc-train"),
    )?;
    checkpoint::save_discriminator(&paths.disc_ckpt, &model, vocab)?;
    Ok((model, false))
}

fn sample_reports(vocab: &Vocabulary, samples: &[ScoredResponse]) -> Result<Vec<SampleReport>> {
    samples
        .iter()
        .map(|s| {
            Ok(SampleReport {
                response: render(vocab, &s.response)?,
                disc_score: s.disc_score,
                gen_loglik: s.gen_loglik,
                length: s.length,
            })
        })
        .collect()
}

fn stage_evaluate(
    cfg: &RunConfig,
    paths: &Paths,
    heldout: &Corpus,
    generator: &GeneratorModel,
    discriminator: &DiscriminatorModel,
    examples: &[LabeledExample],
) -> Result<(Option<EvalReport>, bool)> {
    if paths.report_files().iter().all(|p| p.is_file()) {
        return Ok((None, true));
    }
    let vocab = &heldout.vocab;
    let gen_perplexity = generator.perplexity(heldout)?;

    // Discriminator metrics on its held-back evaluation split.
    let n_train = disc_split_point(cfg, examples.len())?;
    let eval_rows = &examples[n_train..];
    let mut eval_scores = Vec::with_capacity(eval_rows.len());
    let mut eval_labels = Vec::with_capacity(eval_rows.len());
    let mut pooled = Vec::with_capacity(eval_rows.len());
    for ex in eval_rows {
        let score = discriminator.score(&ex.original, &ex.response)?;
        let loglik = generator.log_likelihood(&ex.original, &ex.response)?;
        eval_scores.push(score);
        eval_labels.push(ex.label);
        pooled.push(ScoredResponse::new(ex.response.clone(), score, loglik));
    }
    let accuracy = accuracy_at_threshold(&eval_scores, &eval_labels, ACCURACY_THRESHOLD)?;
    let pr_points = pr_curve(&eval_scores, &eval_labels)?;
    let length = length_score_analysis(&pooled)?;

    // Same-length rank divergence over the first distinct held-out
    // originals, sampling fresh responses per context.
    let mut contexts: Vec<Vec<u32>> = Vec::new();
    for pair in &heldout.pairs {
        if contexts.len() == cfg.eval_contexts {
            break;
        }
        if !contexts.contains(&pair.original) {
            contexts.push(pair.original.clone());
        }
    }
    let divergence = same_length_rank_divergence(
        &contexts,
        generator,
        discriminator,
        cfg.eval_samples,
        &decode_config(cfg),
        derive_seed(cfg.seed, "eval"),
    )?;

    let mut context_reports = Vec::with_capacity(divergence.per_context.len());
    for (i, ctx) in divergence.per_context.iter().enumerate() {
        let top_k = if i < cfg.top_k_contexts {
            top_k_comparison(&ctx.samples, cfg.top_k)?
                .into_iter()
                .map(|t| {
                    let entry = |s: &ScoredResponse| -> Result<TopKEntry> {
                        Ok(TopKEntry {
                            response: render(vocab, &s.response)?,
                            disc_score: s.disc_score,
                            gen_loglik: s.gen_loglik,
                        })
                    };
                    Ok(TopKTableReport {
                        length: t.length,
                        by_disc: t.by_disc.iter().map(&entry).collect::<Result<_>>()?,
                        by_gen: t.by_gen.iter().map(&entry).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        context_reports.push(ContextReport {
            context: render(vocab, &ctx.context)?,
            samples: sample_reports(vocab, &ctx.samples)?,
            group_rhos: ctx.group_rhos.clone(),
            mean_rho: ctx.mean_rho,
            top_k,
        });
    }

    let mut seeds = ReportSeeds::new();
    seeds.insert("master".into(), cfg.seed);
    for tag in ["split", "gen-init", "gen-train", "dataset", "disc-init", "disc-train", "eval"] {
        seeds.insert(tag.into(), derive_seed(cfg.seed, tag));
    }

    let notes = vec![
        format!(
            "accuracy threshold: score >= {ACCURACY_THRESHOLD} predicts human (label 1); \
             computed on the {}-example held-back evaluation split",
            eval_rows.len()
        ),
        "precision-recall: one point per distinct score used as threshold, descending; \
         the final point predicts everything positive"
            .to_string(),
        "rank correlations are spearman: pearson over average fractional ranks"
            .to_string(),
        format!(
            "same-length rank divergence: groups smaller than {} samples are ignored; \
             the mean is unweighted over all groups of all contexts",
            crate::evalsuite::MIN_GROUP
        ),
        format!(
            "evaluation responses sampled at temperature {:?} with max length {}",
            cfg.temperature, cfg.sample_max_len
        ),
    ];

    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.canonical_echo(),
        seeds,
        gen_perplexity,
        accuracy_threshold: ACCURACY_THRESHOLD,
        accuracy,
        eval_scores,
        eval_labels,
        pr_points,
        length_pairs: length.pairs,
        length_spearman: length.spearman,
        length_degenerate: length.degenerate,
        mean_same_length_rho: divergence.mean_rho,
        groups_used: divergence.groups_used,
        groups_skipped: divergence.groups_skipped,
        contexts: context_reports,
        notes,
    };
    emit_report(&report, &paths.out)?;
    Ok((Some(report), false))
}

/// Run the pipeline up to and including `upto` (the whole pipeline when
/// `None`), skipping stages whose artifacts already exist.
pub fn run_experiment(
    cfg: &RunConfig,
    out_dir: &Path,
    upto: Option<StageName>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let paths = Paths::new(out_dir);
    check_stamp(cfg, &paths)?;
    let last = upto.unwrap_or(StageName::Evaluate);
    let mut outcomes = Vec::new();
    let done = |stage: StageName, skipped: bool, outcomes: &mut Vec<StageOutcome>| {
        outcomes.push(StageOutcome { stage, skipped });
        stage == last
    };

    let (corpus, skipped) = stage_corpus(cfg, &paths).map_err(|e| e.in_stage("corpus"))?;
    if done(StageName::Corpus, skipped, &mut outcomes) {
        return Ok(RunOutcome { stages: outcomes, report: None });
    }

    let (train, heldout, skipped) =
        stage_split(cfg, &paths, &corpus).map_err(|e| e.in_stage("split"))?;
    if done(StageName::Split, skipped, &mut outcomes) {
        return Ok(RunOutcome { stages: outcomes, report: None });
    }

    let (generator, skipped) =
        stage_train_gen(cfg, &paths, &train).map_err(|e| e.in_stage("train-gen"))?;
    if done(StageName::TrainGen, skipped, &mut outcomes) {
        return Ok(RunOutcome { stages: outcomes, report: None });
    }

    let (examples, skipped) = stage_build_dataset(cfg, &paths, &heldout, &generator)
        .map_err(|e| e.in_stage("build-dataset"))?;
    if done(StageName::BuildDataset, skipped, &mut outcomes) {
        return Ok(RunOutcome { stages: outcomes, report: None });
    }

    let (discriminator, skipped) = stage_train_disc(cfg, &paths, &corpus.vocab, &examples)
        .map_err(|e| e.in_stage("train-disc"))?;
    if done(StageName::TrainDisc, skipped, &mut outcomes) {
        return Ok(RunOutcome { stages: outcomes, report: None });
    }

    let (report, skipped) = stage_evaluate(
        cfg,
        &paths,
        &heldout,
        &generator,
        &discriminator,
        &examples,
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    outcomes.push(StageOutcome {
        stage: StageName::Evaluate,
        skipped,
    });
    Ok(RunOutcome {
        stages: outcomes,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_spec_text() -> &'static str {
        "n_pairs = 60\n\
         seed = 5\n\
         common_reply_rate = 0.3\n\
         response_length_dist = 2:0.5,3:0.3,5:0.2\n\
         stock_replies = ok sure|no idea\n\
         filler_words = red,blue,green\n\
         template = what colour is the _ :: red:0.5,blue:0.3,green:0.2\n\
         template = where is my _ thing :: here:0.6,there:0.4\n"
    }

    fn tiny_config(dir: &Path) -> RunConfig {
        std::fs::write(dir.join("synth.spec"), synth_spec_text()).unwrap();
        let body = "synth = synth.spec\n\
                    seed = 11\n\
                    vocab_size = 64\n\
                    embed_dim = 4\n\
                    hidden_dim = 6\n\
                    gen_epochs = 1\n\
                    disc_epochs = 1\n\
                    train_frac = 0.5\n\
                    disc_train_frac = 0.5\n\
                    sample_max_len = 6\n\
                    eval_contexts = 4\n\
                    eval_samples = 12\n\
                    top_k = 2\n\
                    top_k_contexts = 1\n";
        RunConfig::parse(body, dir).unwrap()
    }

    #[test]
    fn stage_names_round_trip() {
        for s in StageName::ALL {
            assert_eq!(StageName::parse(s.as_str()).unwrap(), s);
        }
        assert!(matches!(StageName::parse("bogus"), Err(Error::Config(_))));
    }

    #[test]
    fn full_run_emits_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = dir.path().join("run");
        let outcome = run_experiment(&cfg, &out, None).unwrap();
        assert_eq!(outcome.stages.len(), 6);
        assert!(outcome.stages.iter().all(|s| !s.skipped));
        assert!(outcome.report.is_some());
        for name in [
            "corpus.tsv",
            "vocab.txt",
            "train.tsv",
            "heldout.tsv",
            "generator.ckpt",
            "disc_dataset.tsv",
            "discriminator.ckpt",
            "length.dat",
            "pr.dat",
            "report.txt",
            "report.json",
        ] {
            assert!(out.join(name).is_file(), "{name} missing");
        }
    }

    #[test]
    fn second_run_skips_everything_and_keeps_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = dir.path().join("run");
        run_experiment(&cfg, &out, None).unwrap();
        let before: Vec<Vec<u8>> = ["length.dat", "pr.dat", "report.json"]
            .iter()
            .map(|n| std::fs::read(out.join(n)).unwrap())
            .collect();
        let outcome = run_experiment(&cfg, &out, None).unwrap();
        assert!(outcome.stages.iter().all(|s| s.skipped));
        let after: Vec<Vec<u8>> = ["length.dat", "pr.dat", "report.json"]
            .iter()
            .map(|n| std::fs::read(out.join(n)).unwrap())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn upto_stops_early_and_resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());

        let full = dir.path().join("full");
        run_experiment(&cfg, &full, None).unwrap();

        let resumed = dir.path().join("resumed");
        let partial = run_experiment(&cfg, &resumed, Some(StageName::BuildDataset)).unwrap();
        assert_eq!(partial.stages.len(), 4);
        assert!(!resumed.join("report.json").exists());
        let outcome = run_experiment(&cfg, &resumed, None).unwrap();
        // The four artifact-backed stages are reused, not recomputed.
        assert!(outcome.stages[..4].iter().all(|s| s.skipped));

        for name in ["length.dat", "pr.dat", "report.txt", "report.json"] {
            let a = std::fs::read(full.join(name)).unwrap();
            let b = std::fs::read(resumed.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between fresh and resumed runs");
        }
    }

    #[test]
    fn mismatched_config_in_same_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = dir.path().join("run");
        run_experiment(&cfg, &out, Some(StageName::Corpus)).unwrap();
        let mut other = cfg.clone();
        other.seed = 999;
        match run_experiment(&other, &out, None) {
            Err(Error::Config(msg)) => assert!(msg.contains("different configuration")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn stage_errors_carry_the_stage_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("synth.spec"), "n_pairs = 0\nseed = 1\n").unwrap();
        let cfg = RunConfig::parse("synth = synth.spec\nseed = 1", dir.path()).unwrap();
        match run_experiment(&cfg, &dir.path().join("run"), None) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "corpus"),
            other => panic!("expected stage error, got {other:?}"),
        }
    }
}
