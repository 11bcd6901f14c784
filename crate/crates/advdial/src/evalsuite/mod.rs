//! Evaluation statistics: classification accuracy, exact precision-recall
//! curves, Spearman rank correlation, length-bias analysis, same-length
//! rank divergence between discriminator and generator rankings, and
//! top-k comparison tables.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};
use crate::generator::{DecodeConfig, GeneratorModel};

mod report;
pub use report::{
    emit_report, fmt_sig, ContextReport, EvalReport, ReportSeeds, SampleReport, TopKEntry,
    TopKTableReport, SCHEMA_VERSION,
};

/// A sampled response with both model scores attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub response: Vec<u32>,
    /// Discriminator-style score; the trained model emits (0,1) with
    /// high = more human-like. Stub scorers used in pipeline validation
    /// may use any real scale (only ranks matter downstream).
    pub disc_score: f64,
    /// Log-likelihood under the generator; always ≤ 0.
    pub gen_loglik: f64,
    pub length: usize,
}

impl ScoredResponse {
    pub fn new(response: Vec<u32>, disc_score: f64, gen_loglik: f64) -> Self {
        let length = response.len();
        ScoredResponse {
            response,
            disc_score,
            gen_loglik,
            length,
        }
    }
}

/// One point of the precision-recall curve at a given score threshold.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "score and label lists differ in length: {a} vs {b}"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(bad) = xs.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite {name} value {bad}")));
    }
    Ok(())
}

/// Fraction of items where (score ≥ threshold) agrees with (label = 1).
pub fn accuracy_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_same_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Config("accuracy needs at least one item".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Exact precision-recall curve of the label-1 (human) class: one point
/// per distinct score used as threshold (prediction positive iff
/// score ≥ threshold), in descending threshold order; the final point
/// (minimum threshold) predicts everything positive, so recall ends at 1.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PRPoint>> {
    check_same_len(scores.len(), labels.len())?;
    check_finite("score", scores)?;
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    if total_pos == 0 {
        return Err(Error::Undefined(
            "precision-recall needs at least one positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group at this score.
        while i < order.len() && scores[order[i]] == threshold {
            predicted += 1;
            if labels[order[i]] == 1 {
                tp += 1;
            }
            i += 1;
        }
        points.push(PRPoint {
            threshold,
            precision: tp as f64 / predicted as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    Ok(points)
}

/// Average fractional ranks (1-based); tied values share the mean of
/// their positions.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // Positions i+1 ..= j share the mean rank.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = mean_rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average fractional
/// ranks. Fails as undefined for fewer than two items or when either
/// side is constant.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_same_len(xs.len(), ys.len())?;
    check_finite("x", xs)?;
    check_finite("y", ys)?;
    if xs.len() < 2 {
        return Err(Error::Undefined(
            "rank correlation needs at least two items".into(),
        ));
    }
    let ra = fractional_ranks(xs);
    let rb = fractional_ranks(ys);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut s_ab = 0.0;
    let mut s_aa = 0.0;
    let mut s_bb = 0.0;
    for (a, b) in ra.iter().zip(&rb) {
        let da = a - mean_a;
        let db = b - mean_b;
        s_ab += da * db;
        s_aa += da * da;
        s_bb += db * db;
    }
    if s_aa == 0.0 || s_bb == 0.0 {
        return Err(Error::Undefined(
            "rank correlation is undefined for a constant list".into(),
        ));
    }
    Ok(s_ab / (s_aa * s_bb).sqrt())
}

/// Raw (length, score) pairs plus their Spearman correlation. A
/// degenerate input (constant scores or lengths, or fewer than two
/// items) reports correlation 0 with the flag set instead of failing.
#[derive(Debug, Clone)]
pub struct LengthAnalysis {
    pub pairs: Vec<(usize, f64)>,
    pub spearman: f64,
    pub degenerate: bool,
}

pub fn length_score_analysis(scored: &[ScoredResponse]) -> Result<LengthAnalysis> {
    if scored.is_empty() {
        return Err(Error::Config(
            "length analysis needs at least one scored response".into(),
        ));
    }
    let pairs: Vec<(usize, f64)> = scored.iter().map(|s| (s.length, s.disc_score)).collect();
    let lengths: Vec<f64> = scored.iter().map(|s| s.length as f64).collect();
    let scores: Vec<f64> = scored.iter().map(|s| s.disc_score).collect();
    match spearman_rho(&scores, &lengths) {
        Ok(rho) => Ok(LengthAnalysis {
            pairs,
            spearman: rho,
            degenerate: false,
        }),
        Err(Error::Undefined(_)) => Ok(LengthAnalysis {
            pairs,
            spearman: 0.0,
            degenerate: true,
        }),
        Err(e) => Err(e),
    }
}

/// Anything that can assign a scalar score to an (original, response)
/// pair. Implemented by the trained discriminator and by closures, so
/// the rank-divergence pipeline can be validated with stub scorers.
pub trait ResponseScorer {
    fn score_response(&self, original: &[u32], response: &[u32]) -> Result<f64>;
}

impl ResponseScorer for DiscriminatorModel {
    fn score_response(&self, original: &[u32], response: &[u32]) -> Result<f64> {
        self.score(original, response)
    }
}

impl<F> ResponseScorer for F
where
    F: Fn(&[u32], &[u32]) -> Result<f64>,
{
    fn score_response(&self, original: &[u32], response: &[u32]) -> Result<f64> {
        self(original, response)
    }
}

/// Minimum same-length group size entering the rank-divergence mean;
/// pairs (rho always ±1) would only add noise.
pub const MIN_GROUP: usize = 3;

/// Per-context outcome of the rank-divergence analysis.
#[derive(Debug, Clone)]
pub struct ContextDivergence {
    pub context: Vec<u32>,
    pub samples: Vec<ScoredResponse>,
    /// Defined rho of each same-length group of size ≥ MIN_GROUP.
    pub group_rhos: Vec<f64>,
    /// Mean of this context's group rhos; None when no group qualified.
    pub mean_rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RankDivergence {
    pub per_context: Vec<ContextDivergence>,
    /// Unweighted mean over every qualifying group of every context.
    pub mean_rho: f64,
    pub groups_used: usize,
    /// Groups of size ≥ MIN_GROUP whose correlation was undefined
    /// (constant scores), skipped from the mean.
    pub groups_skipped: usize,
}

/// For each context, sample `n_samples` responses, score them with the
/// discriminator(-like) scorer and the generator log-likelihood, group
/// by response length, and correlate the two rankings within each group
/// of size ≥ [`MIN_GROUP`]. The headline statistic is the unweighted
/// mean over all groups over all contexts.
pub fn same_length_rank_divergence<S>(
    contexts: &[Vec<u32>],
    generator: &GeneratorModel,
    scorer: &S,
    n_samples: usize,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<RankDivergence>
where
    S: ResponseScorer + ?Sized,
{
    if contexts.is_empty() {
        return Err(Error::Config("rank divergence needs contexts".into()));
    }
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "rank divergence needs at least 2 samples per context, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_context = Vec::with_capacity(contexts.len());
    let mut all_rhos: Vec<f64> = Vec::new();
    let mut groups_skipped = 0usize;

    for context in contexts {
        let sample_seeds: Vec<u64> = (0..n_samples).map(|_| rng.random()).collect();
        let mut samples = Vec::with_capacity(n_samples);
        for s in sample_seeds {
            let response = generator.sample_response(
                context,
                &DecodeConfig {
                    seed: s,
                    ..*decode
                },
            )?;
            let disc_score = scorer.score_response(context, &response)?;
            let gen_loglik = generator.log_likelihood(context, &response)?;
            samples.push(ScoredResponse::new(response, disc_score, gen_loglik));
        }

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            groups.entry(s.length).or_default().push(i);
        }
        let mut group_rhos = Vec::new();
        for members in groups.values().filter(|m| m.len() >= MIN_GROUP) {
            let ds: Vec<f64> = members.iter().map(|&i| samples[i].disc_score).collect();
            let ls: Vec<f64> = members.iter().map(|&i| samples[i].gen_loglik).collect();
            match spearman_rho(&ds, &ls) {
                Ok(rho) => group_rhos.push(rho),
                Err(Error::Undefined(_)) => groups_skipped += 1,
                Err(e) => return Err(e),
            }
        }
        let mean_rho = if group_rhos.is_empty() {
            None
        } else {
            Some(group_rhos.iter().sum::<f64>() / group_rhos.len() as f64)
        };
        all_rhos.extend_from_slice(&group_rhos);
        per_context.push(ContextDivergence {
            context: context.clone(),
            samples,
            group_rhos,
            mean_rho,
        });
    }

    if all_rhos.is_empty() {
        return Err(Error::Undefined(format!(
            "no same-length group of size >= {MIN_GROUP} in any context; \
             cannot form the rank-divergence statistic"
        )));
    }
    Ok(RankDivergence {
        mean_rho: all_rhos.iter().sum::<f64>() / all_rhos.len() as f64,
        groups_used: all_rhos.len(),
        groups_skipped,
        per_context,
    })
}

/// Top-k lists for one response-length bucket.
#[derive(Debug, Clone)]
pub struct TopKTable {
    pub length: usize,
    pub by_disc: Vec<ScoredResponse>,
    pub by_gen: Vec<ScoredResponse>,
}

/// Per length bucket: the top-k distinct responses by discriminator
/// score and by generator log-likelihood, ties broken by lexicographic
/// token order. Buckets are returned in ascending length order; a bucket
/// smaller than k is returned whole.
pub fn top_k_comparison(scored: &[ScoredResponse], k: usize) -> Result<Vec<TopKTable>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if scored.is_empty() {
        return Err(Error::Config(
            "top-k comparison needs at least one scored response".into(),
        ));
    }
    // Deduplicate identical responses within each length bucket.
    let mut buckets: BTreeMap<usize, BTreeMap<&[u32], &ScoredResponse>> = BTreeMap::new();
    for s in scored {
        buckets
            .entry(s.length)
            .or_default()
            .entry(&s.response)
            .or_insert(s);
    }
    let tables = buckets
        .into_iter()
        .map(|(length, distinct)| {
            let items: Vec<&ScoredResponse> = distinct.into_values().collect();
            let top = |key: fn(&ScoredResponse) -> f64| -> Vec<ScoredResponse> {
                let mut sorted = items.clone();
                sorted.sort_by(|a, b| {
                    key(b)
                        .total_cmp(&key(a))
                        .then_with(|| a.response.cmp(&b.response))
                });
                sorted.into_iter().take(k).cloned().collect()
            };
            TopKTable {
                length,
                by_disc: top(|s| s.disc_score),
                by_gen: top(|s| s.gen_loglik),
            }
        })
        .collect();
    Ok(tables)
}
