//! Shared fixtures and independent reference implementations used to
//! cross-check the library's metrics and decoding.

#![allow(dead_code)]

use std::path::Path;

use advdial::corpus::{load_corpus, Corpus};
use advdial::evalsuite::PRPoint;

/// Quadratic-recount precision-recall reference: for every distinct
/// score threshold (descending), recount TP and predicted-positive from
/// scratch. Slow but obviously correct.
pub fn pr_oracle(scores: &[f64], labels: &[u8]) -> Vec<PRPoint> {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    thresholds
        .into_iter()
        .map(|t| {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(&s, &l)| s >= t && l == 1)
                .count();
            let predicted = scores.iter().filter(|&&s| s >= t).count();
            PRPoint {
                threshold: t,
                precision: tp as f64 / predicted as f64,
                recall: tp as f64 / positives as f64,
            }
        })
        .collect()
}

/// Rank-then-Pearson Spearman reference. Ranks come from pairwise
/// counting (not sorting), and Pearson uses the raw-moment form, so the
/// arithmetic path is independent of the library's.
pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    fn counting_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&x| {
                let less = v.iter().filter(|&&o| o < x).count() as f64;
                let equal = v.iter().filter(|&&o| o == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let ra = counting_ranks(xs);
    let rb = counting_ranks(ys);
    let n = ra.len() as f64;
    let sa: f64 = ra.iter().sum();
    let sb: f64 = rb.iter().sum();
    let saa: f64 = ra.iter().map(|a| a * a).sum();
    let sbb: f64 = rb.iter().map(|b| b * b).sum();
    let sab: f64 = ra.iter().zip(&rb).map(|(a, b)| a * b).sum();
    let cov = sab - sa * sb / n;
    let var_a = saa - sa * sa / n;
    let var_b = sbb - sb * sb / n;
    cov / (var_a * var_b).sqrt()
}

/// Build a corpus by writing `original<TAB>response` lines to a temp
/// file and loading it through the ordinary path.
pub fn corpus_from_lines(dir: &Path, lines: &[(String, String)], max_vocab: usize) -> Corpus {
    let mut text = String::new();
    for (o, r) in lines {
        text.push_str(o);
        text.push('\t');
        text.push_str(r);
        text.push('\n');
    }
    let path = dir.join("pairs.tsv");
    std::fs::write(&path, text).unwrap();
    load_corpus(&path, max_vocab).unwrap()
}
