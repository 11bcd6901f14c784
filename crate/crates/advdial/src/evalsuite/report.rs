//! Report assembly and emission. Every summary statistic in the report
//! is a pure function of the raw data stored alongside it, so a report
//! can be audited by recomputing from its own JSON. Emission is
//! deterministic: the same report yields byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::PRPoint;

/// Bumped when the JSON layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

pub type ReportSeeds = BTreeMap<String, u64>;

/// One sampled response rendered for the report.
#[derive(Debug, Clone, Serialize)]
pub struct SampleReport {
    pub response: String,
    pub disc_score: f64,
    pub gen_loglik: f64,
    pub length: usize,
}

/// One top-k row: a response with both scores.
#[derive(Debug, Clone, Serialize)]
pub struct TopKEntry {
    pub response: String,
    pub disc_score: f64,
    pub gen_loglik: f64,
}

/// Top-k lists for one length bucket of one context.
#[derive(Debug, Clone, Serialize)]
pub struct TopKTableReport {
    pub length: usize,
    pub by_disc: Vec<TopKEntry>,
    pub by_gen: Vec<TopKEntry>,
}

/// Per-context evaluation record: the raw samples plus the statistics
/// derived from them.
#[derive(Debug, Clone, Serialize)]
pub struct ContextReport {
    pub context: String,
    pub samples: Vec<SampleReport>,
    pub group_rhos: Vec<f64>,
    pub mean_rho: Option<f64>,
    /// Present only for the contexts selected for top-k tables.
    pub top_k: Vec<TopKTableReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Canonical echo of the run configuration.
    pub config: String,
    pub seeds: ReportSeeds,

    pub gen_perplexity: f64,

    pub accuracy_threshold: f64,
    pub accuracy: f64,
    /// Raw discriminator scores and labels of the held-out evaluation
    /// examples; accuracy and the PR curve are recomputable from these.
    pub eval_scores: Vec<f64>,
    pub eval_labels: Vec<u8>,
    pub pr_points: Vec<PRPoint>,

    /// Raw (length, score) pairs behind the length-bias statistic.
    pub length_pairs: Vec<(usize, f64)>,
    pub length_spearman: f64,
    pub length_degenerate: bool,

    pub mean_same_length_rho: f64,
    pub groups_used: usize,
    pub groups_skipped: usize,
    pub contexts: Vec<ContextReport>,

    /// Methodology notes: fixed choices a reader needs to interpret the
    /// numbers (threshold convention, minimum group size, and so on).
    pub notes: Vec<String>,
}

/// Format with six significant digits, then shorten to the minimal
/// decimal string that round-trips. Plot-tool friendly: plain '.'
/// decimals, exponent form only for extreme magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0.0".to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("rounded float reparses");
    format!("{rounded:?}")
}

fn render_entry(out: &mut String, e: &TopKEntry) {
    let _ = writeln!(
        out,
        "      score={} loglik={} | {}",
        fmt_sig(e.disc_score),
        fmt_sig(e.gen_loglik),
        e.response
    );
}

fn render_report_txt(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "evaluation report (schema {})", r.schema_version);
    let _ = writeln!(out, "==============================");
    let _ = writeln!(out);
    let _ = writeln!(out, "generator");
    let _ = writeln!(out, "  held-out perplexity: {}", fmt_sig(r.gen_perplexity));
    let _ = writeln!(out);
    let _ = writeln!(out, "discriminator");
    let _ = writeln!(
        out,
        "  accuracy at threshold {}: {}",
        fmt_sig(r.accuracy_threshold),
        fmt_sig(r.accuracy)
    );
    let _ = writeln!(
        out,
        "  precision-recall curve: {} points over {} examples",
        r.pr_points.len(),
        r.eval_scores.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "length bias");
    let degen = if r.length_degenerate { " (degenerate)" } else { "" };
    let _ = writeln!(
        out,
        "  spearman(disc score, response length): {}{} over {} responses",
        fmt_sig(r.length_spearman),
        degen,
        r.length_pairs.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "same-length rank divergence");
    let _ = writeln!(
        out,
        "  mean rho over {} groups ({} skipped as undefined): {}",
        r.groups_used,
        r.groups_skipped,
        fmt_sig(r.mean_same_length_rho)
    );
    for (i, c) in r.contexts.iter().enumerate() {
        let mean = match c.mean_rho {
            Some(m) => fmt_sig(m),
            None => "n/a".to_string(),
        };
        let _ = writeln!(
            out,
            "  context {:>3}: mean rho {} over {} groups | {}",
            i,
            mean,
            c.group_rhos.len(),
            c.context
        );
    }
    let with_tables: Vec<&ContextReport> =
        r.contexts.iter().filter(|c| !c.top_k.is_empty()).collect();
    if !with_tables.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "top-k responses per length");
    }
    for c in with_tables {
        let _ = writeln!(out, "  context: {}", c.context);
        for t in &c.top_k {
            let _ = writeln!(out, "    length {}", t.length);
            let _ = writeln!(out, "    by discriminator score:");
            for e in &t.by_disc {
                render_entry(&mut out, e);
            }
            let _ = writeln!(out, "    by generator log-likelihood:");
            for e in &t.by_gen {
                render_entry(&mut out, e);
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "notes");
    for n in &r.notes {
        let _ = writeln!(out, "  - {n}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "configuration");
    for line in r.config.lines() {
        let _ = writeln!(out, "  {line}");
    }
    let _ = writeln!(out, "seeds");
    for (name, seed) in &r.seeds {
        let _ = writeln!(out, "  {name} = {seed}");
    }
    out
}

/// Write length.dat, pr.dat, report.txt, and report.json into `dir`.
///
/// The .dat files are whitespace-separated columns with a `#` header
/// line, six significant digits, '.' decimal separator. pr.dat rows are
/// recall then precision, ready to plot as an x/y pair.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut length_dat = String::from("# length disc_score\n");
    for &(len, score) in &report.length_pairs {
        let _ = writeln!(length_dat, "{len} {}", fmt_sig(score));
    }
    fs::write(dir.join("length.dat"), length_dat)?;

    let mut pr_dat = String::from("# recall precision\n");
    for p in &report.pr_points {
        let _ = writeln!(pr_dat, "{} {}", fmt_sig(p.recall), fmt_sig(p.precision));
    }
    fs::write(dir.join("pr.dat"), pr_dat)?;

    fs::write(dir.join("report.txt"), render_report_txt(report))?;

    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| crate::error::Error::Format(format!("report serialization: {e}")))?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    Ok(())
}
