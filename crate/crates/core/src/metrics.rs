//! Space-utilization and collapse-rate metrics plus deterministic report
//! emission.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::env::EpisodeResult;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no episode results to aggregate")]
    EmptyResults,
    #[error("report io: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// One evaluated episode in the report.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub su: f64,
    pub items_placed: usize,
    pub attempts: usize,
    pub collapsed: bool,
    pub collapse_items: usize,
    pub episode_return: f64,
}

/// Aggregated evaluation metrics with full per-episode rows for plotting.
///
/// SU means include collapse-terminated episodes (partial SU counts); ICR
/// divides collapse events by total placement attempts, including the
/// collapse-causing attempts themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    pub episodes: usize,
    pub mean_su: f64,
    pub ccr: f64,
    pub icr: f64,
    pub rows: Vec<EpisodeRow>,
    pub config_hash: u64,
    pub seeds: Vec<u64>,
}

/// Aggregates episode results into SU/CCR/ICR.
pub fn compute_metrics(
    results: &[EpisodeResult],
    method: &str,
    dataset: &str,
    config_hash: u64,
) -> Result<MetricsReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let episodes = results.len();
    let mean_su = results.iter().map(|r| r.su).sum::<f64>() / episodes as f64;
    let collapsed = results
        .iter()
        .filter(|r| r.terminated_by_collapse())
        .count();
    let collapse_items: usize = results.iter().map(|r| r.collapse_item_count).sum();
    let attempts: usize = results.iter().map(|r| r.attempts).sum();
    let ccr = collapsed as f64 / episodes as f64;
    let icr = if attempts == 0 {
        0.0
    } else {
        collapse_items as f64 / attempts as f64
    };
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, r)| EpisodeRow {
            episode: i,
            seed: r.seed,
            su: r.su,
            items_placed: r.items_placed,
            attempts: r.attempts,
            collapsed: r.terminated_by_collapse(),
            collapse_items: r.collapse_item_count,
            episode_return: r.episode_return,
        })
        .collect();
    Ok(MetricsReport {
        method: method.to_string(),
        dataset: dataset.to_string(),
        episodes,
        mean_su,
        ccr,
        icr,
        rows,
        config_hash,
        seeds: results.iter().map(|r| r.seed).collect(),
    })
}

pub const CSV_HEADER: &str =
    "episode,seed,su,items_placed,attempts,collapsed,collapse_items,return";

/// Per-episode rows as CSV, deterministic byte-for-byte.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.episode,
            row.seed,
            row.su,
            row.items_placed,
            row.attempts,
            u8::from(row.collapsed),
            row.collapse_items,
            row.episode_return
        );
    }
    out
}

/// Human-readable summary, deterministic byte-for-byte.
pub fn report_text(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}", report.method);
    let _ = writeln!(out, "dataset: {}", report.dataset);
    let _ = writeln!(out, "episodes: {}", report.episodes);
    let _ = writeln!(out, "mean_su: {:.4}", report.mean_su);
    let _ = writeln!(out, "ccr: {:.4}", report.ccr);
    let _ = writeln!(out, "icr: {:.4}", report.icr);
    let _ = writeln!(out, "config_hash: {:016x}", report.config_hash);
    let _ = writeln!(
        out,
        "su_includes_collapsed_episodes: yes (partial SU measured at termination)"
    );
    let seeds: Vec<String> = report.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "seeds: {}", seeds.join(" "));
    out
}

/// Writes `<stem>.csv` and `<stem>.txt` next to each other.
pub fn emit_report(report: &MetricsReport, stem: &Path) -> Result<(), MetricsError> {
    let csv_path = stem.with_extension("csv");
    let txt_path = stem.with_extension("txt");
    std::fs::write(csv_path, report_csv(report))?;
    std::fs::write(txt_path, report_text(report))?;
    Ok(())
}
