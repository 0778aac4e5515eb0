use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use proact_core::harness::{paired_permutation_test, paired_values};
use proact_core::metrics::{conversation_lengths, proactive_metrics, reactive_metrics, MetricReport, ReactiveOptions};
use proact_core::model::Qrels;
use proact_core::{io, Error, Result};
use serde_json::json;

use super::{load_conversations, parse_cutoffs, write_json};
use crate::config::require_path;
use crate::Context;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Comma-separated cutoffs.
    #[arg(short, long, default_value = "5,20,100")]
    k: String,
    /// Conversations file supplying turn counts (proactive only).
    #[arg(long)]
    conversations: Option<PathBuf>,
    /// Also write the full report as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

fn emit_report(ctx: &Context, report: &MetricReport, json_out: Option<&PathBuf>) -> Result<()> {
    if let Some(path) = json_out {
        write_json(path, report)?;
    }
    ctx.out.emit(&report.to_tsv(), report);
    if !report.undefined.is_empty() {
        log::warn!(
            "{} conversations without relevant documents were left out of the means",
            report.undefined.len()
        );
    }
    Ok(())
}

fn load_qrels(ctx: &Context, flag: Option<PathBuf>) -> Result<Qrels> {
    io::read_qrels(&require_path(flag, &ctx.config.paths.qrels, "qrels")?)
}

pub fn reactive(ctx: &mut Context, a: EvalArgs) -> Result<()> {
    let cutoffs = parse_cutoffs(&a.k)?;
    let runs = io::read_run(&a.run)?;
    let qrels = load_qrels(ctx, a.qrels)?;
    let report = reactive_metrics(&runs, &qrels, &ReactiveOptions::new(cutoffs))?;
    emit_report(ctx, &report, a.json_out.as_ref())
}

pub fn proactive(ctx: &mut Context, a: EvalArgs) -> Result<()> {
    let cutoffs = parse_cutoffs(&a.k)?;
    let runs = io::read_run(&a.run)?;
    let qrels = load_qrels(ctx, a.qrels)?;
    let lengths = match a.conversations {
        Some(p) => conversation_lengths(&load_conversations(&p)?),
        None => HashMap::new(),
    };
    let report = proactive_metrics(&runs, &qrels, &lengths, &cutoffs)?;
    emit_report(ctx, &report, a.json_out.as_ref())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CompareMode {
    Reactive,
    Proactive,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(value_enum)]
    mode: CompareMode,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Metric column to compare, for example `ndcg@5` or `npdcg@5`.
    #[arg(long)]
    metric: String,
    #[arg(long)]
    conversations: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn compare(ctx: &mut Context, a: CompareArgs) -> Result<()> {
    let qrels = load_qrels(ctx, a.qrels)?;
    let cutoff: usize = a
        .metric
        .rsplit_once('@')
        .and_then(|(_, k)| k.parse().ok())
        .filter(|k| *k > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("metric {:?} has no @k cutoff", a.metric)))?;
    let lengths = match &a.conversations {
        Some(p) => conversation_lengths(&load_conversations(p)?),
        None => HashMap::new(),
    };
    let score = |path: &PathBuf| -> Result<MetricReport> {
        let runs = io::read_run(path)?;
        match a.mode {
            CompareMode::Reactive => reactive_metrics(&runs, &qrels, &ReactiveOptions::new(vec![cutoff])),
            CompareMode::Proactive => proactive_metrics(&runs, &qrels, &lengths, &[cutoff]),
        }
    };
    let (ra, rb) = (score(&a.a)?, score(&a.b)?);
    if !ra.metrics.contains(&a.metric) {
        return Err(Error::InvalidArgument(format!(
            "unknown metric {:?}; available: {}",
            a.metric,
            ra.metrics.join(", ")
        )));
    }
    let (va, vb) = paired_values(&ra, &rb, &a.metric);
    let p = paired_permutation_test(&va, &vb, a.iterations, a.seed.unwrap_or(ctx.config.seed))?;
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let summary = json!({
        "metric": a.metric,
        "conversations": va.len(),
        "mean_a": mean(&va),
        "mean_b": mean(&vb),
        "p_value": p,
    });
    let text = format!(
        "{}\tn={}\ta={:.4}\tb={:.4}\tp={:.4}\n",
        a.metric,
        va.len(),
        mean(&va),
        mean(&vb),
        p
    );
    ctx.out.emit(&text, &summary);
    Ok(())
}
