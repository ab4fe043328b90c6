use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunStats, SamplerTrace, TraceRecord};
use crate::error::{Error, Result};
use crate::expr::{parse_expression, ParamVector};
use crate::likelihood::FitResult;
use crate::score::{BicVariant, ScoreBreakdown};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    step: usize,
    chain: usize,
    beta: f64,
    expr: String,
    params: ParamVector,
    sse: f64,
    dl: f64,
    variant: BicVariant,
    log_likelihood: f64,
    converged: bool,
    restarts_used: usize,
    score: ScoreBreakdown,
}

/// Writes one JSON object per record.
pub fn write_trace(trace: &SamplerTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &trace.records {
        let line = Line {
            step: r.step,
            chain: r.chain,
            beta: r.beta,
            expr: r.tree.to_string(),
            params: r.fit.theta_hat.clone(),
            sse: r.fit.sse,
            dl: r.score.description_length,
            variant: r.score.variant_used,
            log_likelihood: r.fit.log_likelihood,
            converged: r.fit.converged,
            restarts_used: r.fit.restarts_used,
            score: r.score.clone(),
        };
        let text = serde_json::to_string(&line).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(out, "{text}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace written by [`write_trace`]. Counters are not stored in the
/// file and come back empty.
pub fn read_trace(path: &Path) -> Result<SamplerTrace> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let tree = parse_expression(&l.expr, usize::MAX)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        records.push(TraceRecord {
            step: l.step,
            chain: l.chain,
            beta: l.beta,
            tree,
            fit: FitResult {
                theta_hat: l.params,
                sse: l.sse,
                log_likelihood: l.log_likelihood,
                converged: l.converged,
                restarts_used: l.restarts_used,
            },
            score: l.score,
        });
    }
    Ok(SamplerTrace { records, stats: RunStats::default(), models_scored: 0 })
}
