//! CSV outputs of a chain: the per-iteration trace and a diagnostics table.

use std::path::Path;

use super::chain::{monitored_names, Block, ChainOutput};
use super::ess::ess;
use crate::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { file: path.to_path_buf(), source },
        other => Error::parse(path, 0, format!("{other:?}")),
    }
}

pub fn trace_header() -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "burn_in".to_string()];
    h.extend(Block::SWEEP.iter().map(|b| format!("acc_{}", b.name())));
    h.extend(monitored_names());
    h
}

/// `trace.csv`: one row per iteration. Acceptance columns hold 1/0, or are
/// empty for inactive blocks.
pub fn write_trace_csv(path: &Path, out: &ChainOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(trace_header()).map_err(|e| csv_err(path, e))?;
    for r in &out.trace {
        let mut rec = vec![r.iteration.to_string(), (r.burn_in as u8).to_string()];
        rec.extend(r.accepted.iter().map(|a| a.map(|b| (b as u8).to_string()).unwrap_or_default()));
        rec.extend(r.monitored().iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}

/// A trace read back from disk: monitored series by name, post-burn-in rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    /// `columns[j][i]` is series `j` at row `i`.
    pub columns: Vec<Vec<f64>>,
    pub acceptance: Vec<(String, Option<f64>)>,
}

pub fn read_trace_csv(path: &Path) -> Result<TraceTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    let want = trace_header();
    if header != want {
        return Err(Error::parse(path, 1, "header does not match the trace layout"));
    }
    let n_acc = Block::SWEEP.len();
    let names = monitored_names();
    let mut table = TraceTable {
        names: names.clone(),
        iterations: Vec::new(),
        columns: vec![Vec::new(); names.len()],
        acceptance: Vec::new(),
    };
    let mut acc = vec![(0usize, 0usize); n_acc];
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != want.len() {
            return Err(Error::parse(path, line, format!("expected {} columns, got {}", want.len(), rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|_| Error::parse(path, line, format!("bad number {:?} in {}", &rec[j], want[j])))
        };
        if num(1)? != 0.0 {
            continue;
        }
        table.iterations.push(num(0)? as usize);
        for k in 0..n_acc {
            if !rec[2 + k].is_empty() {
                acc[k].0 += (num(2 + k)? != 0.0) as usize;
                acc[k].1 += 1;
            }
        }
        for j in 0..names.len() {
            table.columns[j].push(num(2 + n_acc + j)?);
        }
    }
    table.acceptance = Block::SWEEP
        .iter()
        .zip(acc)
        .map(|(b, (a, n))| (b.name(), (n > 0).then(|| a as f64 / n as f64)))
        .collect();
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticRow {
    pub metric: String,
    pub name: String,
    pub value: f64,
    pub note: String,
}

/// Acceptance rates, final steps, ESS and run metadata of a chain.
pub fn chain_diagnostics(out: &ChainOutput) -> Vec<DiagnosticRow> {
    let row = |metric: &str, name: &str, value: f64, note: &str| DiagnosticRow {
        metric: metric.into(),
        name: name.into(),
        value,
        note: note.into(),
    };
    let mut rows = Vec::new();
    for b in &out.blocks {
        match b.acceptance {
            Some(a) => rows.push(row("acceptance", &b.name, a, if b.flagged() { "outside [0.1, 0.9]" } else { "" })),
            None => rows.push(row("acceptance", &b.name, f64::NAN, "inactive")),
        }
        rows.push(row("step", &b.name, b.final_step, ""));
    }
    for (name, e) in &out.ess {
        rows.push(row("ess", name, e.value, if e.constant { "constant" } else { "" }));
    }
    rows.push(row("run", "seed", out.seed as f64, ""));
    rows.push(row("run", "iterations", out.iterations as f64, ""));
    rows.push(row("run", "burn_in", out.burn_in as f64, ""));
    rows.push(row("run", "thin", out.thin as f64, ""));
    rows.push(row("run", "draws", out.draws.len() as f64, ""));
    rows.push(row("run", "runtime_secs", out.runtime_secs, ""));
    rows.push(row("run", "nonfinite_rejections", out.nonfinite_rejections as f64, ""));
    rows
}

/// ESS and acceptance rates recomputed from a trace read from disk.
pub fn trace_diagnostics(t: &TraceTable) -> Vec<DiagnosticRow> {
    let mut rows = Vec::new();
    for (name, a) in &t.acceptance {
        rows.push(DiagnosticRow {
            metric: "acceptance".into(),
            name: name.clone(),
            value: a.unwrap_or(f64::NAN),
            note: if a.is_none() { "inactive".into() } else { String::new() },
        });
    }
    for (name, col) in t.names.iter().zip(&t.columns) {
        let (value, note) = match ess(col) {
            Ok(e) => (e.value, if e.constant { "constant".to_string() } else { String::new() }),
            Err(e) => (f64::NAN, e.to_string()),
        };
        rows.push(DiagnosticRow { metric: "ess".into(), name: name.clone(), value, note });
    }
    rows
}

pub fn write_diagnostics_csv(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["metric", "name", "value", "note"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([r.metric.as_str(), r.name.as_str(), &format!("{}", r.value), r.note.as_str()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}

/// Long-format trace `iteration,parameter,value` for plotting.
pub fn write_tidy_trace_csv(path: &Path, t: &TraceTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["iteration", "parameter", "value"]).map_err(|e| csv_err(path, e))?;
    for (name, col) in t.names.iter().zip(&t.columns) {
        for (it, v) in t.iterations.iter().zip(col) {
            w.write_record([it.to_string(), name.clone(), format!("{v:e}")]).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::Io { file: path.to_path_buf(), source: e })
}
