//! Per-iteration CSV traces.
//!
//! The first line is `# schema=1`; the header row follows. Missing values are
//! written as empty cells and floats use the shortest representation that
//! round-trips, so the bytes depend only on the trace.

use std::io::{self, Write};

use super::{RunRecord, RunTrace};

pub const SCHEMA_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 11] = [
    "k",
    "tau",
    "prox_sq",
    "d_sq",
    "d_err_sq",
    "v_true",
    "inner_err_sq",
    "y_err_sq",
    "psi",
    "phi",
    "prox_ok",
];

pub fn header(depth: usize) -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((1..=depth).map(|i| format!("track_{i}")))
        .collect()
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn row(r: &RunRecord) -> Vec<String> {
    let mut cells = vec![
        r.k.to_string(),
        num(r.tau),
        num(r.prox_sq),
        num(r.d_sq),
        opt(r.d_err_sq),
        opt(r.v_true),
        opt(r.inner_err_sq),
        opt(r.y_err_sq),
        num(r.psi),
        opt(r.phi),
        u8::from(r.prox_ok).to_string(),
    ];
    cells.extend(r.tracking.iter().copied().map(num));
    cells
}

pub fn write_trace_csv<W: Write>(trace: &RunTrace, mut out: W) -> io::Result<()> {
    writeln!(out, "# schema={SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(trace.depth()))?;
    for r in &trace.records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_csv_string(trace: &RunTrace) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

/// Parses a trace CSV back into rows of optional floats keyed by the header.
pub fn read_trace_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), String> {
    let mut lines = text.splitn(2, '\n');
    let first = lines.next().unwrap_or_default();
    if first.trim() != format!("# schema={SCHEMA_VERSION}") {
        return Err(format!("unsupported schema line '{first}'"));
    }
    let body = lines.next().unwrap_or_default();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let cells = rec
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|e| format!("bad cell '{c}': {e}"))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(cells);
    }
    Ok((header, rows))
}
