//! Long-format plot data `(series, x, y)` from trace CSV files.

use std::io::{Read, Write};

use lcpg::{Error, Result};

use crate::experiment::TRACE_HEADER;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum XAxis {
    #[value(name = "iter")]
    Iteration,
    #[value(name = "passes")]
    EffectivePasses,
}

/// Reads `(series, trace csv)` pairs and writes objective values against the chosen axis.
pub fn emit_plotdata<R: Read, W: Write>(traces: Vec<(String, R)>, axis: XAxis, out: W) -> Result<usize> {
    if traces.is_empty() {
        return Err(Error::Config("no traces given".into()));
    }
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let x_col = match axis {
        XAxis::Iteration => 0,
        XAxis::EffectivePasses => TRACE_HEADER.len() - 1,
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series", "x", "y"]).map_err(csv_err)?;
    let mut rows = 0;
    for (series, input) in traces {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if !header.iter().eq(TRACE_HEADER.iter().copied()) {
            return Err(Error::Config(format!("trace {series} does not have the trace schema")));
        }
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            w.write_record([series.as_str(), &rec[x_col], &rec[1]]).map_err(csv_err)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(rows)
}
