//! File formats: headered CSV matrices, sampler traces as CSV with
//! run-length encoded model vectors, and JSON for configs and summaries.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every finite `f64` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::BinaryModel;
use crate::sampler::Trace;

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_f64(field: &str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("'{field}': {e}"),
    })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `x` row by row under a header `c0,c1,…`.
pub fn write_matrix<W: Write>(x: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..x.ncols()).map(|j| format!("c{j}")))
        .map_err(csv_error)?;
    for i in 0..x.nrows() {
        w.write_record((0..x.ncols()).map(|j| fmt_f64(x[(i, j)])))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let ncols = r.headers().map_err(csv_error)?.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncols {
            return Err(Error::Parse {
                line,
                message: format!("expected {ncols} fields, found {}", rec.len()),
            });
        }
        for f in rec.iter() {
            data.push(parse_f64(f, line)?);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

pub fn write_matrix_file(x: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_matrix(x, BufWriter::new(File::create(path)?))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(BufReader::new(File::open(path)?))
}

/// Single column vector with header `name`.
pub fn write_vector<W: Write>(v: &[f64], name: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([name]).map_err(csv_error)?;
    for &x in v {
        w.write_record([fmt_f64(x)]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector<R: Read>(input: R) -> Result<Vec<f64>> {
    let m = read_matrix(input)?;
    if m.ncols() != 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected one column, found {}", m.ncols()),
        });
    }
    Ok(m.iter().copied().collect())
}

/// Run-length code of a model vector: `bitxcount` tokens joined by `|`, e.g.
/// `0x3|1x2|0x995`. The empty model of length `p` is `0xp`.
pub fn rle_encode(delta: &BinaryModel) -> String {
    let bits = delta.bits();
    if bits.is_empty() {
        return "0x0".into();
    }
    let mut out = Vec::new();
    let mut cur = bits[0];
    let mut run = 0usize;
    for &b in bits {
        if b == cur {
            run += 1;
        } else {
            out.push(format!("{}x{run}", cur as u8));
            cur = b;
            run = 1;
        }
    }
    out.push(format!("{}x{run}", cur as u8));
    out.join("|")
}

pub fn rle_decode(code: &str) -> std::result::Result<BinaryModel, String> {
    let mut bits = Vec::new();
    for tok in code.split('|') {
        let (b, n) = tok.split_once('x').ok_or_else(|| format!("bad run '{tok}'"))?;
        let bit = match b {
            "0" => false,
            "1" => true,
            _ => return Err(format!("bad bit in run '{tok}'")),
        };
        let n: usize = n.parse().map_err(|_| format!("bad length in run '{tok}'"))?;
        bits.extend(std::iter::repeat_n(bit, n));
    }
    Ok(BinaryModel::from_bits(bits))
}

/// One trace row: the active coefficients are kept, the inactive ones only
/// through their squared norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub delta: BinaryModel,
    pub active_theta: Vec<f64>,
    pub inactive_sq_norm: f64,
}

impl TraceRow {
    /// `θ_δ` as a dense vector.
    pub fn sparse_theta(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.delta.len()];
        for (j, v) in self.delta.active_indices().into_iter().zip(&self.active_theta) {
            t[j] = *v;
        }
        t
    }
}

pub const TRACE_HEADER: [&str; 5] = ["iteration", "delta_rle", "model_size", "active_theta", "inactive_sq_norm"];

pub fn trace_rows(trace: &Trace) -> Vec<TraceRow> {
    trace
        .iterations
        .iter()
        .zip(&trace.delta_samples)
        .zip(&trace.theta_samples)
        .map(|((&iteration, d), t)| {
            let mut active = Vec::with_capacity(d.count());
            let mut inactive = 0.0;
            for (j, v) in t.iter().enumerate() {
                if d.get(j) {
                    active.push(*v);
                } else {
                    inactive += v * v;
                }
            }
            TraceRow {
                iteration,
                delta: d.clone(),
                active_theta: active,
                inactive_sq_norm: inactive,
            }
        })
        .collect()
}

pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_error)?;
    for row in trace_rows(trace) {
        let theta = row.active_theta.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
        w.write_record([
            row.iteration.to_string(),
            rle_encode(&row.delta),
            row.delta.count().to_string(),
            theta,
            fmt_f64(row.inactive_sq_norm),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected trace header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse { line, message };
        if rec.len() != TRACE_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", TRACE_HEADER.len(), rec.len())));
        }
        let iteration = rec[0].parse().map_err(|e| bad(format!("iteration: {e}")))?;
        let delta = rle_decode(&rec[1]).map_err(bad)?;
        let size: usize = rec[2].parse().map_err(|e| bad(format!("model_size: {e}")))?;
        if size != delta.count() {
            return Err(bad(format!("model_size {size} disagrees with delta ({})", delta.count())));
        }
        let active_theta = if rec[3].is_empty() {
            Vec::new()
        } else {
            rec[3].split(';').map(|f| parse_f64(f, line)).collect::<Result<Vec<_>>>()?
        };
        if active_theta.len() != size {
            return Err(bad(format!("{} active coefficients for model size {size}", active_theta.len())));
        }
        rows.push(TraceRow {
            iteration,
            delta,
            active_theta,
            inactive_sq_norm: parse_f64(&rec[4], line)?,
        });
    }
    Ok(rows)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })
}
