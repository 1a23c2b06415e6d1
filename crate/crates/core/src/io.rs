//! Trace, state and dataset files.
//!
//! Traces are JSONL: an optional first line `{"header": {...}}` carrying
//! [`TraceMeta`], then one object per record. Every float is written with 17
//! significant digits so a trace read back is bit-identical to the one
//! written.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::network::DataSet;
use crate::numerics::{fmt_sig17, Matrix};
use crate::objectives::{BlockId, ParamState};
use crate::solvers::{IterTrace, TraceMeta, TraceRecord};

/// JSON formatter that writes floats with 17 significant digits and
/// delegates everything else to `F`.
pub struct Sig17<F>(pub F);

macro_rules! delegate {
    ($($name:ident $(($arg:ident: $ty:ty))?;)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)?) -> io::Result<()> {
            self.0.$name(w $(, $arg)?)
        })*
    };
}

impl<F: Formatter> Formatter for Sig17<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_sig17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    delegate! {
        begin_array;
        end_array;
        begin_array_value(first: bool);
        end_array_value;
        begin_object;
        end_object;
        begin_object_key(first: bool);
        end_object_key;
        begin_object_value;
        end_object_value;
    }
}

/// One-line JSON with 17-digit floats.
pub fn to_json_line<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(CompactFormatter));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Indented JSON document with 17-digit floats and a trailing newline.
pub fn to_json_document<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut buf,
        Sig17(PrettyFormatter::with_indent(b"  ")),
    );
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: TraceMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    k: usize,
    f: f64,
    dist: f64,
    #[serde(default)]
    block_diffs: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    wall_nanos: u64,
}

/// Streams a trace to any writer, one line per record.
pub struct TraceWriter<W: Write> {
    out: W,
    next_k: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, meta: &TraceMeta) -> Result<Self> {
        let line = to_json_line(&HeaderLine {
            header: meta.clone(),
        })?;
        writeln!(out, "{line}")?;
        Ok(Self { out, next_k: 0 })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        if record.k != self.next_k {
            return Err(Error::InvalidArgument(format!(
                "trace record k = {} written out of order (expected {})",
                record.k, self.next_k
            )));
        }
        writeln!(self.out, "{}", to_json_line(record)?)?;
        self.next_k += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_trace<W: Write>(out: W, trace: &IterTrace) -> Result<()> {
    let mut w = TraceWriter::new(out, &trace.meta)?;
    for r in &trace.records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &IterTrace) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), trace)
}

/// Parses a JSONL trace. Records must have `k = 0, 1, 2, …`, finite `f`,
/// and finite non-negative `dist`; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<IterTrace> {
    read_trace(text.as_bytes())
}

pub fn read_trace<R: Read>(input: R) -> Result<IterTrace> {
    let mut trace = IterTrace::default();
    let mut seen_line = false;
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData => Error::parse(line_no, "line is not valid UTF-8"),
            _ => Error::Io(e),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let first = !seen_line;
        seen_line = true;
        if first && line.starts_with("{\"header\"") {
            let h: HeaderLine =
                serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
            trace.meta = h.header;
            continue;
        }
        let r: RecordLine =
            serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if r.k != trace.records.len() {
            return Err(Error::parse(
                line_no,
                format!("expected k = {}, found {}", trace.records.len(), r.k),
            ));
        }
        if !r.f.is_finite() {
            return Err(Error::parse(line_no, "f must be finite"));
        }
        if !(r.dist.is_finite() && r.dist >= 0.0) {
            return Err(Error::parse(line_no, "dist must be finite and >= 0"));
        }
        if r.block_diffs
            .values()
            .any(|d| !(d.is_finite() && *d >= 0.0))
        {
            return Err(Error::parse(line_no, "block_diffs must be finite and >= 0"));
        }
        trace.records.push(TraceRecord {
            k: r.k,
            f: r.f,
            dist: r.dist,
            block_diffs: r.block_diffs,
            wall_nanos: r.wall_nanos,
        });
    }
    if trace.records.is_empty() {
        return Err(Error::parse(1, "trace holds no records"));
    }
    Ok(trace)
}

pub fn read_trace_file(path: &Path) -> Result<IterTrace> {
    read_trace(File::open(path)?)
}

/// Text dump of every block: a line with the block name, then the matrix in
/// [`Matrix::to_text`] format.
pub fn state_to_text(state: &ParamState) -> String {
    let mut out = String::new();
    type Group<'a> = (&'a [Matrix], fn(usize) -> BlockId);
    let groups: [Group; 5] = [
        (&state.w, BlockId::W),
        (&state.u, BlockId::U),
        (&state.v, BlockId::V),
        (&state.lambda, BlockId::Lambda),
        (&state.vbar, BlockId::VBar),
    ];
    for (mats, id) in groups {
        for (i, m) in mats.iter().enumerate() {
            out.push_str(&id(i + 1).to_string());
            out.push('\n');
            out.push_str(&m.to_text());
        }
    }
    out
}

/// Inverse of [`state_to_text`]. Blocks of one kind must appear with
/// consecutive layer indices starting at 1.
pub fn state_from_text(text: &str) -> Result<ParamState> {
    let lines: Vec<&str> = text.lines().collect();
    let mut state = ParamState::default();
    let mut pos = 0;
    while pos < lines.len() {
        let name = lines[pos].trim();
        if name.is_empty() {
            pos += 1;
            continue;
        }
        let id: BlockId = name
            .parse()
            .map_err(|_| Error::parse(pos + 1, format!("unknown block `{name}`")))?;
        let header = lines
            .get(pos + 1)
            .ok_or_else(|| Error::parse(pos + 2, "missing matrix header"))?;
        let rows: usize = header
            .split_whitespace()
            .next()
            .and_then(|t| t.parse().ok())
            .filter(|&r| r > 0 && r <= lines.len() - pos - 2)
            .ok_or_else(|| Error::parse(pos + 2, "bad or truncated matrix header"))?;
        let chunk = lines[pos + 1..pos + 2 + rows].join("\n");
        let m = Matrix::from_text(&chunk).map_err(|e| match e {
            Error::Parse { line, message } => Error::parse(pos + line, message),
            other => other,
        })?;
        let slot = match id {
            BlockId::W(_) => &mut state.w,
            BlockId::U(_) => &mut state.u,
            BlockId::V(_) => &mut state.v,
            BlockId::Lambda(_) => &mut state.lambda,
            BlockId::VBar(_) => &mut state.vbar,
        };
        if id.layer() != slot.len() + 1 {
            return Err(Error::parse(pos + 1, format!("block {id} out of order")));
        }
        slot.push(m);
        pos += 2 + rows;
    }
    Ok(state)
}

/// Reads a dataset from CSV: a header row, then one sample per row with
/// `d0` feature columns followed by `dn` label columns.
pub fn read_csv_dataset<R: Read>(input: R, d0: usize, dn: usize) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let width = d0 + dn;
    let header_len = reader
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .len();
    if header_len != width {
        return Err(Error::parse(
            1,
            format!("header has {header_len} columns, expected {d0} features + {dn} labels"),
        ));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::parse(line, e.to_string()))?;
        if row.len() != width {
            return Err(Error::parse(
                line,
                format!("row has {} columns, expected {width}", row.len()),
            ));
        }
        for (c, field) in row.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite value"));
            }
            if c < d0 {
                features.push(v);
            } else {
                labels.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::parse(2, "dataset has no samples"));
    }
    // Rows are samples; matrices hold samples as columns.
    let inputs = Matrix::from_vec(n, d0, features)?.transpose();
    let labels = Matrix::from_vec(n, dn, labels)?.transpose();
    DataSet::new(inputs, labels)
}

pub fn read_csv_dataset_file(path: &Path, d0: usize, dn: usize) -> Result<DataSet> {
    read_csv_dataset(File::open(path)?, d0, dn)
}
