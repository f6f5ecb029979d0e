//! CSV serialization for timestamped multichannel streams.
//!
//! Layout: a header row `time,<label>,...` followed by one row per tick.
//! Floats are printed with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sync::TimedStream;

pub fn write_stream<W: Write>(w: W, stream: &TimedStream, labels: &[&str]) -> Result<()> {
    if labels.len() != stream.arity() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channel labels", stream.arity()),
            got: format!("{}", labels.len()),
        });
    }
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["time"];
    header.extend_from_slice(labels);
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(1 + labels.len());
    for i in 0..stream.len() {
        row.clear();
        row.push(format!("{}", stream.times()[i]));
        for v in stream.value(i) {
            row.push(format!("{v}"));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_stream_file(path: &Path, stream: &TimedStream, labels: &[&str]) -> Result<()> {
    write_stream(BufWriter::new(File::create(path)?), stream, labels)
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Error {
        let line = e
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse { line, msg: format!("{kind:?}") },
        }
    }
}

/// Reads a stream and its channel labels. Row shape, value syntax, and
/// timestamp ordering problems all carry the offending line number.
pub fn read_stream<R: Read>(r: R) -> Result<(TimedStream, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || headers.get(0) != Some("time") {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "header must be time,<label>,... with at least one channel, got {headers:?}"
            ),
        });
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let arity = labels.len();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let parse = |field: &str, what: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("{what} {field:?} is not a number"),
            })
        };
        times.push(parse(rec.get(0).unwrap_or(""), "timestamp")?);
        for j in 0..arity {
            data.push(parse(rec.get(j + 1).unwrap_or(""), "value")?);
        }
    }
    if times.is_empty() {
        return Err(Error::Empty("stream csv body"));
    }
    let stream = TimedStream::new(times, data, arity)?;
    Ok((stream, labels))
}

pub fn read_stream_file(path: &Path) -> Result<(TimedStream, Vec<String>)> {
    read_stream(BufReader::new(File::open(path)?))
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
