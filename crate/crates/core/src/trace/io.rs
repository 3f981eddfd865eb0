use std::io::{BufRead, Write};

use super::validate::{check_header, check_record};
use super::{TokenRecord, TraceError, TraceHeader, TRACE_FORMAT_VERSION};

/// Rounds to 6 significant digits, the precision gates are stored with.
pub(crate) fn round_gate(g: f64) -> f64 {
    format!("{g:.5e}").parse().unwrap_or(g)
}

/// Streams a trace to `sink`, one line per call.
pub struct TraceWriter<W: Write> {
    sink: W,
    header: TraceHeader,
    line: Vec<u8>,
    written: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut sink: W, header: TraceHeader) -> Result<Self, TraceError> {
        check_header(&header)?;
        let mut line = serde_json::to_vec(&header).map_err(|e| TraceError::InvalidHeader(e.to_string()))?;
        line.push(b'\n');
        sink.write_all(&line)?;
        Ok(TraceWriter {
            sink,
            header,
            line,
            written: 0,
        })
    }

    /// Writes one record, rounding its gates. Records that break the
    /// header's invariants are rejected before anything is written.
    pub fn write_record(&mut self, record: &TokenRecord) -> Result<(), TraceError> {
        let mut rounded = record.clone();
        for pairs in &mut rounded.layers {
            for pair in pairs.iter_mut() {
                pair.1 = round_gate(pair.1);
            }
        }
        check_record(&self.header, &rounded).map_err(|message| TraceError::Invalid {
            record: self.written,
            message,
        })?;
        self.line.clear();
        serde_json::to_writer(&mut self.line, &rounded).map_err(|e| TraceError::Invalid {
            record: self.written,
            message: e.to_string(),
        })?;
        self.line.push(b'\n');
        self.sink.write_all(&self.line)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

pub fn write_trace<W: Write>(header: &TraceHeader, records: &[TokenRecord], sink: W) -> Result<(), TraceError> {
    let mut w = TraceWriter::new(sink, header.clone())?;
    for r in records {
        w.write_record(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Reads records one line at a time. Each record is checked against the
/// header as it is read, so memory stays bounded by the longest line.
pub struct TraceReader<R: BufRead> {
    source: R,
    header: TraceHeader,
    buf: Vec<u8>,
    index: usize,
    done: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut source: R) -> Result<Self, TraceError> {
        let mut buf = Vec::new();
        loop {
            buf.clear();
            if source.read_until(b'\n', &mut buf)? == 0 {
                return Err(TraceError::MissingHeader);
            }
            if !buf.trim_ascii().is_empty() {
                break;
            }
        }
        let header = parse_header(&buf)?;
        Ok(TraceReader {
            source,
            header,
            buf,
            index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<TokenRecord>, TraceError> {
        loop {
            self.buf.clear();
            if self.source.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            if !self.buf.trim_ascii().is_empty() {
                break;
            }
        }
        let record = self.index;
        let complete = self.buf.ends_with(b"\n");
        let parsed: TokenRecord = match serde_json::from_slice(&self.buf) {
            Ok(r) => r,
            Err(_) if !complete => return Err(TraceError::Truncated { record }),
            Err(e) => {
                return Err(TraceError::Malformed {
                    record,
                    message: e.to_string(),
                })
            }
        };
        check_record(&self.header, &parsed).map_err(|message| TraceError::Invalid { record, message })?;
        self.index += 1;
        Ok(Some(parsed))
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TokenRecord, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.next_record().transpose();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

fn parse_header(line: &[u8]) -> Result<TraceHeader, TraceError> {
    let value: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| TraceError::InvalidHeader(e.to_string()))?;
    // Report a version mismatch before any schema difference it may explain.
    if let Some(v) = value.get("version") {
        let found = v
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| TraceError::InvalidHeader(format!("bad version {v}")))?;
        if found != TRACE_FORMAT_VERSION {
            return Err(TraceError::VersionMismatch {
                found,
                expected: TRACE_FORMAT_VERSION,
            });
        }
    }
    let header: TraceHeader = serde_json::from_value(value).map_err(|e| TraceError::InvalidHeader(e.to_string()))?;
    check_header(&header)?;
    Ok(header)
}

/// Reads a whole trace into memory.
pub fn read_trace<R: BufRead>(source: R) -> Result<(TraceHeader, Vec<TokenRecord>), TraceError> {
    let reader = TraceReader::new(source)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}
