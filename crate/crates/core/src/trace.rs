//! Instrumentation-event vocabulary and the `.rtrc` on-disk trace format.
//!
//! A trace is UTF-8 text, one JSON object per line. Line 1 is always the
//! header `{"schema":"ropocop-trace","version":1}`; every following line is
//! one event. Encoding is byte-stable: fields appear in a fixed order and
//! addresses are lower-case `0x`-prefixed hex, so identical event sequences
//! produce identical files.
//!
//! Event lines:
//!
//! ```text
//! {"ev":"block","start":"0x401000","n":5,"term":"ret","target":"0x60001049"}
//! {"ev":"img+","name":"kernel32","start":"0x76000000","end":"0x76100000"}
//! {"ev":"img-","name":"kernel32","start":"0x76000000"}
//! {"ev":"alloc"}
//! {"ev":"usage","top":"0xa00000"}
//! ```
//!
//! Terminator spellings are fixed: `ret`, `icall`, `ijmp`, `dbr`, `dcall`,
//! `fall`.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde_json::Value;
use thiserror::Error;

pub const TRACE_SCHEMA: &str = "ropocop-trace";
pub const TRACE_VERSION: u64 = 1;
pub const TRACE_FILE_EXT: &str = "rtrc";

/// Highest address representable in a version-1 trace (32-bit space).
pub const ADDRESS_LIMIT: u64 = 1 << 32;

/// A virtual address. Version-1 traces model a 32-bit address space, so the
/// upper 32 bits must be zero everywhere a value enters or leaves a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub u64);

impl Address {
    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_valid_v1(self) -> bool {
        self.0 < ADDRESS_LIMIT
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:x}", self.0)
    }
}

impl From<u64> for Address {
    fn from(v: u64) -> Address {
        Address(v)
    }
}

/// How a basic block ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminatorKind {
    Return,
    IndirectCall,
    IndirectJump,
    DirectBranch,
    DirectCall,
    FallThrough,
}

impl TerminatorKind {
    /// True exactly for returns, indirect calls, and indirect jumps — the
    /// transfers whose target comes from data.
    pub fn is_indirect(self) -> bool {
        matches!(
            self,
            TerminatorKind::Return | TerminatorKind::IndirectCall | TerminatorKind::IndirectJump
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TerminatorKind::Return => "ret",
            TerminatorKind::IndirectCall => "icall",
            TerminatorKind::IndirectJump => "ijmp",
            TerminatorKind::DirectBranch => "dbr",
            TerminatorKind::DirectCall => "dcall",
            TerminatorKind::FallThrough => "fall",
        }
    }

    pub fn from_tag(s: &str) -> Option<TerminatorKind> {
        Some(match s {
            "ret" => TerminatorKind::Return,
            "icall" => TerminatorKind::IndirectCall,
            "ijmp" => TerminatorKind::IndirectJump,
            "dbr" => TerminatorKind::DirectBranch,
            "dcall" => TerminatorKind::DirectCall,
            "fall" => TerminatorKind::FallThrough,
            _ => return None,
        })
    }
}

/// Execution of one basic block. `target` is the architectural
/// next-instruction address after the terminator, regardless of whether that
/// address is mapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockExec {
    pub start: Address,
    pub instr_count: u64,
    pub terminator: TerminatorKind,
    pub target: Address,
}

/// One instrumentation event, consumed strictly in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Block(BlockExec),
    ImageLoad {
        name: String,
        start: Address,
        /// Exclusive upper bound.
        end: Address,
    },
    ImageUnload {
        name: String,
        start: Address,
    },
    /// A call to an allocating or deallocating function occurred.
    AllocCall,
    /// Highest address currently in use by data regions.
    UsageReport {
        top: Address,
    },
}

impl TraceEvent {
    pub fn as_block(&self) -> Option<&BlockExec> {
        match self {
            TraceEvent::Block(b) => Some(b),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let check_addr = |what: &str, a: Address| {
            if a.is_valid_v1() {
                Ok(())
            } else {
                Err(format!("{what} {a} exceeds the 32-bit address space"))
            }
        };
        match self {
            TraceEvent::Block(b) => {
                if b.instr_count == 0 {
                    return Err("instr_count must be ≥ 1".to_string());
                }
                check_addr("block start", b.start)?;
                check_addr("block target", b.target)
            }
            TraceEvent::ImageLoad { start, end, .. } => {
                check_addr("image start", *start)?;
                // `end` is exclusive so it may equal 2^32 exactly.
                if end.0 > ADDRESS_LIMIT {
                    return Err(format!("image end {end} exceeds the 32-bit address space"));
                }
                if start.0 >= end.0 {
                    return Err(format!("image start {start} must be below end {end}"));
                }
                Ok(())
            }
            TraceEvent::ImageUnload { start, .. } => check_addr("image start", *start),
            TraceEvent::AllocCall => Ok(()),
            TraceEvent::UsageReport { top } => check_addr("usage top", *top),
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: missing trace header")]
    MissingHeader { line: u64 },
    #[error(
        "line {line}: unsupported trace schema/version (expected {TRACE_SCHEMA} v{TRACE_VERSION})"
    )]
    SchemaMismatch { line: u64 },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("event {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
}

impl TraceError {
    fn malformed(line: u64, reason: impl Into<String>) -> TraceError {
        TraceError::Malformed {
            line,
            reason: reason.into(),
        }
    }
}

/// Streaming decoder over any line-oriented reader. Yields events lazily and
/// never materializes the whole trace. One reader must not be driven from two
/// threads concurrently.
pub struct TraceReader<R: BufRead> {
    inner: R,
    line: u64,
    header_seen: bool,
    buf: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(inner: R) -> TraceReader<R> {
        TraceReader {
            inner,
            line: 0,
            header_seen: false,
            buf: String::new(),
            failed: false,
        }
    }

    /// 1-based number of the last line read.
    pub fn line(&self) -> u64 {
        self.line
    }

    fn read_line(&mut self) -> Result<Option<&str>, TraceError> {
        self.buf.clear();
        let n = self.inner.read_line(&mut self.buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        Ok(Some(self.buf.trim_end_matches(['\n', '\r'])))
    }

    fn check_header(&mut self) -> Result<(), TraceError> {
        let line_no = self.line + 1;
        let text = match self.read_line()? {
            Some(t) => t.to_string(),
            None => return Err(TraceError::MissingHeader { line: line_no }),
        };
        parse_header_line(line_no, &text)?;
        self.header_seen = true;
        Ok(())
    }
}

/// Validates the mandatory first line of a trace.
pub fn parse_header_line(line_no: u64, text: &str) -> Result<(), TraceError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| TraceError::malformed(line_no, format!("invalid JSON: {e}")))?;
    let schema = v.get("schema").and_then(Value::as_str);
    let version = v.get("version").and_then(Value::as_u64);
    if schema != Some(TRACE_SCHEMA) || version != Some(TRACE_VERSION) {
        return Err(TraceError::SchemaMismatch { line: line_no });
    }
    Ok(())
}

/// Parses one event line; `line_no` is 1-based and only used in errors.
pub fn parse_event_line(line_no: u64, text: &str) -> Result<TraceEvent, TraceError> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| TraceError::malformed(line_no, format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| TraceError::malformed(line_no, "event is not a JSON object"))?;
    let ev = obj
        .get("ev")
        .and_then(Value::as_str)
        .ok_or_else(|| TraceError::malformed(line_no, "missing `ev` tag"))?;

    let addr_field = |key: &str| -> Result<Address, TraceError> {
        let s = obj
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| TraceError::malformed(line_no, format!("missing `{key}`")))?;
        let hex = s.strip_prefix("0x").ok_or_else(|| {
            TraceError::malformed(line_no, format!("`{key}` must be a 0x-prefixed hex string"))
        })?;
        let value = u64::from_str_radix(hex, 16).map_err(|_| {
            TraceError::malformed(line_no, format!("`{key}` is not valid hex: `{s}`"))
        })?;
        Ok(Address(value))
    };
    let str_field = |key: &str| -> Result<String, TraceError> {
        obj.get(key)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TraceError::malformed(line_no, format!("missing `{key}`")))
    };

    let event = match ev {
        "block" => {
            let start = addr_field("start")?;
            let n = obj
                .get("n")
                .and_then(Value::as_u64)
                .ok_or_else(|| TraceError::malformed(line_no, "missing `n`"))?;
            let term_s = str_field("term")?;
            let terminator = TerminatorKind::from_tag(&term_s).ok_or_else(|| {
                TraceError::malformed(line_no, format!("unknown terminator `{term_s}`"))
            })?;
            let target = addr_field("target")?;
            TraceEvent::Block(BlockExec {
                start,
                instr_count: n,
                terminator,
                target,
            })
        }
        "img+" => TraceEvent::ImageLoad {
            name: str_field("name")?,
            start: addr_field("start")?,
            end: addr_field("end")?,
        },
        "img-" => TraceEvent::ImageUnload {
            name: str_field("name")?,
            start: addr_field("start")?,
        },
        "alloc" => TraceEvent::AllocCall,
        "usage" => TraceEvent::UsageReport {
            top: addr_field("top")?,
        },
        other => {
            return Err(TraceError::malformed(
                line_no,
                format!("unknown event kind `{other}`"),
            ))
        }
    };
    event
        .validate()
        .map_err(|reason| TraceError::malformed(line_no, reason))?;
    Ok(event)
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.header_seen {
            if let Err(e) = self.check_header() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        let line_no = self.line + 1;
        match self.read_line() {
            Ok(None) => None,
            Ok(Some(text)) => {
                let text = text.to_string();
                let res = parse_event_line(line_no, &text);
                if res.is_err() {
                    self.failed = true;
                }
                Some(res)
            }
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Decodes a full in-memory trace. Streaming callers should use
/// [`TraceReader`] directly.
pub fn decode_trace(bytes: &[u8]) -> Result<Vec<TraceEvent>, TraceError> {
    TraceReader::new(bytes).collect()
}

/// Writes the header line followed by one event per line.
pub struct TraceWriter<W: Write> {
    inner: W,
    index: usize,
    header_written: bool,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(inner: W) -> TraceWriter<W> {
        TraceWriter {
            inner,
            index: 0,
            header_written: false,
        }
    }

    fn write_header(&mut self) -> Result<(), TraceError> {
        writeln!(
            self.inner,
            "{{\"schema\":\"{TRACE_SCHEMA}\",\"version\":{TRACE_VERSION}}}"
        )?;
        self.header_written = true;
        Ok(())
    }

    pub fn write_event(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        if !self.header_written {
            self.write_header()?;
        }
        event
            .validate()
            .map_err(|reason| TraceError::InvalidEvent {
                index: self.index,
                reason,
            })?;
        match event {
            TraceEvent::Block(b) => writeln!(
                self.inner,
                "{{\"ev\":\"block\",\"start\":\"{}\",\"n\":{},\"term\":\"{}\",\"target\":\"{}\"}}",
                b.start,
                b.instr_count,
                b.terminator.as_str(),
                b.target
            )?,
            TraceEvent::ImageLoad { name, start, end } => writeln!(
                self.inner,
                "{{\"ev\":\"img+\",\"name\":{},\"start\":\"{}\",\"end\":\"{}\"}}",
                serde_json::to_string(name).expect("string serialization"),
                start,
                end
            )?,
            TraceEvent::ImageUnload { name, start } => writeln!(
                self.inner,
                "{{\"ev\":\"img-\",\"name\":{},\"start\":\"{}\"}}",
                serde_json::to_string(name).expect("string serialization"),
                start
            )?,
            TraceEvent::AllocCall => writeln!(self.inner, "{{\"ev\":\"alloc\"}}")?,
            TraceEvent::UsageReport { top } => {
                writeln!(self.inner, "{{\"ev\":\"usage\",\"top\":\"{top}\"}}")?
            }
        }
        self.index += 1;
        Ok(())
    }

    /// Flushes and hands back the underlying writer. An empty trace still
    /// gets its header line.
    pub fn finish(mut self) -> Result<W, TraceError> {
        if !self.header_written {
            self.write_header()?;
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Encodes events to bytes; `decode_trace(encode_trace(x)) == x`.
pub fn encode_trace(events: &[TraceEvent]) -> Result<Vec<u8>, TraceError> {
    let mut w = TraceWriter::new(Vec::new());
    for ev in events {
        w.write_event(ev)?;
    }
    w.finish()
}
