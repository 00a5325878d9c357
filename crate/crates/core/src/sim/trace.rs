//! Access traces.
//!
//! CSV: header `op,va,size` with an optional fourth column named either
//! `payload_hex` (bytes written) or `size_class` (new class of the entry,
//! size-trace mode). `op` is `R`/`W`, `va` is hexadecimal, `size` decimal.
//!
//! Binary: packed little-endian records `{u8 op, u64 va, u32 size}` with op 0
//! for reads and 1 for writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codec::SizeClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum WriteData {
    /// No payload: the simulator perturbs the stored bytes.
    #[default]
    Perturb,
    Payload(Vec<u8>),
    /// Size-trace mode: the entry's new class is given directly.
    Class(SizeClass),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub op: Op,
    pub va: u64,
    pub size_bytes: u32,
    pub data: WriteData,
}

impl TraceEvent {
    pub fn read(va: u64, size_bytes: u32) -> Self {
        Self {
            op: Op::Read,
            va,
            size_bytes,
            data: WriteData::Perturb,
        }
    }

    pub fn write(va: u64, size_bytes: u32, data: WriteData) -> Self {
        Self {
            op: Op::Write,
            va,
            size_bytes,
            data,
        }
    }
}

const BINARY_RECORD: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Extra {
    None,
    Payload,
    Class,
}

fn parse_va(s: &str) -> Option<u64> {
    let s = s.trim();
    let s = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u64::from_str_radix(s, 16).ok()
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Trace {
        line: 1,
        reason: e.to_string(),
    })?;
    let names: Vec<&str> = headers.iter().collect();
    let extra = match names.as_slice() {
        ["op", "va", "size"] => Extra::None,
        ["op", "va", "size", "payload_hex"] => Extra::Payload,
        ["op", "va", "size", "size_class"] => Extra::Class,
        _ => {
            return Err(Error::Trace {
                line: 1,
                reason: format!("unexpected header {names:?}"),
            })
        }
    };

    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Trace {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::Trace { line, reason };
        if rec.len() < 3 || rec.len() > 4 {
            return Err(bad(format!("expected 3 or 4 fields, got {}", rec.len())));
        }
        let op = match rec[0].to_ascii_lowercase().as_str() {
            "r" | "read" => Op::Read,
            "w" | "write" => Op::Write,
            other => return Err(bad(format!("unknown op {other:?}"))),
        };
        let va = parse_va(&rec[1]).ok_or_else(|| bad(format!("bad address {:?}", &rec[1])))?;
        let size_bytes: u32 = rec[2]
            .parse()
            .map_err(|_| bad(format!("bad size {:?}", &rec[2])))?;
        if size_bytes == 0 {
            return Err(bad("access size must be positive".into()));
        }
        let field = rec.get(3).unwrap_or("");
        let data = match (extra, field.is_empty()) {
            (_, true) | (Extra::None, _) => WriteData::Perturb,
            (Extra::Payload, false) => {
                let bytes = hex::decode(field).map_err(|e| bad(format!("bad payload: {e}")))?;
                if bytes.len() != size_bytes as usize {
                    return Err(bad(format!(
                        "payload has {} bytes, access size is {size_bytes}",
                        bytes.len()
                    )));
                }
                WriteData::Payload(bytes)
            }
            (Extra::Class, false) => WriteData::Class(field.parse().map_err(|e: Error| bad(e.to_string()))?),
        };
        if op == Op::Read && data != WriteData::Perturb {
            return Err(bad("reads carry no payload or size class".into()));
        }
        events.push(TraceEvent {
            op,
            va,
            size_bytes,
            data,
        });
    }
    Ok(events)
}

pub fn parse_binary(bytes: &[u8]) -> Result<Vec<TraceEvent>> {
    if !bytes.len().is_multiple_of(BINARY_RECORD) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % BINARY_RECORD) as u64,
            reason: "truncated trace record".into(),
        });
    }
    bytes
        .chunks_exact(BINARY_RECORD)
        .enumerate()
        .map(|(i, r)| {
            let offset = (i * BINARY_RECORD) as u64;
            let op = match r[0] {
                0 => Op::Read,
                1 => Op::Write,
                x => {
                    return Err(Error::Format {
                        offset,
                        reason: format!("bad op byte {x}"),
                    })
                }
            };
            let va = u64::from_le_bytes(r[1..9].try_into().unwrap());
            let size_bytes = u32::from_le_bytes(r[9..13].try_into().unwrap());
            if size_bytes == 0 {
                return Err(Error::Format {
                    offset: offset + 9,
                    reason: "access size must be positive".into(),
                });
            }
            Ok(TraceEvent {
                op,
                va,
                size_bytes,
                data: WriteData::Perturb,
            })
        })
        .collect()
}

pub fn to_binary(events: &[TraceEvent]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * BINARY_RECORD);
    for e in events {
        out.push(match e.op {
            Op::Read => 0,
            Op::Write => 1,
        });
        out.extend_from_slice(&e.va.to_le_bytes());
        out.extend_from_slice(&e.size_bytes.to_le_bytes());
    }
    out
}

pub fn to_csv(events: &[TraceEvent]) -> Result<String> {
    let has_payload = events.iter().any(|e| matches!(e.data, WriteData::Payload(_)));
    let has_class = events.iter().any(|e| matches!(e.data, WriteData::Class(_)));
    if has_payload && has_class {
        return Err(Error::Validation(
            "a trace carries either payloads or size classes, not both".into(),
        ));
    }
    let mut out = String::from(match (has_payload, has_class) {
        (true, _) => "op,va,size,payload_hex\n",
        (_, true) => "op,va,size,size_class\n",
        _ => "op,va,size\n",
    });
    for e in events {
        let op = match e.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        let extra = match &e.data {
            WriteData::Perturb if has_payload || has_class => ",".to_string(),
            WriteData::Perturb => String::new(),
            WriteData::Payload(p) => format!(",{}", hex::encode(p)),
            WriteData::Class(c) => format!(",{c}"),
        };
        out.push_str(&format!("{op},{:#x},{}{extra}\n", e.va, e.size_bytes));
    }
    Ok(out)
}

/// Reads a trace file, choosing CSV when it starts with the `op,` header.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"op,") {
        let text = String::from_utf8(bytes).map_err(|e| Error::Trace {
            line: 0,
            reason: e.to_string(),
        })?;
        parse_csv(&text)
    } else {
        parse_binary(&bytes)
    }
}

pub fn write_trace_csv(events: &[TraceEvent], path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_csv(events)?.as_bytes())?;
    Ok(())
}
