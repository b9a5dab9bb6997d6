//! Tag stream files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "TTAG"
//!      4     2  version (1)
//!      6     2  reserved (0)
//!      8     8  duration_ps
//!     16     8  rep_period_ps
//!     24     8  tag_count
//!     32   9·n  records: channel u8, t_ps u64
//! ```
//!
//! The text form has `#` header lines followed by `channel,t_ps` rows.

use std::fmt::Write as _;
use std::path::Path;

use hbt_core::sequence::GateDescriptor;
use hbt_core::tagstream::{first_unsorted, StreamHeader, TagStream, TimeTag, CH1, CH2};

use crate::error::{CliError, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"TTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Binary,
    Text,
}

/// A stream that cannot be written, with the position of the problem.
fn refuse(stream: &TagStream) -> Result<()> {
    if let Some(index) = first_unsorted(&stream.tags) {
        return Err(hbt_core::Error::Unsorted { index }.into());
    }
    stream.validate()?;
    Ok(())
}

pub fn encode_binary(stream: &TagStream) -> Result<Vec<u8>> {
    refuse(stream)?;
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.tags.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&stream.header.duration_ps.to_le_bytes());
    out.extend_from_slice(&stream.header.rep_period_ps.to_le_bytes());
    out.extend_from_slice(&(stream.tags.len() as u64).to_le_bytes());
    for tag in &stream.tags {
        out.push(tag.channel);
        out.extend_from_slice(&tag.t_ps.to_le_bytes());
    }
    Ok(out)
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

/// Parses a binary stream; `path` only labels errors.
pub fn decode_binary(bytes: &[u8], path: &Path) -> Result<TagStream> {
    let err = |offset: usize, message: String| CliError::Parse { path: path.to_owned(), offset: offset as u64, message };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "bad magic, expected \"TTAG\"".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let duration_ps = u64_at(bytes, 8);
    let rep_period_ps = u64_at(bytes, 16);
    let count = u64_at(bytes, 24);
    if rep_period_ps == 0 {
        return Err(err(16, "repetition period is zero".into()));
    }
    let body = bytes.len() - HEADER_LEN;
    let full = body / RECORD_LEN;
    if (full as u64) < count {
        return Err(err(HEADER_LEN + full * RECORD_LEN, format!("truncated record: header announces {count} tags, file holds {full}")));
    }
    if (full as u64) > count || body % RECORD_LEN != 0 {
        return Err(err(HEADER_LEN + count as usize * RECORD_LEN, "trailing bytes after the last record".into()));
    }
    let mut tags = Vec::with_capacity(full);
    let mut prev: Option<TimeTag> = None;
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let at = HEADER_LEN + i * RECORD_LEN;
        let tag = TimeTag::new(rec[0], u64_at(rec, 1));
        if tag.channel != CH1 && tag.channel != CH2 {
            return Err(err(at, format!("channel {} is not 1 or 2", tag.channel)));
        }
        if tag.t_ps >= duration_ps {
            return Err(err(at + 1, format!("t_ps {} is not below duration {duration_ps}", tag.t_ps)));
        }
        if prev.is_some_and(|p| tag < p) {
            return Err(err(at, format!("unsorted tag at index {i}")));
        }
        prev = Some(tag);
        tags.push(tag);
    }
    Ok(TagStream { header: StreamHeader { duration_ps, rep_period_ps, ..Default::default() }, tags })
}

pub fn encode_text(stream: &TagStream) -> Result<Vec<u8>> {
    refuse(stream)?;
    let h = &stream.header;
    let mut s = String::with_capacity(64 + 16 * stream.tags.len());
    writeln!(s, "# photon-hbt tag stream v{VERSION}").unwrap();
    writeln!(s, "# duration_ps={}", h.duration_ps).unwrap();
    writeln!(s, "# rep_period_ps={}", h.rep_period_ps).unwrap();
    if let Some(seed) = h.seed {
        writeln!(s, "# seed={seed}").unwrap();
    }
    if let Some(g) = h.gate {
        writeln!(s, "# gate_start_ps={}", g.start_ps).unwrap();
        writeln!(s, "# gate_width_ps={}", g.width_ps).unwrap();
    }
    s.push_str("channel,t_ps\n");
    for t in &stream.tags {
        writeln!(s, "{},{}", t.channel, t.t_ps).unwrap();
    }
    Ok(s.into_bytes())
}

pub fn decode_text(bytes: &[u8], path: &Path) -> Result<TagStream> {
    let err = |offset: usize, message: String| CliError::Parse { path: path.to_owned(), offset: offset as u64, message };
    let text = std::str::from_utf8(bytes).map_err(|e| err(e.valid_up_to(), "not valid UTF-8".into()))?;
    let mut header = StreamHeader::default();
    let (mut gate_start, mut gate_width) = (None, None);
    let mut seen_columns = false;
    let mut tags = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((key, value)) = meta.trim().split_once('=') {
                let v: u64 = value.trim().parse().map_err(|_| err(at, format!("bad header value `{value}`")))?;
                match key.trim() {
                    "duration_ps" => header.duration_ps = v,
                    "rep_period_ps" => header.rep_period_ps = v,
                    "seed" => header.seed = Some(v),
                    "gate_start_ps" => gate_start = Some(v),
                    "gate_width_ps" => gate_width = Some(v),
                    other => return Err(err(at, format!("unknown header key `{other}`"))),
                }
            }
            continue;
        }
        if !seen_columns {
            if line != "channel,t_ps" {
                return Err(err(at, "expected column line `channel,t_ps`".into()));
            }
            seen_columns = true;
            continue;
        }
        let (c, t) = line.split_once(',').ok_or_else(|| err(at, "expected `channel,t_ps`".into()))?;
        let channel: u8 = c.trim().parse().map_err(|_| err(at, format!("bad channel `{c}`")))?;
        let t_ps: u64 = t.trim().parse().map_err(|_| err(at, format!("bad time `{t}`")))?;
        if channel != CH1 && channel != CH2 {
            return Err(err(at, format!("channel {channel} is not 1 or 2")));
        }
        if t_ps >= header.duration_ps {
            return Err(err(at, format!("t_ps {t_ps} is not below duration {}", header.duration_ps)));
        }
        let tag = TimeTag::new(channel, t_ps);
        if tags.last().is_some_and(|&p| tag < p) {
            return Err(err(at, format!("unsorted tag at index {}", tags.len())));
        }
        tags.push(tag);
    }
    if header.rep_period_ps == 0 {
        return Err(err(0, "missing or zero rep_period_ps header".into()));
    }
    if let (Some(start_ps), Some(width_ps)) = (gate_start, gate_width) {
        header.gate = Some(GateDescriptor { start_ps, width_ps });
    }
    Ok(TagStream { header, tags })
}

pub fn encode(stream: &TagStream, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Binary => encode_binary(stream),
        Format::Text => encode_text(stream),
    }
}

/// Reads either format, telling them apart by the magic bytes.
pub fn read_stream(path: &Path) -> Result<TagStream> {
    let bytes = fsio::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, path)
    } else if bytes.starts_with(b"#") || bytes.starts_with(b"channel") {
        decode_text(&bytes, path)
    } else {
        decode_binary(&bytes, path)
    }
}

/// Encodes and writes atomically; returns the bytes written.
pub fn write_stream(path: &Path, stream: &TagStream, format: Format) -> Result<Vec<u8>> {
    let bytes = encode(stream, format)?;
    fsio::write_atomic(path, &bytes)?;
    Ok(bytes)
}
