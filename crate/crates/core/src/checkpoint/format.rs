//! On-disk checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes   "WSCAPE\r\n"
//! version        u32       FORMAT_VERSION
//! manifest_len   u64       byte length of the manifest text
//! manifest       UTF-8     one record per line:
//!                            meta <key> <value>
//!                            entry <name> <block> <kind> f32 <d0>x<d1>x... <offset> <count>
//! payload        f32 LE    entries back to back in manifest order
//! checksum       u64       FNV-1a 64 of the payload bytes
//! ```
//!
//! Offsets are relative to the payload start and must be contiguous.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Checkpoint, CheckpointError, Entry};
use crate::rng::{fnv1a64, fnv1a64_extend};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"WSCAPE\r\n";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;

fn manifest_text(ck: &Checkpoint) -> String {
    let mut text = String::new();
    for (k, v) in &ck.metadata {
        text.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0usize;
    for e in &ck.entries {
        let dims: Vec<String> = e.tensor.shape().iter().map(ToString::to_string).collect();
        let count = e.tensor.numel();
        text.push_str(&format!(
            "entry {} {} {} f32 {} {} {}\n",
            e.name,
            e.block,
            e.kind,
            dims.join("x"),
            offset,
            count
        ));
        offset += count * 4;
    }
    text
}

pub(super) fn payload_checksum(ck: &Checkpoint) -> u64 {
    let mut h = fnv1a64(b"");
    for e in &ck.entries {
        for v in e.tensor.data() {
            h = fnv1a64_extend(h, &v.to_le_bytes());
        }
    }
    h
}

/// Serializes a checkpoint to its exact file bytes.
pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let manifest = manifest_text(ck);
    let payload_len = ck.parameter_count() * 4;
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + payload_len + 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    let payload_start = out.len();
    for e in &ck.entries {
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out[payload_start..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Writes via a sibling temporary file so readers never observe a partial file.
pub fn save(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let bytes = to_bytes(ck);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    load_bytes(&fs::read(path)?)
}

struct Record {
    name: String,
    block: crate::manifest::BlockId,
    kind: crate::manifest::ParamKind,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

fn parse_entry(fields: &[&str], line_no: usize) -> Result<Record, CheckpointError> {
    let bad = |what: &str| CheckpointError::Manifest(format!("line {line_no}: {what}"));
    let [name, block, kind, dtype, shape, offset, count] = fields else {
        return Err(bad("entry record needs 7 fields"));
    };
    if *dtype != "f32" {
        return Err(bad(&format!("unsupported dtype `{dtype}`")));
    }
    let shape = shape
        .split('x')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad(&format!("bad shape `{shape}`")))?;
    Ok(Record {
        name: name.to_string(),
        block: block.parse().map_err(|e| bad(&format!("{e}")))?,
        kind: kind.parse().map_err(|e| bad(&format!("{e}")))?,
        shape,
        offset: offset.parse().map_err(|_| bad("bad offset"))?,
        count: count.parse().map_err(|_| bad("bad count"))?,
    })
}

/// Parses file bytes. Nothing is returned unless the whole file validates.
pub fn load_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            entry: "header".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let manifest_end = usize::try_from(manifest_len)
        .ok()
        .and_then(|l| HEADER_LEN.checked_add(l))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| CheckpointError::Truncated {
            entry: "manifest".into(),
        })?;
    let manifest = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end])
        .map_err(|_| CheckpointError::Manifest("manifest is not UTF-8".into()))?;

    let mut metadata = Vec::new();
    let mut records = Vec::new();
    let mut expected_offset = 0usize;
    for (i, line) in manifest.lines().enumerate() {
        let line_no = i + 1;
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            metadata.push((k.to_string(), v.to_string()));
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.first() != Some(&"entry") {
            return Err(CheckpointError::Manifest(format!(
                "line {line_no}: unknown record"
            )));
        }
        let rec = parse_entry(&fields[1..], line_no)?;
        let numel = rec.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if numel != Some(rec.count) {
            return Err(CheckpointError::Manifest(format!(
                "line {line_no}: count {} disagrees with shape {:?}",
                rec.count, rec.shape
            )));
        }
        if rec.offset != expected_offset {
            return Err(CheckpointError::Manifest(format!(
                "line {line_no}: offset {} is not contiguous (expected {expected_offset})",
                rec.offset
            )));
        }
        expected_offset = rec
            .count
            .checked_mul(4)
            .and_then(|b| expected_offset.checked_add(b))
            .ok_or_else(|| CheckpointError::Manifest(format!("line {line_no}: size overflow")))?;
        records.push(rec);
    }

    let payload = &bytes[manifest_end..];
    for rec in &records {
        if rec.offset + rec.count * 4 > payload.len() {
            return Err(CheckpointError::Truncated {
                entry: rec.name.clone(),
            });
        }
    }
    if payload.len() < expected_offset + 8 {
        return Err(CheckpointError::Truncated {
            entry: "checksum".into(),
        });
    }
    if payload.len() > expected_offset + 8 {
        return Err(CheckpointError::Manifest(format!(
            "{} trailing bytes after checksum",
            payload.len() - expected_offset - 8
        )));
    }
    let body = &payload[..expected_offset];
    let stored = u64::from_le_bytes(payload[expected_offset..].try_into().expect("8 bytes"));
    let computed = fnv1a64(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let data = body[rec.offset..rec.offset + rec.count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(rec.shape, data)
            .map_err(|e| CheckpointError::Manifest(format!("{}: {e}", rec.name)))?;
        entries.push(Entry {
            name: rec.name,
            block: rec.block,
            kind: rec.kind,
            tensor,
        });
    }
    Checkpoint::new(entries, metadata)
}
