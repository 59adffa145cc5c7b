//! Shot archives: line-delimited JSON.
//!
//! The first line is the header. It embeds the generating configuration as
//! TOML together with its SHA-256, the record count, and the SHA-256 of every
//! byte that follows the header line. Each further line is one
//! [`ShotRecord`]. Floats are written in shortest round-trip form, so reading
//! an archive gives back bit-identical records.
//!
//! Nothing time- or host-dependent is stored. Two runs with the same config
//! therefore produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::error::{Error, Result};
use crate::simulator::ShotRecord;

pub const ARCHIVE_FORMAT: &str = "qmit-shot-archive";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveHeader {
    pub format: String,
    pub version: u32,
    pub generator: String,
    pub config_toml: String,
    pub config_hash: String,
    pub record_count: usize,
    pub bins_per_record: usize,
    pub record_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotArchive {
    pub header: ArchiveHeader,
    pub config: RunConfig,
    pub records: Vec<ShotRecord>,
}

fn encode_records(records: &[ShotRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Serialization(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn corrupted(msg: impl Into<String>) -> Error {
    Error::CorruptedArchive(msg.into())
}

impl ShotArchive {
    pub fn new(config: &RunConfig, records: Vec<ShotRecord>) -> Result<Self> {
        let bins = records.first().map_or(0, |r| r.q_b_bins.len());
        if records.iter().any(|r| r.q_b_bins.len() != bins) {
            return Err(Error::invalid("records", "all records must have the same number of bins"));
        }
        let config_toml = config.to_toml_string()?;
        let header = ArchiveHeader {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            generator: concat!("qmit ", env!("CARGO_PKG_VERSION")).into(),
            config_hash: sha256_hex(config_toml.as_bytes()),
            config_toml,
            record_count: records.len(),
            bins_per_record: bins,
            record_checksum: sha256_hex(&encode_records(&records)?),
        };
        Ok(Self {
            header,
            config: config.clone(),
            records,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header).map_err(|e| Error::Serialization(e.to_string()))?;
        out.push(b'\n');
        out.extend(encode_records(&self.records)?);
        Ok(out)
    }

    /// Parses and verifies an archive.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupted("missing header line"))?;
        let (head, body) = (&bytes[..split], &bytes[split + 1..]);

        // check the version before insisting on the current header layout
        let raw: serde_json::Value =
            serde_json::from_slice(head).map_err(|e| corrupted(format!("unreadable header: {e}")))?;
        if raw.get("format").and_then(|f| f.as_str()) != Some(ARCHIVE_FORMAT) {
            return Err(corrupted("not a shot archive"));
        }
        let version = raw
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| corrupted("header has no version"))?;
        if version != u64::from(ARCHIVE_VERSION) {
            return Err(Error::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: ARCHIVE_VERSION,
            });
        }
        let header: ArchiveHeader =
            serde_json::from_value(raw).map_err(|e| corrupted(format!("malformed header: {e}")))?;

        if sha256_hex(body) != header.record_checksum {
            return Err(corrupted("record checksum mismatch"));
        }
        if sha256_hex(header.config_toml.as_bytes()) != header.config_hash {
            return Err(corrupted("config hash mismatch"));
        }
        let config = RunConfig::from_toml_str(&header.config_toml)?;

        let text = std::str::from_utf8(body).map_err(|_| corrupted("records are not UTF-8"))?;
        let records = text
            .lines()
            .enumerate()
            .map(|(i, line)| {
                let r: ShotRecord =
                    serde_json::from_str(line).map_err(|e| corrupted(format!("record {i}: {e}")))?;
                if r.q_b_bins.len() != header.bins_per_record {
                    return Err(corrupted(format!("record {i} has {} bins", r.q_b_bins.len())));
                }
                if r.q_b_bins.iter().sum::<f64>() != r.q_b {
                    return Err(corrupted(format!("record {i}: bins do not add up to q_b")));
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        if records.len() != header.record_count {
            return Err(corrupted(format!(
                "header declares {} records, found {}",
                header.record_count,
                records.len()
            )));
        }
        Ok(Self {
            header,
            config,
            records,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
