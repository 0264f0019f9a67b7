//! JSONL I/O traces used as workloads for fault injection and ransomware
//! replay.
//!
//! One record per line:
//!
//! ```text
//! {"seq":0,"time_ns":0,"op":"write","lba":7,"len_blocks":1,"data":"<base64>"}
//! {"seq":1,"time_ns":500,"op":"write","lba":8,"len_blocks":1,"sha256":"<hex>"}
//! {"seq":2,"time_ns":900,"op":"read","lba":7,"len_blocks":1}
//! ```
//!
//! Writes carry either the inline payload or only its digest. Digest-only
//! writes replay a pseudo-random payload derived from the digest, so they
//! look like high-entropy data to the monitor.

use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::api::{Csd, HostBuffer, Source};
use crate::device::PathKind;
use crate::error::{Error, Result};
use crate::fault::{digest, IoOp};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoTraceRecord {
    pub seq: u64,
    pub time_ns: u64,
    pub op: IoOp,
    pub lba: u64,
    pub len_blocks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

impl IoTraceRecord {
    pub fn read(seq: u64, time_ns: u64, lba: u64, len_blocks: u64) -> Self {
        IoTraceRecord {
            seq,
            time_ns,
            op: IoOp::Read,
            lba,
            len_blocks,
            data: None,
            sha256: None,
        }
    }

    pub fn write_inline(
        seq: u64,
        time_ns: u64,
        lba: u64,
        payload: &[u8],
        block_size: usize,
    ) -> Self {
        IoTraceRecord {
            seq,
            time_ns,
            op: IoOp::Write,
            lba,
            len_blocks: payload.len().div_ceil(block_size) as u64,
            data: Some(B64.encode(payload)),
            sha256: None,
        }
    }

    pub fn write_digest(
        seq: u64,
        time_ns: u64,
        lba: u64,
        payload: &[u8],
        block_size: usize,
    ) -> Self {
        IoTraceRecord {
            seq,
            time_ns,
            op: IoOp::Write,
            lba,
            len_blocks: payload.len().div_ceil(block_size) as u64,
            data: None,
            sha256: Some(hex::encode(digest(payload))),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.len_blocks == 0 {
            return Err("len_blocks must be at least 1".into());
        }
        match (self.op, &self.data, &self.sha256) {
            (IoOp::Read, None, None) => Ok(()),
            (IoOp::Read, _, _) => Err("read records carry no payload".into()),
            (IoOp::Write, Some(_), None) | (IoOp::Write, None, Some(_)) => Ok(()),
            (IoOp::Write, _, _) => Err("write records need exactly one of data or sha256".into()),
        }
    }

    /// Bytes written by this record, padded with zeros to whole blocks.
    pub fn payload(&self, block_size: usize) -> Result<Vec<u8>> {
        let len = self.len_blocks as usize * block_size;
        let bad = |reason: String| Error::Parse {
            line: self.seq as usize + 1,
            reason,
        };
        match (&self.data, &self.sha256) {
            (Some(d), _) => {
                let mut p = B64
                    .decode(d)
                    .map_err(|e| bad(format!("seq {}: bad base64: {e}", self.seq)))?;
                if p.len() > len {
                    return Err(bad(format!(
                        "seq {}: payload of {} bytes exceeds {len}",
                        self.seq,
                        p.len()
                    )));
                }
                p.resize(len, 0);
                Ok(p)
            }
            (None, Some(h)) => {
                let mut seed = [0u8; 32];
                hex::decode_to_slice(h, &mut seed)
                    .map_err(|e| bad(format!("seq {}: bad sha256: {e}", self.seq)))?;
                let mut p = vec![0u8; len];
                ChaCha8Rng::from_seed(seed).fill_bytes(&mut p);
                Ok(p)
            }
            (None, None) => Err(bad(format!("seq {}: read record has no payload", self.seq))),
        }
    }
}

/// Parses a JSONL trace. Errors carry 1-based line numbers; blank lines are
/// skipped.
pub fn parse_trace(text: &str) -> Result<Vec<IoTraceRecord>> {
    let mut out: Vec<IoTraceRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IoTraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        rec.check().map_err(|reason| Error::Parse {
            line: line_no,
            reason,
        })?;
        if let Some(prev) = out.last() {
            if rec.seq <= prev.seq {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("seq {} does not follow {}", rec.seq, prev.seq),
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_trace(path: &Path) -> Result<Vec<IoTraceRecord>> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn write_trace<W: Write>(records: &[IoTraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub reads: u64,
    pub writes: u64,
    /// Records whose command failed, with the error text.
    pub failed: Vec<(u64, String)>,
}

/// Replays `records` against `csd` over the host path. A record starts at
/// its `time_ns` or when the previous command finishes, whichever is later. Device errors are collected, not fatal.
pub fn replay(csd: &Csd, records: &[IoTraceRecord]) -> Result<ReplayOutcome> {
    let bs = csd.block_size();
    let mut out = ReplayOutcome::default();
    for r in records {
        csd.advance_to(SimTime::from_nanos(r.time_ns));
        let lbas = r.lba..r.lba + r.len_blocks;
        let res = match r.op {
            IoOp::Read => {
                out.reads += 1;
                csd.load_to_host(lbas).map(|_| ())
            }
            IoOp::Write => {
                out.writes += 1;
                let p = HostBuffer::new(r.payload(bs)?);
                csd.store_to_flash(Source::Host(&p), lbas, PathKind::HostMediated)
                    .map(|_| ())
            }
        };
        match res {
            Ok(()) => {}
            Err(e) if e.is_io() => return Err(e),
            Err(e) => out.failed.push((r.seq, e.to_string())),
        }
    }
    Ok(out)
}

/// Sequential writes of low-entropy text-like blocks to fresh LBAs.
pub fn benign_trace(
    records: usize,
    start_lba: u64,
    block_size: usize,
    gap_ns: u64,
) -> Vec<IoTraceRecord> {
    (0..records as u64)
        .map(|i| {
            let line = format!("log entry {i:08}: status ok\n");
            let payload: Vec<u8> = line.bytes().cycle().take(block_size).collect();
            IoTraceRecord::write_inline(i, i * gap_ns, start_lba + i, &payload, block_size)
        })
        .collect()
}

/// Populates `blocks` LBAs with benign content, then reads each one and
/// immediately overwrites it with uniform random bytes. Returns the trace
/// and the sequence number of the first attack record.
pub fn attack_trace(
    blocks: u64,
    block_size: usize,
    gap_ns: u64,
    seed: u64,
) -> (Vec<IoTraceRecord>, u64) {
    let mut out = benign_trace(blocks as usize, 0, block_size, gap_ns);
    let onset = out.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut payload = vec![0u8; block_size];
    for lba in 0..blocks {
        let seq = out.len() as u64;
        out.push(IoTraceRecord::read(seq, seq * gap_ns, lba, 1));
        rng.fill_bytes(&mut payload);
        out.push(IoTraceRecord::write_inline(
            seq + 1,
            (seq + 1) * gap_ns,
            lba,
            &payload,
            block_size,
        ));
    }
    (out, onset)
}
