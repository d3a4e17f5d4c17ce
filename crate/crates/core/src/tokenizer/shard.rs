//! Token shard files plus their manifest.
//!
//! A shard is a flat binary file: the magic `CPSHARD1`, a little-endian
//! u32 piece count, then per piece a u32 token count followed by that
//! many records of five little-endian u16s: (bar flag, position, pitch,
//! duration, bar index). Values are semantic (pitch 22..=107 etc.), not
//! embedding ids. The manifest is JSON carrying piece ids, per-piece note
//! counts and a SHA-256 checksum of the shard bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CpToken;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 8] = b"CPSHARD1";

/// A whole piece's clean token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub id: String,
    pub tokens: Vec<(CpToken, u32)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub n_notes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub pieces: Vec<ManifestEntry>,
    pub checksum: String,
}

/// Encode pieces into shard bytes.
pub fn encode_shard(pieces: &[Piece]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend((pieces.len() as u32).to_le_bytes());
    for p in pieces {
        out.extend((p.tokens.len() as u32).to_le_bytes());
        for (t, bar) in &p.tokens {
            if *bar > u16::MAX as u32 {
                return Err(CoreError::Shard(format!(
                    "piece {}: bar index {bar} exceeds u16",
                    p.id
                )));
            }
            for v in [
                t.bar_flag as u16,
                t.position as u16,
                t.pitch as u16,
                t.duration as u16,
                *bar as u16,
            ] {
                out.extend(v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_shard(bytes: &[u8], ids: &[String]) -> Result<Vec<Piece>> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CoreError::Shard("truncated shard".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 8)? != MAGIC {
        return Err(CoreError::Shard("bad shard magic".into()));
    }
    let n_pieces = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if n_pieces != ids.len() {
        return Err(CoreError::Shard(format!(
            "shard has {n_pieces} pieces but manifest lists {}",
            ids.len()
        )));
    }

    let mut pieces = Vec::with_capacity(n_pieces);
    for id in ids {
        let n_tokens = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let rec = take(&mut pos, 10)?;
            let u = |i: usize| u16::from_le_bytes([rec[2 * i], rec[2 * i + 1]]);
            let token = CpToken::new(u(0) as u8, u(1) as u8, u(2) as u8, u(3) as u8)
                .map_err(|e| CoreError::Shard(format!("piece {id}: {e}")))?;
            tokens.push((token, u(4) as u32));
        }
        pieces.push(Piece { id: id.clone(), tokens });
    }
    if pos != bytes.len() {
        return Err(CoreError::Shard("trailing bytes after last piece".into()));
    }
    Ok(pieces)
}

pub fn checksum(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Write the shard file; returns the manifest describing it.
pub fn write_shard(path: &Path, pieces: &[Piece]) -> Result<Manifest> {
    let bytes = encode_shard(pieces)?;
    fs::write(path, &bytes)?;
    Ok(Manifest {
        pieces: pieces
            .iter()
            .map(|p| ManifestEntry { id: p.id.clone(), n_notes: p.tokens.len() })
            .collect(),
        checksum: checksum(&bytes),
    })
}

/// Read a shard file, verifying it against its manifest.
pub fn read_shard(path: &Path, manifest: &Manifest) -> Result<Vec<Piece>> {
    let bytes = fs::read(path)?;
    if checksum(&bytes) != manifest.checksum {
        return Err(CoreError::Shard(format!(
            "checksum mismatch for {}",
            path.display()
        )));
    }
    let ids: Vec<String> = manifest.pieces.iter().map(|e| e.id.clone()).collect();
    let pieces = decode_shard(&bytes, &ids)?;
    for (p, e) in pieces.iter().zip(&manifest.pieces) {
        if p.tokens.len() != e.n_notes {
            return Err(CoreError::Shard(format!(
                "piece {}: {} tokens but manifest says {}",
                p.id,
                p.tokens.len(),
                e.n_notes
            )));
        }
    }
    Ok(pieces)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
