//! Canonical tensor container shared by movie, aggregated-movie and
//! cluster files: a 64-byte magic/version block, a JSON header and a raw
//! little-endian payload.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FCDTENSR";
const VERSION: u32 = 1;
const FIXED_HEADER_LEN: usize = 64;

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn write_container<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let header_json = serde_json::to_vec(header).map_err(|e| Error::json(path, e))?;
    let mut bytes = Vec::with_capacity(FIXED_HEADER_LEN + header_json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    bytes.resize(FIXED_HEADER_LEN, 0);
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(payload);
    atomic_write(path, &bytes)
}

pub(crate) fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::BadHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(bad("file shorter than the fixed 64-byte header"));
    }
    if &bytes[0..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let payload_start = FIXED_HEADER_LEN + header_len;
    if bytes.len() < payload_start {
        return Err(bad("json header truncated"));
    }
    let header: H = serde_json::from_slice(&bytes[FIXED_HEADER_LEN..payload_start])
        .map_err(|e| Error::json(path, e))?;
    let payload = bytes[payload_start..].to_vec();
    if payload.len() != payload_len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: payload_len,
            got: payload.len(),
        });
    }
    Ok((header, payload))
}
