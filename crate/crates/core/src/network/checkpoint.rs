//! Binary checkpoint format.
//!
//! ```text
//! "NKDM"                      magic
//! u32                         format version
//! u32 + UTF-8                 model configuration (key = value lines)
//! u32 + UTF-8                 vocabulary (one entry per line)
//! u32                         number of arrays
//! per array:
//!   u32 + UTF-8               name
//!   u32                       rank
//!   u32 × rank                dims
//!   f32 × prod(dims)          row-major values
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, NetworkError, Parameters};
use crate::corpus::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NKDM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn write_checkpoint(
    w: &mut impl Write,
    params: &Parameters,
    config: &ModelConfig,
    vocab: &Vocabulary,
) -> Result<(), NetworkError> {
    let mut out = Vec::with_capacity(params.num_values() * 4 + 4096);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &config.to_text());
    put_str(&mut out, &vocab.to_text());
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_str(&mut out, &t.name);
        put_u32(&mut out, t.dims.len() as u32);
        for &d in &t.dims {
            put_u32(&mut out, d as u32);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

/// Writes to a sibling temporary file and renames it into place, so an
/// existing checkpoint is only replaced by a complete one.
pub fn save_checkpoint(
    path: &Path,
    params: &Parameters,
    config: &ModelConfig,
    vocab: &Vocabulary,
) -> Result<(), NetworkError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_checkpoint(&mut f, params, config, vocab)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NetworkError::CorruptCheckpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<&'a str, NetworkError> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|e| NetworkError::CorruptCheckpoint(e.to_string()))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Parameters, ModelConfig, Vocabulary), NetworkError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, at: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(NetworkError::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetworkError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = ModelConfig::from_text(c.string()?).map_err(|e| NetworkError::CorruptCheckpoint(e.to_string()))?;
    let vocab = Vocabulary::from_text(c.string()?).map_err(NetworkError::CorruptCheckpoint)?;
    if vocab.len() != config.vocab_size {
        return Err(NetworkError::CorruptCheckpoint(format!(
            "vocabulary has {} entries, configuration says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut params = Parameters::zeros(&config);
    let count = c.u32()? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(NetworkError::CorruptCheckpoint(format!("{count} arrays, expected {expected}")));
    }
    for slot in params.tensors_mut() {
        let name = c.string()?;
        let rank = c.u32()? as usize;
        let dims = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if name != slot.name || dims != slot.dims {
            return Err(NetworkError::CorruptCheckpoint(format!(
                "array {name} {dims:?} where {} {:?} was expected",
                slot.name, slot.dims
            )));
        }
        let raw = c.take(slot.data.len() * 4)?;
        for (v, b) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if c.at != buf.len() {
        return Err(NetworkError::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok((params, config, vocab))
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, ModelConfig, Vocabulary), NetworkError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}
