//! Checkpoint payload: a versioned header, a text manifest of
//! `name rows cols offset` records, then flat little-endian `f64` arrays.
//!
//! ```text
//! magic      8 bytes   "SEQMCKPT"
//! version    u32 LE
//! entries    u32 LE
//! manifest   u64 LE    byte length of the manifest
//! manifest   UTF-8     one "name\trows\tcols\toffset\n" line per entry,
//!                      offset in bytes from the start of the data section
//! data       f64 LE    entries back to back, row-major
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AutodiffError, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEQMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named matrices in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Matrix)>,
    index: BTreeMap<String, usize>,
}

fn err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(!name.contains(['\t', '\n']), "checkpoint names may not contain tabs or newlines");
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.insert(name, Matrix::scalar(value));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    /// Entry `name` with the given shape, or a descriptive error.
    pub fn expect(&self, name: &str, shape: (usize, usize)) -> Result<&Matrix, AutodiffError> {
        let m = self.get(name).ok_or_else(|| err(format!("missing entry {name}")))?;
        if m.shape() != shape {
            return Err(err(format!("entry {name} has shape {:?}, expected {:?}", m.shape(), shape)));
        }
        Ok(m)
    }

    pub fn scalar(&self, name: &str) -> Result<f64, AutodiffError> {
        Ok(self.expect(name, (1, 1))?.data()[0])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut offset = 0usize;
        for (name, m) in &self.entries {
            manifest.push_str(&format!("{name}\t{}\t{}\t{offset}\n", m.rows(), m.cols()));
            offset += m.len() * 8;
        }
        let mut out = Vec::with_capacity(24 + manifest.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for (_, m) in &self.entries {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutodiffError> {
        if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let mlen = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let manifest = bytes.get(24..24 + mlen).ok_or_else(|| err("truncated manifest"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| err("manifest is not UTF-8"))?;
        let data = &bytes[24 + mlen..];
        let mut ckpt = Checkpoint::new();
        for line in manifest.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(err(format!("malformed manifest line {line:?}")));
            }
            let parse = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad number {s:?}")));
            let (rows, cols, off) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
            let n = rows * cols;
            let raw = data.get(off..off + n * 8).ok_or_else(|| err(format!("entry {} out of bounds", fields[0])))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            ckpt.insert(fields[0], Matrix::from_vec(rows, cols, values));
        }
        if ckpt.len() != count {
            return Err(err(format!("manifest lists {} entries, header says {count}", ckpt.len())));
        }
        Ok(ckpt)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), AutodiffError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, AutodiffError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
