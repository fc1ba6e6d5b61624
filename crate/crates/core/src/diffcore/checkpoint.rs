//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "CORFCKPT"
//! version   u32      currently 1
//! count     u32      number of sections
//! section*  kind u8 (0 = text, 1 = tensor)
//!           name_len u32, name (UTF-8)
//!           text:   len u64, bytes (UTF-8)
//!           tensor: rank u32, dims u64 * rank, values f64 * product(dims)
//! ```
//!
//! Sections are kept in insertion order. Names are unique.

use std::io::{Read, Write};

use super::Tensor;

pub const MAGIC: &[u8; 8] = b"CORFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing section `{0}`")]
    Missing(String),
    #[error("duplicate checkpoint section `{0}`")]
    Duplicate(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Section {
    Text(String),
    Tensor(Tensor),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Section)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, section: Section) -> Result<(), CheckpointError> {
        let name = name.into();
        if self.sections.iter().any(|(n, _)| *n == name) {
            return Err(CheckpointError::Duplicate(name));
        }
        self.sections.push((name, section));
        Ok(())
    }

    pub fn insert_text(&mut self, name: impl Into<String>, text: impl Into<String>) -> Result<(), CheckpointError> {
        self.insert(name, Section::Text(text.into()))
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), CheckpointError> {
        self.insert(name, Section::Tensor(t))
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn text(&self, name: &str) -> Result<&str, CheckpointError> {
        match self.get(name) {
            Some(Section::Text(t)) => Ok(t),
            Some(_) => Err(CheckpointError::Malformed(format!("section `{name}` is not text"))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        match self.get(name) {
            Some(Section::Tensor(t)) => Ok(t),
            Some(_) => Err(CheckpointError::Malformed(format!("section `{name}` is not a tensor"))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, section) in &self.sections {
            let kind: u8 = match section {
                Section::Text(_) => 0,
                Section::Tensor(_) => 1,
            };
            w.write_all(&[kind])?;
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            match section {
                Section::Text(t) => {
                    w.write_all(&(t.len() as u64).to_le_bytes())?;
                    w.write_all(t.as_bytes())?;
                }
                Section::Tensor(t) => {
                    w.write_all(&(t.rank() as u32).to_le_bytes())?;
                    for &d in t.shape() {
                        w.write_all(&(d as u64).to_le_bytes())?;
                    }
                    for v in t.data() {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let count = read_u32(&mut r)?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let mut kind = [0u8; 1];
            r.read_exact(&mut kind)?;
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let section = match kind[0] {
                0 => {
                    let len = read_u64(&mut r)? as usize;
                    Section::Text(read_string(&mut r, len)?)
                }
                1 => {
                    let rank = read_u32(&mut r)? as usize;
                    let mut shape = Vec::with_capacity(rank);
                    for _ in 0..rank {
                        shape.push(read_u64(&mut r)? as usize);
                    }
                    let n: usize = shape.iter().product();
                    let mut bytes = vec![0u8; n * 8];
                    r.read_exact(&mut bytes)?;
                    let data = bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Section::Tensor(Tensor::new(shape, data))
                }
                k => return Err(CheckpointError::Malformed(format!("unknown section kind {k}"))),
            };
            ckpt.insert(name, section)?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, CheckpointError> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| CheckpointError::Malformed(e.to_string()))
}
