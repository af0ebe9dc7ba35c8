//! Binary tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MSNT" | version: u32 = 1 | entry count: u32
//! per entry: name length: u16 | UTF-8 name | rank: u8 | extents: u32 * rank
//!            | product(extents) f64 values, row-major
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"MSNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(entries: &[ArchiveEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| Error::InvalidArgument("too many archive entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for e in entries {
        let name_len = u16::try_from(e.name.len())
            .map_err(|_| Error::InvalidArgument(format!("entry name `{}` longer than 65535 bytes", e.name)))?;
        let rank = u8::try_from(e.extents.len())
            .map_err(|_| Error::InvalidArgument(format!("entry `{}` rank exceeds 255", e.name)))?;
        if e.extents.iter().product::<usize>() != e.data.len() {
            return Err(Error::InvalidArgument(format!(
                "entry `{}` holds {} values for extents {:?}",
                e.name,
                e.data.len(),
                e.extents
            )));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(rank);
        for &x in &e.extents {
            let x = u32::try_from(x)
                .map_err(|_| Error::InvalidArgument(format!("entry `{}` extent {x} exceeds u32", e.name)))?;
            out.extend_from_slice(&x.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, offset: usize, reason: impl Into<String>) -> Result<T> {
        Err(Error::Archive { offset, reason: reason.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self
                .fail(self.pos, format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<ArchiveEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, expected \"MSNT\"");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let count = r.u32("entry count")?;
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let entry_start = r.pos;
        let name_len = r.u16("name length")? as usize;
        let name_at = r.pos;
        let name = match std::str::from_utf8(r.take(name_len, "name")?) {
            Ok(s) => s.to_string(),
            Err(e) => return r.fail(name_at + e.valid_up_to(), "name is not valid UTF-8"),
        };
        if !seen.insert(name.clone()) {
            return r.fail(entry_start, format!("duplicate entry `{name}`"));
        }
        let rank = r.u8("rank")? as usize;
        let extents_at = r.pos;
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(r.u32("extent")? as usize);
        }
        let numel =
            extents.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x)).filter(|n| n.checked_mul(8).is_some());
        let Some(numel) = numel else {
            return r.fail(extents_at, format!("extents {extents:?} overflow"));
        };
        let raw = r.take(numel * 8, &format!("values of `{name}`"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push(ArchiveEntry { name, extents, data });
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(entries)
}

pub fn params_to_entries(params: &ParamSet) -> Vec<ArchiveEntry> {
    params
        .iter()
        .map(|(name, t)| ArchiveEntry {
            name: name.to_string(),
            extents: t.shape().0.to_vec(),
            data: t.data().to_vec(),
        })
        .collect()
}

pub fn entries_to_params(entries: Vec<ArchiveEntry>) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for e in entries {
        let Ok(extents) = <[usize; 4]>::try_from(e.extents.as_slice()) else {
            return Err(Error::ParameterShape {
                name: e.name,
                expected: "rank 4".into(),
                found: format!("rank {}", e.extents.len()),
            });
        };
        let t = Tensor::from_vec(Shape(extents), e.data)?;
        set.insert(e.name, t);
    }
    Ok(set)
}

pub fn save_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(&params_to_entries(params))?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    entries_to_params(decode(&bytes)?)
}
