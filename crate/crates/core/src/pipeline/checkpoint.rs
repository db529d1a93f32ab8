//! Binary model checkpoints.
//!
//! Layout: the magic bytes `MSCN`, a `u16` format version, a `u32`
//! length-prefixed UTF-8 header (the architecture text followed by a
//! `provenance <config hash> <cycles>` line), then for every parameterised
//! layer in architecture order its weights, biases and, with batch norm,
//! scale, shift, running mean and running variance as little-endian `f32`.
//! A CRC32 of everything before it closes the file. All integers are
//! little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, LayerParams, Parameters};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSCN";
pub const FORMAT_VERSION: u16 = 1;

/// Where a checkpoint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub config_hash: u64,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub spec: ArchitectureSpec,
    pub params: Parameters<f32>,
    pub provenance: Provenance,
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl ModelCheckpoint {
    pub fn new(spec: ArchitectureSpec, params: Parameters<f32>, provenance: Provenance) -> Result<Self> {
        params.check(&spec)?;
        Ok(Self { spec, params, provenance })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = format!(
            "{}provenance {:016x} {}\n",
            self.spec.to_text(),
            self.provenance.config_hash,
            self.provenance.cycles
        );
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for p in self.params.layers.iter().flatten() {
            put_f32s(&mut out, p.weight.data());
            put_f32s(&mut out, &p.bias);
            if let Some(bn) = &p.bn {
                put_f32s(&mut out, &bn.scale);
                put_f32s(&mut out, &bn.shift);
                put_f32s(&mut out, &bn.running_mean);
                put_f32s(&mut out, &bn.running_var);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::Integrity(m.to_string());
        if bytes.len() < 4 + 2 + 4 + 4 {
            return Err(integrity("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(integrity("missing MSCN magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(integrity("CRC mismatch (truncated or corrupted file)"));
        }
        let header_len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
        let header = body
            .get(10..10 + header_len)
            .ok_or_else(|| integrity("header runs past the end of the file"))?;
        let header = std::str::from_utf8(header).map_err(|_| integrity("header is not UTF-8"))?;
        let (arch, prov) = header
            .trim_end()
            .rsplit_once('\n')
            .ok_or_else(|| integrity("missing provenance line"))?;
        let provenance = parse_provenance(prov).ok_or_else(|| integrity("malformed provenance line"))?;
        let spec = ArchitectureSpec::from_text(arch)?;

        let mut reader = F32Reader { data: &body[10 + header_len..] };
        let template = Parameters::<f32>::init(&spec, 0)?;
        let mut layers = Vec::with_capacity(template.layers.len());
        for slot in template.layers {
            layers.push(match slot {
                None => None,
                Some(t) => {
                    let weight = Tensor::new(t.weight.shape(), reader.take(t.weight.len())?)?;
                    let bias = reader.take(t.bias.len())?;
                    let bn = match t.bn {
                        None => None,
                        Some(mut bn) => {
                            let n = bn.channels();
                            bn.scale = reader.take(n)?;
                            bn.shift = reader.take(n)?;
                            bn.running_mean = reader.take(n)?;
                            bn.running_var = reader.take(n)?;
                            Some(bn)
                        }
                    };
                    Some(LayerParams { weight, bias, bn })
                }
            });
        }
        if !reader.data.is_empty() {
            return Err(integrity("trailing bytes after parameter arrays"));
        }
        Self::new(spec, Parameters { layers }, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn parse_provenance(line: &str) -> Option<Provenance> {
    let mut it = line.split_whitespace();
    if it.next()? != "provenance" {
        return None;
    }
    let config_hash = u64::from_str_radix(it.next()?, 16).ok()?;
    let cycles = it.next()?.parse().ok()?;
    it.next().is_none().then_some(Provenance { config_hash, cycles })
}

struct F32Reader<'a> {
    data: &'a [u8],
}

impl F32Reader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n * 4;
        if self.data.len() < bytes {
            return Err(Error::Integrity("parameter arrays are shorter than the architecture".into()));
        }
        let (head, rest) = self.data.split_at(bytes);
        self.data = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build, ArchName};

    fn checkpoint() -> ModelCheckpoint {
        let mut spec = build(ArchName::Farabet, 3, 10).unwrap();
        spec.head[0].keep_prob = 0.5;
        let mut params = Parameters::<f32>::init(&spec, 3).unwrap();
        let bn = params.layers[0].as_mut().unwrap().bn.as_mut().unwrap();
        bn.running_mean[0] = 0.25;
        bn.running_var[1] = 3.5;
        ModelCheckpoint::new(spec, params, Provenance { config_hash: 0xdead_beef, cycles: 7 }).unwrap()
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = checkpoint();
        let bytes = c.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn damage_is_detected() {
        let bytes = checkpoint().to_bytes();
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes[..bytes.len() / 2]),
            Err(Error::Integrity(_))
        ));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(ModelCheckpoint::from_bytes(&flipped), Err(Error::Integrity(_))));
        let mut other = bytes.clone();
        other[4] = 9;
        assert!(matches!(
            ModelCheckpoint::from_bytes(&other),
            Err(Error::Version { found: 9, expected: 1 })
        ));
        assert!(matches!(ModelCheckpoint::from_bytes(b"MSCN"), Err(Error::Integrity(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mscn");
        let c = checkpoint();
        c.save(&path).unwrap();
        assert_eq!(ModelCheckpoint::load(&path).unwrap(), c);
    }
}
