//! Binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"STYLEPRI"  u32 version
//! u32 len  config as key=value lines
//! u32 count, then per parameter: u32 len, name, u32 rank, u64 dims...
//! u64 count  f64 parameter values in manifest order
//! u64 codes  u64 dim  f64 code values
//! u64 count  f64 loss history
//! u32 crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::ndiff::Tensor;
use crate::stylegen::{GeneratorConfig, NamedTensor, StyleGenerator};

const MAGIC: &[u8; 8] = b"STYLEPRI";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: StyleGenerator,
    pub codes: Vec<Vec<f64>>,
    pub loss_history: Vec<f64>,
}

fn config_text(c: &GeneratorConfig) -> String {
    let channels: Vec<String> = c.channels.iter().map(|v| v.to_string()).collect();
    format!(
        "latent_dim={}\nmapping_depth={}\nbase_resolution={}\nchannels={}\nout_channels={}\n",
        c.latent_dim,
        c.mapping_depth,
        c.base_resolution,
        channels.join(","),
        c.out_channels
    )
}

fn parse_config(text: &str) -> Result<GeneratorConfig> {
    let bad = |m: String| Error::Checkpoint(format!("config block: {m}"));
    let mut fields = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
    let channels = get("channels")?
        .split(',')
        .map(|v| v.parse().map_err(|_| bad("bad `channels`".into())))
        .collect::<Result<Vec<usize>>>()?;
    Ok(GeneratorConfig {
        latent_dim: num("latent_dim")?,
        mapping_depth: num("mapping_depth")?,
        base_resolution: num("base_resolution")?,
        channels,
        out_channels: num("out_channels")?,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = config_text(self.generator.config());
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());

        let params = self.generator.params();
        b.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            b.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            b.extend_from_slice(p.name.as_bytes());
            b.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let total: usize = params.iter().map(|p| p.value.len()).sum();
        b.extend_from_slice(&(total as u64).to_le_bytes());
        for v in params.iter().flat_map(|p| p.value.data()) {
            b.extend_from_slice(&v.to_le_bytes());
        }

        let dim = self.codes.first().map_or(0, Vec::len);
        b.extend_from_slice(&(self.codes.len() as u64).to_le_bytes());
        b.extend_from_slice(&(dim as u64).to_le_bytes());
        for v in self.codes.iter().flatten() {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&(self.loss_history.len() as u64).to_le_bytes());
        for v in &self.loss_history {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let body_len = bytes
            .len()
            .checked_sub(4)
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_len]) != stored {
            return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
        }
        r.bytes = &bytes[..body_len];

        let cfg_len = r.u32()? as usize;
        let cfg = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let config = parse_config(cfg)?;

        let count = r.u32()? as usize;
        let mut manifest = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            manifest.push((name, shape));
        }
        let total = r.len()?;
        let expected: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if total != expected {
            return Err(Error::Checkpoint(format!(
                "parameter blob holds {total} values, manifest describes {expected}"
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (name, shape) in manifest {
            let n = shape.iter().product();
            let data = r.f64s(n)?;
            let value = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
            params.push(NamedTensor { name, value });
        }
        let generator = StyleGenerator::from_params(config, params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;

        let n_codes = r.len()?;
        let dim = r.len()?;
        let codes = (0..n_codes).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
        let n_hist = r.len()?;
        let loss_history = r.f64s(n_hist)?;
        if r.pos != r.bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            generator,
            codes,
            loss_history,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Atomic: written to `<path>.tmp`, then renamed.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let config = GeneratorConfig {
            latent_dim: 4,
            mapping_depth: 2,
            base_resolution: 2,
            channels: vec![4, 3],
            out_channels: 3,
        };
        Checkpoint {
            generator: StyleGenerator::new(config, 9).unwrap(),
            codes: vec![vec![0.1, -0.2, 0.3, 1e-300], vec![4.0, 5.0, -6.0, 0.0]],
            loss_history: vec![0.5, 0.25, 0.125],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        let q = dir.path().join("b.ckpt");
        save_checkpoint(&q, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
        assert!(!dir.path().join("a.ckpt.tmp").exists());
    }

    #[test]
    fn empty_codes_and_history_round_trip() {
        let ck = Checkpoint {
            codes: Vec::new(),
            loss_history: Vec::new(),
            ..sample()
        };
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = sample().to_bytes();
        for n in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..n]).is_err(), "length {n}");
        }
    }

    #[test]
    fn bumped_version_refused() {
        let mut bytes = sample().to_bytes();
        bytes[8] += 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn flipped_bit_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(b"definitely not").is_err());
    }
}
