//! Model checkpoints: magic `SCKP`, a fixed header (variant, widths, seed,
//! batchnorm constants), per-channel normalization statistics, a config
//! echo, and a list of named float64 parameter blobs. Everything is
//! little-endian and round-trips byte-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCKP";
pub const VERSION: u32 = 1;

/// A named tensor of float64 values with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlob {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f64>,
}

impl ParamBlob {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, values: Vec<f64>) -> ParamBlob {
        let b = ParamBlob {
            name: name.into(),
            dims,
            values,
        };
        debug_assert_eq!(b.numel(), b.values.len());
        b
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Full serialized model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: String,
    pub base_width: u32,
    pub in_channels: u32,
    pub seed: u64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Per-feature-channel (min, max) from the training split.
    pub norm_stats: Vec<(f64, f64)>,
    /// The effective `key = value` configuration, for provenance.
    pub config_echo: String,
    pub blobs: Vec<ParamBlob>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&ParamBlob> {
        self.blobs.iter().find(|b| b.name == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut f, &self.variant)?;
        f.write_all(&self.base_width.to_le_bytes())?;
        f.write_all(&self.in_channels.to_le_bytes())?;
        f.write_all(&self.seed.to_le_bytes())?;
        f.write_all(&self.bn_eps.to_le_bytes())?;
        f.write_all(&self.bn_momentum.to_le_bytes())?;
        f.write_all(&(self.norm_stats.len() as u32).to_le_bytes())?;
        for (lo, hi) in &self.norm_stats {
            f.write_all(&lo.to_le_bytes())?;
            f.write_all(&hi.to_le_bytes())?;
        }
        write_str(&mut f, &self.config_echo)?;
        f.write_all(&(self.blobs.len() as u32).to_le_bytes())?;
        for b in &self.blobs {
            if b.numel() != b.values.len() {
                return Err(Error::Corrupt(format!(
                    "blob {} dims {:?} disagree with {} values",
                    b.name,
                    b.dims,
                    b.values.len()
                )));
            }
            write_str(&mut f, &b.name)?;
            f.write_all(&(b.dims.len() as u32).to_le_bytes())?;
            for d in &b.dims {
                f.write_all(&d.to_le_bytes())?;
            }
            for v in &b.values {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("blob {} value {v}", b.name)));
                }
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let mut f = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        if f.read_exact(&mut magic).is_err() {
            return Err(Error::Truncated(path.to_path_buf()));
        }
        if &magic != MAGIC {
            return Err(Error::BadMagic(path.to_path_buf()));
        }
        let version = read_u32(&mut f, path)?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        let variant = read_str(&mut f, path)?;
        let base_width = read_u32(&mut f, path)?;
        let in_channels = read_u32(&mut f, path)?;
        let seed = read_u64(&mut f, path)?;
        let bn_eps = read_f64(&mut f, path)?;
        let bn_momentum = read_f64(&mut f, path)?;
        let n_stats = read_u32(&mut f, path)? as usize;
        if n_stats > 4096 {
            return Err(Error::Corrupt(format!(
                "implausible normalization channel count {n_stats}"
            )));
        }
        let mut norm_stats = Vec::with_capacity(n_stats);
        for _ in 0..n_stats {
            norm_stats.push((read_f64(&mut f, path)?, read_f64(&mut f, path)?));
        }
        let config_echo = read_str(&mut f, path)?;
        let n_blobs = read_u32(&mut f, path)? as usize;
        if n_blobs > 1 << 20 {
            return Err(Error::Corrupt(format!("implausible blob count {n_blobs}")));
        }
        let mut blobs = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name = read_str(&mut f, path)?;
            let ndims = read_u32(&mut f, path)? as usize;
            if ndims > 8 {
                return Err(Error::Corrupt(format!(
                    "blob {name} has implausible rank {ndims}"
                )));
            }
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(read_u32(&mut f, path)?);
            }
            let numel: usize = dims.iter().map(|&d| d as usize).product();
            if numel > 1 << 28 {
                return Err(Error::Corrupt(format!(
                    "blob {name} has implausible size {numel}"
                )));
            }
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                let v = read_f64(&mut f, path)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("blob {name} value {v}")));
                }
                values.push(v);
            }
            blobs.push(ParamBlob { name, dims, values });
        }
        let mut trailing = [0u8; 1];
        if f.read(&mut trailing)? != 0 {
            return Err(Error::Corrupt(format!(
                "trailing bytes after checkpoint payload in {}",
                path.display()
            )));
        }
        Ok(Checkpoint {
            variant,
            base_width,
            in_channels,
            seed,
            bn_eps,
            bn_momentum,
            norm_stats,
            config_echo,
            blobs,
        })
    }
}

fn write_str(f: &mut impl Write, s: &str) -> Result<()> {
    f.write_all(&(s.len() as u32).to_le_bytes())?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(f: &mut impl Read, path: &Path) -> Result<String> {
    let len = read_u32(f, path)? as usize;
    if len > 1 << 20 {
        return Err(Error::Corrupt(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    if f.read_exact(&mut buf).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    String::from_utf8(buf).map_err(|_| Error::Corrupt("non-UTF-8 string in checkpoint".into()))
}

fn read_u32(f: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    if f.read_exact(&mut b).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    if f.read_exact(&mut b).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    Ok(u64::from_le_bytes(b))
}

fn read_f64(f: &mut impl Read, path: &Path) -> Result<f64> {
    let mut b = [0u8; 8];
    if f.read_exact(&mut b).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    Ok(f64::from_le_bytes(b))
}
