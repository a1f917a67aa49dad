//! Multi-channel raster files: magic `SCR1`, little-endian u32 channel
//! count, height and width, then `C*H*W` float32 values, row-major within
//! each channel, channels contiguous. Total size is exactly `16 + 4*C*H*W`
//! bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Raster;

pub const MAGIC: &[u8; 4] = b"SCR1";

/// Write a channel stack. All channels must share dimensions and hold
/// finite values.
pub fn write_raster(path: &Path, channels: &[Raster]) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Data("raster file needs at least one channel".into()))?;
    let (h, w) = (first.h(), first.w());
    for (i, c) in channels.iter().enumerate() {
        if c.h() != h || c.w() != w {
            return Err(Error::Shape(format!(
                "raster channel {i} is {}x{}, channel 0 is {h}x{w}",
                c.h(),
                c.w()
            )));
        }
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(channels.len() as u32).to_le_bytes())?;
    f.write_all(&(h as u32).to_le_bytes())?;
    f.write_all(&(w as u32).to_le_bytes())?;
    for c in channels {
        for &v in c.data() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("raster value {v}")));
            }
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a channel stack written by [`write_raster`].
pub fn read_raster(path: &Path) -> Result<Vec<Raster>> {
    let mut f = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    if f.read_exact(&mut magic).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    if &magic != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let c = read_u32(&mut f, path)? as usize;
    let h = read_u32(&mut f, path)? as usize;
    let w = read_u32(&mut f, path)? as usize;
    if c == 0 || h < 2 || w < 2 || c.saturating_mul(h).saturating_mul(w) > (1 << 30) {
        return Err(Error::Corrupt(format!(
            "implausible raster header {c}x{h}x{w} in {}",
            path.display()
        )));
    }
    let mut channels = Vec::with_capacity(c);
    let mut buf = vec![0u8; 4 * h * w];
    for _ in 0..c {
        if f.read_exact(&mut buf).is_err() {
            return Err(Error::Truncated(path.to_path_buf()));
        }
        let mut data = Vec::with_capacity(h * w);
        for chunk in buf.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "raster value {v} in {}",
                    path.display()
                )));
            }
            data.push(v);
        }
        channels.push(Raster::from_vec(h, w, data)?);
    }
    let mut trailing = [0u8; 1];
    if f.read(&mut trailing)? != 0 {
        return Err(Error::Corrupt(format!(
            "trailing bytes after raster payload in {}",
            path.display()
        )));
    }
    Ok(channels)
}

fn read_u32(f: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    if f.read_exact(&mut b).is_err() {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    Ok(u32::from_le_bytes(b))
}
