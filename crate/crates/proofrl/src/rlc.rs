//! Binary file formats.
//!
//! Raster format `RLC1`: magic bytes `R L C 1`, u32 LE width, u32 LE height,
//! u8 kind (0 = u8 EM samples, 1 = u32 LE label samples, 2 = f32 LE point
//! samples), then row-major samples.
//!
//! Checkpoint format `RLCW`: magic bytes `R L C W`, u32 LE parameter count,
//! f32 LE parameters, then a fixed metadata block (agent kind, input
//! channels, action count, seed, input height/width, conv width, fc width).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{EmImage, LabelMap, PointMap, Raster};

const RASTER_MAGIC: [u8; 4] = *b"RLC1";
const CHECKPOINT_MAGIC: [u8; 4] = *b"RLCW";

/// Sample encoding for `RLC1` payloads.
pub trait Sample: Copy {
    const KIND: u8;
    fn write_to(values: &[Self], w: &mut dyn Write) -> std::io::Result<()>;
    fn read_from(r: &mut dyn Read, count: usize) -> std::io::Result<Vec<Self>>;
}

impl Sample for u8 {
    const KIND: u8 = 0;
    fn write_to(values: &[Self], w: &mut dyn Write) -> std::io::Result<()> {
        w.write_all(values)
    }
    fn read_from(r: &mut dyn Read, count: usize) -> std::io::Result<Vec<Self>> {
        let mut buf = vec![0u8; count];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
}

impl Sample for u32 {
    const KIND: u8 = 1;
    fn write_to(values: &[Self], w: &mut dyn Write) -> std::io::Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn read_from(r: &mut dyn Read, count: usize) -> std::io::Result<Vec<Self>> {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

impl Sample for f32 {
    const KIND: u8 = 2;
    fn write_to(values: &[Self], w: &mut dyn Write) -> std::io::Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
    fn read_from(r: &mut dyn Read, count: usize) -> std::io::Result<Vec<Self>> {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn write_raster<T: Sample>(w: &mut dyn Write, raster: &Raster<T>) -> Result<()> {
    w.write_all(&RASTER_MAGIC)?;
    w.write_all(&(raster.width() as u32).to_le_bytes())?;
    w.write_all(&(raster.height() as u32).to_le_bytes())?;
    w.write_all(&[T::KIND])?;
    T::write_to(raster.data(), w)?;
    Ok(())
}

pub fn read_raster<T: Sample>(r: &mut dyn Read) -> Result<Raster<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != RASTER_MAGIC {
        return Err(Error::Format(format!("bad raster magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let width = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let height = u32::from_le_bytes(u32buf) as usize;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    if kind[0] != T::KIND {
        return Err(Error::Format(format!(
            "raster kind {} does not match requested kind {}",
            kind[0],
            T::KIND
        )));
    }
    let data = T::read_from(r, width.checked_mul(height).ok_or_else(|| {
        Error::Format(format!("raster dimensions {width}x{height} overflow"))
    })?)?;
    Raster::from_vec(width, height, data)
}

pub fn save_raster<T: Sample>(path: &Path, raster: &Raster<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raster(&mut w, raster)?;
    w.flush()?;
    Ok(())
}

pub fn load_raster<T: Sample>(path: &Path) -> Result<Raster<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_raster(&mut r)
}

pub fn save_em(path: &Path, img: &EmImage) -> Result<()> {
    save_raster(path, img)
}

pub fn load_em(path: &Path) -> Result<EmImage> {
    load_raster(path)
}

pub fn save_labels(path: &Path, map: &LabelMap) -> Result<()> {
    save_raster(path, map)
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    load_raster(path)
}

pub fn save_points(path: &Path, map: &PointMap) -> Result<()> {
    save_raster(path, map)
}

pub fn load_points(path: &Path) -> Result<PointMap> {
    load_raster(path)
}

/// Metadata stored after the parameter payload of an `RLCW` checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub agent_kind: u8,
    pub input_channels: u32,
    pub action_count: u32,
    pub seed: u64,
    pub input_h: u32,
    pub input_w: u32,
    pub conv_channels: u32,
    pub fc_dim: u32,
}

pub fn write_checkpoint(w: &mut dyn Write, header: &CheckpointHeader, params: &[f32]) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&[header.agent_kind])?;
    w.write_all(&header.input_channels.to_le_bytes())?;
    w.write_all(&header.action_count.to_le_bytes())?;
    w.write_all(&header.seed.to_le_bytes())?;
    w.write_all(&header.input_h.to_le_bytes())?;
    w.write_all(&header.input_w.to_le_bytes())?;
    w.write_all(&header.conv_channels.to_le_bytes())?;
    w.write_all(&header.fc_dim.to_le_bytes())?;
    Ok(())
}

pub fn read_checkpoint(r: &mut dyn Read) -> Result<(CheckpointHeader, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let params = f32::read_from(r, count)?;
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let input_channels = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let action_count = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u64buf)?;
    let seed = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u32buf)?;
    let input_h = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let input_w = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let conv_channels = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u32buf)?;
    let fc_dim = u32::from_le_bytes(u32buf);
    Ok((
        CheckpointHeader {
            agent_kind: kind[0],
            input_channels,
            action_count,
            seed,
            input_h,
            input_w,
            conv_channels,
            fc_dim,
        },
        params,
    ))
}

pub fn save_checkpoint(path: &Path, header: &CheckpointHeader, params: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, header, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}
