//! Binary container and image I/O: the DRF1 channel container shared by
//! correspondence fields and quantized targets, and binary PPM/PGM images.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const DRF1_MAGIC: &[u8; 4] = b"DRF1";

/// Channel descriptor bytes for the DRF1 container.
pub mod channel {
    pub const U_H: u8 = 0;
    pub const U_V: u8 = 1;
    pub const Z: u8 = 2;
    pub const MASK: u8 = 3;
    pub const PARTS: u8 = 4;
    pub const Q_H: u8 = 5;
    pub const Q_V: u8 = 6;
    pub const R_H: u8 = 7;
    pub const R_V: u8 = 8;
}

/// Writes a DRF1 container: magic, little-endian u32 width/height/channel
/// count, one descriptor byte per channel, then row-major f32 LE payloads.
pub fn write_drf1(path: &Path, width: u32, height: u32, channels: &[(u8, &[f32])]) -> Result<()> {
    let n = (width as usize) * (height as usize);
    for (desc, data) in channels {
        if data.len() != n {
            return Err(Error::Format(format!(
                "channel {desc}: payload length {} != {width}x{height}",
                data.len()
            )));
        }
    }
    let mut buf = Vec::with_capacity(16 + channels.len() * (1 + 4 * n));
    buf.extend_from_slice(DRF1_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for (desc, _) in channels {
        buf.push(*desc);
    }
    for (_, data) in channels {
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a DRF1 container back as `(width, height, [(descriptor, payload)])`.
pub fn read_drf1(path: &Path) -> Result<(u32, u32, Vec<(u8, Vec<f32>)>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != DRF1_MAGIC {
        return Err(Error::Format("not a DRF1 file".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n_channels = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n = (width as usize) * (height as usize);
    let header_end = 16 + n_channels;
    let expected = header_end + n_channels * 4 * n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "DRF1 payload length mismatch: {} bytes, expected {expected} \
             for {width}x{height} x {n_channels} channels",
            bytes.len()
        )));
    }
    let descs = &bytes[16..header_end];
    let mut channels = Vec::with_capacity(n_channels);
    for (c, &desc) in descs.iter().enumerate() {
        let off = header_end + c * 4 * n;
        let data = bytes[off..off + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        channels.push((desc, data));
    }
    Ok((width, height, channels))
}

/// RGB image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` interleaved intensities.
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }
}

fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary PPM (P6).
pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut buf = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    buf.extend(img.data.iter().map(|&v| quantize_u8(v)));
    std::fs::write(path, buf)?;
    Ok(())
}

/// Writes a binary PGM (P5) from gray levels in `[0, 255]`.
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::Format("PGM payload length mismatch".into()));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(gray);
    std::fs::write(path, buf)?;
    Ok(())
}

fn parse_pnm_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields.len() < 4 || fields[0] != magic {
        return Err(Error::Format(format!("not a {magic} file")));
    }
    let w: usize = fields[1].parse().map_err(|_| Error::Format("bad PNM width".into()))?;
    let h: usize = fields[2].parse().map_err(|_| Error::Format("bad PNM height".into()))?;
    if fields[3] != "255" {
        return Err(Error::Format("unsupported PNM maxval".into()));
    }
    Ok((w, h, pos + 1))
}

/// Reads a binary PPM (P6) back to intensities in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    let (width, height, off) = parse_pnm_header(&bytes, "P6")?;
    let n = width * height * 3;
    if bytes.len() < off + n {
        return Err(Error::Format("truncated PPM payload".into()));
    }
    let data = bytes[off..off + n].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(RgbImage { width, height, data })
}

/// Reads a binary PGM (P5) as raw gray levels.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path)?;
    let (width, height, off) = parse_pnm_header(&bytes, "P5")?;
    let n = width * height;
    if bytes.len() < off + n {
        return Err(Error::Format("truncated PGM payload".into()));
    }
    Ok((width, height, bytes[off..off + n].to_vec()))
}
