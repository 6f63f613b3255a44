//! Binary portable pixmaps: P6 (RGB) images and P5 (gray) masks, 8 bits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::Image;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| to_byte(v)));
    out
}

pub fn encode_pgm(width: usize, height: usize, values: &[bool]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| if v { 255u8 } else { 0 }));
    out
}

/// Parses the header of a binary PNM, returning (magic, width, height,
/// payload offset).
fn parse_header(bytes: &[u8]) -> Result<(&[u8], usize, usize, usize)> {
    let mut fields: Vec<&[u8]> = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated pixmap header".into()));
        }
        fields.push(&bytes[start..i]);
    }
    // Exactly one whitespace byte separates the header from the payload.
    i += 1;
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad number in pixmap header".into()))
    };
    if num(fields[3])? != 255 {
        return Err(Error::Format("only 8-bit pixmaps are supported".into()));
    }
    Ok((fields[0], num(fields[1])?, num(fields[2])?, i))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let (magic, w, h, off) = parse_header(bytes)?;
    if magic != b"P6" {
        return Err(Error::Format("expected a P6 pixmap".into()));
    }
    let payload = bytes.get(off..off + 3 * w * h).ok_or_else(|| Error::Format("truncated P6 payload".into()))?;
    Ok(Image {
        width: w,
        height: h,
        data: payload.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

/// Mask from a P5 graymap: non-zero is `true`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let (magic, w, h, off) = parse_header(bytes)?;
    if magic != b"P5" {
        return Err(Error::Format("expected a P5 graymap".into()));
    }
    let payload = bytes.get(off..off + w * h).ok_or_else(|| Error::Format("truncated P5 payload".into()))?;
    Ok((w, h, payload.iter().map(|&b| b != 0).collect()))
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[bool]) -> Result<()> {
    std::fs::write(path, encode_pgm(width, height, values)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
