//! On-disk formats: the DTNS binary tensor format and binary PPM/PGM rasters.
//!
//! DTNS layout (all integers little-endian):
//!
//! ```text
//! "DTNS0001"            8-byte magic
//! rank                  u32
//! extents               rank × u64
//! data                  product(extents) × f64 (IEEE-754, little-endian)
//! ```

use std::fs;
use std::path::Path;

use super::{LabelMap, Tensor};
use crate::error::{Error, Result};

pub const DTNS_MAGIC: &[u8; 8] = b"DTNS0001";

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 8 * t.len());
    out.extend_from_slice(DTNS_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).ok_or(Error::Truncated {
        needed: usize::MAX,
        found: bytes.len(),
    })?;
    if end > bytes.len() {
        return Err(Error::Truncated {
            needed: end,
            found: bytes.len(),
        });
    }
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

/// Decodes one DTNS tensor from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 8).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(DTNS_MAGIC).into_owned(),
        found: bytes[..bytes.len().min(8)].to_vec(),
    })?;
    if magic != DTNS_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(DTNS_MAGIC).into_owned(),
            found: magic.to_vec(),
        });
    }
    let rank = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    let mut extents = Vec::with_capacity(rank.min(64));
    for _ in 0..rank {
        extents.push(u64::from_le_bytes(
            take(bytes, &mut pos, 8)?.try_into().unwrap(),
        ));
    }
    let count = extents
        .iter()
        .try_fold(1u64, |acc, &e| acc.checked_mul(e))
        .and_then(|n| usize::try_from(n).ok())
        .and_then(|n| n.checked_mul(8).map(|_| n))
        .ok_or_else(|| Error::ExtentOverflow(extents.clone()))?;
    let payload = take(bytes, &mut pos, count * 8)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let shape = extents.iter().map(|&e| e as usize).collect();
    Ok((Tensor::new(shape, data)?, pos))
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor_to_bytes(t)).map_err(|e| Error::io(path, e))
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = tensor_from_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Shape(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - used
        )));
    }
    Ok(t)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `H × W × 3` image with values in `[0, 1]` as binary PPM (P6).
pub fn image_write_ppm(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ppm_bytes(img)?).map_err(|e| Error::io(path, e))
}

pub(crate) fn ppm_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = img.hwc()?;
    if c != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Writes class IDs verbatim as binary PGM (P5) bytes.
pub fn labelmap_write_pgm(lm: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pgm_bytes(lm)?).map_err(|e| Error::io(path, e))
}

pub(crate) fn pgm_bytes(lm: &LabelMap) -> Result<Vec<u8>> {
    if lm.classes() > 255 {
        return Err(Error::invalid(
            "classes",
            format!("PGM holds at most 255 classes, got {}", lm.classes()),
        ));
    }
    let mut out = format!("P5\n{} {}\n255\n", lm.width(), lm.height()).into_bytes();
    out.extend(lm.data().iter().map(|&v| v as u8));
    Ok(out)
}

/// Reads a P5 PGM written by [`labelmap_write_pgm`]. The class count is not
/// stored in the file and must be supplied.
pub fn labelmap_read_pgm(path: impl AsRef<Path>, classes: u32) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
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
        if start == pos {
            return Err(Error::Truncated {
                needed: pos + 1,
                found: bytes.len(),
            });
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // single whitespace byte separates header and raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::BadMagic {
            expected: "P5".into(),
            found: tokens[0].as_bytes().to_vec(),
        });
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::invalid("pgm header", format!("bad number {s:?}")))
    };
    let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval > 255 {
        return Err(Error::invalid("pgm header", "16-bit PGM not supported"));
    }
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::ExtentOverflow(vec![h as u64, w as u64]))?;
    if bytes.len() < pos + n {
        return Err(Error::Truncated {
            needed: pos + n,
            found: bytes.len(),
        });
    }
    let data = bytes[pos..pos + n].iter().map(|&b| u32::from(b)).collect();
    LabelMap::new(h, w, classes, data)
}
