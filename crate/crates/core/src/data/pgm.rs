//! PGM (P5) and PPM (P6) raster files.
//!
//! 16-bit PGM samples are stored little-endian, matching the rest of this
//! project's on-disk formats. Note that classic netpbm specifies
//! most-significant-byte-first for 16-bit data, so 16-bit files written here
//! are for round-tripping by this crate, not for external viewers; 8-bit
//! files are plain PGM/PPM.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale raster with samples widened to u16 regardless of maxval.
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub samples: Vec<u16>,
}

/// Write a P5 file. Samples must not exceed `maxval`; `maxval` picks the
/// sample width (1 byte up to 255, else 2 bytes little-endian).
pub fn write_pgm(path: &Path, width: usize, height: usize, maxval: u32, samples: &[u16]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} image needs {} samples, got {}",
            width,
            height,
            width * height,
            samples.len()
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Config(format!("pgm maxval {maxval} out of range")));
    }
    let mut buf = Vec::with_capacity(32 + samples.len() * 2);
    buf.extend_from_slice(format!("P5\n{} {}\n{}\n", width, height, maxval).as_bytes());
    if maxval <= 255 {
        buf.extend(samples.iter().map(|&s| s as u8));
    } else {
        for &s in samples {
            buf.extend_from_slice(&s.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a P5 file written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let path_str = path.display().to_string();
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic(path_str));
    }
    let corrupt = |reason: &str| Error::Corrupt {
        path: path_str.clone(),
        reason: reason.to_string(),
    };

    // Header: three whitespace-separated integers after the magic, with
    // '#' comment lines allowed.
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt("missing header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| corrupt("header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt("maxval out of range"));
    }
    // Single whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(corrupt("missing raster separator"));
    }
    pos += 1;

    let n = width * height;
    let samples: Vec<u16> = if maxval <= 255 {
        if bytes.len() - pos < n {
            return Err(corrupt("truncated raster"));
        }
        bytes[pos..pos + n].iter().map(|&b| b as u16).collect()
    } else {
        if bytes.len() - pos < 2 * n {
            return Err(corrupt("truncated raster"));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u32,
        samples,
    })
}

/// Write an 8-bit P6 color file from interleaved RGB bytes.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} ppm needs {} bytes, got {}",
            width,
            height,
            width * height * 3,
            rgb.len()
        )));
    }
    let mut buf = Vec::with_capacity(32 + rgb.len());
    buf.extend_from_slice(format!("P6\n{} {}\n255\n", width, height).as_bytes());
    buf.extend_from_slice(rgb);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let samples: Vec<u16> = (0..12).map(|i| (i * 5000) as u16).collect();
        write_pgm(&path, 4, 3, 65535, &samples).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (4, 3, 65535));
        assert_eq!(img.samples, samples);
    }

    #[test]
    fn pgm8_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let samples: Vec<u16> = vec![0, 1, 2, 254, 255, 7];
        write_pgm(&path, 3, 2, 255, &samples).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.samples, samples);
    }

    #[test]
    fn tampered_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, 2, 2, 255, &[1, 2, 3, 4]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Q';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_raster_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pgm(&path, 4, 4, 65535, &[100; 16]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 1\n255\n\x05\x09").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.samples, vec![5, 9]);
    }
}
