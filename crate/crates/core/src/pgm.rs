//! Binary PGM (P5) image I/O.
//!
//! The pipeline writes 8-bit files; the reader additionally accepts 16-bit
//! payloads (big-endian sample order, per the format) so externally
//! produced radiograph exports can be evaluated. Header parsing follows
//! the netpbm rules: `#` comments may appear between tokens, and exactly
//! one whitespace byte separates the maxval line from the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A decoded grayscale image. Samples are stored widest-first; `maxval`
/// says how to normalize them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    /// Samples scaled into [0, 1] by correctly-rounded division.
    pub fn to_unit(&self) -> Vec<f32> {
        let maxval = f32::from(self.maxval);
        self.data.iter().map(|&v| f32::from(v) / maxval).collect()
    }

    /// Raw 8-bit samples; fails unless the file was 8-bit full-range.
    pub fn to_u8(&self) -> Result<Vec<u8>> {
        if self.maxval != 255 {
            return Err(Error::Data(format!(
                "expected an 8-bit image with maxval 255, found maxval {}",
                self.maxval
            )));
        }
        Ok(self.data.iter().map(|&v| v as u8).collect())
    }
}

/// Writes an 8-bit P5 file.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if width == 0 || height == 0 || pixels.len() != width * height {
        return Err(Error::Dim(format!(
            "pgm payload of {} bytes does not match {width}x{height}",
            pixels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.pos as u64, msg.into())
    }

    /// Skips whitespace and `#` comments, then reads one ASCII token.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.buf.len() && self.buf[self.pos] == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        Ok(&self.buf[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        let s = std::str::from_utf8(tok).map_err(|_| self.err(format!("{what} is not ASCII")))?;
        s.parse().map_err(|_| self.err(format!("{what} is not a number: {s:?}")))
    }
}

/// Reads a P5 file with maxval up to 65535.
pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let buf = fs::read(path)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let magic = cur.token()?;
    if magic != b"P5" {
        return Err(cur.err("not a binary PGM: magic is not P5"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.err(format!("degenerate dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 65_535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates header from payload.
    if cur.pos >= buf.len() || !buf[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("missing whitespace before payload"));
    }
    cur.pos += 1;

    let n = width * height;
    let wide = maxval > 255;
    let expected = n * if wide { 2 } else { 1 };
    let payload = &buf[cur.pos..];
    if payload.len() < expected {
        return Err(Error::format(
            buf.len() as u64,
            format!("payload truncated: need {expected} bytes, have {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            (cur.pos + expected) as u64,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let data: Vec<u16> = if wide {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload.iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(bad) = data.iter().position(|&v| usize::from(v) > maxval) {
        return Err(Error::format(
            (cur.pos + bad * if wide { 2 } else { 1 }) as u64,
            format!("sample {} exceeds maxval {maxval}", data[bad]),
        ));
    }
    let maxval = maxval as u16;
    Ok(Pgm { width, height, maxval, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("pgm-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn eight_bit_roundtrip_is_exact() {
        let path = tmp("roundtrip.pgm");
        let pixels: Vec<u8> = (0..12).map(|i| (i * 21) as u8).collect();
        write_pgm(&path, 4, 3, &pixels).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (4, 3, 255));
        assert_eq!(img.to_u8().unwrap(), pixels);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let path = tmp("comment.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n# another note\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.data, vec![1, 2, 3, 4]);
    }

    #[test]
    fn sixteen_bit_payload_is_big_endian() {
        let path = tmp("wide.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x00, 0xFF, 0xFE]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.data, vec![256, 65534]);
        let unit = img.to_unit();
        assert!((unit[1] - 0.99998474).abs() < 1e-6);
        assert!(img.to_u8().is_err());
    }

    #[test]
    fn structural_corruption_is_rejected() {
        let base: Vec<u8> = {
            let mut b = b"P5\n2 2\n255\n".to_vec();
            b.extend_from_slice(&[9, 9, 9, 9]);
            b
        };
        // Wrong magic.
        let path = tmp("magic.pgm");
        let mut bad = base.clone();
        bad[1] = b'6';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
        // Truncated payload.
        let path = tmp("trunc.pgm");
        std::fs::write(&path, &base[..base.len() - 1]).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
        // Trailing garbage.
        let path = tmp("trail.pgm");
        let mut bad = base.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
        // Absurd maxval.
        let path = tmp("maxval.pgm");
        std::fs::write(&path, b"P5\n2 2\n70000\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn writer_validates_payload_length() {
        let path = tmp("short.pgm");
        assert!(write_pgm(&path, 3, 3, &[0; 8]).is_err());
    }
}
