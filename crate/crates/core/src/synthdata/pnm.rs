//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

/// Decoded netpbm raster: interleaved samples, `channels` per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode(width: usize, height: usize, channels: usize, data: &[u8]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3, "netpbm supports 1 or 3 channels");
    assert_eq!(data.len(), width * height * channels);
    let magic = if channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, channels, data)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Image {
            path: self.path.to_path_buf(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Image {
                path: self.path.to_path_buf(),
                offset: start,
                reason: "number out of range".into(),
            })
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut c = Cursor { bytes, pos: 0, path };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(c.fail("bad magic, expected P5 or P6")),
    };
    c.pos = 2;
    let width = c.number()?;
    let height = c.number()?;
    let maxval = c.number()?;
    if width == 0 || height == 0 {
        return Err(c.fail("zero image dimension"));
    }
    if maxval != 255 {
        return Err(c.fail(format!("unsupported maxval {maxval}, expected 255")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.fail("expected a single whitespace byte before the raster"));
    }
    c.pos += 1;
    let need = width * height * channels;
    let have = bytes.len() - c.pos;
    if have < need {
        c.pos = bytes.len();
        return Err(c.fail(format!("raster truncated: {have} of {need} bytes")));
    }
    if have > need {
        c.pos += need;
        return Err(c.fail("trailing bytes after raster"));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: bytes[c.pos..].to_vec(),
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_color_and_gray() {
        let p = Path::new("mem");
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let r = decode(&encode(3, 2, 3, &rgb), p).unwrap();
        assert_eq!((r.width, r.height, r.channels), (3, 2, 3));
        assert_eq!(r.data, rgb);
        let gray = vec![0u8, 255, 7, 9];
        assert_eq!(decode(&encode(2, 2, 1, &gray), p).unwrap().data, gray);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2]);
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap().data, vec![1, 2]);
    }

    #[test]
    fn errors_carry_offsets() {
        let p = Path::new("x.ppm");
        match decode(b"Q6\n1 1\n255\nabc", p) {
            Err(Error::Image { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        match decode(b"P6\n2 2\n255\nabc", p) {
            Err(Error::Image { offset, reason, .. }) => {
                assert_eq!(offset, 14);
                assert!(reason.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode(b"P6\n1 1\n65535\nabcdef", p).is_err());
    }
}
