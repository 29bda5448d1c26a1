use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

/// 8-bit RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl SourceImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "degenerate image {width}x{height}"
            )));
        }
        if pixels.len() != width * height * Self::CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: width * height * Self::CHANNELS,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * Self::CHANNELS)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * Self::CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * Self::CHANNELS;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the `w x h` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<SourceImage> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h * Self::CHANNELS);
        for row in y..y + h {
            let start = (row * self.width + x) * Self::CHANNELS;
            out.extend_from_slice(&self.pixels[start..start + w * Self::CHANNELS]);
        }
        SourceImage::new(w, h, out)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.pixels.len() + 20);
        self.encode_ppm(&mut bytes)?;
        fsutil::write_atomic(path, &bytes)
    }

    pub fn encode_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::at_path(path, e))?;
        Self::decode_ppm(&mut BufReader::new(file))
    }

    pub fn decode_ppm<R: BufRead>(r: &mut R) -> Result<Self> {
        let header = read_netpbm_header(r, "P6")?;
        if header.maxval != 255 {
            return Err(Error::format(
                "PPM",
                format!("maxval {} unsupported (need 255)", header.maxval),
            ));
        }
        let mut pixels = vec![0u8; header.width * header.height * Self::CHANNELS];
        r.read_exact(&mut pixels)
            .map_err(|e| Error::format("PPM", format!("truncated pixel data: {e}")))?;
        Self::new(header.width, header.height, pixels)
    }
}

pub(crate) struct NetpbmHeader {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
}

/// Parses `magic width height maxval` followed by the single whitespace byte
/// that precedes binary data. `#` comments are skipped.
pub(crate) fn read_netpbm_header<R: BufRead>(
    r: &mut R,
    magic: &'static str,
) -> Result<NetpbmHeader> {
    let what = if magic == "P6" { "PPM" } else { "PGM" };
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        let mut token = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            if r.read(&mut byte)? == 0 {
                return Err(Error::format(what, "unexpected end of header"));
            }
            let b = byte[0];
            if b == b'#' && token.is_empty() {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
                continue;
            }
            if b.is_ascii_whitespace() {
                if token.is_empty() {
                    continue;
                }
                break;
            }
            token.push(b);
            if token.len() > 16 {
                return Err(Error::format(what, "header token too long"));
            }
        }
        tokens.push(String::from_utf8_lossy(&token).into_owned());
    }
    if tokens[0] != magic {
        return Err(Error::format(
            what,
            format!("bad magic {:?} (expected {magic})", tokens[0]),
        ));
    }
    let parse = |s: &str, field: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::format(what, format!("bad {field} {s:?}")))
    };
    let width = parse(&tokens[1], "width")?;
    let height = parse(&tokens[2], "height")?;
    let maxval = parse(&tokens[3], "maxval")? as u32;
    if width == 0 || height == 0 {
        return Err(Error::format(what, "zero dimension"));
    }
    Ok(NetpbmHeader {
        width,
        height,
        maxval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_with_comment() {
        let mut img = SourceImage::filled(3, 2, [1, 2, 3]).unwrap();
        img.set_pixel(2, 1, [250, 0, 7]);
        let mut buf = Vec::new();
        img.encode_ppm(&mut buf).unwrap();
        let back = SourceImage::decode_ppm(&mut buf.as_slice()).unwrap();
        assert_eq!(back, img);

        let mut commented = b"P6\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        let back = SourceImage::decode_ppm(&mut commented.as_slice()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_rejects_bad_input() {
        assert!(SourceImage::decode_ppm(&mut &b"P5\n1 1\n255\n\0"[..]).is_err());
        assert!(SourceImage::decode_ppm(&mut &b"P6\n2 2\n255\n\0\0\0"[..]).is_err());
        assert!(SourceImage::decode_ppm(&mut &b"P6\n1 1\n65535\n\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn crop_bounds() {
        let img = SourceImage::filled(4, 4, [9, 9, 9]).unwrap();
        assert_eq!(img.crop(2, 2, 2, 2).unwrap().width(), 2);
        assert!(img.crop(3, 0, 2, 2).is_err());
    }
}
