//! Binary PGM (`P5`, maxval 255) and grayscale PFM (`Pf`) codecs.
//!
//! PGM carries label masks, one byte per pixel holding the class index.
//! PFM carries probability maps as 32-bit floats. PFM rows are stored
//! bottom-up and a negative scale marks little-endian data, which is what the
//! writer emits. The reader also accepts big-endian (positive scale) files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabelMask, ProbabilityMap};
use crate::error::{Error, Result};

/// Reads header tokens of a netpbm-style file: whitespace separated, `#`
/// comments running to end of line.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("truncated header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::format("header is not ASCII"))
    }

    fn dimension(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse::<u32>()
            .map_err(|_| Error::format(format!("bad {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte that separates header from raster.
    fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format("missing whitespace after header")),
        }
    }
}

/// Decodes a binary PGM with maxval 255 into `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let mut hdr = HeaderReader { bytes, pos: 0 };
    let magic = hdr.token()?;
    if magic != "P5" {
        return Err(Error::format(format!("expected P5 magic, found {magic:?}")));
    }
    let width = hdr.dimension("width")?;
    let height = hdr.dimension("height")?;
    let maxval = hdr.dimension("maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("maxval must be 255, found {maxval}")));
    }
    let start = hdr.end_of_header()?;
    let expected = width as usize * height as usize;
    let body = &bytes[start..];
    if body.len() != expected {
        return Err(Error::format(format!(
            "PGM body has {} bytes, header declares {expected}",
            body.len()
        )));
    }
    Ok((width, height, body.to_vec()))
}

pub fn write_pgm<W: Write>(mut out: W, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width as usize * height as usize {
        return Err(Error::validation("pixel count does not match dimensions"));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

/// Decodes a grayscale PFM into `(width, height, row-major top-down values)`.
pub fn read_pfm(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>)> {
    let mut hdr = HeaderReader { bytes, pos: 0 };
    let magic = hdr.token()?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::format("color PFM is not supported, expected Pf")),
        _ => return Err(Error::format(format!("expected Pf magic, found {magic:?}"))),
    }
    let width = hdr.dimension("width")?;
    let height = hdr.dimension("height")?;
    let scale_tok = hdr.token()?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM scale must be a nonzero number"));
    }
    let little_endian = scale < 0.0;
    let start = hdr.end_of_header()?;
    let body = &bytes[start..];
    let (w, h) = (width as usize, height as usize);
    if body.len() != w * h * 4 {
        return Err(Error::format(format!(
            "PFM body has {} bytes, header declares {}",
            body.len(),
            w * h * 4
        )));
    }
    let mut values = vec![0f32; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // file row 0 is the bottom row of the image
        let (file_row, x) = (i / w, i % w);
        values[(h - 1 - file_row) * w + x] = v;
    }
    Ok((width, height, values))
}

/// Writes a little-endian grayscale PFM from top-down row-major values.
pub fn write_pfm<W: Write>(mut out: W, width: u32, height: u32, values: &[f32]) -> Result<()> {
    let (w, h) = (width as usize, height as usize);
    if values.len() != w * h {
        return Err(Error::validation("value count does not match dimensions"));
    }
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(w * 4);
    for row in (0..h).rev() {
        buf.clear();
        for v in &values[row * w..(row + 1) * w] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Loads a label mask from a PGM file whose pixel values are class indices.
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let (w, h, data) = read_pgm(&read_file(path.as_ref())?)?;
    LabelMask::new(w, h, data)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    write_pgm(out, mask.width(), mask.height(), mask.data())
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let (w, h, data) = read_pfm(&read_file(path.as_ref())?)?;
    ProbabilityMap::new(w, h, data)
}

pub fn save_probmap(path: impl AsRef<Path>, map: &ProbabilityMap) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    write_pfm(out, map.width(), map.height(), map.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(width: u32, height: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        write_pgm(&mut v, width, height, body).unwrap();
        v
    }

    #[test]
    fn reads_all_zero_mask() {
        let bytes = pgm(3, 2, &[0; 6]);
        let (w, h, data) = read_pgm(&bytes).unwrap();
        let m = LabelMask::new(w, h, data).unwrap();
        assert_eq!(m.dims(), (3, 2));
        assert!(m.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn class_value_five_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, pgm(2, 2, &[0, 1, 5, 2])).unwrap();
        assert!(matches!(load_mask(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2]);
        assert_eq!(read_pgm(&bytes).unwrap(), (2, 1, vec![1, 2]));
    }

    #[test]
    fn malformed_pgm_headers() {
        for bad in [
            &b"P2\n1 1\n255\n\x00"[..],
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n1 1\n255\n",
            b"P5\n1 1\n255\n\x00\x00",
            b"P5\n1 x\n255\n\x00",
            b"P5\n1",
        ] {
            assert!(matches!(read_pgm(bad), Err(Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn pfm_uniform_map() {
        let mut bytes = Vec::new();
        write_pfm(&mut bytes, 4, 4, &[0.5; 16]).unwrap();
        let (w, h, v) = read_pfm(&bytes).unwrap();
        let map = ProbabilityMap::new(w, h, v).unwrap();
        assert_eq!(map.data(), &[0.5; 16]);
    }

    #[test]
    fn pfm_out_of_range_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pfm");
        let mut bytes = Vec::new();
        write_pfm(&mut bytes, 2, 1, &[0.1, 1.25]).unwrap();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_probmap(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let mut bytes = Vec::new();
        write_pfm(&mut bytes, 1, 2, &[0.25, 0.75]).unwrap();
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &0.75f32.to_le_bytes());
        assert_eq!(&body[4..], &0.25f32.to_le_bytes());
    }

    #[test]
    fn pfm_big_endian_accepted() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.5f32.to_be_bytes());
        bytes.extend_from_slice(&1.0f32.to_be_bytes());
        assert_eq!(read_pfm(&bytes).unwrap(), (2, 1, vec![0.5, 1.0]));
    }

    #[test]
    fn color_pfm_rejected() {
        assert!(matches!(read_pfm(b"PF\n1 1\n-1.0\n"), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn mask_round_trip(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
            let mut s = seed | 1;
            let data: Vec<u8> = (0..w * h).map(|_| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                (s % 3) as u8
            }).collect();
            let mask = LabelMask::new(w, h, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.pgm");
            save_mask(&path, &mask).unwrap();
            prop_assert_eq!(load_mask(&path).unwrap(), mask);
        }

        #[test]
        fn probmap_round_trip_is_bit_exact(
            w in 1u32..24,
            h in 1u32..24,
            values in proptest::collection::vec(0.0f32..=1.0, 576),
        ) {
            let data = values[..(w * h) as usize].to_vec();
            let map = ProbabilityMap::new(w, h, data).unwrap();
            let mut bytes = Vec::new();
            write_pfm(&mut bytes, w, h, map.data()).unwrap();
            let (rw, rh, back) = read_pfm(&bytes).unwrap();
            prop_assert_eq!((rw, rh), (w, h));
            for (a, b) in back.iter().zip(map.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
