//! Binary PPM (P6) and PGM (P5) readers/writers, 8-bit maxval only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Argument("PPM requires an RGB image".into()));
    }
    write_netpbm(path, img, b"P6")
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Argument("PGM requires a grayscale image".into()));
    }
    write_netpbm(path, img, b"P5")
}

fn write_netpbm(path: &Path, img: &Image, magic: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(img.data.len() + 32);
    buf.extend_from_slice(magic);
    buf.push(b'\n');
    write!(buf, "{} {}\n255\n", img.width, img.height).expect("write to Vec");
    buf.extend_from_slice(&img.data);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let img = read_image(path)?;
    if img.channels != 3 {
        return Err(Error::Format(format!("{}: not a PPM file", path.display())));
    }
    Ok(img)
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let img = read_image(path)?;
    if img.channels != 1 {
        return Err(Error::Format(format!("{}: not a PGM file", path.display())));
    }
    Ok(img)
}

/// Reads PPM or PGM by magic number; PNG too when the `png` feature is on.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.first_chunk::<2>() {
        Some(b"P6") => parse_netpbm(&bytes, 3, path),
        Some(b"P5") => parse_netpbm(&bytes, 1, path),
        #[cfg(feature = "png")]
        Some([0x89, b'P']) => read_png(&bytes, path),
        _ => Err(Error::Format(format!(
            "{}: unsupported image format",
            path.display()
        ))),
    }
}

#[cfg(feature = "png")]
fn read_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let dynimg = image::load_from_memory(bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let rgb = dynimg.to_rgb8();
    Image::new(
        rgb.width() as usize,
        rgb.height() as usize,
        3,
        rgb.into_raw(),
    )
}

fn parse_netpbm(bytes: &[u8], channels: usize, path: &Path) -> Result<Image> {
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    let mut pos = 2usize;

    // Header tokens may be separated by whitespace and '#' comments.
    let next_token = |pos: &mut usize| -> Result<usize> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(fail("truncated header"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail("bad header token"))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval != 255 {
        return Err(fail("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing raster separator"));
    }
    pos += 1;

    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(fail("truncated raster data"));
    }
    Image::new(width, height, channels, raster[..expected].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let img = Image::new(3, 2, 3, (0..18).map(|i| (i * 13) as u8).collect()).unwrap();
        write_ppm(&path, &img).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let img = Image::new(4, 2, 1, vec![0, 63, 127, 255, 1, 2, 3, 4]).unwrap();
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);

        let commented = dir.path().join("c.pgm");
        std::fs::write(&commented, b"P5\n# a comment\n2 1\n255\n\x10\x20").unwrap();
        let read = read_pgm(&commented).unwrap();
        assert_eq!(read.data, vec![0x10, 0x20]);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P6\n10 10\n255\nshort").unwrap();
        assert!(matches!(read_ppm(&path), Err(Error::Format(_))));
        let nothing = dir.path().join("empty.ppm");
        std::fs::write(&nothing, b"").unwrap();
        assert!(matches!(read_image(&nothing), Err(Error::Format(_))));
    }
}
