//! The LMS stack container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   "LUDV"            4 bytes
//! version u16 = 1
//! width   u32
//! height  u32
//! bands   u16
//! per band: center_nm f32, fwhm_nm f32, name 4 bytes (NUL padded)
//! payload: band-major, row-major f32 reflectance
//! ```
//!
//! Writing is byte-deterministic: the same image always produces the same
//! byte stream.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{BandMeta, MultispectralImage, RasterError};

pub const LMS_MAGIC: [u8; 4] = *b"LUDV";
pub const LMS_VERSION: u16 = 1;

/// Read a stack or single band from an LMS file.
pub fn read_raster<P: AsRef<Path>>(path: P) -> Result<MultispectralImage, RasterError> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    read_from(&mut r)
}

fn read_from<R: Read>(r: &mut R) -> Result<MultispectralImage, RasterError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| RasterError::Format("truncated header".into()))?;
    if magic != LMS_MAGIC {
        return Err(RasterError::Format(format!("bad magic {:02x?}", magic)));
    }
    let version = r
        .read_u16::<LittleEndian>()
        .map_err(|_| RasterError::Format("truncated header".into()))?;
    if version != LMS_VERSION {
        return Err(RasterError::Format(format!(
            "unsupported version {}",
            version
        )));
    }
    let width = read_u32(r)? as usize;
    let height = read_u32(r)? as usize;
    let band_count = r
        .read_u16::<LittleEndian>()
        .map_err(|_| RasterError::Format("truncated header".into()))? as usize;
    if width == 0 || height == 0 || band_count == 0 {
        return Err(RasterError::Format(format!(
            "degenerate dimensions {}x{}x{}",
            width, height, band_count
        )));
    }

    let mut bands = Vec::with_capacity(band_count);
    for _ in 0..band_count {
        let center_nm = read_f32(r)?;
        let fwhm_nm = read_f32(r)?;
        let mut name_raw = [0u8; 4];
        r.read_exact(&mut name_raw)
            .map_err(|_| RasterError::Format("truncated band table".into()))?;
        let end = name_raw.iter().position(|&b| b == 0).unwrap_or(4);
        let name = std::str::from_utf8(&name_raw[..end])
            .map_err(|_| RasterError::Format("band name is not UTF-8".into()))?
            .to_string();
        bands.push(BandMeta {
            center_nm,
            fwhm_nm,
            name,
        });
    }

    let count = width * height * band_count;
    let mut data = vec![0f32; count];
    for v in data.iter_mut() {
        *v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| RasterError::Format("truncated payload".into()))?;
    }
    // Trailing bytes mean the header lied about the payload size.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(RasterError::Format("trailing bytes after payload".into()));
    }

    MultispectralImage::new(width, height, bands, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, RasterError> {
    r.read_u32::<LittleEndian>()
        .map_err(|_| RasterError::Format("truncated header".into()))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, RasterError> {
    r.read_f32::<LittleEndian>()
        .map_err(|_| RasterError::Format("truncated band table".into()))
}

/// Write `image` as an LMS file. The image is validated before the file is
/// created, so an invalid image never leaves a partial file behind.
pub fn write_raster<P: AsRef<Path>>(
    image: &MultispectralImage,
    path: P,
) -> Result<(), RasterError> {
    // A MultispectralImage is validated at construction; re-validating here
    // keeps the no-file-on-error contract even for images assembled through
    // future unchecked paths.
    for &v in image.data() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(RasterError::Range(format!("value {} outside [0, 1]", v)));
        }
    }
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_to(image, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_to<W: Write>(image: &MultispectralImage, w: &mut W) -> Result<(), RasterError> {
    w.write_all(&LMS_MAGIC)?;
    w.write_u16::<LittleEndian>(LMS_VERSION)?;
    w.write_u32::<LittleEndian>(image.width() as u32)?;
    w.write_u32::<LittleEndian>(image.height() as u32)?;
    w.write_u16::<LittleEndian>(image.band_count() as u16)?;
    for meta in image.bands() {
        w.write_f32::<LittleEndian>(meta.center_nm)?;
        w.write_f32::<LittleEndian>(meta.fwhm_nm)?;
        let mut name_raw = [0u8; 4];
        let bytes = meta.name.as_bytes();
        if bytes.len() > 4 {
            return Err(RasterError::Format(format!(
                "band name {:?} longer than 4 bytes",
                meta.name
            )));
        }
        name_raw[..bytes.len()].copy_from_slice(bytes);
        w.write_all(&name_raw)?;
    }
    for &v in image.data() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Header size in bytes for a stack with `bands` bands.
#[cfg(test)]
fn header_len(bands: usize) -> usize {
    4 + 2 + 4 + 4 + 2 + bands * (4 + 4 + 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::default_bands;

    fn demo_image(w: usize, h: usize) -> MultispectralImage {
        let nb = 5;
        let mut data = Vec::new();
        for b in 0..nb {
            for i in 0..w * h {
                data.push(((b * 31 + i * 7) % 97) as f32 / 96.0);
            }
        }
        MultispectralImage::new(w, h, default_bands(), data).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.lms");
        let img = demo_image(8, 6);
        write_raster(&img, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.lms");
        std::fs::write(&path, b"NOPE rest of the file").unwrap();
        let err = read_raster(&path).unwrap_err();
        assert!(matches!(err, RasterError::Format(_)), "{:?}", err);
    }

    #[test]
    fn hand_assembled_minimal_file() {
        // 1 band, 2x2, values 0, 0.25, 0.5, 1.0 -- assembled byte by byte
        // from the container layout.
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"LUDV");
        bytes.extend_from_slice(&1u16.to_le_bytes()); // version
        bytes.extend_from_slice(&2u32.to_le_bytes()); // width
        bytes.extend_from_slice(&2u32.to_le_bytes()); // height
        bytes.extend_from_slice(&1u16.to_le_bytes()); // band count
        bytes.extend_from_slice(&560f32.to_le_bytes()); // center
        bytes.extend_from_slice(&16f32.to_le_bytes()); // fwhm
        bytes.extend_from_slice(b"G\0\0\0"); // name
        for v in [0f32, 0.25, 0.5, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.lms");
        std::fs::write(&path, &bytes).unwrap();
        let img = read_raster(&path).unwrap();
        assert_eq!((img.width(), img.height(), img.band_count()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(img.bands()[0].name, "G");
        assert_eq!(img.bands()[0].center_nm, 560.0);
    }

    #[test]
    fn out_of_range_payload_is_a_range_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hot.lms");
        let mut bytes: Vec<u8> = Vec::new();
        bytes.extend_from_slice(b"LUDV");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&560f32.to_le_bytes());
        bytes.extend_from_slice(&16f32.to_le_bytes());
        bytes.extend_from_slice(b"G\0\0\0");
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_raster(&path).unwrap_err(),
            RasterError::Range(_)
        ));
    }

    #[test]
    fn write_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let img = demo_image(5, 4);
        let p1 = dir.path().join("a.lms");
        let p2 = dir.path().join("b.lms");
        write_raster(&img, &p1).unwrap();
        write_raster(&img, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn file_size_matches_format_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sized.lms");
        // Keep the payload small; the arithmetic is what matters.
        let img = demo_image(14, 11);
        write_raster(&img, &path).unwrap();
        let expect = header_len(5) + 5 * 14 * 11 * 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expect);
        // A full production stack: header + 5 * 1400 * 1100 * 4 bytes.
        assert_eq!(header_len(5) + 5 * 1400 * 1100 * 4, 76 + 30_800_000);
    }
}
