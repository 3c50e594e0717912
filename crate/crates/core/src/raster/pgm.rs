//! Label masks on disk: binary PGM (P5, maxval 255).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LabelMask, RasterError};

/// Read a label mask from a binary PGM file. Codes are validated against the
/// label alphabet {0, 1, 255}.
pub fn read_mask<P: AsRef<Path>>(path: P) -> Result<LabelMask, RasterError> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;

    let mut pos = 0usize;
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| truncated())?;
    if magic != b"P5" {
        return Err(RasterError::Format(format!(
            "not a binary PGM (magic {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_dim(next_token(&bytes, &mut pos).ok_or_else(|| truncated())?)?;
    let height = parse_dim(next_token(&bytes, &mut pos).ok_or_else(|| truncated())?)?;
    let maxval = parse_dim(next_token(&bytes, &mut pos).ok_or_else(|| truncated())?)?;
    if maxval != 255 {
        return Err(RasterError::Format(format!("maxval {} != 255", maxval)));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(truncated());
    }
    if bytes.len() > pos + need {
        return Err(RasterError::Format("trailing bytes after payload".into()));
    }
    LabelMask::new(width, height, bytes[pos..pos + need].to_vec())
}

fn truncated() -> RasterError {
    RasterError::Format("truncated PGM".into())
}

fn parse_dim(token: &[u8]) -> Result<usize, RasterError> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| RasterError::Format("bad PGM header field".into()))
}

/// Next whitespace-delimited header token, skipping `#` comment lines.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

/// Write a label mask as binary PGM. Byte-deterministic.
pub fn write_mask<P: AsRef<Path>>(mask: &LabelMask, path: P) -> Result<(), RasterError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    w.write_all(&mask.data)?;
    w.flush()?;
    Ok(())
}
