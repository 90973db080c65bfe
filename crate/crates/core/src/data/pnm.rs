//! Binary PGM (P5) and PPM (P6) image I/O at 8 or 16 bits per sample.
//!
//! Stored samples are `round(v * (2^bits - 1))` of the real-valued `[0, 1]`
//! tensors; 16-bit samples are big-endian per the Netpbm convention.
//! `save` then `load` is the identity at the stored bit depth.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("at byte {pos}: {msg}")]
    Malformed { pos: usize, msg: String },
    #[error("unsupported image shape {0:?}; need [1, 1|3, H, W]")]
    BadShape(Vec<usize>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn err(pos: usize, msg: impl Into<String>) -> PnmError {
    PnmError::Malformed { pos, msg: msg.into() }
}

pub fn save(path: &Path, image: &Tensor, bits: u8) -> Result<(), PnmError> {
    let shape = image.shape();
    let ok = shape.len() == 4 && shape[0] == 1 && (shape[1] == 1 || shape[1] == 3);
    if !ok {
        return Err(PnmError::BadShape(shape.to_vec()));
    }
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let maxval: u32 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(err(0, format!("unsupported bit depth {bits}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = data[ch * plane + y * w + x].clamp(0.0, 1.0);
                let q = (v * maxval as f64).round() as u32;
                if maxval > 255 {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                } else {
                    out.push(q as u8);
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor, PnmError> {
    let bytes = fs::read(path)?;
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<Tensor, PnmError> {
    if bytes.len() < 2 {
        return Err(err(0, "truncated header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(err(
                0,
                format!("bad magic number {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        *f = read_int(bytes, &mut pos)?;
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(err(pos, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "missing raster separator"));
    }
    pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let expected = w * h * channels * bytes_per;
    if bytes.len() - pos < expected {
        return Err(err(
            pos,
            format!("raster has {} bytes, expected {expected}", bytes.len() - pos),
        ));
    }
    let raster = &bytes[pos..pos + expected];
    let plane = h * w;
    let mut data = vec![0.0; channels * plane];
    let mut i = 0usize;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let q = if bytes_per == 2 {
                    u16::from_be_bytes([raster[i], raster[i + 1]]) as u32
                } else {
                    raster[i] as u32
                };
                i += bytes_per;
                data[ch * plane + y * w + x] = q as f64 / maxval as f64;
            }
        }
    }
    Ok(Tensor::new(vec![1, channels, h, w], data).expect("consistent shape"))
}

fn read_int(bytes: &[u8], pos: &mut usize) -> Result<usize, PnmError> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(err(start, "expected integer"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(start, "integer out of range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::SmallRng;

    #[test]
    fn roundtrip_8bit_is_identity_on_quantized_values() {
        let mut rng = SmallRng::new(1);
        let data: Vec<f64> = (0..3 * 8 * 8)
            .map(|_| (rng.uniform(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        let img = Tensor::new(vec![1, 3, 8, 8], data).unwrap();
        let path = std::env::temp_dir().join("restoreib-pnm-8.ppm");
        save(&path, &img, 8).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(img, back);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn quantization_error_bounded_at_16bit() {
        let mut rng = SmallRng::new(2);
        let data: Vec<f64> = (0..4 * 4).map(|_| rng.uniform(0.0, 1.0)).collect();
        let img = Tensor::new(vec![1, 1, 4, 4], data.clone()).unwrap();
        let path = std::env::temp_dir().join("restoreib-pnm-16.pgm");
        save(&path, &img, 16).unwrap();
        let back = load(&path).unwrap();
        for (a, b) in data.iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn malformed_magic_is_rejected_with_position() {
        let e = parse(b"P4\n2 2\n255\n....").unwrap_err();
        match e {
            PnmError::Malformed { pos, msg } => {
                assert_eq!(pos, 0);
                assert!(msg.contains("magic"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let e = parse(b"P5\n4 4\n255\nab").unwrap_err();
        assert!(matches!(e, PnmError::Malformed { .. }));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P5\n# a comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8, 255u8]);
        let img = parse(&bytes).unwrap();
        assert_eq!(img.shape(), &[1, 1, 1, 2]);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }
}
