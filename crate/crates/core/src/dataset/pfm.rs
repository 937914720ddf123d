//! Single-channel Portable Float Map (`Pf`) reader and writer.
//!
//! Files are written little-endian (scale `-1.0`) with scanlines stored
//! bottom-to-top as the format prescribes. The reader also accepts
//! big-endian files (positive scale).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn write_pfm_to<W: Write>(mut w: W, field: &Array2<f32>) -> std::io::Result<()> {
    let (rows, cols) = field.dim();
    write!(w, "Pf\n{cols} {rows}\n-1.0\n")?;
    let mut line = Vec::with_capacity(cols * 4);
    for y in (0..rows).rev() {
        line.clear();
        for x in 0..cols {
            line.extend_from_slice(&field[(y, x)].to_le_bytes());
        }
        w.write_all(&line)?;
    }
    w.flush()
}

pub fn write_pfm(path: &Path, field: &Array2<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pfm_to(BufWriter::new(file), field).map_err(|e| Error::io(path, e))
}

fn next_token<R: Read>(r: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r
            .read(&mut byte)
            .map_err(|e| Error::Pfm(format!("header read failed: {e}")))?;
        if n == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
        if token.len() > 32 {
            return Err(Error::Pfm("header token too long".into()));
        }
    }
    if token.is_empty() {
        return Err(Error::Pfm("truncated header".into()));
    }
    String::from_utf8(token).map_err(|_| Error::Pfm("header is not ASCII".into()))
}

pub fn read_pfm_from<R: Read>(mut r: R) -> Result<Array2<f32>> {
    match next_token(&mut r)?.as_str() {
        "Pf" => {}
        "PF" => return Err(Error::Pfm("three-channel PF files are not supported".into())),
        other => return Err(Error::Pfm(format!("bad magic `{other}`"))),
    }
    let parse = |t: String, what: &str| -> Result<usize> {
        t.parse::<usize>()
            .map_err(|_| Error::Pfm(format!("bad {what} `{t}`")))
    };
    let cols = parse(next_token(&mut r)?, "width")?;
    let rows = parse(next_token(&mut r)?, "height")?;
    let scale_tok = next_token(&mut r)?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::Pfm(format!("bad scale `{scale_tok}`")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Pfm(format!("bad scale `{scale_tok}`")));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; rows * cols * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Pfm(format!("truncated raster: {e}")))?;
    let mut field = Array2::<f32>::zeros((rows, cols));
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (stored_row, x) = (i / cols, i % cols);
        field[(rows - 1 - stored_row, x)] = v;
    }
    Ok(field)
}

pub fn read_pfm(path: &Path) -> Result<Array2<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pfm_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_scanline_order() {
        let field = Array2::from_shape_vec((2, 3), vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut buf = Vec::new();
        write_pfm_to(&mut buf, &field).unwrap();
        assert!(buf.starts_with(b"Pf\n3 2\n-1.0\n"));
        let body = &buf[b"Pf\n3 2\n-1.0\n".len()..];
        // Bottom row first.
        assert_eq!(&body[..4], &4.0f32.to_le_bytes());
        assert_eq!(read_pfm_from(&buf[..]).unwrap(), field);
    }

    #[test]
    fn reads_big_endian() {
        let mut buf = b"Pf\n1 2\n1.0\n".to_vec();
        buf.extend_from_slice(&7.5f32.to_be_bytes());
        buf.extend_from_slice(&(-1.25f32).to_be_bytes());
        let f = read_pfm_from(&buf[..]).unwrap();
        assert_eq!(f[(1, 0)], 7.5);
        assert_eq!(f[(0, 0)], -1.25);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_pfm_from(&b"P6\n1 1\n255\n"[..]).is_err());
        assert!(read_pfm_from(&b"Pf\n4 4\n-1.0\n\x00\x00"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            // Arbitrary finite bit patterns, including subnormals and -0.0.
            let mut state = seed | 1;
            let field = Array2::from_shape_fn((rows, cols), |_| loop {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                let v = f32::from_bits(state as u32);
                if v.is_finite() { break v; }
            });
            let mut buf = Vec::new();
            write_pfm_to(&mut buf, &field).unwrap();
            let back = read_pfm_from(&buf[..]).unwrap();
            for (a, b) in field.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
