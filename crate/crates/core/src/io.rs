//! DCRF tensor container: a minimal binary format for dense f32 tensors.
//!
//! Little-endian layout, no padding or compression:
//!
//! ```text
//! magic   4 bytes  "DCRF"
//! version u32      1
//! dtype   u32      1 (f32)
//! ndim    u32
//! dims    ndim * u64
//! payload product(dims) * 4 bytes, row-major f32
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"DCRF";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(&mut w, &MAGIC)?;
    emit(&mut w, &VERSION.to_le_bytes())?;
    emit(&mut w, &DTYPE_F32.to_le_bytes())?;
    emit(&mut w, &(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        emit(&mut w, &(d as u64).to_le_bytes())?;
    }
    for &x in tensor.data() {
        emit(&mut w, &x.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, path, "header")?;
    if magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dtype = read_u32(&mut r, path)?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(path, format!("unsupported dtype code {dtype}")));
    }
    let ndim = read_u32(&mut r, path)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::format(path, format!("unreasonable rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: u64 = 1;
    for _ in 0..ndim {
        let d = read_u64(&mut r, path)?;
        if d == 0 {
            return Err(Error::format(path, "zero-sized dimension"));
        }
        count = count.checked_mul(d).ok_or_else(|| Error::DimOverflow {
            path: path.into(),
            reason: format!("dimension product overflows u64 at dim {d}"),
        })?;
        dims.push(d);
    }
    let payload_bytes = count.checked_mul(4).ok_or_else(|| Error::DimOverflow {
        path: path.into(),
        reason: "payload byte count overflows u64".into(),
    })?;
    if payload_bytes > (isize::MAX as u64) {
        return Err(Error::DimOverflow {
            path: path.into(),
            reason: format!("payload of {payload_bytes} bytes exceeds address space"),
        });
    }

    let mut data = Vec::with_capacity(count as usize);
    let mut buf = [0u8; 4];
    for i in 0..count {
        if let Err(e) = r.read_exact(&mut buf) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(Error::Truncated {
                    path: path.into(),
                    expected: payload_bytes,
                    found: i * 4,
                });
            }
            return Err(Error::io(path, e));
        }
        data.push(f32::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => return Err(Error::io(path, e)),
    }

    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    Tensor::from_vec(&shape, data)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("truncated {what}"))
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or(r, &mut buf, path, "header")?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact_or(r, &mut buf, path, "header")?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dcrf");
        let mut rng = Rng::new(5);
        let t: Tensor<f32> = rng.randn(&[3, 4, 5]).unwrap();
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout_matches_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dcrf");
        let t = Tensor::from_vec(&[2, 3], vec![0.0f32; 6]).unwrap();
        save_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"DCRF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 32 + 6 * 4);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dcrf");
        std::fs::write(&path, b"NOPE1234567890123456").unwrap();
        assert!(matches!(load_tensor(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.dcrf");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(&MAGIC).unwrap();
        f.write_all(&VERSION.to_le_bytes()).unwrap();
        f.write_all(&DTYPE_F32.to_le_bytes()).unwrap();
        f.write_all(&1u32.to_le_bytes()).unwrap();
        f.write_all(&10u64.to_le_bytes()).unwrap();
        // header claims 10 elements, provide 9
        for i in 0..9 {
            f.write_all(&(i as f32).to_le_bytes()).unwrap();
        }
        drop(f);
        match load_tensor(&path) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 40);
                assert_eq!(found, 36);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn dimension_overflow_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("huge.dcrf");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(&MAGIC).unwrap();
        f.write_all(&VERSION.to_le_bytes()).unwrap();
        f.write_all(&DTYPE_F32.to_le_bytes()).unwrap();
        f.write_all(&2u32.to_le_bytes()).unwrap();
        f.write_all(&u64::MAX.to_le_bytes()).unwrap();
        f.write_all(&2u64.to_le_bytes()).unwrap();
        drop(f);
        assert!(matches!(
            load_tensor(&path),
            Err(Error::DimOverflow { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_tensor("/nonexistent/zzz.dcrf"),
            Err(Error::Io { .. })
        ));
    }
}
