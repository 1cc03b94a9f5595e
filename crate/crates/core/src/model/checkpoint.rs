//! Flat binary parameter container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"FXCH"
//! version u32
//! repeated until EOF:
//!   name_len u16, name bytes (UTF-8)
//!   role u8, rank u8, dims u32[rank]
//!   payload f64[product(dims)]
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Role, Tensor};

pub const MAGIC: &[u8; 4] = b"FXCH";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ParamSet, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for e in params.entries() {
        let name = e.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("name {:?} too long", e.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        let shape = e.tensor.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::invalid("rank exceeds 255"))?;
        w.write_all(&[e.role.code(), rank])?;
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::invalid("dimension exceeds u32"))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in e.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on a clean EOF before the first byte.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    Ok(true)
}

pub fn read_params<R: Read>(mut r: R, origin: &Path) -> Result<ParamSet> {
    let fmt = |msg: String| Error::format(origin, msg);
    let truncated = |e: io::Error| fmt(format!("truncated checkpoint: {e}"));
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(truncated)?;
    if &head[..4] != MAGIC {
        return Err(fmt(format!("bad magic {:?}", &head[..4])));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    loop {
        let mut len = [0u8; 2];
        if !read_or_eof(&mut r, &mut len).map_err(truncated)? {
            break;
        }
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| fmt("parameter name is not UTF-8".into()))?;
        let mut rr = [0u8; 2];
        r.read_exact(&mut rr).map_err(truncated)?;
        let role = Role::from_code(rr[0]).ok_or_else(|| fmt(format!("unknown role code {}", rr[0])))?;
        let mut shape = Vec::with_capacity(rr[1] as usize);
        for _ in 0..rr[1] {
            let mut d = [0u8; 4];
            r.read_exact(&mut d).map_err(truncated)?;
            shape.push(u32::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 8];
        r.read_exact(&mut payload).map_err(truncated)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| fmt(e.to_string()))?;
        params.push(name, tensor, role).map_err(|e| fmt(e.to_string()))?;
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = io::BufWriter::new(f);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let f = std::fs::File::open(path)?;
    read_params(io::BufReader::new(f), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};

    #[test]
    fn header_layout_is_bit_exact() {
        let mut p = ParamSet::new();
        p.push("b", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), Role::Bias).unwrap();
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let mut expect = b"FXCH".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1u16.to_le_bytes());
        expect.push(b'b');
        expect.extend_from_slice(&[4, 1]);
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn batchnorm_model_round_trips() {
        let m = build_model(&ModelSpec::cnn1d_har(16), 3).unwrap();
        let mut buf = Vec::new();
        write_params(&m.params, &mut buf).unwrap();
        let back = read_params(buf.as_slice(), Path::new("mem")).unwrap();
        assert!(back.is_congruent(&m.params));
        assert_eq!(back.flatten_values(), m.params.flatten_values());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_params(&b"NOPE\x01\0\0\0"[..], Path::new("x")),
            Err(Error::Format { .. })
        ));
        let m = build_model(&ModelSpec::logreg(2, 2), 0).unwrap();
        let mut buf = Vec::new();
        write_params(&m.params, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_params(buf.as_slice(), Path::new("x")), Err(Error::Format { .. })));
    }
}
