//! Binary weight checkpoints.
//!
//! Layout, all little-endian:
//! `PSWT`, version u32, then until EOF per tensor: name length u32, name
//! bytes (UTF-8), rank u32, rank × dim u64, product(dims) × f64.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSWT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.rank() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8], source_name: &str) -> Result<Vec<(String, Tensor)>> {
    let mut r = bytes;
    let pos = |r: &&[u8]| (bytes.len() - r.len()) as u64;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::parse(source_name, 0, "truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(source_name, 0, format!("bad magic {magic:?}")));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::parse(source_name, 4, "truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(source_name, 4, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while !r.is_empty() {
        let at = pos(&r);
        let truncated = |_| Error::parse(source_name, at, "truncated tensor record");
        let name_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if name_len > r.len() {
            return Err(Error::parse(source_name, pos(&r), "name runs past end of file"));
        }
        let (name, rest) = r.split_at(name_len);
        let name = std::str::from_utf8(name)
            .map_err(|_| Error::parse(source_name, pos(&r), "tensor name is not UTF-8"))?
            .to_string();
        r = rest;
        let rank = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::parse(source_name, pos(&r) - 4, format!("rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>().map_err(truncated)? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = match n {
            Some(n) if n.checked_mul(8).is_some_and(|b| b <= r.len()) => n,
            _ => return Err(Error::parse(source_name, pos(&r), "tensor data runs past end of file")),
        };
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
        out.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    read_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            (
                "conv.0.w".into(),
                Tensor::from_vec(vec![2, 1, 1, 1], vec![0.1, -f64::MIN_POSITIVE]).unwrap(),
            ),
            ("conv.0.b".into(), Tensor::from_vec(vec![2], vec![1e300, -0.0]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let back = read_checkpoint(&buf, "mem").unwrap();
        assert_eq!(back.len(), 2);
        for ((na, ta), (nb, tb)) in sample().iter().zip(&back) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a".into(), Tensor::scalar(2.0))]).unwrap();
        assert_eq!(&buf[..4], b"PSWT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(buf[12], b'a');
        assert_eq!(&buf[13..17], &1u32.to_le_bytes());
        assert_eq!(&buf[17..25], &1u64.to_le_bytes());
        assert_eq!(&buf[25..33], &2.0f64.to_le_bytes());
        assert_eq!(buf.len(), 33);
    }

    #[test]
    fn corrupt_inputs_name_offsets() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad, "m"), Err(Error::Parse { offset: 0, .. })));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut, "m"), Err(Error::Parse { .. })));
    }
}
