//! Binary checkpoint: `GRIE1`, parameter count, then per parameter the name
//! (u32 length + UTF-8), rank, u32 extents and little-endian f32 values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Float, ParamStore, Tensor};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GRIE1";

pub fn write_checkpoint(store: &ParamStore, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        out.write_all(&(p.name.len() as u32).to_le_bytes())?;
        out.write_all(p.name.as_bytes())?;
        out.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &e in p.value.shape() {
            out.write_all(&(e as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            // The payload is f32 whatever `Float` is.
            #[allow(clippy::unnecessary_cast)]
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(mut input: impl Read) -> Result<ParamStore> {
    let mut buf = Vec::new();
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("unknown magic".into()));
    }
    let count = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("extent overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as Float)
            .collect();
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    if cur.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf).at(path)?;
    fs::write(path, buf).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = fs::File::open(path).at(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "graph.W1",
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-3, -7.25]).unwrap(),
        )
        .unwrap();
        s.insert("crf.transitions", Tensor::full(&[2, 2], Float::NEG_INFINITY))
            .unwrap();
        s
    }

    #[test]
    fn layout_is_fixed() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        assert_eq!(&buf[..5], b"GRIE1");
        assert_eq!(&buf[5..9], &2u32.to_le_bytes());
        assert_eq!(&buf[9..13], &8u32.to_le_bytes());
        assert_eq!(&buf[13..21], b"graph.W1");
        assert_eq!(&buf[21..25], &2u32.to_le_bytes());
        assert_eq!(&buf[25..29], &2u32.to_le_bytes());
        assert_eq!(&buf[29..33], &3u32.to_le_bytes());
        assert_eq!(&buf[33..37], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_trailing_bytes() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(long.as_slice())
            .unwrap_err()
            .to_string()
            .contains("trailing"));
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_names_shapes_values(
            values in proptest::collection::vec(-1e6f32..1e6, 1..40),
            rows in 1usize..5,
        ) {
            let cols = values.len().div_ceil(rows);
            let mut data: Vec<Float> = values.iter().map(|&v| v as Float).collect();
            data.resize(rows * cols, 0.0);
            let mut s = ParamStore::new();
            s.insert("w", Tensor::new(vec![rows, cols], data).unwrap()).unwrap();
            s.insert("b", Tensor::scalar(0.5)).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&s, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.names().collect::<Vec<_>>(), vec!["w", "b"]);
            for p in s.iter() {
                prop_assert_eq!(back.value(&p.name).unwrap(), &p.value);
            }
        }
    }
}
