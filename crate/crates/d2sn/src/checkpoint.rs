//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "D2SNCKPT" | format version u32
//! config: d_model u32, n_heads u32, d_feat u32, ffn_hidden u32,
//!         global_dim u32, init u8, seed u64
//! parameter count u64 | tensor count u32
//! per tensor: name length u32, name bytes, rows u32, cols u32, rows·cols f64
//! ```
//!
//! The tensor section is also used on its own by optimizer state files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::D2sn;
use crate::net::{D2snConfig, InitScheme};

const MAGIC: &[u8; 8] = b"D2SNCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(buf)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get(r)?) as usize)
}

/// Writes a count-prefixed list of named tensors.
pub fn write_tensors<'a>(w: &mut impl Write, tensors: impl ExactSizeIterator<Item = (&'a str, &'a Matrix)>) -> Result<()> {
    put_u32(w, tensors.len())?;
    for (name, m) in tensors {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, m.rows())?;
        put_u32(w, m.cols())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<(String, Matrix)>> {
    let n = get_u32(r)?;
    let mut out = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let len = get_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (get_u32(r)?, get_u32(r)?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(get(r)?));
        }
        out.push((name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(out)
}

pub fn write_checkpoint(net: &D2sn, w: &mut impl Write) -> Result<()> {
    let c = net.config();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [c.d_model, c.n_heads, c.d_feat, c.ffn_hidden, c.global_dim] {
        put_u32(w, v)?;
    }
    w.write_all(&[match c.init {
        InitScheme::ZeroHeads => 0u8,
        InitScheme::Random => 1,
    }])?;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&(net.n_scalars() as u64).to_le_bytes())?;
    write_tensors(w, net.params().iter())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<D2sn> {
    if &get::<8>(r)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(get(r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let d_model = get_u32(r)?;
    let n_heads = get_u32(r)?;
    let d_feat = get_u32(r)?;
    let ffn_hidden = get_u32(r)?;
    let global_dim = get_u32(r)?;
    let init = match get::<1>(r)?[0] {
        0 => InitScheme::ZeroHeads,
        1 => InitScheme::Random,
        other => return Err(Error::Checkpoint(format!("unknown init scheme {other}"))),
    };
    let seed = u64::from_le_bytes(get(r)?);
    let count = u64::from_le_bytes(get(r)?) as usize;
    let config = D2snConfig { d_model, n_heads, d_feat, ffn_hidden, global_dim, init, seed };
    let mut net = D2sn::new(config)?;
    let tensors = read_tensors(r)?;
    if tensors.len() != net.params().len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", net.params().len(), tensors.len())));
    }
    for (i, (name, m)) in tensors.into_iter().enumerate() {
        let expected = net.params().get(i);
        if name != net.params().name(i) || m.shape() != expected.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {i}: expected {} {:?}, found {name} {:?}",
                net.params().name(i),
                expected.shape(),
                m.shape()
            )));
        }
        *net.params_mut().get_mut(i) = m;
    }
    if net.n_scalars() != count {
        return Err(Error::Checkpoint(format!("header says {count} parameters, tensors hold {}", net.n_scalars())));
    }
    if !net.params().is_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok(net)
}

pub fn save(net: &D2sn, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(net, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<D2sn> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let net = read_checkpoint(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", cursor.len())));
    }
    Ok(net)
}
