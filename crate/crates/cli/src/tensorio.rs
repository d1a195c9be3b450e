//! Raw tensor files: a magic tag, a dimension header, and a little-endian
//! f32 payload. Used for dataset cases and exported sample maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, ArrayD, IxDyn};

pub const MAGIC: &[u8; 8] = b"CEDT0001";

/// Write an n-dimensional f32 tensor.
pub fn write_tensor(path: &Path, tensor: &ArrayD<f32>) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("creating tensor file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(tensor.ndim() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let std_layout = tensor.as_standard_layout();
    for &v in std_layout.as_slice().expect("standard layout") {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read an n-dimensional f32 tensor, validating magic and payload size.
pub fn read_tensor(path: &Path) -> Result<ArrayD<f32>> {
    let file = File::open(path)
        .with_context(|| format!("opening tensor file {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{}: bad tensor magic {magic:?}", path.display());
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let ndim = u32::from_le_bytes(buf4) as usize;
    if ndim > 8 {
        bail!("{}: implausible rank {ndim}", path.display());
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut buf8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut buf8)?;
        shape.push(u64::from_le_bytes(buf8) as usize);
    }
    let len: usize = shape.iter().product();
    let mut payload = vec![0f32; len];
    for v in payload.iter_mut() {
        r.read_exact(&mut buf4)?;
        *v = f32::from_le_bytes(buf4);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("{}: trailing bytes after payload", path.display());
    }
    ArrayD::from_shape_vec(IxDyn(&shape), payload)
        .with_context(|| format!("{}: shape/payload mismatch", path.display()))
}

/// Convenience wrappers for 2-D images.
pub fn write_image(path: &Path, img: &Array2<f32>) -> Result<()> {
    write_tensor(path, &img.clone().into_dyn())
}

pub fn read_image(path: &Path) -> Result<Array2<f32>> {
    let t = read_tensor(path)?;
    if t.ndim() != 2 {
        bail!("{}: expected a 2-D image, got rank {}", path.display(), t.ndim());
    }
    Ok(t.into_dimensionality::<ndarray::Ix2>().expect("checked rank"))
}
