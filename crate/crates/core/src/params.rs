//! Named parameter store and the checkpoint archive format.
//!
//! Archive layout (little-endian): magic "SVMPCKPT", u32 version (1),
//! u32 tensor count, then per tensor: u32 name length + UTF-8 name,
//! u32 rank, u32 dims, f32 payload. Tensors are written in insertion
//! order, which the model constructor fixes, so files are deterministic.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SVMPCKPT";
const VERSION: u32 = 1;
const MAX_TENSORS: u32 = 1 << 16;
const MAX_NAME: u32 = 1 << 12;
const MAX_RANK: u32 = 8;
const MAX_DIM: u32 = 1 << 24;

/// Ordered name -> tensor map for model weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Insert every parameter into a graph as a trainable leaf; the returned
    /// map resolves names to node ids for the forward pass.
    pub fn bind(&self, g: &mut Graph) -> ParamBinding {
        let mut ids = HashMap::with_capacity(self.names.len());
        for (name, tensor) in self.iter() {
            let mut t = tensor.clone();
            t.requires_grad = true;
            ids.insert(name.to_string(), g.leaf(t));
        }
        ParamBinding { ids }
    }
}

/// Name -> node id mapping for one graph.
pub struct ParamBinding {
    ids: HashMap<String, NodeId>,
}

impl ParamBinding {
    /// Panics on unknown names: the weight layout is fixed by construction,
    /// so a miss is a programming error, not an input error.
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// Truncated normal init: N(0, std), resampled outside 2 std. Biases and
/// norm offsets use zeros, norm gains ones.
pub fn trunc_normal(rng: &mut ChaCha20Rng, shape: Vec<usize>, std: f32) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        // Box-Muller; draw pairs, keep values within the truncation window.
        let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
        let u2: f32 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f32::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && data.len() < numel {
                data.push(z * std);
            }
        }
    }
    Tensor::new(shape, data).expect("valid init shape")
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = CkptReader {
        inner: BufReader::new(File::open(path)?),
        path: path.to_path_buf(),
    };
    let magic = r.bytes::<8>()?;
    if &magic != MAGIC {
        return Err(r.bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.bad(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    if count > MAX_TENSORS {
        return Err(r.bad(format!("tensor count {count} exceeds limit")));
    }
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        if name_len > MAX_NAME {
            return Err(r.bad("name too long"));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        r.inner
            .read_exact(&mut name_bytes)
            .map_err(|_| r.bad("unexpected end of file"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| r.bad("name not UTF-8"))?;
        let rank = r.u32()?;
        if rank > MAX_RANK {
            return Err(r.bad(format!("rank {rank} exceeds limit")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()?;
            if d == 0 || d > MAX_DIM {
                return Err(r.bad(format!("bad dimension {d}")));
            }
            shape.push(d as usize);
            numel = numel
                .checked_mul(d as usize)
                .ok_or_else(|| r.bad("tensor too large"))?;
        }
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f32()?);
        }
        if params.get(&name).is_some() {
            return Err(r.bad(format!("duplicate tensor {name}")));
        }
        params.insert(&name, Tensor::new(shape, data).map_err(|e| r.bad(e.to_string()))?);
    }
    Ok(params)
}

struct CkptReader<R: Read> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> CkptReader<R> {
    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.bad("unexpected end of file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
}

/// Verify a loaded checkpoint carries exactly the expected tensors with the
/// expected shapes; the mismatch error names the first offender.
pub fn check_compatible(expected: &ParamStore, loaded: &ParamStore) -> Result<()> {
    for (name, tensor) in expected.iter() {
        match loaded.get(name) {
            None => {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    lhs: tensor.shape().to_vec(),
                    rhs: vec![],
                })
            }
            Some(found) if found.shape() != tensor.shape() => {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    lhs: tensor.shape().to_vec(),
                    rhs: found.shape().to_vec(),
                })
            }
            _ => {}
        }
    }
    if loaded.len() != expected.len() {
        return Err(Error::ShapeMismatch {
            op: "checkpoint",
            lhs: vec![expected.len()],
            rhs: vec![loaded.len()],
        });
    }
    Ok(())
}
