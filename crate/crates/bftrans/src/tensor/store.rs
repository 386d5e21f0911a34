//! Named parameter storage and the `BFT1` checkpoint format.
//!
//! Checkpoint layout, little-endian throughout: magic `BFT1`, u32 entry
//! count, then per entry: u16 name length, UTF-8 name, u8 rank, rank u32
//! extents, raw f32 payload.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BFT1";

#[derive(Clone, Debug)]
pub struct ParamEntry<E: Scalar> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
}

/// Ordered collection of named trainable tensors with gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Scalar = f32> {
    entries: Vec<ParamEntry<E>>,
    index: HashMap<String, usize>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Init(format!("duplicate parameter name '{name}'")));
        }
        let grad = Tensor::zeros(value.shape());
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<E>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<E>> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i])
    }

    pub fn entry(&self, i: usize) -> &ParamEntry<E> {
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut ParamEntry<E> {
        &mut self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<E>> {
        self.entries.iter()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.data_mut() {
                *g = E::zero();
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<F: Scalar>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for e in &self.entries {
            out.insert(&e.name, e.value.cast()).expect("names stay unique");
        }
        out
    }

    /// Snapshot of all values, used for the last-good checkpoint during
    /// training.
    pub fn values_snapshot(&self) -> Vec<Tensor<E>> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore_values(&mut self, snapshot: &[Tensor<E>]) {
        assert_eq!(snapshot.len(), self.entries.len());
        for (e, v) in self.entries.iter_mut().zip(snapshot) {
            e.value = v.clone();
        }
    }
}

impl ParamStore<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many entries".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            let nlen = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("name too long: '{}'", e.name)))?;
            w.write_all(&nlen.to_le_bytes())?;
            w.write_all(name)?;
            let rank = u8::try_from(e.value.rank())
                .map_err(|_| Error::Checkpoint("rank exceeds u8".into()))?;
            w.write_all(&[rank])?;
            for &ext in e.value.shape() {
                let ext = u32::try_from(ext)
                    .map_err(|_| Error::Checkpoint("extent exceeds u32".into()))?;
                w.write_all(&ext.to_le_bytes())?;
            }
            for &v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}, expected {:?}",
                magic, MAGIC
            )));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        let mut store = Self::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let nlen = u16::from_le_bytes(b2) as usize;
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|e| Error::Checkpoint(format!("invalid name utf-8: {e}")))?;
            let mut b1 = [0u8; 1];
            r.read_exact(&mut b1)?;
            let rank = b1[0] as usize;
            if rank == 0 {
                return Err(Error::Checkpoint(format!("zero rank for '{name}'")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut b4)?;
                shape.push(u32::from_le_bytes(b4) as usize);
            }
            let n: usize = shape.iter().product();
            if n == 0 {
                return Err(Error::Checkpoint(format!("zero extent in '{name}': {shape:?}")));
            }
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b4)?;
                data.push(f32::from_le_bytes(b4));
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("entry '{name}': {e}")))?;
            store
                .insert(&name, t)
                .map_err(|_| Error::Checkpoint(format!("duplicate entry '{name}'")))?;
        }
        Ok(store)
    }
}
