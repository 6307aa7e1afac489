//! Named parameter registry, optimizer step, and checkpoint files.
//!
//! Parameters live in a `BTreeMap` keyed by name, so every walk over the
//! store (optimizer, checkpointing, gradient checks) visits them in the
//! same order on every run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CKPT_MAGIC: &[u8; 8] = b"VLNCKPT1";

/// Ordered collection of tracked leaf tensors.
#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Registers an existing tracked tensor under a unique name.
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        if !t.is_tracked() {
            return Err(Error::contract(format!(
                "parameter {name} must be a tracked leaf"
            )));
        }
        if self.params.contains_key(name) {
            return Err(Error::contract(format!(
                "parameter name {name} already registered"
            )));
        }
        self.params.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// New weight matrix with uniform Xavier initialization over
    /// `(-b, b)`, `b = sqrt(6 / (rows + cols))`.
    pub fn xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let t = Tensor::parameter(&[rows, cols], data)?;
        self.insert(name, t)
    }

    /// New all-zero parameter (biases).
    pub fn zeros_param(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let t = Tensor::parameter(shape, vec![0.0; len])?;
        self.insert(name, t)
    }

    /// New all-one parameter (normalization gains).
    pub fn ones_param(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let t = Tensor::parameter(shape, vec![1.0; len])?;
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    /// Parameters in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_elements(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Copies of all values, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.to_vec()))
            .collect()
    }

    /// Copies of all gradients; parameters without one yield zeros.
    pub fn snapshot_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(k, v)| {
                let g = v.grad().unwrap_or_else(|| vec![0.0; v.len()]);
                (k.clone(), g)
            })
            .collect()
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in self.params.values() {
            if let Some(g) = t.grad() {
                for v in &g {
                    acc += v * v;
                }
            }
        }
        acc.sqrt()
    }

    /// One step of gradient descent. When `clip` is set and the global
    /// gradient norm exceeds it, all gradients are rescaled so the norm
    /// equals `clip`. Returns the pre-clip norm.
    pub fn sgd_step(&self, lr: f64, clip: Option<f64>) -> Result<f64> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::contract("learning rate must be finite and positive"));
        }
        let norm = self.grad_norm();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "gradient norm is {norm}; training diverged"
            )));
        }
        let mut scale = 1.0;
        if let Some(c) = clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::contract("clip threshold must be finite and positive"));
            }
            if norm > c {
                scale = c / norm;
            }
        }
        for t in self.params.values() {
            let Some(g) = t.grad() else { continue };
            let mut data = t.to_vec();
            for (w, gi) in data.iter_mut().zip(&g) {
                *w -= lr * scale * gi;
            }
            t.set_data(&data)?;
        }
        Ok(norm)
    }

    /// Writes all parameters to a binary checkpoint. The layout is a
    /// magic tag, an entry count, then name-ordered entries of
    /// `(name, shape, little-endian f64 values)`, so identical stores
    /// produce identical bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        w.write_all(CKPT_MAGIC).map_err(io_err)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for (name, t) in &self.params {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(nb).map_err(io_err)?;
            let shape = t.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
            for d in shape {
                w.write_all(&(*d as u32).to_le_bytes()).map_err(io_err)?;
            }
            for v in t.data().iter() {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }

    /// Loads a checkpoint into this store. The file must contain exactly
    /// the parameters that exist here, with matching shapes.
    pub fn load(&self, path: &Path) -> Result<()> {
        let pd = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(pd.clone(), e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, &pd)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::format(&pd, "not a checkpoint file (bad magic)"));
        }
        let count = read_u32(&mut r, &pd)? as usize;
        if count != self.params.len() {
            return Err(Error::format(
                &pd,
                format!(
                    "checkpoint has {count} parameters, model has {}",
                    self.params.len()
                ),
            ));
        }
        let mut staged: Vec<(String, Vec<f64>)> = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r, &pd)? as usize;
            if name_len > 4096 {
                return Err(Error::format(&pd, "parameter name implausibly long"));
            }
            let mut nb = vec![0u8; name_len];
            read_exact(&mut r, &mut nb, &pd)?;
            let name = String::from_utf8(nb)
                .map_err(|_| Error::format(&pd, "parameter name is not utf-8"))?;
            let rank = read_u32(&mut r, &pd)? as usize;
            if rank == 0 || rank > 2 {
                return Err(Error::format(&pd, format!("parameter {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r, &pd)? as usize);
            }
            let t = self.params.get(&name).ok_or_else(|| {
                Error::format(&pd, format!("checkpoint parameter {name} not in model"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::format(
                    &pd,
                    format!(
                        "parameter {name} has shape {:?} in checkpoint, {:?} in model",
                        shape,
                        t.shape()
                    ),
                ));
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                read_exact(&mut r, &mut buf, &pd)?;
                data.push(f64::from_le_bytes(buf));
            }
            staged.push((name, data));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|e| Error::io(pd.clone(), e))? != 0 {
            return Err(Error::format(&pd, "trailing bytes after last parameter"));
        }
        for (name, data) in staged {
            self.params[&name].set_data(&data)?;
        }
        Ok(())
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file truncated")
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn names_must_be_unique() {
        let mut store = ParamStore::new();
        store.zeros_param("w", &[2]).unwrap();
        assert!(store.zeros_param("w", &[2]).is_err());
        assert!(store.xavier("w", 2, 2, &mut rng(0)).is_err());
    }

    #[test]
    fn untracked_tensors_are_rejected() {
        let mut store = ParamStore::new();
        let c = Tensor::scalar(1.0).unwrap();
        assert!(store.insert("c", c).is_err());
    }

    #[test]
    fn xavier_respects_bound_and_seed() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let wa = a.xavier("w", 8, 24, &mut rng(7)).unwrap();
        let wb = b.xavier("w", 8, 24, &mut rng(7)).unwrap();
        assert_eq!(wa.to_vec(), wb.to_vec());
        let bound = (6.0 / 32.0f64).sqrt();
        let vals = wa.to_vec();
        assert!(vals.iter().all(|v| v.abs() < bound));
        assert!(vals.iter().any(|v| *v != vals[0]));
        let wc = ParamStore::new().xavier("w", 8, 24, &mut rng(8)).unwrap();
        assert_ne!(wa.to_vec(), wc.to_vec());
    }

    #[test]
    fn enumeration_is_name_ordered() {
        let mut store = ParamStore::new();
        store.zeros_param("z.last", &[1]).unwrap();
        store.zeros_param("a.first", &[1]).unwrap();
        store.zeros_param("m.mid", &[1]).unwrap();
        assert_eq!(store.names(), vec!["a.first", "m.mid", "z.last"]);
    }

    #[test]
    fn sgd_applies_plain_and_clipped_updates() {
        let mut store = ParamStore::new();
        let w = store.zeros_param("w", &[2]).unwrap();
        w.set_data(&[1.0, 1.0]).unwrap();
        let x = Tensor::constant(&[2], vec![3.0, 4.0]).unwrap();
        w.mul(&x).unwrap().sum_all().unwrap().backward().unwrap();
        let norm = store.sgd_step(0.1, None).unwrap();
        assert_eq!(norm, 5.0);
        assert_eq!(w.to_vec(), vec![1.0 - 0.3, 1.0 - 0.4]);

        store.zero_grads();
        w.mul(&x).unwrap().sum_all().unwrap().backward().unwrap();
        let norm2 = store.sgd_step(0.1, Some(2.5)).unwrap();
        assert_eq!(norm2, 5.0);
        assert_eq!(w.to_vec(), vec![0.7 - 0.15, 0.6 - 0.2]);
    }

    #[test]
    fn grad_norm_counts_missing_grads_as_zero() {
        let mut store = ParamStore::new();
        let w = store.zeros_param("w", &[1]).unwrap();
        store.zeros_param("unused", &[3]).unwrap();
        w.set_data(&[2.0]).unwrap();
        w.square().unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(store.grad_norm(), 4.0);
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        store.xavier("layer.w", 3, 5, &mut rng(42)).unwrap();
        store.zeros_param("layer.b", &[5]).unwrap();
        store.ones_param("ln.g", &[5]).unwrap();
        store.save(&path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();

        let before = store.snapshot();
        for (_, t) in store.iter() {
            let bumped: Vec<f64> = t.to_vec().iter().map(|v| v + 1.0).collect();
            t.set_data(&bumped).unwrap();
        }
        store.load(&path).unwrap();
        assert_eq!(store.snapshot(), before);

        let path2 = dir.path().join("model2.ckpt");
        store.save(&path2).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn checkpoint_load_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::new();
        store.zeros_param("w", &[2, 2]).unwrap();
        store.save(&path).unwrap();

        let mut renamed = ParamStore::new();
        renamed.zeros_param("v", &[2, 2]).unwrap();
        assert!(renamed.load(&path).is_err());

        let mut reshaped = ParamStore::new();
        reshaped.zeros_param("w", &[4]).unwrap();
        assert!(reshaped.load(&path).is_err());

        let mut extra = ParamStore::new();
        extra.zeros_param("w", &[2, 2]).unwrap();
        extra.zeros_param("w2", &[1]).unwrap();
        assert!(extra.load(&path).is_err());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = store.load(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));

        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(store.load(&path).is_err());
    }
}
