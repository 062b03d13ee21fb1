use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::Tensor;

const MAGIC: &[u8; 4] = b"CCPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors. Insertion order is stable and defines both the
/// serialization order and the order optimizer state is kept in.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamTable {
    names: Vec<String>,
    values: Vec<Tensor>,
    decay: Vec<bool>,
    index: BTreeMap<String, usize>,
}

impl ParamTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `decay` marks tensors subject to weight decay.
    pub fn insert(&mut self, name: &str, value: Tensor, decay: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.decay.push(decay);
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    /// Fresh gradient buffers shaped like every parameter.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            bufs: self.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// Binary layout, all integers little-endian:
    ///
    /// ```text
    /// "CCPT" | u32 version | u32 count
    /// count × ( u32 name_len | name utf-8 | u32 ndim | ndim × u64 extent | values as f64 )
    /// ```
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.values) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &e in t.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the raw `(name, tensor)` entries of a serialized table.
    pub fn read_entries<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let io = |e: std::io::Error| Error::Checkpoint(format!("truncated parameter table: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a parameter table (bad magic)".into()));
        }
        let version = read_u32(r).map_err(io)?;
        if version != VERSION {
            return Err(bad(format!("unsupported parameter table version {version}")));
        }
        let count = read_u32(r).map_err(io)? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r).map_err(io)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not utf-8".into()))?;
            let ndim = read_u32(r).map_err(io)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(io)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(io)?;
                data.push(f64::from_le_bytes(b));
            }
            out.push((name, Tensor::new(&shape, data)));
        }
        Ok(out)
    }

    /// Overwrites values from serialized entries. Names and shapes must match
    /// this table exactly.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.values.len(),
                entries.len()
            )));
        }
        for (name, t) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    t.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = t;
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Gradient buffers, one per parameter and shaped identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.bufs[id.0]
    }

    /// Two distinct buffers borrowed mutably at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a, b, "pair_mut needs distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.bufs.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.bufs.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn scale(&mut self, k: f64) {
        self.bufs.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.bufs.iter_mut().zip(&other.bufs).for_each(|(a, b)| a.add_assign(b));
    }

    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.bufs.iter().all(Tensor::all_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ParamTable {
        let mut t = ParamTable::new();
        t.insert("w", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]), true);
        t.insert("b", Tensor::vector(vec![0.25, -0.5, 7.0]), false);
        t.insert("s", Tensor::new(&[1], vec![42.0]), false);
        t
    }

    #[test]
    fn serialization_round_trip() {
        let t = table();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let entries = ParamTable::read_entries(&mut buf.as_slice()).unwrap();
        let mut fresh = table();
        for id in fresh.ids().collect::<Vec<_>>() {
            fresh.get_mut(id).fill(0.0);
        }
        fresh.load_values(entries).unwrap();
        assert_eq!(fresh, t);
    }

    #[test]
    fn layout_is_little_endian_and_prefixed() {
        let mut t = ParamTable::new();
        t.insert("ab", Tensor::vector(vec![1.0]), false);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut expected = b"CCPT".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = table();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut other = ParamTable::new();
        other.insert("w", Tensor::zeros(&[3, 2]), true);
        other.insert("b", Tensor::zeros(&[3]), false);
        other.insert("s", Tensor::zeros(&[1]), false);
        let entries = ParamTable::read_entries(&mut buf.as_slice()).unwrap();
        assert!(matches!(other.load_values(entries), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_input_rejected() {
        let mut buf = Vec::new();
        table().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamTable::read_entries(&mut buf.as_slice()).is_err());
        assert!(ParamTable::read_entries(&mut b"XXXX".as_slice()).is_err());
    }

    #[test]
    fn gradient_shapes_follow_params() {
        let t = table();
        let g = t.zero_gradients();
        for id in t.ids() {
            assert_eq!(g.get(id).shape(), t.get(id).shape());
        }
    }
}
