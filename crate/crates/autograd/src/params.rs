use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Result, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"JFPW";

/// A trainable tensor with its gradient slot and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub(crate) first_moment: Vec<f64>,
    pub(crate) second_moment: Vec<f64>,
    pub(crate) step: u64,
}

impl Parameter {
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Named parameters plus non-trainable buffers (batch-norm running
/// statistics). Names are unique across both.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    params: Vec<Parameter>,
    buffers: Vec<NamedTensor>,
    index: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(TensorError::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.claim(name, Slot::Param(self.params.len()))?;
        let n = value.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step: 0,
        });
        Ok(())
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.claim(name, Slot::Buffer(self.buffers.len()))?;
        self.buffers.push(NamedTensor {
            name: name.to_string(),
            tensor: value,
        });
        Ok(())
    }

    pub fn param(&self, name: &str) -> Result<&Parameter> {
        match self.index.get(name) {
            Some(Slot::Param(i)) => Ok(&self.params[*i]),
            _ => Err(TensorError::Contract(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        match self.index.get(name) {
            Some(Slot::Param(i)) => Ok(&mut self.params[*i]),
            _ => Err(TensorError::Contract(format!("unknown parameter '{name}'"))),
        }
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        match self.index.get(name) {
            Some(Slot::Buffer(i)) => Ok(&self.buffers[*i].tensor),
            _ => Err(TensorError::Contract(format!("unknown buffer '{name}'"))),
        }
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(Slot::Buffer(i)) => Ok(&mut self.buffers[*i].tensor),
            _ => Err(TensorError::Contract(format!("unknown buffer '{name}'"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let p = self.param_mut(name)?;
        if grad.shape() != p.value.shape() {
            return Err(TensorError::shape("set_grad", p.value.shape(), grad.shape()));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Parameters followed by buffers, in registration order.
    pub fn to_records(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                tensor: p.value.clone(),
            })
            .chain(self.buffers.iter().cloned())
            .collect()
    }

    /// Overwrites every registered tensor from `records`. Every registered
    /// name must be present with a matching shape; unknown names are errors.
    pub fn load_records(&mut self, records: Vec<NamedTensor>) -> Result<()> {
        let mut seen = 0;
        for rec in &records {
            let existing = match self.index.get(&rec.name) {
                Some(Slot::Param(i)) => &self.params[*i].value,
                Some(Slot::Buffer(i)) => &self.buffers[*i].tensor,
                None => return Err(TensorError::Format(format!("unexpected tensor '{}'", rec.name))),
            };
            if existing.shape() != rec.tensor.shape() {
                return Err(TensorError::shape("checkpoint record", existing.shape(), rec.tensor.shape()));
            }
            seen += 1;
        }
        if seen != self.index.len() {
            let missing: Vec<&String> = self
                .index
                .keys()
                .filter(|k| !records.iter().any(|r| &r.name == *k))
                .collect();
            return Err(TensorError::Format(format!("checkpoint is missing {missing:?}")));
        }
        for rec in records {
            match self.index[&rec.name] {
                Slot::Param(i) => self.params[i].value = rec.tensor,
                Slot::Buffer(i) => self.buffers[i].tensor = rec.tensor,
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(path, &self.to_records())
    }
}

/// Writes the `JFPW` checkpoint: magic, record count, then per record the
/// name length, UTF-8 name, rank, dims and little-endian `f64` payload. All
/// integers are little-endian `u32`.
pub fn write_checkpoint(path: &Path, records: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        buf.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(rec.name.as_bytes());
        buf.extend_from_slice(&(rec.tensor.rank() as u32).to_le_bytes());
        for &d in rec.tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in rec.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(TensorError::Format("bad magic, expected JFPW".into()));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| TensorError::Format("parameter name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| TensorError::Format(format!("{name}: {e}")))?;
        out.push(NamedTensor { name, tensor });
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ModelParams::new();
        p.add_param("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.add_param("w", Tensor::zeros(&[2])).is_err());
        assert!(p.add_buffer("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn load_requires_every_name() {
        let mut p = ModelParams::new();
        p.add_param("a", Tensor::zeros(&[2])).unwrap();
        p.add_buffer("b", Tensor::zeros(&[1])).unwrap();
        let recs = vec![NamedTensor {
            name: "a".into(),
            tensor: Tensor::full(&[2], 1.0),
        }];
        assert!(p.load_records(recs).is_err());
    }
}
