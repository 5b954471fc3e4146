use crate::error::{Error, Result};
use crate::nn::tensor::NTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Trainable parameters with their accumulated gradients, plus non-trainable
/// buffers (batch-norm running statistics). Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<NTensor>,
    grads: Vec<Vec<f64>>,
    buffer_names: Vec<String>,
    buffers: Vec<NTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: NTensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: NTensor) -> BufferId {
        let name = name.into();
        assert!(!self.buffer_names.contains(&name), "duplicate buffer {name}");
        self.buffers.push(value);
        self.buffer_names.push(name);
        BufferId(self.buffers.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &NTensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut NTensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &NTensor {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut NTensor {
        &mut self.buffers[id.0]
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(NTensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.grads[id.0].iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn grads_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.grads
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut NTensor, &Vec<f64>)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    /// Every parameter then every buffer, by name, in registration order.
    pub fn named_tensors(&self) -> Vec<(String, NTensor)> {
        self.names
            .iter()
            .cloned()
            .zip(self.values.iter().cloned())
            .chain(
                self.buffer_names
                    .iter()
                    .map(|n| format!("buffer:{n}"))
                    .zip(self.buffers.iter().cloned()),
            )
            .collect()
    }

    /// Overwrite values from a named table. Every parameter and buffer must be
    /// present with a matching shape.
    pub fn load_named(&mut self, table: &[(String, NTensor)]) -> Result<()> {
        let find = |name: &str| table.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let expected = self.names.len() + self.buffer_names.len();
        if table.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, model expects {expected}",
                table.len()
            )));
        }
        for (name, slot) in self.names.iter().zip(self.values.iter_mut()) {
            assign(name, find(name), slot)?;
        }
        for (name, slot) in self.buffer_names.iter().zip(self.buffers.iter_mut()) {
            assign(name, find(&format!("buffer:{name}")), slot)?;
        }
        Ok(())
    }
}

fn assign(name: &str, src: Option<&NTensor>, slot: &mut NTensor) -> Result<()> {
    let src = src.ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
    if src.shape() != slot.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{name}: expected {:?}, found {:?}",
            slot.shape(),
            src.shape()
        )));
    }
    *slot = src.clone();
    Ok(())
}
