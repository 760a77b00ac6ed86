use gtfmn_tensor::{Element, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{GtfmnError, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered trainable tensors. Order is construction order and is what
/// checkpoints and the optimizer rely on.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, name: String, tensor: Tensor<T>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform in ±1/√fan_in.
    pub(crate) fn push_uniform(
        &mut self,
        name: String,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        self.push(name, Tensor::from_vec(shape, data).expect("init shape"))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total trainable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor on the tape: as gradient leaves when the tape
    /// records, as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundParams<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if tape.is_recording() {
                    tape.leaf(t.detached())
                } else {
                    tape.constant(t.detached())
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Replaces tensor values by name; shapes must match exactly.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let idx = self
            .position(name)
            .ok_or_else(|| GtfmnError::Input(format!("unknown parameter `{name}`")))?;
        if self.tensors[idx].shape() != value.shape() {
            return Err(GtfmnError::Input(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.tensors[idx].shape(),
                value.shape()
            )));
        }
        self.tensors[idx] = value.with_requires_grad(true);
        Ok(())
    }

    /// Zero-fills every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut hit = 0;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.starts_with(prefix) {
                t.data_mut().fill(T::zero());
                hit += 1;
            }
        }
        hit
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }
}

/// Parameters registered on one tape, indexable by [`ParamId`].
pub struct BoundParams<'t, T: Element> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Element> BoundParams<'t, T> {
    pub fn var(&self, id: ParamId) -> &Var<'t, T> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Copies leaf gradients into the store's `grad` buffers.
    pub fn write_grads(
        &self,
        grads: &mut gtfmn_tensor::Gradients<T>,
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        for (var, tensor) in self.vars.iter().zip(store.tensors_mut()) {
            let g = grads.take(var).ok_or_else(|| {
                GtfmnError::Input("parameters were not bound on a recording tape".into())
            })?;
            tensor.set_grad(g.into_data())?;
        }
        Ok(())
    }
}
