//! Named parameter storage shared by all trainable modules.
//!
//! Modules allocate their tensors in a [`ParamStore`] at construction
//! time and keep [`ParamId`] handles. Gradients accumulate in a parallel
//! [`GradStore`]; per-sample stores from parallel workers are merged in
//! sample order so reductions stay deterministic.

use std::collections::HashMap;

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewD};

use super::Elem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamStore<T: Elem> {
    names: Vec<String>,
    values: Vec<ArrayD<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Elem> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.values[id.0]
    }

    /// View as a matrix; panics if the tensor is not 2-D.
    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.values[id.0].view().into_dimensionality().expect("parameter is not 2-D")
    }

    /// View as a vector; panics if the tensor is not 1-D.
    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.values[id.0].view().into_dimensionality().expect("parameter is not 1-D")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: ArrayD<T>) {
        assert_eq!(self.values[id.0].shape(), value.shape(), "shape change for {}", self.name(id));
        self.values[id.0] = value;
    }

    /// FNV-1a checksum over the raw bits of every parameter, in
    /// registration order.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xCBF2_9CE4_8422_2325u64;
        for v in &self.values {
            for x in v.iter() {
                for b in x.bits_u64().to_le_bytes() {
                    hash ^= u64::from(b);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        hash
    }
}

/// Gradient accumulator parallel to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradStore<T: Elem> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Elem> GradStore<T> {
    pub fn new(n_params: usize) -> Self {
        GradStore { grads: vec![None; n_params] }
    }

    pub fn for_store(ps: &ParamStore<T>) -> Self {
        Self::new(ps.len())
    }

    /// Accumulates `grad` into the slot for `id`.
    pub fn accum(&mut self, id: ParamId, grad: ArrayViewD<'_, T>) {
        match &mut self.grads[id.0] {
            Some(existing) => *existing += &grad,
            slot => *slot = Some(grad.to_owned()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&ArrayD<T>> {
        self.grads[id.0].as_ref()
    }

    /// Merges another store into this one (element-wise sum). Callers
    /// merge per-sample stores in sample order for determinism.
    pub fn merge(&mut self, other: GradStore<T>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (dst, src) in self.grads.iter_mut().zip(other.grads) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => *d += &s,
                (None, Some(s)) => *dst = Some(s),
                _ => {}
            }
        }
    }

    pub fn is_all_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}
