//! Named trainable parameters.
//!
//! Parameters live outside any tape. Before a forward pass they are bound
//! onto a fresh tape as gradient-requiring leaves; after `backward` the
//! optimizer reads gradients back through the same [`Binding`].

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorId};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<NamedParam>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(NamedParam {
            name: name.into(),
            value: tensor.with_grad(),
        });
        id
    }

    /// Uniform init in `[-bound, bound]`; the usual choice is
    /// `1/sqrt(fan_in)` for a `[fan_in, fan_out]` matrix.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut Rng,
    ) -> ParamId {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.range(-bound, bound)).collect();
        self.add(name, Tensor::new(shape, data).expect("valid shape"))
    }

    pub fn add_matrix(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add_uniform(name, vec![fan_in, fan_out], bound, rng)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_full(&mut self, name: impl Into<String>, shape: Vec<usize>, v: f64) -> ParamId {
        let numel: usize = shape.iter().product();
        self.add(name, Tensor::new(shape, vec![v; numel]).expect("valid shape"))
    }

    pub fn get(&self, id: ParamId) -> &NamedParam {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NamedParam {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedParam> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedParam> {
        self.params.iter_mut()
    }

    /// Insert every parameter as a leaf on `tape`, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        Binding { ids }
    }

    /// Gradients for every parameter after a backward pass, zeros where a
    /// parameter was off the loss path. Errors on non-finite entries.
    pub fn collect_grads(&self, tape: &Tape, binding: &Binding) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.params.len());
        for (p, &id) in self.params.iter().zip(&binding.ids) {
            let g = match tape.grad(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.value.numel()],
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter `{}`",
                    p.name
                )));
            }
            out.push(g);
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.data.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot arity");
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value.data.copy_from_slice(s);
        }
    }
}

/// Tape leaves for one bound forward pass, index-aligned with the store.
#[derive(Clone, Debug)]
pub struct Binding {
    ids: Vec<TensorId>,
}

impl Binding {
    /// Rebuild a binding from raw tape ids (used to patch single leaves in
    /// gradient-check harnesses).
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        Binding { ids }
    }

    pub fn id(&self, p: ParamId) -> TensorId {
        self.ids[p.0]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TensorId] {
        &self.ids
    }
}
