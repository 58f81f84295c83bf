//! Named parameter storage and the per-forward execution context.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Float, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Float> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value.detach());
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "ParamStore::set",
                self.values[id.0].shape(),
                value.shape(),
            ));
        }
        self.values[id.0] = value.detach();
        Ok(())
    }

    /// Replaces a value without detaching it, so a tensor that is already a
    /// leaf on some tape is used as-is by a [`Ctx`] on that tape.
    pub fn attach(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "ParamStore::attach",
                self.values[id.0].shape(),
                value.shape(),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn zero(&mut self, id: ParamId) {
        self.values[id.0] = Tensor::zeros(self.values[id.0].shape());
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, v)| v.numel())
            .sum()
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every same-named, same-shaped value from `other`.
    pub fn copy_matching(&mut self, other: &ParamStore<F>) -> usize {
        let mut n = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(src) = other.by_name(name) {
                if src.shape() == self.values[i].shape() {
                    self.values[i] = src.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

/// Parameter initializers.
pub(crate) struct Init<'a, R: Rng> {
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in<F: Float>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<F> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.uniform(shape, bound)
    }

    /// Unit-variance uniform, used for embedding tables.
    pub fn embedding<F: Float>(&mut self, shape: &[usize]) -> Tensor<F> {
        self.uniform(shape, 3f64.sqrt())
    }

    pub fn uniform<F: Float>(&mut self, shape: &[usize], bound: f64) -> Tensor<F> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64_lossy(self.rng.random_range(-bound..=bound)))
            .collect();
        Tensor::new(shape, data).expect("finite init")
    }
}

/// One forward pass: the tape, the parameters bound onto it, and the dropout
/// RNG (present only in training mode).
pub struct Ctx<'a, F: Float> {
    pub tape: &'a Tape<F>,
    params: &'a ParamStore<F>,
    bound: RefCell<Vec<Option<Tensor<F>>>>,
    rng: Option<RefCell<ChaCha8Rng>>,
}

impl<'a, F: Float> Ctx<'a, F> {
    pub fn eval(tape: &'a Tape<F>, params: &'a ParamStore<F>) -> Self {
        Ctx {
            tape,
            params,
            bound: RefCell::new(vec![None; params.len()]),
            rng: None,
        }
    }

    pub fn train(tape: &'a Tape<F>, params: &'a ParamStore<F>, rng: ChaCha8Rng) -> Self {
        Ctx {
            rng: Some(RefCell::new(rng)),
            ..Self::eval(tape, params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &ParamStore<F> {
        self.params
    }

    /// The parameter as a leaf of this context's tape (bound once).
    pub fn p(&self, id: ParamId) -> Tensor<F> {
        let mut bound = self.bound.borrow_mut();
        bound[id.0]
            .get_or_insert_with(|| {
                let stored = self.params.get(id);
                if self.tape.owns(stored) {
                    stored.clone()
                } else {
                    self.tape.leaf(stored)
                }
            })
            .clone()
    }

    pub fn dropout(&self, x: &Tensor<F>, p: f64) -> Result<Tensor<F>> {
        match &self.rng {
            Some(rng) => self.tape.dropout(x, p, Some(&mut *rng.borrow_mut())),
            None => self.tape.dropout::<ChaCha8Rng>(x, p, None),
        }
    }

    /// Gradients of every parameter used in this pass, indexed by `ParamId`.
    pub fn param_grads(&self) -> Vec<Option<Tensor<F>>> {
        self.bound
            .borrow()
            .iter()
            .map(|b| b.as_ref().and_then(|t| self.tape.grad(t)))
            .collect()
    }
}
