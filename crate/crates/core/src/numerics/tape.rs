use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::Op;
use super::scalar::Float;
use super::tensor::{check_finite, NodeRef, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule for an operation defined outside the numerics module.
pub trait CustomBackward<F: Float> {
    fn name(&self) -> &'static str;

    /// Gradients w.r.t. each input given the output gradient. Entries for
    /// inputs with `needs[i] == false` may be `None`.
    fn backward(&self, grad_out: &[F], needs: &[bool]) -> Vec<Option<Vec<F>>>;
}

pub(crate) struct Record<F: Float> {
    pub op: Op<F>,
    pub inputs: Vec<Option<usize>>,
    pub output: usize,
}

struct Inner<F: Float> {
    node_len: Vec<usize>,
    records: Vec<Record<F>>,
    grads: Option<Vec<Option<Vec<F>>>>,
}

/// Ordered record of differentiable operations.
///
/// Operations are recorded in execution order, so walking the record list
/// backwards visits every consumer before its producers. A tape built with
/// [`Tape::no_grad`] records nothing and intermediate buffers are freed as
/// soon as they go out of scope.
pub struct Tape<F: Float> {
    id: u64,
    enabled: bool,
    inner: RefCell<Inner<F>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    pub fn no_grad() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(enabled: bool) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            enabled,
            inner: RefCell::new(Inner {
                node_len: Vec::new(),
                records: Vec::new(),
                grads: None,
            }),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn num_records(&self) -> usize {
        self.inner.borrow().records.len()
    }

    /// Registers `t` as a gradient-receiving leaf.
    pub fn leaf(&self, t: &Tensor<F>) -> Tensor<F> {
        let mut out = t.detach();
        if self.enabled {
            let mut inner = self.inner.borrow_mut();
            inner.node_len.push(t.numel());
            out.node = Some(NodeRef {
                tape: self.id,
                idx: inner.node_len.len() - 1,
            });
        }
        out
    }

    /// True when `t` is a node of this tape.
    pub fn owns(&self, t: &Tensor<F>) -> bool {
        self.node_of(t).is_some()
    }

    fn node_of(&self, t: &Tensor<F>) -> Option<usize> {
        t.node.filter(|n| n.tape == self.id).map(|n| n.idx)
    }

    /// True when at least one input participates in gradient computation.
    pub(crate) fn tracks(&self, inputs: &[&Tensor<F>]) -> bool {
        self.enabled && inputs.iter().any(|t| self.node_of(t).is_some())
    }

    /// Wraps freshly computed output values, recording `op` when any input
    /// is tracked.
    pub(crate) fn push(
        &self,
        name: &'static str,
        op: impl FnOnce() -> Op<F>,
        inputs: &[&Tensor<F>],
        shape: Vec<usize>,
        data: Vec<F>,
    ) -> Result<Tensor<F>> {
        check_finite(name, &data)?;
        let mut out = Tensor::from_parts(shape, Arc::new(data));
        if self.tracks(inputs) {
            let ids: Vec<Option<usize>> = inputs.iter().map(|t| self.node_of(t)).collect();
            let mut inner = self.inner.borrow_mut();
            inner.node_len.push(out.numel());
            let idx = inner.node_len.len() - 1;
            inner.records.push(Record {
                op: op(),
                inputs: ids,
                output: idx,
            });
            out.node = Some(NodeRef { tape: self.id, idx });
        }
        Ok(out)
    }

    /// Records an operation whose backward rule lives elsewhere.
    pub fn custom(
        &self,
        inputs: &[&Tensor<F>],
        shape: Vec<usize>,
        data: Vec<F>,
        rule: Box<dyn CustomBackward<F>>,
    ) -> Result<Tensor<F>> {
        let name = rule.name();
        self.push(name, move || Op::Custom(rule), inputs, shape, data)
    }

    /// Reverse pass from a scalar loss. Gradients are kept on the tape until
    /// [`Tape::zero_grad`].
    pub fn backward(&self, loss: &Tensor<F>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let root = self
            .node_of(loss)
            .ok_or_else(|| Error::Backward("loss is not connected to this tape".into()))?;
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::Backward(
                "gradients already populated; call zero_grad before another backward".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; inner.node_len.len()];
        grads[root] = Some(vec![F::one()]);
        for rec in inner.records.iter().rev() {
            let Some(g) = grads[rec.output].take() else {
                continue;
            };
            let needs: Vec<bool> = rec.inputs.iter().map(Option::is_some).collect();
            let input_grads = rec.op.backward(&g, &needs);
            grads[rec.output] = Some(g);
            for (slot, ig) in rec.inputs.iter().zip(input_grads) {
                let (Some(idx), Some(ig)) = (slot, ig) else {
                    continue;
                };
                match &mut grads[*idx] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a = *a + *b),
                    empty => *empty = Some(ig),
                }
            }
        }
        inner.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `t`, shaped like `t`.
    /// `None` when `t` is not on this tape or received no gradient.
    pub fn grad(&self, t: &Tensor<F>) -> Option<Tensor<F>> {
        let idx = self.node_of(t)?;
        let inner = self.inner.borrow();
        let g = inner.grads.as_ref()?.get(idx)?.as_ref()?;
        Some(Tensor::from_parts(t.shape().to_vec(), Arc::new(g.clone())))
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grads = None;
    }
}
