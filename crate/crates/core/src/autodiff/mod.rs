//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Operations are coarse (a whole matmul, FFT or spectral channel mix is one
//! node), so the tape stays short even for full operator models. A node only
//! records its operation when at least one input requires a gradient;
//! everything else is stored as a constant.
//!
//! ```
//! use neurop_core::autodiff::Tape;
//! use neurop_core::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
//! ```

mod grad_check;
mod ops;

use alloc::vec;
use alloc::vec::Vec;

pub use grad_check::{grad_check, projection_loss, GradCheckReport};
pub use ops::ScanAxis;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// right operand has one element
    ScalarRight,
    /// left operand has one element
    ScalarLeft,
    /// right operand's shape equals the trailing axes of the left
    Suffix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Gelu,
    Relu,
    Ln,
    /// GELU forward with a deliberately wrong derivative (negative control)
    #[cfg(test)]
    BrokenGelu,
}

/// Dimensions of a spectral channel mix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MixGeometry {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    /// rows of the half spectrum (1 for 1-D)
    pub rows: usize,
    /// bins along the halved last axis
    pub half: usize,
    /// spectrum rows that carry weights, in weight-row order
    pub kept_rows: Vec<usize>,
    /// retained bins along the halved axis
    pub kept_cols: usize,
}

/// Dimensions of a causal convolution: the scan runs over `len` positions
/// spaced `inner` apart, repeated for `outer` independent lines per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ScanGeometry {
    pub batch: usize,
    pub channels: usize,
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
    pub taps: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var, Broadcast),
    Scale(Var, f64),
    Unary(UnaryKind, Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        a_batched: bool,
        b_batched: bool,
    },
    Transpose {
        x: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        batch: usize,
        cin: usize,
        cout: usize,
        spatial: usize,
    },
    AddBias {
        x: Var,
        b: Var,
        batch: usize,
        channels: usize,
        spatial: usize,
    },
    Reduce {
        x: Var,
        mean: bool,
        mask: Vec<bool>,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Rfft {
        x: Var,
        spatial: Vec<usize>,
    },
    Irfft {
        x: Var,
        spatial: Vec<usize>,
    },
    SpectralMix {
        x: Var,
        w_re: Var,
        w_im: Var,
        geo: MixGeometry,
    },
    CausalConv {
        x: Var,
        kernel: Var,
        geo: ScanGeometry,
    },
    SliceLast {
        x: Var,
        start: usize,
        width: usize,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// A tape supports a single [`Tape::backward`]; a second call is rejected
/// with [`Error::TapeConsumed`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn check(&self, var: Var) -> Result<&Tensor> {
        self.nodes
            .get(var.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownVar(var.0))
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates gradients from the scalar `loss` to every ancestor that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let value = self.check(loss)?;
        if value.len() != 1 {
            return Err(Error::NonScalarLoss(value.shape().to_vec()));
        }
        let seed = Tensor::full(value.shape(), 1.0);
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(seed);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let contributions = self.node_backward(id, &g)?;
            grads[id] = Some(g);
            for (parent, pg) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(pg.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}
