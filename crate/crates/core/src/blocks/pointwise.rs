use alloc::format;
use alloc::string::String;

use super::{normal_init, Activation, ParamStore, Session};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Two-layer pointwise map `W2 · σ(W1 x + b1) + b2` across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMlp {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl PointwiseMlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            hidden,
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}/{}", self.prefix, leaf)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        let s1 = libm::sqrt(2.0 / self.input as f64);
        let s2 = libm::sqrt(1.0 / self.hidden as f64);
        store.insert(self.name("w1"), normal_init(&[self.hidden, self.input], s1, rng));
        store.insert(self.name("b1"), Tensor::zeros(&[self.hidden]));
        store.insert(self.name("w2"), normal_init(&[self.output, self.hidden], s2, rng));
        store.insert(self.name("b2"), Tensor::zeros(&[self.output]));
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w1, b1) = (s.param(&self.name("w1"))?, s.param(&self.name("b1"))?);
        let (w2, b2) = (s.param(&self.name("w2"))?, s.param(&self.name("b2"))?);
        let h = s.tape.linear(x, w1)?;
        let h = s.tape.add_bias(h, b1)?;
        let h = Activation::Gelu.apply(s.tape, h)?;
        let y = s.tape.linear(h, w2)?;
        s.tape.add_bias(y, b2)
    }
}

fn check_channels(task: &str, expected: usize, s: &Session, x: Var) -> Result<()> {
    let found = s.tape.value(x).shape().get(1).copied().unwrap_or(0);
    if found != expected {
        return Err(Error::ChannelMismatch {
            task: task.into(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Task adapter into the shared hidden width.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftingMap {
    pub task: String,
    pub mlp: PointwiseMlp,
}

impl LiftingMap {
    pub fn new(prefix: impl Into<String>, task: impl Into<String>, in_channels: usize, width: usize) -> Self {
        Self {
            task: task.into(),
            mlp: PointwiseMlp::new(prefix, in_channels, width, width),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.mlp.input
    }

    pub fn width(&self) -> usize {
        self.mlp.output
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        self.mlp.init(store, rng)
    }

    pub fn forward(&self, s: &mut Session, a: Var) -> Result<Var> {
        check_channels(&self.task, self.mlp.input, s, a)?;
        self.mlp.forward(s, a)
    }
}

/// Task adapter from the hidden width to the task's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    pub task: String,
    pub mlp: PointwiseMlp,
}

impl ProjectionMap {
    pub fn new(prefix: impl Into<String>, task: impl Into<String>, width: usize, out_channels: usize) -> Self {
        Self {
            task: task.into(),
            mlp: PointwiseMlp::new(prefix, width, width, out_channels),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.mlp.output
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut SeededRng) {
        self.mlp.init(store, rng)
    }

    pub fn forward(&self, s: &mut Session, v: Var) -> Result<Var> {
        check_channels(&self.task, self.mlp.input, s, v)?;
        self.mlp.forward(s, v)
    }
}
