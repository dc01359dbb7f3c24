use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

/// Named parameter tensors, ordered by name.
///
/// Names are `/`-separated paths such as `core/layer0/spectral/w_re` or
/// `adapter/burgers/lift/w1`; parameter groups are name prefixes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.params
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
    }

    /// Total scalar count of all parameters under `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).map(|(_, t)| t.len()).sum()
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
    }

    /// SHA-256 over names, shapes and the bit patterns of every value
    /// under `prefix`.
    pub fn fingerprint(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.with_prefix(prefix) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// Which parameters receive gradients in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Trainable<'a> {
    Nothing,
    Everything,
    Only(&'a BTreeSet<String>),
}

impl Trainable<'_> {
    pub fn contains(&self, name: &str) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::Everything => true,
            Trainable::Only(set) => set.contains(name),
        }
    }
}

/// One forward pass: a tape plus lazily bound parameter leaves.
pub struct Session<'t, 'p> {
    pub tape: &'t mut Tape,
    params: &'p ParamStore,
    trainable: Trainable<'p>,
    bound: BTreeMap<String, Var>,
}

impl<'t, 'p> Session<'t, 'p> {
    pub fn new(tape: &'t mut Tape, params: &'p ParamStore, trainable: Trainable<'p>) -> Self {
        Self {
            tape,
            params,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Leaf for parameter `name`, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self
            .params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.tape.leaf(value, self.trainable.contains(name));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Substitutes an existing variable for parameter `name`.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn bindings(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    pub fn into_bindings(self) -> BTreeMap<String, Var> {
        self.bound
    }
}

/// Gaussian tensor with standard deviation `std`.
pub fn normal_init(shape: &[usize], std: f64, rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * rng::normal(rng)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}
