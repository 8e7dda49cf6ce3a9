use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::hash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

fn name_key(seed: u64, name: &str) -> u64 {
    let words: Vec<u64> = std::iter::once(seed).chain(name.bytes().map(u64::from)).collect();
    hash::key(&words)
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    /// Uniform in ±1/√fan_in, keyed by `(seed, name)` so a parameter's start
    /// value does not depend on what else the model contains.
    pub(crate) fn init_uniform(&mut self, name: String, shape: &[usize], fan_in: usize, seed: u64) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(name_key(seed, &name));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    pub(crate) fn push(&mut self, name: String, tensor: Tensor) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Parameters registered on a tape, indexed like the [`ParamStore`] they came from.
#[derive(Debug)]
pub struct Bound<'t> {
    pub tape: &'t Tape,
    vars: Vec<Var>,
}

impl<'t> Bound<'t> {
    /// Registers every parameter as a trainable leaf.
    pub fn new(tape: &'t Tape, params: &ParamStore) -> Result<Self, DiffError> {
        let vars = params.tensors().iter().map(|t| tape.param(t.clone())).collect::<Result<_, _>>()?;
        Ok(Self { tape, vars })
    }

    /// Wraps leaves that were already registered, e.g. by a gradient checker.
    pub fn from_vars(tape: &'t Tape, vars: Vec<Var>) -> Self {
        Self { tape, vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: bool, seed: u64) -> Self {
        let weight = store.init_uniform(format!("{name}.weight"), &[inputs, outputs], inputs, seed);
        let bias = bias.then(|| store.init_uniform(format!("{name}.bias"), &[outputs], inputs, seed));
        Self { weight, bias }
    }

    pub fn forward(&self, p: &Bound<'_>, x: Var) -> Result<Var, DiffError> {
        let y = p.tape.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => p.tape.add_row(y, p.var(b)),
            None => Ok(y),
        }
    }
}

/// Fully connected stack: tanh between layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `layers` linear maps of widths `inputs → hidden → … → outputs`.
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        layers: usize,
        seed: u64,
    ) -> Self {
        assert!(layers >= 1, "an MLP needs at least one layer");
        let layers = (0..layers)
            .map(|l| {
                let i = if l == 0 { inputs } else { hidden };
                let o = if l + 1 == layers { outputs } else { hidden };
                Linear::new(store, &format!("{name}.{l}"), i, o, true, seed)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, p: &Bound<'_>, x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, h)?;
            if l + 1 < self.layers.len() {
                h = p.tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| std::iter::once(l.weight).chain(l.bias))
    }

    /// Makes a single square layer the identity map.
    pub fn set_identity(&self, store: &mut ParamStore) {
        assert_eq!(self.layers.len(), 1, "identity needs a single layer");
        let layer = self.layers[0];
        let n = store.get(layer.weight).rows();
        *store.get_mut(layer.weight) = Tensor::identity(n);
        if let Some(b) = layer.bias {
            *store.get_mut(b) = Tensor::zeros(&[n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name_and_bounded() {
        let mut a = ParamStore::new();
        let x = a.init_uniform("w".into(), &[4, 3], 4, 7);
        let mut b = ParamStore::new();
        b.init_uniform("other".into(), &[2], 2, 7);
        let y = b.init_uniform("w".into(), &[4, 3], 4, 7);
        assert_eq!(a.get(x), b.get(y));
        assert!(a.get(x).data().iter().all(|v| v.abs() <= 0.5));
        let mut c = ParamStore::new();
        let z = c.init_uniform("w".into(), &[4, 3], 4, 8);
        assert_ne!(a.get(x), c.get(z));
    }

    #[test]
    fn mlp_shapes_chain() {
        let mut s = ParamStore::new();
        let mlp = Mlp::new(&mut s, "m", 5, 7, 2, 3, 1);
        let shapes: Vec<Vec<usize>> = mlp.param_ids().map(|id| s.get(id).shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![5, 7], vec![7], vec![7, 7], vec![7], vec![7, 2], vec![2]]);
    }
}
