//! Parameter storage and the layers the predictors are built from.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{Tensor, TensorError};

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph handles for every tensor of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, index: usize) -> Var {
        self.0[index]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `g` as a leaf. Frozen bindings receive no gradient.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }

    /// Gradients of a trainable binding after backward; zeros where none flowed.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .zip(bound.vars())
            .map(|(t, &v)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect()
    }

    /// Sets every parameter to zero.
    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// Affine map `x W + b` on row batches; `W` is `in x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.push(format!("{name}.weight"), uniform(rng, vec![in_dim, out_dim], bound));
        let bias = store.push(format!("{name}.bias"), uniform(rng, vec![out_dim], bound));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add(y, p.var(self.bias))
    }
}

/// LSTM cell with separate input, forget, output and candidate gates.
///
/// Each gate matrix is stored as `(input_dim + hidden) x hidden` and applied
/// to the row concatenation `[x, h]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w: [usize; 4],
    b: [usize; 4],
}

const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input_dim + hidden;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut w = [0; 4];
        let mut b = [0; 4];
        for (k, gate) in GATES.iter().enumerate() {
            w[k] = store.push(format!("{name}.w_{gate}"), uniform(rng, vec![fan_in, hidden], bound));
            let bias = if *gate == "forget" {
                Tensor::vector(vec![1.0; hidden])
            } else {
                uniform(rng, vec![hidden], bound)
            };
            b[k] = store.push(format!("{name}.b_{gate}"), bias);
        }
        Self { input_dim, hidden, w, b }
    }

    /// Zero hidden and cell state for `rows` sequences.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> (Var, Var) {
        let h = g.constant(Tensor::zeros(vec![rows, self.hidden]));
        let c = g.constant(Tensor::zeros(vec![rows, self.hidden]));
        (h, c)
    }

    /// One step: returns the next `(h, c)`.
    pub fn step(&self, g: &mut Graph, p: &Bound, x: Var, state: (Var, Var)) -> Result<(Var, Var), TensorError> {
        let (h, c) = state;
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.input_dim {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step",
                lhs: vec![xs.first().copied().unwrap_or(0), self.input_dim],
                rhs: xs.to_vec(),
            });
        }
        let xh = g.concat_cols(&[x, h])?;
        let mut pre = [xh; 4];
        for (slot, (&w, &b)) in pre.iter_mut().zip(self.w.iter().zip(&self.b)) {
            let z = g.matmul(xh, p.var(w))?;
            *slot = g.add(z, p.var(b))?;
        }
        let i = g.sigmoid(pre[0]);
        let f = g.sigmoid(pre[1]);
        let o = g.sigmoid(pre[2]);
        let cand = g.tanh(pre[3]);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gate_shapes_and_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "enc", 16, 32, &mut rng);
        assert_eq!(store.len(), 8);
        for (name, t) in store.iter() {
            if name.contains(".w_") {
                assert_eq!(t.shape(), &[48, 32]);
            } else {
                assert_eq!(t.shape(), &[32]);
            }
        }
        assert!(store.tensors()[cell.b[1]].data().iter().all(|&v| v == 1.0));
        let bound = 1.0 / 48f64.sqrt();
        assert!(store.tensors()[cell.w[0]].data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 5, &mut rng);
        store.zero();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 4.0, 0.0, 1.0]).unwrap());
        let s = cell.zero_state(&mut g, 2);
        let (h, c) = cell.step(&mut g, &p, x, s).unwrap();
        assert_eq!(g.shape(h), &[2, 5]);
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 5, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(vec![2, 4]));
        let s = cell.zero_state(&mut g, 2);
        assert!(cell.step(&mut g, &p, x, s).is_err());
    }
}
