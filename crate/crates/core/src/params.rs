//! Named parameter storage, graph bindings and the Adam optimizer.

use std::collections::HashMap;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Ordered map of parameter name -> tensor, with a paired gradient buffer per
/// parameter. Insertion order is preserved and defines checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.params.len());
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(t.rows(), t.cols()));
        self.params.push(t);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.params[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.params[i]
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.grads[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(move |n| (n.as_str(), &self.params[self.index[n]]))
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|t| t.len()).sum()
    }

    /// Bind every parameter into `g` as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> StoreBinding {
        let mut vars = HashMap::new();
        for (name, t) in self.iter() {
            vars.insert(name.to_string(), g.param(t.clone()));
        }
        StoreBinding { vars }
    }

    /// Bind as constants for inference: backward never flows into them.
    pub fn bind_const(&self, g: &mut Graph) -> StoreBinding {
        let mut vars = HashMap::new();
        for (name, t) in self.iter() {
            vars.insert(name.to_string(), g.constant(t.clone()));
        }
        StoreBinding { vars }
    }

    /// Pull gradients accumulated in `g` back into the store (`+=`), so a
    /// minibatch may span several graphs before the optimizer runs.
    pub fn accumulate_grads(&mut self, g: &Graph, binding: &StoreBinding) {
        for (i, name) in self.names.iter().enumerate() {
            let var = binding.vars[name];
            self.grads[i].add_assign(&g.grad(var));
        }
    }
}

/// Name -> graph leaf mapping produced by [`ParamStore::bind`].
pub struct StoreBinding {
    vars: HashMap<String, Var>,
}

impl StoreBinding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

/// Adam state: first/second moments per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = store
            .params
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) {
    assert_eq!(state.m.len(), store.params.len(), "optimizer/store mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..store.params.len() {
        let g = &store.grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = &mut store.params[i];
        for j in 0..g.len() {
            let gj = g.data()[j];
            let mj = state.beta1 * m.data()[j] + (1.0 - state.beta1) * gj;
            let vj = state.beta2 * v.data()[j] + (1.0 - state.beta2) * gj * gj;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            let mhat = mj / bc1;
            let vhat = vj / bc2;
            p.data_mut()[j] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    store.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let before = store.get("w").clone();
        let mut adam = AdamState::new(&store, 0.1);
        adam_step(&mut store, &mut adam);
        assert_eq!(store.get("w"), &before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn step_counter_increments() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(1, 1));
        let mut adam = AdamState::new(&store, 0.1);
        adam_step(&mut store, &mut adam);
        adam_step(&mut store, &mut adam);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2 reaches |w| < 1e-3 within 500 steps at lr 0.05
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 1, vec![1.0]));
        let mut adam = AdamState::new(&store, 0.05);
        for _ in 0..500 {
            let mut g = Graph::new();
            let binding = store.bind(&mut g);
            let w = binding.var("w");
            let loss = g.mul(w, w);
            g.backward(loss);
            store.accumulate_grads(&g, &binding);
            adam_step(&mut store, &mut adam);
        }
        assert!(store.get("w").data()[0].abs() < 1e-3);
    }

    #[test]
    fn grads_accumulate_across_graphs() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 1, vec![2.0]));
        for _ in 0..2 {
            let mut g = Graph::new();
            let binding = store.bind(&mut g);
            let w = binding.var("w");
            let loss = g.mul(w, w);
            g.backward(loss);
            store.accumulate_grads(&g, &binding);
        }
        // d(w^2)/dw = 4 at w=2, twice
        assert_eq!(store.grad("w").data(), &[8.0]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(1, 1));
        store.insert("w", Tensor::zeros(1, 1));
    }
}
