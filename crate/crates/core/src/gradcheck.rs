//! Central finite-difference verification of analytic gradients.
//!
//! The checker only ever calls a forward-evaluation closure, so it stays
//! independent of the backward-pass code it is judging. Relative error per
//! element is |analytic - numeric| / max(|analytic|, |numeric|, floor); the
//! floor keeps near-zero pairs from dividing noise by noise.

use crate::params::ParamStore;

/// Worst relative error over every scalar parameter in the store.
///
/// `store.grad(..)` must already hold the analytic gradients (run a graph
/// backward and `accumulate_grads` first). The store is perturbed in place
/// and restored exactly.
pub fn max_rel_error(
    store: &mut ParamStore,
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let names: Vec<String> = store.names().to_vec();
    let mut worst: f64 = 0.0;
    for name in &names {
        let len = store.get(name).len();
        for j in 0..len {
            let orig = store.get(name).data()[j];
            store.get_mut(name).data_mut()[j] = orig + h;
            let up = loss(store);
            store.get_mut(name).data_mut()[j] = orig - h;
            let down = loss(store);
            store.get_mut(name).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.grad(name).data()[j];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            let rel = (analytic - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// Standard settings used across the crate's checks.
pub const FD_STEP: f64 = 1e-3;
pub const FD_FLOOR: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn catches_a_wrong_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(1, 1, vec![1.5]));
        // loss = w^2 but pretend the gradient is 1.0
        {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let w = b.var("w");
            let l = g.mul(w, w);
            g.backward(l);
            store.accumulate_grads(&g, &b);
        }
        let honest = max_rel_error(&mut store, FD_STEP, FD_FLOOR, |s| {
            let v = s.get("w").data()[0];
            v * v
        });
        assert!(honest < 1e-9, "honest check should pass, got {honest}");

        let lying = max_rel_error(&mut store, FD_STEP, FD_FLOOR, |s| {
            let v = s.get("w").data()[0];
            v * v * v
        });
        assert!(lying > 1e-2, "mismatched loss should fail, got {lying}");
    }
}
