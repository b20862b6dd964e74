use crate::params::ParamStore;
use crate::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is indexed like the store; missing
    /// gradients leave the parameter untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        if self.first.len() != store.len() {
            self.first = vec![None; store.len()];
            self.second = vec![None; store.len()];
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.trainable)).collect();
        for (id, trainable) in ids {
            let Some(g) = grads[id.0].as_ref().filter(|_| trainable) else {
                continue;
            };
            let m = self.first[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.second[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (
                self.first[id.0].as_ref().unwrap(),
                self.second[id.0].as_ref().unwrap(),
            );
            let w = store.get_mut(id);
            for ((wi, mi), vi) in w.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *wi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
