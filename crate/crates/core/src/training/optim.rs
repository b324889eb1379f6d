use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// Adam with bias correction. Moments are kept per parameter matrix in the
/// store's registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| vec![0.0; store.value(id).data().len()])
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn check_layout(&self, store: &ParamStore) -> Result<()> {
        let ok = self.m.len() == store.len()
            && self.v.len() == store.len()
            && store.ids().all(|id| {
                let n = store.value(id).data().len();
                self.m[id.index()].len() == n && self.v[id.index()].len() == n
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint("optimizer state does not match parameters".into()))
        }
    }

    /// Applies one update from the gradients in `store`, then zeroes them.
    pub fn step_and_zero(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        // bias corrections folded into the step size and epsilon
        let step_size = self.lr * c2.sqrt() / c1;
        let eps_hat = self.eps * c2.sqrt();
        let (b1, b2) = (self.beta1, self.beta2);
        let (values, grads) = store.parts_mut();
        for (i, (p, g)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data_mut().iter_mut())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = *g;
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *p -= step_size * *m / (v.sqrt() + eps_hat);
                *g = 0.0;
            }
        }
    }
}
