use crate::diff::Tensor;
use crate::error::{invalid, Result};
use crate::model::ParamSet;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamW {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamSet) -> Self {
        let mut zeros = params.clone();
        zeros.map_entries(|_, t| Tensor::zeros(t.shape().to_vec()));
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &ParamSet,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(invalid("optimizer, parameter and gradient layouts differ"));
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        self.m.map_entries(|name, m| {
            let g = grads.get(name).expect("same layout");
            let data = m
                .data()
                .iter()
                .zip(g.data())
                .map(|(&m, &g)| b1 * m + (1.0 - b1) * g)
                .collect();
            Tensor::new(m.shape().to_vec(), data).expect("same shape")
        });
        self.v.map_entries(|name, v| {
            let g = grads.get(name).expect("same layout");
            let data = v
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &g)| b2 * v + (1.0 - b2) * g * g)
                .collect();
            Tensor::new(v.shape().to_vec(), data).expect("same shape")
        });
        let (m, v) = (&self.m, &self.v);
        params.map_entries(|name, p| {
            let (m, v) = (
                m.get(name).expect("same layout"),
                v.get(name).expect("same layout"),
            );
            let data = p
                .data()
                .iter()
                .zip(m.data())
                .zip(v.data())
                .map(|((&p, &m), &v)| p * decay - lr * (m / c1) / ((v / c2).sqrt() + eps))
                .collect();
            Tensor::new(p.shape().to_vec(), data).expect("same shape")
        });
        Ok(())
    }
}

/// Euclidean norm over every gradient entry.
pub fn global_norm(sets: &[&ParamSet]) -> f64 {
    sets.iter()
        .flat_map(|s| s.iter())
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all sets jointly so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(sets: &mut [&mut ParamSet], max_norm: f64) -> f64 {
    let norm = global_norm(&sets.iter().map(|s| &**s).collect::<Vec<_>>());
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in sets.iter_mut() {
            s.map_entries(|_, t| t.map(|v| v * scale));
        }
    }
    norm
}
