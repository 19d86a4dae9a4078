use super::config::TrainConfig;
use crate::model::ParamSet;

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<P: ParamSet> {
    m: P,
    v: P,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<P: ParamSet> AdamW<P> {
    pub fn new(params: &P, config: &TrainConfig) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, (_, g)), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                let mi = &mut m.data[i];
                let vi = &mut v.data[i];
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + eps);
                p.data[i] -= lr * (update + wd * p.data[i]);
            }
        }
    }
}
