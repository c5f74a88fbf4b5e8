//! Adam optimizer for the autoencoder (standard defaults: 1e-3, 0.9/0.999, 1e-8).

use ndarray::{Array1, Array2};

use super::{CaeGrads, CaeParams, Real, TrainConfig};

pub struct Adam<F: Real> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: i32,
    m: Vec<(Array2<F>, Array1<F>)>,
    v: Vec<(Array2<F>, Array1<F>)>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &CaeParams<F>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<(Array2<F>, Array1<F>)> = params
            .blocks()
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
            .collect();
        Adam {
            lr: F::from_f64(cfg.learning_rate).unwrap(),
            beta1: F::from_f64(cfg.beta1).unwrap(),
            beta2: F::from_f64(cfg.beta2).unwrap(),
            eps: F::from_f64(cfg.eps).unwrap(),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut CaeParams<F>, grads: &CaeGrads<F>) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for ((block, grad), (m, v)) in params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            update_tensor(
                block.w.as_slice_mut().unwrap(),
                grad.w.as_slice().unwrap(),
                m.0.as_slice_mut().unwrap(),
                v.0.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_tensor(
                block.b.as_slice_mut().unwrap(),
                grad.b.as_slice().unwrap(),
                m.1.as_slice_mut().unwrap(),
                v.1.as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_tensor<F: Real>(
    w: &mut [F],
    g: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    bc1: F,
    bc2: F,
) {
    let one = F::one();
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (one - beta1) * g[i];
        v[i] = beta2 * v[i] + (one - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
