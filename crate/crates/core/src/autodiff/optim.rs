use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{RadarError, Result};
use crate::real::Real;

/// Hyperparameters of [`AdamW`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Per parameter `w` with gradient `g` at step `t`:
/// `w ← w − lr·wd·w`, then the usual bias-corrected Adam update.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub first_moment: Vec<Matrix<T>>,
    pub second_moment: Vec<Matrix<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .values()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update. `grads` must be ordered like `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Matrix<T>]) -> Result<()> {
        if self.first_moment.len() != params.len() || grads.len() != params.len() {
            return Err(RadarError::Precondition(format!(
                "optimizer state tracks {} tensors, params {}, grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr = T::of(c.learning_rate);
        let decay = T::one() - T::of(c.learning_rate * c.weight_decay);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bias1 = T::one() - T::of(c.beta1.powi(t));
        let bias2 = T::one() - T::of(c.beta2.powi(t));
        let eps = T::of(c.eps);
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = &grads[k];
            let p = params.get_mut(id);
            if p.shape() != g.shape() {
                return Err(RadarError::Shape {
                    op: "adamw_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
            let m = self.first_moment[k].data_mut();
            let v = self.second_moment[k].data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *w = *w * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
