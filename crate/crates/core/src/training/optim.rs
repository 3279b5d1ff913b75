use serde::{Deserialize, Serialize};

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are allocated lazily from
/// the first step's parameter layout, which must stay fixed afterwards.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient layout mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![F::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = F::lit(self.lr / c1);
        let inv_c2 = F::lit(1.0 / c2);
        let (b1f, b2f) = (F::lit(b1), F::lit(b2));
        let (ob1, ob2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
        let eps = F::lit(self.cfg.eps);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            assert_eq!(p.len(), m.len(), "parameter tensor {k} changed size");
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1f * m[i] + ob1 * gi;
                v[i] = b2f * v[i] + ob2 * gi * gi;
                p[i] -= step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_eval: Option<usize>,
    since_best: usize,
    evals: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_eval: None,
            since_best: 0,
            evals: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.evals += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_eval = Some(self.evals);
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    /// 1-based index of the best evaluation so far.
    pub fn best_eval(&self) -> Option<usize> {
        self.best_eval
    }

    pub fn evaluations(&self) -> usize {
        self.evals
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_two_curve() {
        let mut es = EarlyStopping::new(2);
        let decisions: Vec<_> = [3.0, 2.0, 2.5, 2.6, 2.4].iter().map(|&l| es.observe(l)).collect();
        assert_eq!(decisions[0], StopDecision::Improved);
        assert_eq!(decisions[1], StopDecision::Improved);
        assert_eq!(decisions[2], StopDecision::Continue);
        assert_eq!(decisions[3], StopDecision::Stop);
        let stop_at = decisions.iter().position(|d| *d == StopDecision::Stop).unwrap() + 1;
        assert_eq!(stop_at, 4);
        assert_eq!(es.best_eval(), Some(2));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g).
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.3, -4.0, 0.0];
        let mut adam = Adam::new(0.01, AdamConfig::default());
        adam.step(vec![&mut p[..]], vec![&g[..]]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![5.0f64, -3.0];
        let mut adam = Adam::new(0.1, AdamConfig::default());
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(vec![&mut x[..]], vec![&g[..]]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2));
    }
}
