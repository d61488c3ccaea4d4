//! Adam and AdamW with optional sparse-mask awareness.
//!
//! Masked entries are skipped outright: no moment update, no parameter
//! write. A parameter pinned at 0.0 by a mask therefore stays bitwise 0.0
//! through any number of steps, and its moments stay frozen until a mask
//! refresh revives it.

use super::Tensor;
use crate::error::{Error, Result};
use crate::sparse::Mask;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimKind {
    Adam,
    /// Decoupled weight decay added to the update as lr * wd * theta.
    AdamW { weight_decay: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    /// `sizes` are the element counts of the tensors that every later
    /// `step` call must pass, in the same order.
    pub fn new(kind: OptimKind, lr: f64, sizes: &[usize]) -> Result<Self> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if let OptimKind::AdamW { weight_decay } = kind {
            if !weight_decay.is_finite() || weight_decay < 0.0 {
                return Err(Error::Config(format!(
                    "weight decay must be non-negative, got {weight_decay}"
                )));
            }
        }
        Ok(Optimizer {
            kind,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// One update from the gradients stored in each tensor. `masks`, when
    /// given, must be congruent with `params`; masked entries are skipped.
    pub fn step(&mut self, params: &mut [&mut Tensor], masks: Option<&[Mask]>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "optimizer built for {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some(ms) = masks {
            if ms.len() != params.len() {
                return Err(Error::Usage(format!(
                    "{} masks for {} tensors",
                    ms.len(),
                    params.len()
                )));
            }
            for (t, m) in params.iter().zip(ms) {
                if t.numel() != m.len() {
                    return Err(Error::Usage(format!(
                        "mask of {} entries for tensor of {}",
                        m.len(),
                        t.numel()
                    )));
                }
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let wd = match self.kind {
            OptimKind::Adam => 0.0,
            OptimKind::AdamW { weight_decay } => weight_decay,
        };
        for (ti, t) in params.iter_mut().enumerate() {
            if t.numel() != self.m[ti].len() {
                return Err(Error::Usage(format!(
                    "optimizer slot {ti} built for {} elements, tensor has {}",
                    self.m[ti].len(),
                    t.numel()
                )));
            }
            let mask = masks.map(|ms| &ms[ti]);
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for i in 0..t.numel() {
                if let Some(mk) = mask {
                    if !mk.keep(i) {
                        continue;
                    }
                }
                let g = t.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                t.data[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + wd * t.data[i]);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    #[cfg(test)]
    fn first_moment(&self, tensor: usize) -> &[f64] {
        &self.m[tensor]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tensor(x: f64) -> Tensor {
        Tensor::new(1, 1, vec![x]).unwrap()
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, grad = 2(x - 3).
        let mut x = scalar_tensor(-1.0);
        let mut opt = Optimizer::new(OptimKind::Adam, 0.05, &[1]).unwrap();
        for _ in 0..1000 {
            x.grad[0] = 2.0 * (x.data[0] - 3.0);
            opt.step(&mut [&mut x], None).unwrap();
        }
        assert!((x.data[0] - 3.0).abs() < 1e-4, "ended at {}", x.data[0]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With a large gradient, |update| -> lr after bias correction.
        let mut x = scalar_tensor(0.0);
        let mut opt = Optimizer::new(OptimKind::Adam, 1e-3, &[1]).unwrap();
        x.grad[0] = 50.0;
        opt.step(&mut [&mut x], None).unwrap();
        assert!((x.data[0] + 1e-3).abs() < 1e-9, "moved {}", x.data[0]);
    }

    #[test]
    fn zero_grad_means_no_motion_for_adam() {
        let mut x = scalar_tensor(2.5);
        let mut opt = Optimizer::new(OptimKind::Adam, 0.1, &[1]).unwrap();
        for _ in 0..5 {
            x.grad[0] = 0.0;
            opt.step(&mut [&mut x], None).unwrap();
        }
        assert_eq!(x.data[0], 2.5);
    }

    #[test]
    fn adamw_decays_even_with_zero_grad() {
        let mut x = scalar_tensor(2.0);
        let mut opt =
            Optimizer::new(OptimKind::AdamW { weight_decay: 0.01 }, 0.1, &[1]).unwrap();
        x.grad[0] = 0.0;
        opt.step(&mut [&mut x], None).unwrap();
        // theta <- theta - lr * wd * theta = 2.0 * (1 - 0.001).
        assert!((x.data[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn masked_entries_stay_bitwise_zero_with_frozen_moments() {
        let mut t = Tensor::new(1, 3, vec![0.0, 1.0, -1.0]).unwrap();
        let mask = Mask::from_keep(vec![false, true, true]);
        let mut opt = Optimizer::new(OptimKind::Adam, 0.01, &[3]).unwrap();
        for _ in 0..20 {
            t.grad.copy_from_slice(&[5.0, 5.0, 5.0]);
            opt.step(&mut [&mut t], Some(std::slice::from_ref(&mask))).unwrap();
        }
        assert_eq!(t.data[0].to_bits(), 0.0f64.to_bits());
        assert_eq!(opt.first_moment(0)[0], 0.0);
        assert_ne!(t.data[1], 1.0);
        assert_ne!(t.data[2], -1.0);
    }

    #[test]
    fn all_ones_mask_matches_no_mask_bitwise() {
        let mut a = Tensor::new(1, 3, vec![0.4, -0.2, 0.9]).unwrap();
        let mut b = a.clone();
        let mask = Mask::all_ones(3);
        let mut opt_a = Optimizer::new(OptimKind::Adam, 0.01, &[3]).unwrap();
        let mut opt_b = Optimizer::new(OptimKind::Adam, 0.01, &[3]).unwrap();
        for s in 0..50 {
            let g = [0.3 * (s as f64).sin(), -0.1, 0.7];
            a.grad.copy_from_slice(&g);
            b.grad.copy_from_slice(&g);
            opt_a.step(&mut [&mut a], Some(std::slice::from_ref(&mask))).unwrap();
            opt_b.step(&mut [&mut b], None).unwrap();
        }
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn rejects_wrong_tensor_count_and_bad_lr() {
        assert!(Optimizer::new(OptimKind::Adam, 0.0, &[1]).is_err());
        assert!(Optimizer::new(OptimKind::Adam, f64::NAN, &[1]).is_err());
        assert!(Optimizer::new(OptimKind::AdamW { weight_decay: -0.1 }, 0.1, &[1]).is_err());
        let mut opt = Optimizer::new(OptimKind::Adam, 0.1, &[1, 2]).unwrap();
        let mut x = scalar_tensor(0.0);
        assert!(opt.step(&mut [&mut x], None).is_err());
    }
}
