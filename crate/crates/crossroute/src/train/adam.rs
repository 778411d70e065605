//! Adaptive moment estimation with global-norm gradient clipping.

use std::collections::HashMap;
use std::rc::Rc;

use crate::nn::{DenseArray, ParamGroup, ParamRef};

pub const GRAD_CLIP_NORM: f64 = 1.0;

struct Moments {
    m: DenseArray,
    v: DenseArray,
}

/// Optimizer over the trainable parameters of one model. Learning rates may
/// differ per partition group; by default all groups share `lr`.
pub struct Adam {
    lr: f64,
    lr_heads: Option<f64>,
    lr_adapters: Option<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: HashMap<usize, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            lr_heads: None,
            lr_adapters: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn with_group_rates(mut self, heads: Option<f64>, adapters: Option<f64>) -> Adam {
        self.lr_heads = heads;
        self.lr_adapters = adapters;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn rate_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Heads => self.lr_heads.unwrap_or(self.lr),
            ParamGroup::Adapters => self.lr_adapters.unwrap_or(self.lr),
            ParamGroup::Backbone => self.lr,
        }
    }

    /// Clip gradients to [`GRAD_CLIP_NORM`] globally, apply one update to every
    /// trainable parameter, and return the pre-clip gradient norm. Frozen
    /// parameters are never touched.
    pub fn step(&mut self, params: &[ParamRef]) -> f64 {
        let mut sq = 0.0;
        for p in params {
            let p = p.borrow();
            if !p.trainable {
                continue;
            }
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let norm = sq.sqrt();
        let scale = if norm > GRAD_CLIP_NORM { GRAD_CLIP_NORM / norm } else { 1.0 };

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for pref in params {
            let id = Rc::as_ptr(pref) as usize;
            let mut p = pref.borrow_mut();
            if !p.trainable {
                continue;
            }
            let lr = self.rate_for(p.group);
            let entry = self.moments.entry(id).or_insert_with(|| Moments {
                m: DenseArray::zeros(p.value.shape()),
                v: DenseArray::zeros(p.value.shape()),
            });
            let n = p.value.numel();
            for i in 0..n {
                let g = p.grad.data()[i] * scale;
                let m = self.beta1 * entry.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * entry.v.data()[i] + (1.0 - self.beta2) * g * g;
                entry.m.data_mut()[i] = m;
                entry.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                p.value.data_mut()[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }

    /// Serialize first/second moments and the step counter (f64, parameter
    /// order) so an interrupted run resumes exactly.
    pub fn state_bytes(&self, params: &[ParamRef]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.step.to_le_bytes());
        for pref in params {
            let id = Rc::as_ptr(pref) as usize;
            let p = pref.borrow();
            let zero = DenseArray::zeros(p.value.shape());
            let (m, v) = match self.moments.get(&id) {
                Some(mo) => (&mo.m, &mo.v),
                None => (&zero, &zero),
            };
            for arr in [m, v] {
                for x in arr.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn restore_state(&mut self, params: &[ParamRef], bytes: &[u8]) -> crate::Result<()> {
        let need: usize = 8 + params
            .iter()
            .map(|p| p.borrow().value.numel() * 16)
            .sum::<usize>();
        if bytes.len() != need {
            return Err(crate::Error::CorruptCheckpoint(format!(
                "optimizer state is {} bytes, expected {need}",
                bytes.len()
            )));
        }
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        self.step = u64::from_le_bytes(buf);
        let mut pos = 8;
        let read = |pos: &mut usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[*pos..*pos + 8]);
            *pos += 8;
            f64::from_le_bytes(b)
        };
        for pref in params {
            let id = Rc::as_ptr(pref) as usize;
            let pb = pref.borrow();
            let n = pb.value.numel();
            let mut m = DenseArray::zeros(pb.value.shape());
            let mut v = DenseArray::zeros(pb.value.shape());
            for i in 0..n {
                m.data_mut()[i] = read(&mut pos);
            }
            for i in 0..n {
                v.data_mut()[i] = read(&mut pos);
            }
            drop(pb);
            self.moments.insert(id, Moments { m, v });
        }
        Ok(())
    }
}
