use alloc::vec::Vec;

use crate::{Error, Result, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state for one parameter list. Adam moments are created on the
/// first step with the gradient shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self { kind, lr, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Applies one update. SGD: `p ← p − lr·g`. Adam: bias-corrected moments
    /// with the fixed hyper-parameters above.
    pub fn step<'a, I>(&mut self, params: I, grads: &[Tensor]) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let mut params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::GradientMismatch("different number of parameter and gradient tensors"));
        }
        if params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::GradientMismatch("parameter and gradient shapes differ"));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() && !grads.is_empty() {
                    self.first = grads.iter().map(Tensor::zeros_like).collect();
                    self.second = grads.iter().map(Tensor::zeros_like).collect();
                }
                if self.first.len() != grads.len()
                    || self.first.iter().zip(grads).any(|(m, g)| m.shape() != g.shape())
                {
                    return Err(Error::GradientMismatch("Adam moments do not match gradient shapes"));
                }
                let t = self.step as f64;
                let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
                for ((p, g), (m, v)) in
                    params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut()))
                {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
                    for ((w, &d), (mi, vi)) in it {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= self.lr * mhat / (libm::sqrt(vhat) + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr.is_finite() && lr >= 0.0 {
        Ok(())
    } else {
        Err(Error::LearningRate(lr))
    }
}
