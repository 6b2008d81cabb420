use serde::{Deserialize, Serialize};

use super::model::HierLm;
use crate::bitstream::TokenGrid;
use crate::kernels::{par, Adam, GradBuffer, Graph, Real, WarmupSchedule};
use crate::{Error, Result};

/// One training utterance: text bytes and its token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LmExample {
    pub text: Vec<u8>,
    pub grid: TokenGrid,
}

/// Loss and learning rate of one LM step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmStepReport {
    pub step: usize,
    pub nll: f64,
    pub lr: f64,
}

/// Adam on the mean sequence NLL of a batch.
pub struct LmTrainer<T> {
    pub model: HierLm<T>,
    pub opt: Adam<T>,
    pub schedule: WarmupSchedule,
    step: usize,
}

impl<T: Real> LmTrainer<T> {
    pub fn new(model: HierLm<T>, schedule: WarmupSchedule) -> Self {
        let opt = Adam::new(&model.store);
        Self { model, opt, schedule, step: 0 }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn train_step(&mut self, batch: &[LmExample]) -> Result<LmStepReport> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let step = self.step + 1;
        let lr = self.schedule.lr(step);
        let model = &self.model;
        let results = par::map_range(batch.len(), |i| -> Result<(f64, GradBuffer<T>)> {
            let ex = &batch[i];
            let mut g = Graph::new();
            let nll = model.sequence_nll(&mut g, &ex.text, &ex.grid)?;
            let grads = g.backward(nll)?;
            Ok((g.value(nll).data()[0].as_f64(), model.store.collect(&g, &grads)))
        });
        let inv_b = 1.0 / batch.len() as f64;
        let mut nll = 0.0;
        let mut buf = GradBuffer::zeros_like(&self.model.store);
        for r in results {
            let (l, b) = r?;
            nll += l * inv_b;
            buf.add(&b);
        }
        if !nll.is_finite() || !buf.all_finite() {
            return Err(Error::TrainingDivergence { step, detail: format!("nll {nll}") });
        }
        self.model.store.zero_grad();
        self.model.store.apply_buffer(&buf, T::from_f64(inv_b));
        self.opt.step(&mut self.model.store, lr);
        self.step = step;
        Ok(LmStepReport { step, nll, lr })
    }

    /// Mean NLL over `examples` without updating.
    pub fn evaluate(&self, examples: &[LmExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in examples {
            let mut g = Graph::inference();
            let nll = self.model.sequence_nll(&mut g, &ex.text, &ex.grid)?;
            total += g.value(nll).data()[0].as_f64();
        }
        Ok(total / examples.len().max(1) as f64)
    }
}
