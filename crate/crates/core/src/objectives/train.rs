use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::disc::{DiscConfig, DiscriminatorSet};
use super::losses::{
    feature_matching_loss, generator_loss, lsgan_d_loss, lsgan_g_loss, vq_losses, LossTerms, LossWeights, TermVars,
};
use super::mel::{MelConfig, MelLoss};
use crate::codec::{CodecModel, Waveform};
use crate::frvq::QuantOutput;
use crate::kernels::{par, Adam, GradBuffer, Graph, ParamStore, Real, Var, WarmupSchedule};
use crate::{Error, Result};

/// Optimisation settings of codec training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Samples per training excerpt; must be a multiple of the hop.
    pub excerpt: usize,
    pub checkpoint_every: usize,
    pub weights: LossWeights,
    pub mel: MelConfig,
    pub disc: DiscConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warmup_steps: 1000,
            batch: 4,
            steps: 2000,
            seed: 0,
            excerpt: 16_000,
            checkpoint_every: 500,
            weights: LossWeights::default(),
            mel: MelConfig::default(),
            disc: DiscConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> WarmupSchedule {
        WarmupSchedule { peak: self.lr, warmup_steps: self.warmup_steps }
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config("lr and batch must be positive".into()));
        }
        self.weights.validate()?;
        self.mel.validate()?;
        if self.excerpt == 0 || self.excerpt % hop != 0 {
            return Err(Error::Alignment { len: self.excerpt, hop });
        }
        if self.excerpt < self.mel.min_len() {
            return Err(Error::Config(format!(
                "excerpt {} shorter than the largest mel window {}",
                self.excerpt,
                self.mel.min_len()
            )));
        }
        if self.weights.uses_discriminator() {
            self.disc.validate()?;
            if self.excerpt < self.disc.min_len() {
                return Err(Error::Config(format!(
                    "excerpt {} shorter than the largest discriminator FFT {}",
                    self.excerpt,
                    self.disc.min_len()
                )));
            }
        }
        Ok(())
    }
}

/// Losses and learning rate of one step, as written to the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub d_loss: f64,
    pub mel: f64,
    pub adv: f64,
    pub fm: f64,
    pub cb: f64,
    pub commit: f64,
    pub lr: f64,
    pub total: f64,
}

/// Discriminator weights and their optimiser.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub set: DiscriminatorSet,
    pub store: ParamStore<T>,
    pub opt: Adam<T>,
}

struct GenPass<T> {
    graph: Graph<T>,
    x: Var,
    y: Var,
    mel: Var,
    cb: Var,
    commit: Var,
}

/// Codec generator, optional discriminators and both optimisers.
///
/// The discriminators are only built when an adversarial or
/// feature-matching weight is positive.
pub struct CodecTrainer<T> {
    pub model: CodecModel<T>,
    pub disc: Option<Discriminator<T>>,
    pub opt: Adam<T>,
    pub cfg: TrainConfig,
    mel: MelLoss,
    step: usize,
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDivergence { step, detail: format!("{what} is {v}") })
    }
}

fn scalar<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

impl<T: Real> CodecTrainer<T> {
    pub fn new<R: Rng>(model: CodecModel<T>, cfg: TrainConfig, rng: &mut R) -> Result<Self> {
        cfg.validate(model.cfg.hop())?;
        let mel = MelLoss::new(cfg.mel.clone(), model.cfg.sample_rate)?;
        let disc = if cfg.weights.uses_discriminator() {
            let mut store = ParamStore::new();
            let set = DiscriminatorSet::new(&mut store, cfg.disc.clone(), rng)?;
            let opt = Adam::new(&store);
            Some(Discriminator { set, store, opt })
        } else {
            None
        };
        let opt = Adam::new(&model.store);
        Ok(Self { model, disc, opt, cfg, mel, step: 0 })
    }

    /// Number of completed steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn mel_loss(&self) -> &MelLoss {
        &self.mel
    }

    fn gen_forward(&self, wave: &Waveform) -> Result<GenPass<T>> {
        let m = &self.model;
        let mut g = Graph::new();
        let x = g.constant(wave.to_tensor());
        let z = m.encoder.forward(&mut g, &m.store, x)?;
        let QuantOutput { quantized, projected, selected, .. } = m.quantizer.quantize_graph(&mut g, &m.store, z, None)?;
        let y = m.decoder.forward(&mut g, &m.store, quantized)?;
        let mel = self.mel.loss(&mut g, x, y)?;
        let (cb, commit) = vq_losses(&mut g, &projected, &selected)?;
        Ok(GenPass { graph: g, x, y, mel, cb, commit })
    }

    fn check_batch(&self, batch: &[Waveform]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        for w in batch {
            if w.sample_rate != self.model.cfg.sample_rate {
                return Err(Error::Format(format!(
                    "sample rate {} Hz, model expects {} Hz",
                    w.sample_rate, self.model.cfg.sample_rate
                )));
            }
            if w.is_empty() || w.len() % self.model.cfg.hop() != 0 {
                return Err(Error::Alignment { len: w.len(), hop: self.model.cfg.hop() });
            }
        }
        Ok(())
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &[Waveform]) -> Result<StepReport> {
        self.check_batch(batch)?;
        let step = self.step + 1;
        let lr = self.cfg.schedule().lr(step);
        let inv_b = 1.0 / batch.len() as f64;
        let passes = par::map_range(batch.len(), |i| self.gen_forward(&batch[i])).into_iter().collect::<Result<Vec<_>>>()?;

        let mut d_loss = 0.0;
        if let Some(d) = self.disc.as_mut() {
            let results = par::map_range(passes.len(), |i| -> Result<(f64, GradBuffer<T>)> {
                let p = &passes[i];
                let mut g = Graph::new();
                let x = g.constant(p.graph.value(p.x).clone());
                let y = g.constant(p.graph.value(p.y).clone());
                let real = d.set.forward(&mut g, &d.store, x)?;
                let fake = d.set.forward(&mut g, &d.store, y)?;
                let rl: Vec<Var> = real.iter().map(|b| b.logits).collect();
                let fl: Vec<Var> = fake.iter().map(|b| b.logits).collect();
                let loss = lsgan_d_loss(&mut g, &rl, &fl)?;
                let grads = g.backward(loss)?;
                Ok((scalar(&g, loss), d.store.collect(&g, &grads)))
            });
            let mut buf = GradBuffer::zeros_like(&d.store);
            for r in results {
                let (l, b) = r?;
                d_loss += l * inv_b;
                buf.add(&b);
            }
            check_finite(step, "discriminator loss", d_loss)?;
            if !buf.all_finite() {
                return Err(Error::TrainingDivergence { step, detail: "non-finite discriminator gradient".into() });
            }
            d.store.zero_grad();
            d.store.apply_buffer(&buf, T::from_f64(inv_b));
            d.opt.step(&mut d.store, lr);
        }

        let weights = self.cfg.weights;
        let disc = self.disc.as_ref();
        let model = &self.model;
        let results = par::map_vec(passes, |_, p| -> Result<(LossTerms, GradBuffer<T>)> {
            let GenPass { graph: mut g, x, y, mel, cb, commit } = p;
            let (mut adv, mut fm) = (None, None);
            if let Some(d) = disc {
                let real = d.set.forward(&mut g, &d.store, x)?;
                let fake = d.set.forward(&mut g, &d.store, y)?;
                let fl: Vec<Var> = fake.iter().map(|b| b.logits).collect();
                adv = Some(lsgan_g_loss(&mut g, &fl)?);
                let rf: Vec<Vec<Var>> = real.into_iter().map(|b| b.features).collect();
                let ff: Vec<Vec<Var>> = fake.into_iter().map(|b| b.features).collect();
                fm = Some(feature_matching_loss(&mut g, &rf, &ff)?);
            }
            let tv = TermVars { mel, adv, fm, cb, commit };
            let total = generator_loss(&mut g, &tv, &weights)?;
            let terms = LossTerms {
                mel: scalar(&g, mel),
                adv: adv.map_or(0.0, |v| scalar(&g, v)),
                fm: fm.map_or(0.0, |v| scalar(&g, v)),
                cb: scalar(&g, cb),
                commit: scalar(&g, commit),
            };
            let grads = g.backward(total)?;
            Ok((terms, model.store.collect(&g, &grads)))
        });
        let mut terms = LossTerms::default();
        let mut buf = GradBuffer::zeros_like(&self.model.store);
        for r in results {
            let (t, b) = r?;
            terms.mel += t.mel * inv_b;
            terms.adv += t.adv * inv_b;
            terms.fm += t.fm * inv_b;
            terms.cb += t.cb * inv_b;
            terms.commit += t.commit * inv_b;
            buf.add(&b);
        }
        for (what, v) in [
            ("mel loss", terms.mel),
            ("adversarial loss", terms.adv),
            ("feature-matching loss", terms.fm),
            ("codebook loss", terms.cb),
            ("commitment loss", terms.commit),
        ] {
            check_finite(step, what, v)?;
        }
        if !buf.all_finite() {
            return Err(Error::TrainingDivergence { step, detail: "non-finite generator gradient".into() });
        }
        self.model.store.zero_grad();
        self.model.store.apply_buffer(&buf, T::from_f64(inv_b));
        self.opt.step(&mut self.model.store, lr);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step as u64);
        self.model.quantizer.reinit_degenerate_rows(&mut self.model.store, &mut rng);
        self.step = step;
        Ok(StepReport {
            step,
            d_loss,
            mel: terms.mel,
            adv: terms.adv,
            fm: terms.fm,
            cb: terms.cb,
            commit: terms.commit,
            lr,
            total: terms.total(&weights),
        })
    }

    /// Generator mel loss on `wave` without updating anything.
    pub fn eval_mel(&self, wave: &Waveform) -> Result<f64> {
        let recon = self.model.reconstruct(wave)?;
        self.mel.value(&wave.samples, &recon.samples)
    }
}
