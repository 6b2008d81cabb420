use serde::{Deserialize, Serialize};

use crate::kernels::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Weights of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mel: f64,
    pub adversarial: f64,
    pub feature_matching: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mel: 15.0, adversarial: 1.0, feature_matching: 1.0, codebook: 1.0, commitment: 0.25 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mel, self.adversarial, self.feature_matching, self.codebook, self.commitment];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }

    /// Whether the discriminators influence the generator at all.
    pub fn uses_discriminator(&self) -> bool {
        self.adversarial > 0.0 || self.feature_matching > 0.0
    }
}

/// Scalar value of every generator term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mel: f64,
    pub adv: f64,
    pub fm: f64,
    pub cb: f64,
    pub commit: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.mel * self.mel + w.adversarial * self.adv + w.feature_matching * self.fm + w.codebook * self.cb
            + w.commitment * self.commit
    }
}

fn sum_vars<T: Real>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let mut it = terms.iter().copied();
    let first = match it.next() {
        Some(v) => v,
        None => return Ok(g.constant(Tensor::scalar(T::zero()))),
    };
    it.try_fold(first, |acc, v| g.add(acc, v))
}

/// `sum_b mean((D(x) - 1)^2) + mean(D(x_hat)^2)`.
pub fn lsgan_d_loss<T: Real>(g: &mut Graph<T>, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::Usage(format!("{} real vs {} fake branches", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(2 * real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let r = g.add_scalar(r, -1.0);
        let r = g.square(r);
        terms.push(g.mean(r));
        let f = g.square(f);
        terms.push(g.mean(f));
    }
    sum_vars(g, &terms)
}

/// `sum_b mean((D(x_hat) - 1)^2)`.
pub fn lsgan_g_loss<T: Real>(g: &mut Graph<T>, fake: &[Var]) -> Result<Var> {
    let terms: Vec<Var> = fake
        .iter()
        .map(|&f| {
            let f = g.add_scalar(f, -1.0);
            let f = g.square(f);
            g.mean(f)
        })
        .collect();
    sum_vars(g, &terms)
}

/// Mean over all (branch, depth) pairs of `mean|r - f| / mean|r|`. The
/// denominators are constants.
pub fn feature_matching_loss<T: Real>(g: &mut Graph<T>, real: &[Vec<Var>], fake: &[Vec<Var>]) -> Result<Var> {
    if real.len() != fake.len() {
        return Err(Error::Usage(format!("{} real vs {} fake branches", real.len(), fake.len())));
    }
    let mut terms = Vec::new();
    for (rb, fb) in real.iter().zip(fake) {
        if rb.len() != fb.len() {
            return Err(Error::Usage(format!("{} real vs {} fake feature maps", rb.len(), fb.len())));
        }
        for (&r, &f) in rb.iter().zip(fb) {
            if g.shape(r) != g.shape(f) {
                return Err(Error::Usage(format!(
                    "feature shapes {:?} vs {:?}",
                    g.shape(r),
                    g.shape(f)
                )));
            }
            let rv = g.value(r);
            let scale = rv.data().iter().map(|x| x.as_f64().abs()).sum::<f64>() / rv.numel().max(1) as f64;
            let r = g.detach(r);
            let d = g.sub(r, f)?;
            let d = g.abs(d);
            let m = g.mean(d);
            terms.push(g.scale(m, 1.0 / scale.max(1e-12)));
        }
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let n = terms.len();
    let s = sum_vars(g, &terms)?;
    Ok(g.scale(s, 1.0 / n as f64))
}

/// `(codebook, commitment)`: elementwise mean-L1 between projected inputs and
/// selected codes, averaged over layers, with the stop-gradient on opposite
/// sides.
pub fn vq_losses<T: Real>(g: &mut Graph<T>, projected: &[Var], selected: &[Var]) -> Result<(Var, Var)> {
    if projected.len() != selected.len() {
        return Err(Error::Usage(format!("{} projected vs {} selected layers", projected.len(), selected.len())));
    }
    let mut cb = Vec::with_capacity(projected.len());
    let mut commit = Vec::with_capacity(projected.len());
    for (&p, &c) in projected.iter().zip(selected) {
        let ps = g.detach(p);
        let d = g.sub(ps, c)?;
        let d = g.abs(d);
        cb.push(g.mean(d));
        let cs = g.detach(c);
        let d = g.sub(p, cs)?;
        let d = g.abs(d);
        commit.push(g.mean(d));
    }
    let n = projected.len().max(1) as f64;
    let cb = sum_vars(g, &cb)?;
    let commit = sum_vars(g, &commit)?;
    Ok((g.scale(cb, 1.0 / n), g.scale(commit, 1.0 / n)))
}

/// Graph handles of each generator term.
#[derive(Debug, Clone, Copy)]
pub struct TermVars {
    pub mel: Var,
    pub adv: Option<Var>,
    pub fm: Option<Var>,
    pub cb: Var,
    pub commit: Var,
}

/// Weighted sum of the generator terms; absent terms count as zero.
pub fn generator_loss<T: Real>(g: &mut Graph<T>, t: &TermVars, w: &LossWeights) -> Result<Var> {
    let mut parts = vec![g.scale(t.mel, w.mel)];
    if let Some(a) = t.adv {
        parts.push(g.scale(a, w.adversarial));
    }
    if let Some(f) = t.fm {
        parts.push(g.scale(f, w.feature_matching));
    }
    parts.push(g.scale(t.cb, w.codebook));
    parts.push(g.scale(t.commit, w.commitment));
    sum_vars(g, &parts)
}
