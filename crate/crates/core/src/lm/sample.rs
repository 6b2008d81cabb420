use rand::Rng;

use crate::{Error, Result};

/// Top-k multinomial draw from `logits`.
///
/// `k_top == 1` is greedy (lowest index on ties) and ignores the
/// temperature. Otherwise the `k_top` largest logits are divided by the
/// temperature, renormalised with a softmax and sampled.
pub fn sample_top_k<R: Rng + ?Sized>(logits: &[f64], k_top: usize, temperature: f64, rng: &mut R) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Usage("sampling from empty logits".into()));
    }
    if k_top == 0 {
        return Err(Error::Usage("k_top must be at least 1".into()));
    }
    if k_top == 1 {
        return Ok(argmax(logits));
    }
    if !(temperature > 0.0) {
        return Err(Error::Usage(format!("temperature {temperature} must be positive for k_top > 1")));
    }
    let probs = top_k_probs(logits, k_top, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = probs[0].0;
    for &(i, p) in &probs {
        acc += p;
        last = i;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(last)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `(index, probability)` of the `k_top` largest logits, highest first,
/// ties broken by lower index.
pub fn top_k_probs(logits: &[f64], k_top: usize, temperature: f64) -> Vec<(usize, f64)> {
    let order = |&a: &usize, &b: &usize| logits[b].total_cmp(&logits[a]).then(a.cmp(&b));
    let k = k_top.clamp(1, logits.len());
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_by(order);
    let max = logits[idx[0]];
    let w: Vec<f64> = idx.iter().map(|&i| ((logits[i] - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    idx.into_iter().zip(w).map(|(i, w)| (i, w / total)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_ignores_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = [0.1, 3.0, 3.0, -1.0];
        for t in [0.0, 0.5, 10.0] {
            assert_eq!(sample_top_k(&l, 1, t, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn rejects_bad_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_top_k(&[1.0, 2.0], 2, 0.0, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn top_k_renormalises() {
        let p = top_k_probs(&[2.0, 1.0, 0.0, -1.0], 2, 1.0);
        assert_eq!(p.len(), 2);
        let e = std::f64::consts::E;
        assert!((p[0].1 - e / (e + 1.0)).abs() < 1e-15);
        let full = top_k_probs(&[2.0, 1.0, 0.0], 10, 1.0);
        assert!((full.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
