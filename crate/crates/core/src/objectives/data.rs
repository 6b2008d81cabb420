use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::Waveform;
use crate::{Error, Result};

/// Stateless crop sampler: the batch for `(seed, step)` is always the same.
///
/// Clips are visited in a seed-dependent order that is reshuffled every
/// epoch; each visit takes one hop-aligned excerpt, zero-padding clips that
/// are shorter than the excerpt.
#[derive(Debug, Clone)]
pub struct CropSampler {
    clips: Vec<Waveform>,
    excerpt: usize,
    hop: usize,
    seed: u64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CropSampler {
    pub fn new(clips: Vec<Waveform>, excerpt: usize, hop: usize, seed: u64) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Dataset("no clips".into()));
        }
        if hop == 0 || excerpt == 0 || excerpt % hop != 0 {
            return Err(Error::Alignment { len: excerpt, hop });
        }
        if let Some(c) = clips.iter().find(|c| c.is_empty()) {
            return Err(Error::Format(format!("empty clip at {} Hz", c.sample_rate)));
        }
        Ok(Self { clips, excerpt, hop, seed })
    }

    pub fn clips(&self) -> &[Waveform] {
        &self.clips
    }

    pub fn excerpt(&self) -> usize {
        self.excerpt
    }

    fn order(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.clips.len()).collect();
        idx.shuffle(&mut rng_for(self.seed, epoch << 1));
        idx
    }

    /// Clip index and crop offset of the `n`-th excerpt overall.
    pub fn locate(&self, n: u64) -> (usize, usize) {
        let count = self.clips.len() as u64;
        let clip = self.order(n / count)[(n % count) as usize];
        let len = self.clips[clip].len();
        let slots = if len > self.excerpt { (len - self.excerpt) / self.hop + 1 } else { 1 };
        let slot = rng_for(self.seed, (n << 1) | 1).random_range(0..slots);
        (clip, slot * self.hop)
    }

    pub fn excerpt_at(&self, n: u64) -> Waveform {
        let (clip, offset) = self.locate(n);
        let src = &self.clips[clip];
        let end = (offset + self.excerpt).min(src.len());
        let mut samples = src.samples[offset..end].to_vec();
        samples.resize(self.excerpt, 0.0);
        Waveform::new(samples, src.sample_rate)
    }

    /// Batch for 0-based `step`.
    pub fn batch(&self, step: u64, size: usize) -> Vec<Waveform> {
        (0..size as u64).map(|i| self.excerpt_at(step * size as u64 + i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clips() -> Vec<Waveform> {
        (1..4).map(|k| Waveform::new((0..k * 1000).map(|i| i as f32).collect(), 16_000)).collect()
    }

    #[test]
    fn deterministic_and_aligned() {
        let a = CropSampler::new(clips(), 320, 32, 9).unwrap();
        let b = CropSampler::new(clips(), 320, 32, 9).unwrap();
        for step in 0..20 {
            assert_eq!(a.batch(step, 4), b.batch(step, 4));
        }
        for n in 0..300 {
            let (_, off) = a.locate(n);
            assert_eq!(off % 32, 0);
        }
    }

    #[test]
    fn short_clips_are_padded() {
        let s = CropSampler::new(vec![Waveform::new(vec![1.0; 10], 16_000)], 64, 32, 0).unwrap();
        let e = s.excerpt_at(0);
        assert_eq!(e.len(), 64);
        assert_eq!(e.samples[9], 1.0);
        assert_eq!(e.samples[10], 0.0);
    }

    #[test]
    fn rejects_misaligned_excerpt() {
        assert!(matches!(CropSampler::new(clips(), 100, 32, 0), Err(Error::Alignment { .. })));
        assert!(CropSampler::new(Vec::new(), 64, 32, 0).is_err());
    }
}
