//! Multiply-accumulate accounting, real-time-factor timing and signal
//! metrics.
//!
//! MAC counts are plain operation counts; [`GIGA`] converts them to the
//! giga-MAC units used in reports. Per-frame local cost covers all `N`
//! intra-frame steps.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::lm::LmConfig;
use crate::nn::TransformerConfig;
use crate::objectives::{MelConfig, MelLoss};
use crate::{Error, Result};

pub const GIGA: f64 = 1e9;
pub const CSV_HEADER: &str = "model,frame_rate,rtf,mac_g,mac_l,mac_total";

pub fn mac_linear(in_dim: usize, out_dim: usize, positions: usize) -> f64 {
    in_dim as f64 * out_dim as f64 * positions as f64
}

pub fn mac_conv1d(cin: usize, cout: usize, kernel: usize, out_len: usize) -> f64 {
    cin as f64 * cout as f64 * kernel as f64 * out_len as f64
}

/// Full-sequence cost: projections and MLP per position plus the score and
/// value products of attention.
pub fn mac_transformer(layers: usize, d_model: usize, ff_dim: usize, seq_len: usize) -> f64 {
    let (l, d, ff, n) = (layers as f64, d_model as f64, ff_dim as f64, seq_len as f64);
    l * (4.0 * d * d + 2.0 * d * ff) * n + l * 2.0 * n * n * d
}

/// Cost of one cached decoding step attending over `context` positions.
pub fn mac_transformer_step(layers: usize, d_model: usize, ff_dim: usize, context: usize) -> f64 {
    let (l, d, ff, c) = (layers as f64, d_model as f64, ff_dim as f64, context as f64);
    l * (4.0 * d * d + 2.0 * d * ff) + l * 2.0 * c * d
}

/// `S * (G + L)`.
pub fn mac_total_per_second(frame_rate: f64, mac_g: f64, mac_l: f64) -> f64 {
    frame_rate * (mac_g + mac_l)
}

/// One row of a complexity table; MACs in giga units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub model: String,
    pub frame_rate: f64,
    pub rtf: Option<f64>,
    pub mac_g: f64,
    pub mac_l: f64,
    pub mac_total: f64,
}

impl MacBreakdown {
    pub fn new(model: impl Into<String>, frame_rate: f64, mac_g: f64, mac_l: f64) -> Self {
        Self {
            model: model.into(),
            frame_rate,
            rtf: None,
            mac_g,
            mac_l,
            mac_total: mac_total_per_second(frame_rate, mac_g, mac_l),
        }
    }

    pub fn with_rtf(mut self, rtf: f64) -> Self {
        self.rtf = Some(rtf);
        self
    }

    pub fn csv_row(&self) -> String {
        let rtf = self.rtf.map_or(String::new(), |r| format!("{r:.4}"));
        format!(
            "{},{},{},{:.3},{:.3},{:.2}",
            self.model, self.frame_rate, rtf, self.mac_g, self.mac_l, self.mac_total
        )
    }
}

pub fn to_csv(rows: &[MacBreakdown]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// A published complexity row: per-frame MACs, total and RTF as reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedRow {
    pub model: &'static str,
    pub frame_rate: f64,
    pub mac_g: f64,
    pub mac_l: f64,
    pub mac_total: f64,
    pub rtf: f64,
}

/// Published complexity figures of the 50 Hz reference system and the
/// five low-frame-rate configurations.
pub const REPORTED: [ReportedRow; 6] = [
    ReportedRow { model: "UniAudio", frame_rate: 50.0, mac_g: 0.906, mac_l: 0.006, mac_total: 45.6, rtf: 1.40 },
    ReportedRow { model: "8RVQ-c1024", frame_rate: 12.5, mac_g: 0.578, mac_l: 0.014, mac_total: 7.4, rtf: 1.33 },
    ReportedRow { model: "8RVQ-c16384", frame_rate: 5.0, mac_g: 0.189, mac_l: 0.203, mac_total: 1.96, rtf: 0.52 },
    ReportedRow { model: "16RVQ-c4096", frame_rate: 5.0, mac_g: 0.201, mac_l: 0.102, mac_total: 1.52, rtf: 0.85 },
    ReportedRow { model: "32RVQ-c256", frame_rate: 5.0, mac_g: 0.163, mac_l: 0.014, mac_total: 0.89, rtf: 1.60 },
    ReportedRow { model: "100RVQ-c4", frame_rate: 5.0, mac_g: 0.277, mac_l: 0.012, mac_total: 1.45, rtf: 4.68 },
];

/// Rows recomputed from the published per-frame figures.
pub fn reported_breakdowns() -> Vec<MacBreakdown> {
    REPORTED.iter().map(|r| MacBreakdown::new(r.model, r.frame_rate, r.mac_g, r.mac_l)).collect()
}

fn step_cost(tf: &TransformerConfig, context: usize) -> f64 {
    mac_transformer_step(tf.layers, tf.hidden, tf.mlp, context)
}

/// Analytic per-frame cost of an LM configuration when the global context
/// holds `context` positions: one cached global step, then `N` cached local
/// steps with their conditioning projection and output heads.
pub fn lm_macs_per_frame(cfg: &LmConfig, context: usize) -> (f64, f64) {
    let n = cfg.n_quantizers;
    let g = step_cost(&cfg.global, context);
    let mut l = mac_linear(cfg.global.hidden, cfg.local.hidden, 1);
    for k in 1..=n {
        l += step_cost(&cfg.local, k);
        let vocab = if k == 1 { cfg.codebook_size + 1 } else { cfg.codebook_size };
        l += mac_linear(cfg.local.hidden, vocab, 1);
    }
    (g / GIGA, l / GIGA)
}

/// Timing of a repeated workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub wall_secs: f64,
    pub audio_secs: f64,
    pub rtf: f64,
    pub runs: usize,
    pub parallel: bool,
    pub note: String,
}

/// Median wall time of `runs` (at least 3) executions of `workload`, which
/// returns the seconds of audio it produced, divided by that duration.
pub fn measure_rtf<F>(runs: usize, mut workload: F) -> Result<RtfReport>
where
    F: FnMut() -> Result<f64>,
{
    let runs = runs.max(3);
    let mut walls = Vec::with_capacity(runs);
    let mut audio = 0.0;
    for _ in 0..runs {
        let t0 = Instant::now();
        audio = workload()?;
        walls.push(t0.elapsed());
    }
    if !(audio > 0.0) {
        return Err(Error::Usage(format!("workload produced {audio} s of audio")));
    }
    walls.sort();
    let wall = median(&walls).as_secs_f64();
    Ok(RtfReport {
        wall_secs: wall,
        audio_secs: audio,
        rtf: wall / audio,
        runs,
        parallel: crate::kernels::par::enabled(),
        note: format!("{} threads available", std::thread::available_parallelism().map_or(1, |n| n.get())),
    })
}

fn median(sorted: &[Duration]) -> Duration {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

/// Reported ceiling for identical signals.
pub const SI_SNR_CAP_DB: f64 = 100.0;

/// Scale-invariant SNR of `estimate` against `reference`, both made zero-mean.
pub fn si_snr(reference: &[f32], estimate: &[f32]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::Usage(format!("si_snr of {} vs {} samples", reference.len(), estimate.len())));
    }
    let mean = |x: &[f32]| x.iter().map(|&v| v as f64).sum::<f64>() / x.len().max(1) as f64;
    let (mr, me) = (mean(reference), mean(estimate));
    let r: Vec<f64> = reference.iter().map(|&v| v as f64 - mr).collect();
    let e: Vec<f64> = estimate.iter().map(|&v| v as f64 - me).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr <= f64::MIN_POSITIVE {
        return Err(Error::UndefinedMetric("si_snr with a silent reference".into()));
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = r.iter().zip(&e).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    if noise <= 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    if target <= 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// Multi-scale log-mel L1 distance using every default scale that fits the
/// signal length.
pub fn mel_l1(reference: &[f32], estimate: &[f32], sample_rate: u32) -> Result<f64> {
    let d = MelConfig::default();
    let n = d.windows.iter().filter(|&&w| w <= reference.len()).count();
    if n == 0 {
        return Err(Error::InputTooShort(format!("{} samples for mel scales", reference.len())));
    }
    MelLoss::new(MelConfig::smallest(n), sample_rate)?.value(reference, estimate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_examples() {
        assert_eq!(mac_linear(4, 3, 2), 24.0);
        assert_eq!(mac_conv1d(1, 1, 3, 10), 30.0);
        assert_eq!(mac_transformer(1, 2, 4, 1), 36.0);
        assert!(mac_transformer(2, 8, 16, 20) > 2.0 * mac_transformer(2, 8, 16, 10));
    }

    #[test]
    fn totals_from_per_frame_values() {
        assert!((mac_total_per_second(50.0, 0.906, 0.006) - 45.6).abs() < 1e-9);
        assert!((mac_total_per_second(5.0, 0.163, 0.014) - 0.885).abs() < 1e-12);
        assert!((mac_total_per_second(12.5, 0.578, 0.014) - 7.4).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[MacBreakdown::new("x", 5.0, 0.189, 0.203)]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("x,5,,0.189,0.203,1.96"));
    }

    #[test]
    fn si_snr_edges() {
        let x: Vec<f32> = (0..100).map(|i| (i as f32 * 0.3).sin()).collect();
        assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
        let x2: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_snr(&x, &x2).unwrap(), si_snr(&x, &x).unwrap());
        assert!(matches!(si_snr(&[0.0; 4], &[1.0; 4]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(si_snr(&x, &x[..3]), Err(Error::Usage(_))));
    }

    #[test]
    fn rtf_rejects_silent_workload() {
        assert!(matches!(measure_rtf(3, || Ok(0.0)), Err(Error::Usage(_))));
    }
}
