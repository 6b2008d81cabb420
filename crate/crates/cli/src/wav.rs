//! 16 kHz mono PCM16 WAV only; anything else is rejected rather than
//! converted.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};
use ucodec_core::codec::Waveform;

use crate::{CliError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
const SCALE: f32 = 32768.0;

fn spec() -> WavSpec {
    WavSpec { channels: 1, sample_rate: SAMPLE_RATE, bits_per_sample: 16, sample_format: SampleFormat::Int }
}

fn wav_err(field: &'static str, detail: impl Into<String>) -> CliError {
    CliError::Wav { field, detail: detail.into() }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => CliError::io(path, io),
        other => wav_err("container", format!("{}: {other}", path.display())),
    })?;
    let s = reader.spec();
    if s.channels != 1 {
        return Err(wav_err("channels", format!("{} has {} channels, expected 1", path.display(), s.channels)));
    }
    if s.sample_format != SampleFormat::Int || s.bits_per_sample != 16 {
        return Err(wav_err(
            "encoding",
            format!("{} is {:?} {}-bit, expected PCM16", path.display(), s.sample_format, s.bits_per_sample),
        ));
    }
    if s.sample_rate != SAMPLE_RATE {
        return Err(wav_err("sample_rate", format!("{} is {} Hz, expected {SAMPLE_RATE} Hz", path.display(), s.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|r| r.map(|v| v as f32 / SCALE))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_err("data", format!("{}: {e}", path.display())))?;
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

/// Clamps to [-1, 1] and rounds to the nearest PCM16 step.
pub fn to_pcm16(x: f32) -> i16 {
    let v = (x.clamp(-1.0, 1.0) * SCALE).round();
    v.clamp(i16::MIN as f32, i16::MAX as f32) as i16
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if wave.sample_rate != SAMPLE_RATE {
        return Err(wav_err("sample_rate", format!("cannot write {} Hz audio", wave.sample_rate)));
    }
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => CliError::io(path, io),
        other => wav_err("container", other.to_string()),
    };
    let mut w = WavWriter::create(path, spec()).map_err(map)?;
    for &x in &wave.samples {
        w.write_sample(to_pcm16(x)).map_err(map)?;
    }
    w.finalize().map_err(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm_rounding() {
        assert_eq!(to_pcm16(0.0), 0);
        assert_eq!(to_pcm16(1.0), i16::MAX);
        assert_eq!(to_pcm16(-1.0), i16::MIN);
        assert_eq!(to_pcm16(5.0), i16::MAX);
        assert_eq!(to_pcm16(0.6 / SCALE), 1);
        assert_eq!(to_pcm16(-0.4 / SCALE), 0);
    }
}
