//! Command bodies. Each one validates configs and stream headers before
//! building any model.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use ucodec_core::bench::{self, MacBreakdown, RtfReport};
use ucodec_core::bitstream::{pack, unpack, StreamHeader, TokenGrid};
use ucodec_core::codec::{pad_to_hop, CodecConfig, CodecModel, Waveform};
use ucodec_core::frvq::codebook_usage;
use ucodec_core::lm::{HierLm, LmConfig, LmTrainer, SynthOptions};
use ucodec_core::objectives::{CodecTrainer, StepReport};
use ucodec_core::Error;

use crate::checkpoint::{read_manifest, Checkpoint, CheckpointWriter, Kind};
use crate::config::{check_lm_matches, RunConfig};
use crate::corpus::{ingest_corpus, load_lm_corpus};
use crate::wav::{read_wav, write_wav};
use crate::{CliError, Result};

const GEN: &str = "gen";
const DISC: &str = "disc";
const LM: &str = "lm";

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn manifest_of(dir: &Path, kind: Kind) -> Result<RunConfig> {
    let m = read_manifest(dir)?;
    if m.kind != kind {
        return Err(CliError::Checkpoint(format!("{} holds a {:?} model, expected {kind:?}", dir.display(), m.kind)));
    }
    m.config.validate()?;
    Ok(m.config)
}

fn same_codec(a: &CodecConfig, b: &CodecConfig, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Compatibility(format!("{what}: codec configs differ")).into());
    }
    Ok(())
}

/// Header fields must describe this codec's token grids.
pub fn check_stream(header: &StreamHeader, codec: &CodecConfig) -> Result<()> {
    let fr = codec.frame_rate()?;
    if header.n_quantizers as usize != codec.n_quantizers
        || header.codebook_size as usize != codec.codebook_size
        || header.sample_rate != codec.sample_rate
        || header.frame_rate != fr
    {
        return Err(Error::Compatibility(format!(
            "stream has N={} C={} {} Hz at {}/{} fps, codec has N={} C={} {} Hz at {}/{} fps",
            header.n_quantizers,
            header.codebook_size,
            header.sample_rate,
            header.frame_rate.num,
            header.frame_rate.den,
            codec.n_quantizers,
            codec.codebook_size,
            codec.sample_rate,
            fr.num,
            fr.den
        ))
        .into());
    }
    Ok(())
}

fn check_wave(wave: &Waveform, codec: &CodecConfig) -> Result<()> {
    if wave.sample_rate != codec.sample_rate {
        return Err(Error::Format(format!("sample rate {} Hz, codec expects {} Hz", wave.sample_rate, codec.sample_rate)).into());
    }
    if wave.is_empty() {
        return Err(Error::Format("empty waveform".into()).into());
    }
    Ok(())
}

fn append_jsonl<S: Serialize>(path: &Path, record: &S) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
    let line = serde_json::to_string(record)?;
    writeln!(f, "{line}").map_err(|e| CliError::io(path, e))
}

pub fn ckpt_dir(out: &Path, step: usize) -> PathBuf {
    out.join(format!("ckpt-{step:06}"))
}

pub fn save_codec(dir: &Path, trainer: &CodecTrainer<f32>, cfg: &RunConfig) -> Result<()> {
    let mut w = CheckpointWriter::new(Kind::Codec, trainer.step(), cfg);
    w.add_store(GEN, &trainer.model.store).add_adam(GEN, &trainer.opt, &trainer.model.store);
    if let Some(d) = &trainer.disc {
        w.add_store(DISC, &d.store).add_adam(DISC, &d.opt, &d.store);
    }
    w.save(dir)
}

/// Trainer restored with weights, both optimisers and the step count.
pub fn load_codec_trainer(dir: &Path) -> Result<(RunConfig, CodecTrainer<f32>)> {
    let cfg = manifest_of(dir, Kind::Codec)?;
    let mut ck = Checkpoint::load(dir)?;
    let mut r = rng(cfg.train.seed);
    let model = CodecModel::new(cfg.codec.clone(), &mut r)?;
    let mut trainer = CodecTrainer::new(model, cfg.train.clone(), &mut r)?;
    ck.restore_store(GEN, &mut trainer.model.store)?;
    ck.restore_adam(GEN, &mut trainer.opt, &trainer.model.store)?;
    if let Some(d) = trainer.disc.as_mut() {
        ck.restore_store(DISC, &mut d.store)?;
        ck.restore_adam(DISC, &mut d.opt, &d.store)?;
    }
    ck.finish()?;
    trainer.set_step(ck.manifest.step);
    Ok((cfg, trainer))
}

/// Generator weights only; discriminator and optimiser tensors are skipped.
pub fn load_codec_model(dir: &Path) -> Result<(RunConfig, CodecModel<f32>)> {
    let cfg = manifest_of(dir, Kind::Codec)?;
    let mut ck = Checkpoint::load(dir)?;
    let mut model = CodecModel::new(cfg.codec.clone(), &mut rng(0))?;
    ck.restore_store(GEN, &mut model.store)?;
    if let Some(name) = ck.unused(&format!("{GEN}/")).first() {
        return Err(CliError::Checkpoint(format!("unexpected tensor {name}")));
    }
    Ok((cfg, model))
}

pub fn save_lm(dir: &Path, trainer: &LmTrainer<f32>, cfg: &RunConfig) -> Result<()> {
    CheckpointWriter::new(Kind::Lm, trainer.step(), cfg)
        .add_store(LM, &trainer.model.store)
        .add_adam(LM, &trainer.opt, &trainer.model.store)
        .save(dir)
}

pub fn load_lm_trainer(dir: &Path) -> Result<(RunConfig, LmTrainer<f32>)> {
    let cfg = manifest_of(dir, Kind::Lm)?;
    let mut ck = Checkpoint::load(dir)?;
    let model = HierLm::new(cfg.lm.clone(), &mut rng(cfg.train.seed))?;
    let mut trainer = LmTrainer::new(model, cfg.lm_train.schedule());
    ck.restore_store(LM, &mut trainer.model.store)?;
    ck.restore_adam(LM, &mut trainer.opt, &trainer.model.store)?;
    ck.finish()?;
    trainer.set_step(ck.manifest.step);
    Ok((cfg, trainer))
}

/// Outcome of a training command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

/// Trains the codec on every WAV in `data`, resuming from `resume` when
/// given. Writes `metrics.jsonl` and a checkpoint every
/// `train.checkpoint_every` steps plus one at the end.
pub fn codec_train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut trainer = match resume {
        Some(dir) => {
            let stored = manifest_of(dir, Kind::Codec)?;
            same_codec(&stored.codec, &cfg.codec, "resume checkpoint")?;
            if stored.train.seed != cfg.train.seed || stored.train.weights != cfg.train.weights {
                return Err(Error::Compatibility("resume checkpoint was trained with a different seed or loss weights".into()).into());
            }
            let (_, mut t) = load_codec_trainer(dir)?;
            t.cfg = cfg.train.clone();
            t
        }
        None => {
            let mut r = rng(cfg.train.seed);
            let model = CodecModel::new(cfg.codec.clone(), &mut r)?;
            CodecTrainer::new(model, cfg.train.clone(), &mut r)?
        }
    };
    let sampler = ingest_corpus(data, cfg.train.excerpt, cfg.codec.hop(), cfg.train.seed)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let metrics = out.join("metrics.jsonl");
    let mut last: Option<StepReport> = None;
    let every = cfg.train.checkpoint_every.max(1);
    while trainer.step() < cfg.train.steps {
        let batch = sampler.batch(trainer.step() as u64, cfg.train.batch);
        let report = trainer.train_step(&batch)?;
        append_jsonl(&metrics, &report)?;
        if report.step % every == 0 {
            save_codec(&ckpt_dir(out, report.step), &trainer, cfg)?;
        }
        last = Some(report);
    }
    let dir = ckpt_dir(out, trainer.step());
    save_codec(&dir, &trainer, cfg)?;
    Ok(TrainSummary { steps: trainer.step(), final_loss: last.map_or(f64::NAN, |r| r.total), checkpoint: dir })
}

/// Encodes `wave` into a `.ucb` byte stream.
pub fn encode_wave(model: &CodecModel<f32>, wave: &Waveform) -> Result<Vec<u8>> {
    check_wave(wave, &model.cfg)?;
    let (padded, original) = pad_to_hop(wave, model.cfg.hop())?;
    let grid = model.encode_codes(&padded)?;
    let header = StreamHeader::new(
        model.cfg.sample_rate,
        model.cfg.frame_rate()?,
        model.cfg.n_quantizers,
        model.cfg.codebook_size,
        grid.frames(),
        original,
    )?;
    Ok(pack(&grid, &header)?)
}

/// Decodes a `.ucb` byte stream, trimming to the original length.
pub fn decode_stream(model: &CodecModel<f32>, bytes: &[u8]) -> Result<Waveform> {
    let (header, grid) = unpack(bytes)?;
    check_stream(&header, &model.cfg)?;
    decode_grid(model, &grid, header.original_len as usize)
}

fn decode_grid(model: &CodecModel<f32>, grid: &TokenGrid, len: usize) -> Result<Waveform> {
    if grid.frames() == 0 {
        return Ok(Waveform::new(Vec::new(), model.cfg.sample_rate));
    }
    let mut wave = model.decode_codes(grid)?;
    wave.samples.truncate(len);
    Ok(wave)
}

pub fn codec_encode(ckpt: &Path, input: &Path, out: &Path) -> Result<StreamHeader> {
    let cfg = manifest_of(ckpt, Kind::Codec)?;
    let wave = read_wav(input)?;
    check_wave(&wave, &cfg.codec)?;
    let (_, model) = load_codec_model(ckpt)?;
    let bytes = encode_wave(&model, &wave)?;
    std::fs::write(out, &bytes).map_err(|e| CliError::io(out, e))?;
    Ok(unpack(&bytes)?.0)
}

pub fn codec_decode(ckpt: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = manifest_of(ckpt, Kind::Codec)?;
    let bytes = std::fs::read(input).map_err(|e| CliError::io(input, e))?;
    let (header, _) = unpack(&bytes)?;
    check_stream(&header, &cfg.codec)?;
    let (_, model) = load_codec_model(ckpt)?;
    let wave = decode_stream(&model, &bytes)?;
    write_wav(out, &wave)
}

/// Reconstruction quality through the full encode/pack/unpack/decode path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub si_snr: f64,
    pub mel_l1: f64,
    pub kbps: f64,
    pub frames: usize,
    pub seconds: f64,
}

pub fn eval_wave(model: &CodecModel<f32>, wave: &Waveform) -> Result<EvalReport> {
    let bytes = encode_wave(model, wave)?;
    let (header, _) = unpack(&bytes)?;
    let recon = decode_stream(model, &bytes)?;
    Ok(EvalReport {
        si_snr: bench::si_snr(&wave.samples, &recon.samples)?,
        mel_l1: bench::mel_l1(&wave.samples, &recon.samples, wave.sample_rate)?,
        kbps: header.achieved_bps() / 1000.0,
        frames: header.frames as usize,
        seconds: wave.duration_secs(),
    })
}

pub fn codec_eval(ckpt: &Path, input: &Path) -> Result<EvalReport> {
    let cfg = manifest_of(ckpt, Kind::Codec)?;
    let wave = read_wav(input)?;
    check_wave(&wave, &cfg.codec)?;
    let (_, model) = load_codec_model(ckpt)?;
    eval_wave(&model, &wave)
}

/// Trains the LM on `(text, .ucb)` pairs in `data`.
pub fn lm_train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    let corpus = load_lm_corpus(data)?;
    for (h, _) in &corpus {
        check_stream(h, &cfg.codec)?;
    }
    let examples: Vec<_> = corpus.into_iter().map(|(_, e)| e).collect();
    let mut trainer = match resume {
        Some(dir) => {
            let stored = manifest_of(dir, Kind::Lm)?;
            if stored.lm != cfg.lm {
                return Err(Error::Compatibility("resume checkpoint has a different LM config".into()).into());
            }
            let (_, mut t) = load_lm_trainer(dir)?;
            t.schedule = cfg.lm_train.schedule();
            t
        }
        None => LmTrainer::new(HierLm::new(cfg.lm.clone(), &mut rng(cfg.train.seed))?, cfg.lm_train.schedule()),
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let metrics = out.join("metrics.jsonl");
    let every = cfg.lm_train.checkpoint_every.max(1);
    let b = cfg.lm_train.batch.min(examples.len());
    let mut last = f64::NAN;
    while trainer.step() < cfg.lm_train.steps {
        let start = trainer.step() * b;
        let batch: Vec<_> = (0..b).map(|i| examples[(start + i) % examples.len()].clone()).collect();
        let report = trainer.train_step(&batch)?;
        append_jsonl(&metrics, &report)?;
        if report.step % every == 0 {
            save_lm(&ckpt_dir(out, report.step), &trainer, cfg)?;
        }
        last = report.nll;
    }
    let dir = ckpt_dir(out, trainer.step());
    save_lm(&dir, &trainer, cfg)?;
    Ok(TrainSummary { steps: trainer.step(), final_loss: last, checkpoint: dir })
}

/// Settings of one synthesis call.
#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub text: String,
    pub prompt: Option<PathBuf>,
    pub seed: u64,
    pub max_frames: Option<usize>,
    pub k_top: Option<usize>,
}

/// Text (and optional prompt stream) to token grid and waveform.
pub fn lm_synth(lm_ckpt: &Path, codec_ckpt: &Path, req: &SynthRequest, out: &Path) -> Result<TokenGrid> {
    let lm_cfg = manifest_of(lm_ckpt, Kind::Lm)?;
    let codec_cfg = manifest_of(codec_ckpt, Kind::Codec)?;
    check_lm_matches(&codec_cfg.codec, &lm_cfg.lm)?;
    let prompt = match &req.prompt {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            let (h, grid) = unpack(&bytes)?;
            check_stream(&h, &codec_cfg.codec)?;
            Some(grid)
        }
        None => None,
    };
    let mut opts = SynthOptions::from_config(&lm_cfg.lm);
    if let Some(m) = req.max_frames {
        opts.max_frames = m;
    }
    if let Some(k) = req.k_top {
        opts.k_top = k;
    }
    let (_, lm) = load_lm_trainer(lm_ckpt)?;
    let (_, codec) = load_codec_model(codec_ckpt)?;
    let grid = lm.model.synthesize(req.text.as_bytes(), prompt.as_ref(), opts, &mut rng(req.seed))?;
    let wave = decode_grid(&codec, &grid, grid.frames() * codec.cfg.hop())?;
    write_wav(out, &wave)?;
    Ok(grid)
}

/// Preset rows of the complexity table plus analytic estimates for the
/// same quantizer shapes at full model size.
pub fn bench_macs() -> Vec<MacBreakdown> {
    let mut rows = bench::reported_breakdowns();
    for (name, fr, n, c) in [
        ("8RVQ-c1024", 12.5, 8, 1024),
        ("8RVQ-c16384", 5.0, 8, 16384),
        ("16RVQ-c4096", 5.0, 16, 4096),
        ("32RVQ-c256", 5.0, 32, 256),
        ("100RVQ-c4", 5.0, 100, 4),
    ] {
        // context of a 10 s utterance
        let (g, l) = bench::lm_macs_per_frame(&LmConfig::full_scale(n, c), (fr * 10.0) as usize);
        rows.push(MacBreakdown::new(format!("{name}/analytic"), fr, g, l));
    }
    rows
}

/// Times fixed-length synthesis with the configured (randomly initialised)
/// LM; EOS is ignored so every run produces `lm.max_frames` frames.
pub fn bench_rtf(cfg: &RunConfig, seed: u64, runs: usize) -> Result<(MacBreakdown, RtfReport)> {
    cfg.validate()?;
    let fr = cfg.codec.frame_rate()?.as_f64();
    let lm = HierLm::<f32>::new(cfg.lm.clone(), &mut rng(seed))?;
    let opts = SynthOptions { ignore_eos: true, ..SynthOptions::from_config(&cfg.lm) };
    let text = b"the quick brown fox";
    let report = bench::measure_rtf(runs, || {
        let grid = lm.synthesize(text, None, opts, &mut rng(seed))?;
        Ok(grid.frames() as f64 / fr)
    })?;
    let (g, l) = bench::lm_macs_per_frame(&cfg.lm, text.len() + 1 + opts.max_frames / 2);
    let row = MacBreakdown::new(format!("desk-{}RVQ-c{}", cfg.lm.n_quantizers, cfg.lm.codebook_size), fr, g, l)
        .with_rtf(report.rtf);
    Ok((row, report))
}

/// Header and code statistics of a `.ucb` file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectReport {
    pub sample_rate: u32,
    pub frame_rate: f64,
    pub n_quantizers: usize,
    pub codebook_size: usize,
    pub frames: usize,
    pub original_len: usize,
    pub seconds: f64,
    pub achieved_bps: f64,
    pub payload_bytes: usize,
    /// Usage perplexity of each quantizer layer.
    pub perplexity: Vec<f64>,
}

pub fn inspect(path: &Path) -> Result<InspectReport> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (h, grid) = unpack(&bytes)?;
    let c = h.codebook_size as usize;
    let perplexity = if grid.frames() == 0 {
        vec![0.0; grid.layers()]
    } else {
        (0..grid.layers()).map(|k| codebook_usage(&grid, k, c).map(|u| u.1)).collect::<Result<_, _>>()?
    };
    Ok(InspectReport {
        sample_rate: h.sample_rate,
        frame_rate: h.frame_rate.as_f64(),
        n_quantizers: h.n_quantizers as usize,
        codebook_size: c,
        frames: h.frames as usize,
        original_len: h.original_len as usize,
        seconds: h.original_len as f64 / h.sample_rate as f64,
        achieved_bps: h.achieved_bps(),
        payload_bytes: h.payload_bytes(),
        perplexity,
    })
}
