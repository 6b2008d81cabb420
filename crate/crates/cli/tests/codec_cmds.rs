mod common;

use std::process::Command;

use common::{sine, toy_config, write_sines};
use ucodec_cli::checkpoint::Checkpoint;
use ucodec_cli::commands::{self, ckpt_dir};
use ucodec_cli::wav::{read_wav, write_wav};
use ucodec_cli::CliError;
use ucodec_core::bench::si_snr;
use ucodec_core::bitstream::bitrate_bps;
use ucodec_core::Error;

const FREQS: [f64; 5] = [110.0, 165.0, 220.0, 275.0, 330.0];

fn read_lines(p: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..3], 4000);
    let mut cfg = toy_config();
    // exercise the discriminator state as well
    cfg.train.weights = Default::default();
    cfg.train.disc.stft_ffts = vec![64, 128];
    cfg.train.steps = 3;
    cfg.train.batch = 2;
    cfg.train.checkpoint_every = 2;
    let full = tempfile::tempdir().unwrap();
    commands::codec_train(&cfg, data.path(), full.path(), None).unwrap();
    let two = ckpt_dir(full.path(), 2);

    let (_, trainer) = commands::load_codec_trainer(&two).unwrap();
    assert_eq!(trainer.step(), 2);
    assert!(trainer.disc.is_some());
    let again = tempfile::tempdir().unwrap();
    commands::save_codec(again.path(), &trainer, &cfg).unwrap();
    for f in ["params.bin", "manifest.json"] {
        assert_eq!(std::fs::read(two.join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
    }

    let resumed = tempfile::tempdir().unwrap();
    commands::codec_train(&cfg, data.path(), resumed.path(), Some(&two)).unwrap();
    let a = read_lines(&full.path().join("metrics.jsonl"));
    let b = read_lines(&resumed.path().join("metrics.jsonl"));
    assert_eq!(a.len(), 3);
    assert_eq!(b, a[2..].to_vec());
    assert_eq!(
        std::fs::read(ckpt_dir(full.path(), 3).join("params.bin")).unwrap(),
        std::fs::read(ckpt_dir(resumed.path(), 3).join("params.bin")).unwrap()
    );
}

#[test]
fn resume_with_other_codec_is_rejected() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..1], 2048);
    let mut cfg = toy_config();
    cfg.train.steps = 1;
    let out = tempfile::tempdir().unwrap();
    let s = commands::codec_train(&cfg, data.path(), out.path(), None).unwrap();
    let mut other = cfg.clone();
    other.codec.n_quantizers = 2;
    other.lm.n_quantizers = 2;
    let r = commands::codec_train(&other, data.path(), out.path(), Some(&s.checkpoint));
    assert!(matches!(r, Err(CliError::Engine(Error::Compatibility(_)))));
}

/// Overfits the miniature codec on five sines through the train command,
/// then round-trips a training file through encode and decode.
#[test]
fn overfit_encode_decode() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS, 16_000);
    let mut cfg = toy_config();
    cfg.train.steps = 2000;
    cfg.train.checkpoint_every = 1000;
    let out = tempfile::tempdir().unwrap();
    let s = commands::codec_train(&cfg, data.path(), out.path(), None).unwrap();
    assert_eq!(s.steps, 2000);
    let ck = Checkpoint::load(&s.checkpoint).unwrap();
    assert_eq!(ck.manifest.step, 2000);

    let input = data.path().join("clip2.wav");
    let ucb = out.path().join("x.ucb");
    let wav = out.path().join("y.wav");
    let header = commands::codec_encode(&s.checkpoint, &input, &ucb).unwrap();
    assert_eq!(header.frames as usize, 16_000 / cfg.codec.hop());
    commands::codec_decode(&s.checkpoint, &ucb, &wav).unwrap();
    let (x, y) = (read_wav(&input).unwrap(), read_wav(&wav).unwrap());
    assert_eq!(x.len(), y.len());
    let snr = si_snr(&x.samples, &y.samples).unwrap();
    assert!(snr >= 10.0, "si_snr {snr:.2} dB");

    let report = commands::codec_eval(&s.checkpoint, &input).unwrap();
    // eval skips the PCM16 rounding of the decoded file
    assert!(report.si_snr >= 10.0 && (report.si_snr - snr).abs() < 0.5, "{} vs {snr}", report.si_snr);
}

#[test]
fn eval_kbps_matches_bitrate() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..1], 2048);
    let mut cfg = toy_config();
    cfg.train.steps = 1;
    let out = tempfile::tempdir().unwrap();
    let s = commands::codec_train(&cfg, data.path(), out.path(), None).unwrap();
    // one second, not a multiple of the hop after trimming a sample
    for len in [16_000, 15_999] {
        let p = out.path().join(format!("{len}.wav"));
        write_wav(&p, &sine(440.0, 0.3, len)).unwrap();
        let r = commands::codec_eval(&s.checkpoint, &p).unwrap();
        if len == 16_000 {
            let fr = cfg.codec.frame_rate().unwrap().as_f64();
            let expected = bitrate_bps(fr, cfg.codec.n_quantizers, cfg.codec.codebook_size).unwrap() / 1000.0;
            assert_eq!(r.kbps, expected);
        }
        assert!(r.kbps > 0.0 && r.mel_l1.is_finite());
    }
}

#[test]
fn truncated_stream_fails_with_nonzero_exit() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..1], 2048);
    let mut cfg = toy_config();
    cfg.train.steps = 1;
    let out = tempfile::tempdir().unwrap();
    let s = commands::codec_train(&cfg, data.path(), out.path(), None).unwrap();
    let ucb = out.path().join("a.ucb");
    commands::codec_encode(&s.checkpoint, &data.path().join("clip0.wav"), &ucb).unwrap();
    let bytes = std::fs::read(&ucb).unwrap();
    let cut = out.path().join("cut.ucb");
    std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
    let r = commands::codec_decode(&s.checkpoint, &cut, &out.path().join("o.wav"));
    assert!(matches!(r, Err(CliError::Engine(Error::CorruptStream(_)))));

    let status = Command::new(env!("CARGO_BIN_EXE_ucodec"))
        .args(["codec", "decode", "--ckpt"])
        .arg(&s.checkpoint)
        .arg(&cut)
        .arg("--out")
        .arg(out.path().join("o.wav"))
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("corrupt stream"));
}

#[test]
fn stream_from_other_codec_is_rejected_before_decoding() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..1], 2048);
    let mut a = toy_config();
    a.train.steps = 1;
    let mut b = a.clone();
    b.codec.n_quantizers = 2;
    b.lm.n_quantizers = 2;
    let (oa, ob) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = commands::codec_train(&a, data.path(), oa.path(), None).unwrap();
    let sb = commands::codec_train(&b, data.path(), ob.path(), None).unwrap();
    let ucb = oa.path().join("a.ucb");
    commands::codec_encode(&sa.checkpoint, &data.path().join("clip0.wav"), &ucb).unwrap();
    let r = commands::codec_decode(&sb.checkpoint, &ucb, &oa.path().join("o.wav"));
    assert!(matches!(r, Err(CliError::Engine(Error::Compatibility(_)))));
}

#[test]
fn cli_binary_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    write_sines(data.path(), &FREQS[..2], 2048);
    let out = tempfile::tempdir().unwrap();
    let cfg_path = out.path().join("run.toml");
    let mut cfg = toy_config();
    cfg.train.steps = 2;
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let bin = env!("CARGO_BIN_EXE_ucodec");
    let run = |args: &[&std::ffi::OsStr]| {
        let o = Command::new(bin).args(args).env("UCODEC_THREADS", "1").output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    let train_dir = out.path().join("train");
    run(&[
        "codec".as_ref(),
        "train".as_ref(),
        "--data".as_ref(),
        data.path().as_os_str(),
        "--config".as_ref(),
        cfg_path.as_os_str(),
        "--seed".as_ref(),
        "4".as_ref(),
        "--out".as_ref(),
        train_dir.as_os_str(),
    ]);
    let ck = ckpt_dir(&train_dir, 2);
    assert_eq!(Checkpoint::load(&ck).unwrap().manifest.config.train.seed, 4);
    let ucb = out.path().join("x.ucb");
    let clip = data.path().join("clip1.wav");
    run(&["codec".as_ref(), "encode".as_ref(), "--ckpt".as_ref(), ck.as_os_str(), clip.as_os_str(), "--out".as_ref(), ucb.as_os_str()]);
    let info: serde_json::Value = serde_json::from_str(&run(&["inspect".as_ref(), ucb.as_os_str()])).unwrap();
    assert_eq!(info["frames"], 2048 / cfg.codec.hop());
    assert_eq!(info["n_quantizers"], cfg.codec.n_quantizers);
    let eval: serde_json::Value =
        serde_json::from_str(&run(&["codec".as_ref(), "eval".as_ref(), "--ckpt".as_ref(), ck.as_os_str(), clip.as_os_str()])).unwrap();
    assert!(eval["kbps"].as_f64().unwrap() > 0.0);

    std::fs::write(&cfg_path, "[train]\nbogus = 1\n").unwrap();
    let o = Command::new(bin)
        .args(["codec", "train", "--data"])
        .arg(data.path())
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&train_dir)
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}
