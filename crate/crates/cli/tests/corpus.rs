mod common;

use common::{sine, write_sines};
use ucodec_cli::corpus::ingest_corpus;
use ucodec_cli::wav::write_wav;
use ucodec_cli::CliError;
use ucodec_core::Error;

#[test]
fn empty_directory_is_a_dataset_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest_corpus(dir.path(), 3200, 3200, 0), Err(CliError::Engine(Error::Dataset(_)))));
}

#[test]
fn same_seed_same_batches() {
    let dir = tempfile::tempdir().unwrap();
    write_sines(dir.path(), &[100.0, 200.0, 300.0, 400.0], 20_000);
    let a = ingest_corpus(dir.path(), 3200, 3200, 9).unwrap();
    let b = ingest_corpus(dir.path(), 3200, 3200, 9).unwrap();
    let c = ingest_corpus(dir.path(), 3200, 3200, 10).unwrap();
    let order = |s: &ucodec_core::objectives::CropSampler| (0..40).map(|n| s.locate(n)).collect::<Vec<_>>();
    assert_eq!(order(&a), order(&b));
    assert_ne!(order(&a), order(&c));
    for step in 0..5 {
        assert_eq!(a.batch(step, 3), b.batch(step, 3));
    }
}

#[test]
fn crops_are_whole_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_sines(dir.path(), &[150.0, 250.0], 41_000);
    write_wav(dir.path().join("short.wav"), &sine(90.0, 0.5, 5000)).unwrap();
    let hop = 3200;
    let s = ingest_corpus(dir.path(), 16_000, hop, 3).unwrap();
    for n in 0..1000 {
        let (_, offset) = s.locate(n);
        assert_eq!(offset % hop, 0);
        let w = s.excerpt_at(n);
        assert_eq!(w.len(), 16_000);
        assert_eq!(w.len() / hop, 5);
    }
    assert!(matches!(ingest_corpus(dir.path(), 16_001, hop, 3), Err(CliError::Engine(Error::Alignment { .. }))));
}
