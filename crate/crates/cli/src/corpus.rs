use std::path::{Path, PathBuf};

use ucodec_core::bitstream::{unpack, StreamHeader};
use ucodec_core::lm::LmExample;
use ucodec_core::objectives::CropSampler;
use ucodec_core::Error;

use crate::wav::read_wav;
use crate::{CliError, Result};

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ext) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Every `.wav` in `dir` behind a seeded crop sampler.
pub fn ingest_corpus(dir: impl AsRef<Path>, excerpt: usize, hop: usize, seed: u64) -> Result<CropSampler> {
    let dir = dir.as_ref();
    let files = list_files(dir, "wav")?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no .wav files in {}", dir.display())).into());
    }
    let clips = files.iter().map(read_wav).collect::<Result<Vec<_>>>()?;
    Ok(CropSampler::new(clips, excerpt, hop, seed)?)
}

/// `(stem.txt, stem.ucb)` pairs in `dir`. Stray `.ucb` files without text
/// are a dataset error.
pub fn load_lm_corpus(dir: impl AsRef<Path>) -> Result<Vec<(StreamHeader, LmExample)>> {
    let dir = dir.as_ref();
    let streams = list_files(dir, "ucb")?;
    if streams.is_empty() {
        return Err(Error::Dataset(format!("no .ucb files in {}", dir.display())).into());
    }
    let mut out = Vec::with_capacity(streams.len());
    for s in streams {
        let txt = s.with_extension("txt");
        if !txt.is_file() {
            return Err(Error::Dataset(format!("{} has no matching .txt", s.display())).into());
        }
        let text = std::fs::read(&txt).map_err(|e| CliError::io(&txt, e))?;
        let bytes = std::fs::read(&s).map_err(|e| CliError::io(&s, e))?;
        let (header, grid) = unpack(&bytes)?;
        out.push((header, LmExample { text: trim_newline(text), grid }));
    }
    Ok(out)
}

fn trim_newline(mut text: Vec<u8>) -> Vec<u8> {
    while text.last().is_some_and(|b| *b == b'\n' || *b == b'\r') {
        text.pop();
    }
    text
}
