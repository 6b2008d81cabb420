//! The `.ucb` token container and bitrate arithmetic.
//!
//! Layout (all multi-byte header fields little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `UCB1` |
//! | 1 | version (1) |
//! | 4 | sample rate (Hz) |
//! | 2 + 2 | frame rate numerator, denominator |
//! | 2 | quantizer layers N |
//! | 4 | codebook size C |
//! | 4 | frame count T |
//! | 4 | original sample count |
//!
//! The payload follows immediately: every token as `ceil(log2 C)` bits,
//! most significant bit first, frames in time order and layers `1..N` within
//! a frame. The last byte is padded with zero bits.

use crate::codec::FrameRate;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UCB1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;

/// `T x N` matrix of code indices, row-major by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    frames: usize,
    layers: usize,
    codes: Vec<u32>,
}

impl TokenGrid {
    pub fn new(frames: usize, layers: usize, codes: Vec<u32>) -> Result<Self> {
        if frames * layers != codes.len() {
            return Err(Error::shape(format!(
                "token grid {frames}x{layers} needs {} codes, got {}",
                frames * layers,
                codes.len()
            )));
        }
        Ok(Self { frames, layers, codes })
    }

    pub fn zeros(frames: usize, layers: usize) -> Self {
        Self { frames, layers, codes: vec![0; frames * layers] }
    }

    pub fn empty(layers: usize) -> Self {
        Self::zeros(0, layers)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn get(&self, frame: usize, layer: usize) -> u32 {
        self.codes[frame * self.layers + layer]
    }

    pub fn set(&mut self, frame: usize, layer: usize, code: u32) {
        self.codes[frame * self.layers + layer] = code;
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.codes[t * self.layers..(t + 1) * self.layers]
    }

    /// Codes of one quantizer layer across all frames.
    pub fn layer_codes(&self, layer: usize) -> Vec<u32> {
        (0..self.frames).map(|t| self.get(t, layer)).collect()
    }

    pub fn push_frame(&mut self, frame: &[u32]) -> Result<()> {
        if frame.len() != self.layers {
            return Err(Error::shape(format!("frame of {} codes for {} layers", frame.len(), self.layers)));
        }
        self.codes.extend_from_slice(frame);
        self.frames += 1;
        Ok(())
    }

    /// Checks every code is below `codebook_size`.
    pub fn check_bounds(&self, codebook_size: usize) -> Result<()> {
        match self.codes.iter().position(|&c| c as usize >= codebook_size) {
            Some(i) => Err(Error::CorruptStream(format!(
                "code {} at frame {}, layer {} exceeds codebook size {codebook_size}",
                self.codes[i],
                i / self.layers.max(1),
                i % self.layers.max(1)
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub frame_rate: FrameRate,
    pub n_quantizers: u16,
    pub codebook_size: u32,
    pub frames: u32,
    pub original_len: u32,
}

impl StreamHeader {
    pub fn new(
        sample_rate: u32,
        frame_rate: FrameRate,
        n_quantizers: usize,
        codebook_size: usize,
        frames: usize,
        original_len: usize,
    ) -> Result<Self> {
        let narrow = |v: usize, what: &str| -> Result<u32> {
            u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the header")))
        };
        if frame_rate.num > u16::MAX as u32 || frame_rate.den > u16::MAX as u32 {
            return Err(Error::Config(format!("frame rate {frame_rate:?} does not fit the header")));
        }
        let n_quantizers = u16::try_from(n_quantizers)
            .map_err(|_| Error::Config(format!("{n_quantizers} quantizers do not fit the header")))?;
        if codebook_size < 2 {
            return Err(Error::Config(format!("codebook size {codebook_size} must be at least 2")));
        }
        Ok(Self {
            sample_rate,
            frame_rate,
            n_quantizers,
            codebook_size: narrow(codebook_size, "codebook size")?,
            frames: narrow(frames, "frame count")?,
            original_len: narrow(original_len, "sample count")?,
        })
    }

    pub fn bits_per_token(&self) -> u32 {
        bits_per_token(self.codebook_size as usize)
    }

    pub fn payload_bits(&self) -> u64 {
        self.frames as u64 * self.n_quantizers as u64 * self.bits_per_token() as u64
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload_bits().div_ceil(8) as usize
    }

    /// Payload bits per second of original audio.
    pub fn achieved_bps(&self) -> f64 {
        let secs = self.original_len as f64 / self.sample_rate as f64;
        if secs > 0.0 {
            self.payload_bits() as f64 / secs
        } else {
            0.0
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.frame_rate.num as u16).to_le_bytes());
        out.extend_from_slice(&(self.frame_rate.den as u16).to_le_bytes());
        out.extend_from_slice(&self.n_quantizers.to_le_bytes());
        out.extend_from_slice(&self.codebook_size.to_le_bytes());
        out.extend_from_slice(&self.frames.to_le_bytes());
        out.extend_from_slice(&self.original_len.to_le_bytes());
    }

    fn read(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || bytes[..4] != MAGIC {
            return Err(Error::Format("missing UCB1 magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptStream(format!("header truncated at {} bytes", bytes.len())));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let header = Self {
            sample_rate: u32_at(5),
            frame_rate: FrameRate { num: u16_at(9) as u32, den: u16_at(11) as u32 },
            n_quantizers: u16_at(13),
            codebook_size: u32_at(15),
            frames: u32_at(19),
            original_len: u32_at(23),
        };
        if header.codebook_size < 2 || header.frame_rate.den == 0 {
            return Err(Error::CorruptStream(format!("invalid header fields {header:?}")));
        }
        Ok(header)
    }
}

/// `ceil(log2 C)` for `C >= 2`.
pub fn bits_per_token(codebook_size: usize) -> u32 {
    usize::BITS - (codebook_size.max(2) - 1).leading_zeros()
}

/// `S * N * log2(C)` bits per second.
pub fn bitrate_bps(frame_rate: f64, n_quantizers: usize, codebook_size: usize) -> Result<f64> {
    if codebook_size < 2 {
        return Err(Error::Config(format!("codebook size {codebook_size} must be at least 2")));
    }
    Ok(frame_rate * n_quantizers as f64 * (codebook_size as f64).log2())
}

/// `S * N` tokens per second.
pub fn token_rate(frame_rate: f64, n_quantizers: usize) -> f64 {
    frame_rate * n_quantizers as f64
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn new(bytes: Vec<u8>) -> Self {
        Self { bytes, acc: 0, nbits: 0 }
    }

    fn put(&mut self, value: u32, width: u32) {
        self.acc = (self.acc << width) | value as u64;
        self.nbits += width;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.bytes.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.bytes.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, acc: 0, nbits: 0 }
    }

    fn take(&mut self, width: u32) -> Option<u32> {
        while self.nbits < width {
            let b = *self.bytes.get(self.pos)?;
            self.pos += 1;
            self.acc = (self.acc << 8) | b as u64;
            self.nbits += 8;
        }
        self.nbits -= width;
        let v = (self.acc >> self.nbits) as u32 & ((1u64 << width) - 1) as u32;
        self.acc &= (1u64 << self.nbits) - 1;
        Some(v)
    }

    fn leftover(&self) -> u64 {
        self.acc
    }
}

/// Serialises `grid` under `header`.
pub fn pack(grid: &TokenGrid, header: &StreamHeader) -> Result<Vec<u8>> {
    if grid.frames() != header.frames as usize || grid.layers() != header.n_quantizers as usize {
        return Err(Error::Usage(format!(
            "grid {}x{} does not match header {}x{}",
            grid.frames(),
            grid.layers(),
            header.frames,
            header.n_quantizers
        )));
    }
    grid.check_bounds(header.codebook_size as usize)
        .map_err(|e| Error::Usage(format!("cannot pack: {e}")))?;
    let width = header.bits_per_token();
    let mut bytes = Vec::with_capacity(HEADER_LEN + header.payload_bytes());
    header.write(&mut bytes);
    let mut w = BitWriter::new(bytes);
    for &c in grid.codes() {
        w.put(c, width);
    }
    Ok(w.finish())
}

/// Parses a `.ucb` byte stream.
pub fn unpack(bytes: &[u8]) -> Result<(StreamHeader, TokenGrid)> {
    let header = StreamHeader::read(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_bytes() {
        return Err(Error::CorruptStream(format!(
            "payload is {} bytes, header implies {}",
            payload.len(),
            header.payload_bytes()
        )));
    }
    let width = header.bits_per_token();
    let count = header.frames as usize * header.n_quantizers as usize;
    let mut r = BitReader::new(payload);
    let mut codes = Vec::with_capacity(count);
    for i in 0..count {
        let c = r.take(width).ok_or_else(|| Error::CorruptStream("payload ended early".into()))?;
        if c >= header.codebook_size {
            return Err(Error::CorruptStream(format!(
                "token {i} decodes to {c}, codebook size is {}",
                header.codebook_size
            )));
        }
        codes.push(c);
    }
    if r.leftover() != 0 {
        return Err(Error::CorruptStream("non-zero padding bits".into()));
    }
    let grid = TokenGrid::new(header.frames as usize, header.n_quantizers as usize, codes)?;
    Ok((header, grid))
}
