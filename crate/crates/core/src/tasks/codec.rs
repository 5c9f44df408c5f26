//! Pluggable lossless codecs keyed by a numeric id and a name.

use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::CompressionReport;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("corrupt coded stream: {0}")]
    Corrupt(String),
    #[error("codec id {0} or name {1:?} already registered")]
    Duplicate(u16, String),
    #[error("codec id 0 is reserved for uncoded data")]
    ReservedId,
}

/// Wire id of a codec. `0` means "no lossless stage".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodecId(pub u16);

pub trait Codec: Send + Sync {
    fn id(&self) -> CodecId;
    fn name(&self) -> &str;
    fn encode(&self, input: &[u8]) -> Vec<u8>;
    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError>;
}

/// Runs `codec` over `input` and reports `(original − compressed) / original`.
pub fn lossless_encode(codec: &dyn Codec, input: &[u8]) -> (Vec<u8>, CompressionReport) {
    let coded = codec.encode(input);
    let report = CompressionReport::new(input.len() as u64, coded.len() as u64);
    (coded, report)
}

#[derive(Clone)]
pub struct CodecRegistry {
    codecs: Vec<Arc<dyn Codec>>,
}

impl std::fmt::Debug for CodecRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.codecs.iter().map(|c| (c.id().0, c.name()))).finish()
    }
}

impl Default for CodecRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        for c in [
            Arc::new(Rle) as Arc<dyn Codec>,
            Arc::new(Zlib),
            Arc::new(Zstd),
            Arc::new(Bzip2),
            Arc::new(Lz4),
        ] {
            r.register(c).expect("built-in codecs are distinct");
        }
        r
    }
}

impl CodecRegistry {
    pub fn empty() -> Self {
        Self { codecs: Vec::new() }
    }

    /// Shared registry holding the built-in codecs.
    pub fn builtin() -> &'static CodecRegistry {
        static REGISTRY: OnceLock<CodecRegistry> = OnceLock::new();
        REGISTRY.get_or_init(CodecRegistry::default)
    }

    pub fn register(&mut self, codec: Arc<dyn Codec>) -> Result<(), CodecError> {
        if codec.id().0 == 0 {
            return Err(CodecError::ReservedId);
        }
        if self
            .codecs
            .iter()
            .any(|c| c.id() == codec.id() || c.name() == codec.name())
        {
            return Err(CodecError::Duplicate(codec.id().0, codec.name().to_string()));
        }
        self.codecs.push(codec);
        self.codecs.sort_by_key(|c| c.id());
        Ok(())
    }

    pub fn by_name(&self, name: &str) -> Option<&dyn Codec> {
        self.codecs
            .iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
            .map(|c| c.as_ref())
    }

    pub fn by_id(&self, id: CodecId) -> Option<&dyn Codec> {
        self.codecs.iter().find(|c| c.id() == id).map(|c| c.as_ref())
    }

    /// Registered codecs in id order.
    pub fn iter(&self) -> impl Iterator<Item = &dyn Codec> {
        self.codecs.iter().map(|c| c.as_ref())
    }

    pub fn names(&self) -> Vec<String> {
        self.iter().map(|c| c.name().to_string()).collect()
    }
}

/// Byte-oriented run-length coding with varint lengths.
///
/// Stream of tokens: `0x00 len bytes…` (literal) or `0x01 len byte`
/// (run of `len ≥ 4` copies of `byte`). Lengths are LEB128.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rle;

const RLE_LITERAL: u8 = 0;
const RLE_RUN: u8 = 1;
const RLE_MIN_RUN: usize = 4;

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(input: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *input
            .get(*pos)
            .ok_or_else(|| CodecError::Corrupt("truncated length".into()))?;
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(CodecError::Corrupt("length varint too long".into()))
}

impl Codec for Rle {
    fn id(&self) -> CodecId {
        CodecId(1)
    }

    fn name(&self) -> &str {
        "rle"
    }

    fn encode(&self, input: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut literal_start = 0;
        let mut i = 0;
        while i < input.len() {
            let b = input[i];
            let run = input[i..].iter().take_while(|&&x| x == b).count();
            if run >= RLE_MIN_RUN {
                if literal_start < i {
                    out.push(RLE_LITERAL);
                    put_varint(&mut out, (i - literal_start) as u64);
                    out.extend_from_slice(&input[literal_start..i]);
                }
                out.push(RLE_RUN);
                put_varint(&mut out, run as u64);
                out.push(b);
                i += run;
                literal_start = i;
            } else {
                i += run;
            }
        }
        if literal_start < input.len() {
            out.push(RLE_LITERAL);
            put_varint(&mut out, (input.len() - literal_start) as u64);
            out.extend_from_slice(&input[literal_start..]);
        }
        out
    }

    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < input.len() {
            let tag = input[pos];
            pos += 1;
            let len = get_varint(input, &mut pos)? as usize;
            match tag {
                RLE_LITERAL => {
                    let end = pos
                        .checked_add(len)
                        .filter(|&e| e <= input.len())
                        .ok_or_else(|| CodecError::Corrupt("literal overruns input".into()))?;
                    out.extend_from_slice(&input[pos..end]);
                    pos = end;
                }
                RLE_RUN => {
                    let b = *input
                        .get(pos)
                        .ok_or_else(|| CodecError::Corrupt("run without byte".into()))?;
                    pos += 1;
                    out.resize(out.len() + len, b);
                }
                t => return Err(CodecError::Corrupt(format!("unknown token tag {t:#04x}"))),
            }
        }
        Ok(out)
    }
}

fn io_err(e: std::io::Error) -> CodecError {
    CodecError::Corrupt(e.to_string())
}

/// zlib (deflate with zlib framing), default level.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zlib;

impl Codec for Zlib {
    fn id(&self) -> CodecId {
        CodecId(2)
    }

    fn name(&self) -> &str {
        "zlib"
    }

    fn encode(&self, input: &[u8]) -> Vec<u8> {
        let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(input).expect("in-memory write");
        enc.finish().expect("in-memory write")
    }

    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        flate2::read::ZlibDecoder::new(input)
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zstd;

impl Codec for Zstd {
    fn id(&self) -> CodecId {
        CodecId(3)
    }

    fn name(&self) -> &str {
        "zstd"
    }

    fn encode(&self, input: &[u8]) -> Vec<u8> {
        zstd::stream::encode_all(input, 3).expect("in-memory zstd")
    }

    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError> {
        zstd::stream::decode_all(input).map_err(io_err)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bzip2;

impl Codec for Bzip2 {
    fn id(&self) -> CodecId {
        CodecId(4)
    }

    fn name(&self) -> &str {
        "bzip2"
    }

    fn encode(&self, input: &[u8]) -> Vec<u8> {
        let mut enc = bzip2::write::BzEncoder::new(Vec::new(), bzip2::Compression::default());
        enc.write_all(input).expect("in-memory write");
        enc.finish().expect("in-memory write")
    }

    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        bzip2::read::BzDecoder::new(input)
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    }
}

/// LZ4 block format with a prepended little-endian size.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lz4;

impl Codec for Lz4 {
    fn id(&self) -> CodecId {
        CodecId(5)
    }

    fn name(&self) -> &str {
        "lz4"
    }

    fn encode(&self, input: &[u8]) -> Vec<u8> {
        lz4_flex::compress_prepend_size(input)
    }

    fn decode(&self, input: &[u8]) -> Result<Vec<u8>, CodecError> {
        lz4_flex::decompress_size_prepended(input).map_err(|e| CodecError::Corrupt(e.to_string()))
    }
}
