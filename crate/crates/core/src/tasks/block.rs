//! Sparse spectral block produced by the lossy stage, optionally carrying
//! a losslessly coded copy of its index/value arrays.

use serde::{Deserialize, Serialize};

use super::codec::{CodecId, CodecRegistry};
use super::TaskError;
use crate::field::FieldShape;

/// Compression ratio `(original − compressed) / original`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub original_size: u64,
    pub compressed_size: u64,
    pub cr: f64,
}

impl CompressionReport {
    pub fn new(original_size: u64, compressed_size: u64) -> Self {
        let cr = if original_size == 0 {
            0.0
        } else {
            (original_size as f64 - compressed_size as f64) / original_size as f64
        };
        Self {
            original_size,
            compressed_size,
            cr,
        }
    }

    /// Fraction of the original size that remains.
    pub fn retained_fraction(&self) -> f64 {
        1.0 - self.cr
    }
}

/// Lossless-coded form of a block's index and value arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedArrays {
    pub codec: CodecId,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    pub shape: FieldShape,
    /// Kept coefficients per element, all components together.
    pub kept_counts: Vec<u32>,
    /// Per kept coefficient: `mode_index · components + component`.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub coded: Option<CodedArrays>,
    /// Raw field size against the serialized block payload size.
    pub report: CompressionReport,
}

impl CompressedBlock {
    pub(crate) fn new(
        shape: FieldShape,
        kept_counts: Vec<u32>,
        indices: Vec<u32>,
        values: Vec<f64>,
        coded: Option<CodedArrays>,
    ) -> Self {
        let mut block = Self {
            shape,
            kept_counts,
            indices,
            values,
            coded,
            report: CompressionReport::new(0, 0),
        };
        block.refresh_report();
        block
    }

    fn refresh_report(&mut self) {
        let raw = (self.shape.value_count() * std::mem::size_of::<f64>()) as u64;
        self.report = CompressionReport::new(raw, self.payload_len() as u64);
    }

    pub fn total_kept(&self) -> usize {
        self.indices.len()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.total_kept() as f64 / self.shape.value_count() as f64
    }

    /// Bytes of the index and value arrays in wire order.
    pub fn array_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.indices.len() * 12);
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Size of the wire payload (see [`CompressedBlock::write_payload`]).
    pub fn payload_len(&self) -> usize {
        let arrays = match &self.coded {
            Some(c) => c.bytes.len(),
            None => self.indices.len() * 12,
        };
        self.kept_counts.len() * 4 + arrays + 2 + 8
    }

    /// Attaches a lossless encoding of the index/value arrays.
    pub fn with_lossless(
        mut self,
        codec_name: &str,
        registry: &CodecRegistry,
    ) -> Result<Self, TaskError> {
        let codec = registry
            .by_name(codec_name)
            .ok_or_else(|| TaskError::UnknownCodec(codec_name.to_string()))?;
        let bytes = codec.encode(&self.array_bytes());
        let mut tail = codec.id().0.to_le_bytes().to_vec();
        tail.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        tail.extend_from_slice(&bytes);
        if is_uncoded_tail(&tail, self.total_kept()) {
            return Err(TaskError::Codec(super::codec::CodecError::Corrupt(format!(
                "{codec_name} output is indistinguishable from an uncoded block"
            ))));
        }
        self.coded = Some(CodedArrays {
            codec: codec.id(),
            bytes,
        });
        self.refresh_report();
        Ok(self)
    }

    /// Wire payload: `kept_counts (u32 LE each) | indices (u32 LE) |
    /// values (f64 LE) | codec id u16 | coded length u64 | coded bytes`.
    ///
    /// When a codec is attached the index and value arrays travel only
    /// inside the coded bytes, so their wire sections are empty.
    pub fn write_payload(&self, out: &mut Vec<u8>) {
        for k in &self.kept_counts {
            out.extend_from_slice(&k.to_le_bytes());
        }
        match &self.coded {
            None => {
                out.extend_from_slice(&self.array_bytes());
                out.extend_from_slice(&0u16.to_le_bytes());
                out.extend_from_slice(&0u64.to_le_bytes());
            }
            Some(c) => {
                out.extend_from_slice(&c.codec.0.to_le_bytes());
                out.extend_from_slice(&(c.bytes.len() as u64).to_le_bytes());
                out.extend_from_slice(&c.bytes);
            }
        }
    }

    pub fn read_payload(
        shape: FieldShape,
        payload: &[u8],
        registry: &CodecRegistry,
    ) -> Result<Self, TaskError> {
        let mut cur = Cursor { buf: payload, pos: 0 };
        let elements = shape.element_count();
        let mut kept_counts = Vec::with_capacity(elements);
        for _ in 0..elements {
            kept_counts.push(cur.u32()?);
        }
        let total: usize = kept_counts.iter().map(|&k| k as usize).sum();
        let (indices, values, coded) = if is_uncoded_tail(&payload[cur.pos..], total) {
            let (i, v) = split_arrays(cur.take(total * 12)?, total);
            cur.take(10)?;
            (i, v, None)
        } else {
            let codec_id = CodecId(cur.u16()?);
            let len = cur.u64()? as usize;
            let bytes = cur.take(len)?.to_vec();
            if codec_id.0 == 0 {
                return Err(TaskError::ShapeMismatch(format!(
                    "block arrays section does not match kept counts (expected {} bytes)",
                    total * 12
                )));
            }
            let codec = registry
                .by_id(codec_id)
                .ok_or_else(|| TaskError::UnknownCodec(format!("id {}", codec_id.0)))?;
            let arrays = codec.decode(&bytes)?;
            if arrays.len() != total * 12 {
                return Err(TaskError::ShapeMismatch(format!(
                    "coded arrays decode to {} bytes, kept counts need {}",
                    arrays.len(),
                    total * 12
                )));
            }
            let (i, v) = split_arrays(&arrays, total);
            (i, v, Some(CodedArrays { codec: codec_id, bytes }))
        };
        if cur.remaining() != 0 {
            return Err(TaskError::ShapeMismatch(format!(
                "{} trailing bytes in block payload",
                cur.remaining()
            )));
        }
        let block = Self::new(shape, kept_counts, indices, values, coded);
        block.validate()?;
        Ok(block)
    }

    /// Structural checks against the recorded shape.
    pub fn validate(&self) -> Result<(), TaskError> {
        let per_element = self.shape.values_per_element();
        if self.kept_counts.len() != self.shape.element_count() {
            return Err(TaskError::ShapeMismatch(format!(
                "{} kept counts for {} elements",
                self.kept_counts.len(),
                self.shape.element_count()
            )));
        }
        if let Some((e, k)) = self
            .kept_counts
            .iter()
            .enumerate()
            .find(|(_, &k)| k as usize > per_element)
        {
            return Err(TaskError::ShapeMismatch(format!(
                "element {e} keeps {k} coefficients, at most {per_element} exist"
            )));
        }
        let total: usize = self.kept_counts.iter().map(|&k| k as usize).sum();
        if total != self.indices.len() || total != self.values.len() {
            return Err(TaskError::ShapeMismatch(format!(
                "kept counts sum to {total}, block holds {} indices and {} values",
                self.indices.len(),
                self.values.len()
            )));
        }
        if let Some(bad) = self.indices.iter().find(|&&i| i as usize >= per_element) {
            return Err(TaskError::ShapeMismatch(format!(
                "coefficient index {bad} out of range (element holds {per_element})"
            )));
        }
        Ok(())
    }
}

/// An uncoded block ends in its arrays followed by ten zero bytes (codec
/// id 0, coded length 0).
fn is_uncoded_tail(rest: &[u8], total: usize) -> bool {
    rest.len() == total * 12 + 10 && rest[total * 12..].iter().all(|&b| b == 0)
}

fn split_arrays(bytes: &[u8], total: usize) -> (Vec<u32>, Vec<f64>) {
    let (ib, vb) = bytes.split_at(total * 4);
    let indices = ib
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = vb
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    (indices, values)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TaskError> {
        if self.remaining() < n {
            return Err(TaskError::ShapeMismatch(format!(
                "block payload truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TaskError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TaskError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TaskError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
