//! Versioned, checksummed step frames.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ISF1"
//!      4     2  version (1)
//!      6     2  payload_kind (0 = field snapshot, 1 = compressed block)
//!      8     8  step_index
//!     16     8  sim_time (f64)
//!     24     4  elements per axis (E)
//!     28     4  points per element axis (P)
//!     32     4  components
//!     36     4  reserved (0)
//!     40     8  payload_len
//!     48     n  payload
//!   48+n     4  crc32 (IEEE) over bytes [0, 48+n)
//! ```

use thiserror::Error;

use crate::field::{Field, FieldError, FieldShape};
use crate::tasks::{CodecRegistry, CompressedBlock, TaskError};

pub const MAGIC: [u8; 4] = *b"ISF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;
pub const CRC_LEN: usize = 4;

pub const KIND_FIELD: u16 = 0;
pub const KIND_BLOCK: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("magic: expected {:?}, found {found:?}", MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("version: unsupported frame version {found} (supported: {VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("payload_len: frame declares {declared} bytes, got {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("crc32: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("payload_kind: unknown kind {0}")]
    UnknownKind(u16),
    #[error("reserved: expected 0, found {0}")]
    ReservedNonZero(u32),
    #[error("shape: {0}")]
    BadShape(#[from] FieldError),
    #[error("payload: {0}")]
    BadPayload(String),
}

/// What a frame carries.
#[derive(Debug, Clone, PartialEq)]
pub enum StepData {
    Field(Field),
    Block(CompressedBlock),
}

impl StepData {
    pub fn shape(&self) -> FieldShape {
        match self {
            StepData::Field(f) => f.shape(),
            StepData::Block(b) => b.shape,
        }
    }

    pub fn kind(&self) -> u16 {
        match self {
            StepData::Field(_) => KIND_FIELD,
            StepData::Block(_) => KIND_BLOCK,
        }
    }

    fn payload_bytes(&self) -> Vec<u8> {
        match self {
            StepData::Field(f) => {
                let mut out = Vec::with_capacity(f.byte_len());
                for v in f.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out
            }
            StepData::Block(b) => {
                let mut out = Vec::with_capacity(b.payload_len());
                b.write_payload(&mut out);
                out
            }
        }
    }
}

/// Snapshot of one simulation step as it travels through staging.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPayload {
    step_index: u64,
    sim_time: f64,
    data: StepData,
    checksum: u32,
}

impl StepPayload {
    pub fn new(step_index: u64, sim_time: f64, data: StepData) -> Self {
        let checksum = crc32fast::hash(&data.payload_bytes());
        Self {
            step_index,
            sim_time,
            data,
            checksum,
        }
    }

    pub fn field(step_index: u64, sim_time: f64, field: Field) -> Self {
        Self::new(step_index, sim_time, StepData::Field(field))
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    pub fn data(&self) -> &StepData {
        &self.data
    }

    pub fn into_data(self) -> StepData {
        self.data
    }

    /// CRC-32 of the serialized payload section.
    pub fn checksum(&self) -> u32 {
        self.checksum
    }
}

/// Encodes `p` as one frame. Identical payloads give identical bytes.
pub fn serialize_payload(p: &StepPayload) -> Vec<u8> {
    let payload = p.data.payload_bytes();
    let shape = p.data.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&p.data.kind().to_le_bytes());
    out.extend_from_slice(&p.step_index.to_le_bytes());
    out.extend_from_slice(&p.sim_time.to_le_bytes());
    out.extend_from_slice(&shape.elements.to_le_bytes());
    out.extend_from_slice(&shape.points.to_le_bytes());
    out.extend_from_slice(&shape.components.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Total frame length declared by a header (magic and version checked).
pub fn declared_frame_len(header: &[u8]) -> Result<usize, FrameError> {
    check_magic(header)?;
    if header.len() < HEADER_LEN {
        return Err(FrameError::LengthMismatch {
            declared: HEADER_LEN + CRC_LEN,
            actual: header.len(),
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(FrameError::UnsupportedVersion { found: version });
    }
    let payload_len = u64::from_le_bytes(header[40..48].try_into().unwrap());
    usize::try_from(payload_len)
        .ok()
        .and_then(|n| n.checked_add(HEADER_LEN + CRC_LEN))
        .ok_or(FrameError::LengthMismatch {
            declared: usize::MAX,
            actual: header.len(),
        })
}

fn check_magic(bytes: &[u8]) -> Result<(), FrameError> {
    if bytes.len() < MAGIC.len() {
        return Err(FrameError::LengthMismatch {
            declared: HEADER_LEN + CRC_LEN,
            actual: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(FrameError::BadMagic { found });
    }
    Ok(())
}

pub fn deserialize_payload(bytes: &[u8]) -> Result<StepPayload, FrameError> {
    deserialize_payload_with(bytes, CodecRegistry::builtin())
}

/// Decodes a frame; coded blocks are expanded with `registry`.
pub fn deserialize_payload_with(
    bytes: &[u8],
    registry: &CodecRegistry,
) -> Result<StepPayload, FrameError> {
    let declared = declared_frame_len(bytes)?;
    if bytes.len() != declared {
        return Err(FrameError::LengthMismatch {
            declared,
            actual: bytes.len(),
        });
    }
    let body_end = declared - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FrameError::ChecksumMismatch { stored, computed });
    }

    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let kind = u16::from_le_bytes([bytes[6], bytes[7]]);
    let step_index = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let sim_time = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let shape = FieldShape::new(u32_at(24), u32_at(28), u32_at(32))?;
    let reserved = u32_at(36);
    if reserved != 0 {
        return Err(FrameError::ReservedNonZero(reserved));
    }
    let payload = &bytes[HEADER_LEN..body_end];

    let data = match kind {
        KIND_FIELD => {
            if payload.len() != shape.value_count() * 8 {
                return Err(FrameError::BadPayload(format!(
                    "field payload is {} bytes, shape needs {}",
                    payload.len(),
                    shape.value_count() * 8
                )));
            }
            let values = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            StepData::Field(Field::new(shape, values)?)
        }
        KIND_BLOCK => StepData::Block(
            CompressedBlock::read_payload(shape, payload, registry)
                .map_err(|e: TaskError| FrameError::BadPayload(e.to_string()))?,
        ),
        other => return Err(FrameError::UnknownKind(other)),
    };
    Ok(StepPayload::new(step_index, sim_time, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StepPayload {
        let shape = FieldShape::new(1, 2, 1).unwrap();
        StepPayload::field(3, 0.5, Field::zeros(shape))
    }

    #[test]
    fn zero_field_frame_size() {
        let bytes = serialize_payload(&tiny());
        assert_eq!(u64::from_le_bytes(bytes[40..48].try_into().unwrap()), 64);
        assert_eq!(bytes.len(), HEADER_LEN + 64 + CRC_LEN);
        assert_eq!(&bytes[..4], b"ISF1");
    }

    #[test]
    fn header_errors_name_their_field() {
        let good = serialize_payload(&tiny());

        let mut b = good.clone();
        b[0] = b'X';
        let e = deserialize_payload(&b).unwrap_err();
        assert!(matches!(e, FrameError::BadMagic { .. }));
        assert!(e.to_string().starts_with("magic"));

        let mut b = good.clone();
        b[4] = 2;
        let e = deserialize_payload(&b).unwrap_err();
        assert_eq!(e, FrameError::UnsupportedVersion { found: 2 });
        assert!(e.to_string().starts_with("version"));

        let e = deserialize_payload(&good[..good.len() / 2]).unwrap_err();
        assert!(matches!(e, FrameError::LengthMismatch { .. }));
        assert!(e.to_string().starts_with("payload_len"));

        let mut b = good.clone();
        let last = b.len() - 1;
        b[last] ^= 0x40;
        let e = deserialize_payload(&b).unwrap_err();
        assert!(matches!(e, FrameError::ChecksumMismatch { .. }));
        assert!(e.to_string().starts_with("crc32"));
    }

    #[test]
    fn unknown_kind_after_valid_crc() {
        let mut b = serialize_payload(&tiny());
        b[6] = 9;
        let end = b.len() - 4;
        let crc = crc32fast::hash(&b[..end]);
        b[end..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(deserialize_payload(&b).unwrap_err(), FrameError::UnknownKind(9));
    }
}
