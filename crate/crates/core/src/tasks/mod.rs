//! In-situ tasks: lossy spectral truncation, lossless codecs, slice images.

mod block;
pub mod codec;
pub mod dct;
pub mod lossy;
pub mod render;
pub mod table;

use thiserror::Error;

pub use block::{CodedArrays, CompressedBlock, CompressionReport};
pub use codec::{lossless_encode, Codec, CodecError, CodecId, CodecRegistry};
pub use lossy::{lossy_compress, lossy_decompress, relative_error, ErrorNorm, LossyConfig};
pub use render::{colormap, colormap_index, render_slice, Axis, Image, RenderConfig, ValueRange};
pub use table::{compression_table, write_table_csv, RowMeasurement, TableRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown codec {0:?}")]
    UnknownCodec(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("degenerate value range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
}
