//! Dense tensors, segmentation maps and their portable on-disk formats.
//!
//! Layout is row-major and channel-last (`[H, W, C]`) everywhere. On disk
//! every scalar is little-endian; in memory tensors may carry `f64` so that
//! gradient checks have enough headroom.

mod format;
mod types;

pub use format::{
    decode_segmap, decode_tensor, encode_segmap, encode_tensor, read_segmap, read_tensor, write_segmap, write_tensor,
    ByteReader, ByteWriter, SEGMAP_MAGIC, TENSOR_MAGIC,
};
pub(crate) use format::{read_file, with_path, write_file};
pub use types::{ProbMap, SegMap, Tensor};
