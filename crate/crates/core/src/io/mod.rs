//! File formats: the binary tensor container, dataset directories, stream
//! CSVs, and model checkpoints.

pub mod checkpoint;
pub mod dataset;
pub mod streams;
pub mod tensorfile;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, StateEntry};
pub use dataset::{build_dataset, sha256_hex, Dataset, DatasetManifest, PipelineConfig};
pub use streams::{read_stream, read_stream_file, write_stream, write_stream_file};
pub use tensorfile::{TensorData, TensorFile};
