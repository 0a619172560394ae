//! Activation interchange format, the streaming activation buffer, and
//! partition/model files.

mod buffer;
mod files;
mod ndma;

pub use buffer::{ActivationBuffer, Batch};
pub use files::{
    read_grid_csv, read_partition, read_toy_model, write_grid_csv, write_partition, write_toy_model,
    PartitionFile,
};
pub use ndma::{
    meta_path, read_activations, read_grid, read_header, read_meta, write_activations, write_activations_as,
    write_grid, ActivationSet, Dtype, Header, TokenMeta, HEADER_LEN, MAGIC, VERSION,
};
